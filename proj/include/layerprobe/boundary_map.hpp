#pragma once

// Approximate decision boundary of a probabilistic classifier in the full
// feature space:
//   1. keypoints: bisect segments between opposite-class samples down to p = 0.5
//   2. keypoint lines: scan segments between keypoints for further crossings
//   3. hyperspheres: probe a sphere around each keypoint and bisect chords
//      between neighbouring probes that straddle the boundary
// The resulting cloud, the data and the support vectors are embedded jointly
// with t-SNE.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "layerprobe/aggregate.hpp"
#include "layerprobe/model.hpp"
#include "layerprobe/tsne.hpp"

namespace layerprobe {

template <typename F>
concept ProbabilityFn = std::invocable<F&, const Eigen::VectorXd&> &&
                        std::convertible_to<std::invoke_result_t<F&, const Eigen::VectorXd&>, double>;

enum class Generation { segment = 0, keypoint_line = 1, hypersphere = 2 };

inline std::string_view to_string(Generation g) {
  switch (g) {
    case Generation::segment: return "segment";
    case Generation::keypoint_line: return "keypoint_line";
    case Generation::hypersphere: return "hypersphere";
  }
  return "?";
}

struct BoundaryPoint {
  Eigen::VectorXd x;
  double p = 0.5;
  Generation generation = Generation::segment;
  std::size_t probe = 0;  // stable index within its generation
};

struct LabeledVector {
  Eigen::VectorXd x;
  int label = 0;
};

struct BoundaryCloud {
  std::vector<BoundaryPoint> points;
  std::vector<LabeledVector> support_vectors;
  double tol = 0.01;
};

struct BoundaryParams {
  double tol = 0.01;
  std::size_t n_pairs = 200;
  std::size_t n_lines = 100;
  std::size_t n_sphere_samples = 20;
  std::size_t probes_per_segment = 32;
  std::uint64_t seed = 0;
};

inline constexpr int kBisectionMaxIter = 60;

namespace detail {

inline double checked_probability(double p) {
  if (!std::isfinite(p)) fail(ErrorCategory::computation, "boundary: classifier returned a non-finite probability");
  return p;
}

inline int side(double p) { return p > 0.5 ? 1 : (p < 0.5 ? -1 : 0); }

/// Bisects [a, b] given probabilities at both ends on opposite sides of 0.5.
/// Runs until the bracket collapses (or the iteration cap), then accepts the
/// midpoint only if it is within tol.
template <ProbabilityFn F>
std::optional<BoundaryPoint> bisect(F& prob, const Eigen::VectorXd& a, const Eigen::VectorXd& b, double pa, double tol) {
  double lo = 0.0, hi = 1.0;
  const int sa = side(pa);
  Eigen::VectorXd best = a;
  double best_p = pa;
  for (int it = 0; it < kBisectionMaxIter; ++it) {
    const double mid = 0.5 * (lo + hi);
    Eigen::VectorXd x = a + mid * (b - a);
    const double p = checked_probability(prob(x));
    if (std::abs(p - 0.5) < std::abs(best_p - 0.5)) {
      best = x;
      best_p = p;
    }
    const int s = side(p);
    if (s == 0) break;
    (s == sa ? lo : hi) = mid;
    if (hi - lo < 1e-12) break;
  }
  if (std::abs(best_p - 0.5) > tol) return std::nullopt;
  return BoundaryPoint{std::move(best), best_p, Generation::segment, 0};
}

}  // namespace detail

/// A point on [a, b] with |p - 0.5| <= tol, if p - 0.5 changes sign along it.
template <ProbabilityFn F>
std::optional<BoundaryPoint> find_crossing(F&& prob, const Eigen::VectorXd& a, const Eigen::VectorXd& b, double tol) {
  const double pa = detail::checked_probability(prob(a));
  if (detail::side(pa) == 0) return BoundaryPoint{a, pa, Generation::segment, 0};
  const double pb = detail::checked_probability(prob(b));
  if (detail::side(pb) == 0) return BoundaryPoint{b, pb, Generation::segment, 0};
  if (detail::side(pa) == detail::side(pb)) return std::nullopt;
  return detail::bisect(prob, a, b, pa, tol);
}

namespace detail {

/// k distinct indices from [0, n) (all of them, in order, if k >= n).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (k >= n) return idx;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Bisects up to n_pairs (positive, negative) sample pairs.
template <ProbabilityFn F>
std::vector<BoundaryPoint> generate_keypoints(F&& prob, const Eigen::MatrixXd& pos, const Eigen::MatrixXd& neg,
                                              std::size_t n_pairs, double tol, std::uint64_t seed) {
  if (pos.rows() == 0 || neg.rows() == 0) fail(ErrorCategory::invalid_argument, "keypoints: both classes need samples");
  const auto n_pos = static_cast<std::size_t>(pos.rows()), n_neg = static_cast<std::size_t>(neg.rows());
  std::mt19937_64 rng(derive_seed(seed, "boundary-pairs"));
  const auto pairs = detail::sample_without_replacement(n_pos * n_neg, n_pairs, rng);
  std::vector<BoundaryPoint> out;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(pairs[k] / n_neg), j = static_cast<Eigen::Index>(pairs[k] % n_neg);
    if (auto hit = find_crossing(prob, pos.row(i).transpose(), neg.row(j).transpose(), tol)) {
      hit->generation = Generation::segment;
      hit->probe = k;
      out.push_back(std::move(*hit));
    }
  }
  return out;
}

/// Enlarges a keypoint set. The returned cloud holds the keypoints followed by
/// keypoint-line points and hypersphere points, each in probe order.
template <ProbabilityFn F>
BoundaryCloud refine_keypoints(F&& prob, const std::vector<BoundaryPoint>& keypoints, std::size_t n_lines,
                               std::size_t n_sphere_samples, double tol, std::uint64_t seed,
                               std::size_t probes_per_segment = 32) {
  if (keypoints.size() < 2) fail(ErrorCategory::invalid_argument, "refine: need at least 2 keypoints");
  if (probes_per_segment < 2) fail(ErrorCategory::invalid_argument, "refine: need at least 2 probes per segment");
  BoundaryCloud cloud;
  cloud.tol = tol;
  cloud.points = keypoints;
  const std::size_t nk = keypoints.size();

  // (i) scan lines between sampled keypoint pairs
  std::mt19937_64 line_rng(derive_seed(seed, "boundary-lines"));
  const auto line_ids = detail::sample_without_replacement(nk * (nk - 1) / 2, n_lines, line_rng);
  std::size_t probe = 0;
  for (auto id : line_ids) {
    // unordered pair (a < b) from its triangular index
    std::size_t a = 0, rem = id;
    while (rem >= nk - 1 - a) {
      rem -= nk - 1 - a;
      ++a;
    }
    const std::size_t b = a + 1 + rem;
    const Eigen::VectorXd& xa = keypoints[a].x;
    const Eigen::VectorXd& xb = keypoints[b].x;
    Eigen::VectorXd prev = xa;
    double prev_p = detail::checked_probability(prob(prev));
    for (std::size_t s = 1; s < probes_per_segment; ++s) {
      const double t = static_cast<double>(s) / static_cast<double>(probes_per_segment - 1);
      Eigen::VectorXd cur = xa + t * (xb - xa);
      const double cur_p = detail::checked_probability(prob(cur));
      const int s0 = detail::side(prev_p), s1 = detail::side(cur_p);
      if (s0 != 0 && s1 != 0 && s0 != s1) {
        if (auto hit = detail::bisect(prob, prev, cur, prev_p, tol)) {
          hit->generation = Generation::keypoint_line;
          hit->probe = probe;
          cloud.points.push_back(std::move(*hit));
        }
      }
      ++probe;
      prev = std::move(cur);
      prev_p = cur_p;
    }
  }

  // (ii) hypersphere around every keypoint, radius = nearest other keypoint
  probe = 0;
  const auto dim = keypoints.front().x.size();
  for (std::size_t k = 0; k < nk && n_sphere_samples > 0; ++k) {
    double radius = std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < nk; ++o)
      if (o != k) radius = std::min(radius, (keypoints[o].x - keypoints[k].x).norm());
    if (!(radius > 0) || !std::isfinite(radius)) {
      probe += n_sphere_samples;
      continue;
    }
    std::mt19937_64 rng(derive_seed(seed, "boundary-sphere", k));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd prev;
    double prev_p = 0.5;
    for (std::size_t s = 0; s < n_sphere_samples; ++s, ++probe) {
      Eigen::VectorXd u(dim);
      for (Eigen::Index d = 0; d < dim; ++d) u[d] = gauss(rng);
      Eigen::VectorXd q = keypoints[k].x + radius * u / u.norm();
      const double q_p = detail::checked_probability(prob(q));
      if (s > 0) {
        const int s0 = detail::side(prev_p), s1 = detail::side(q_p);
        if (s0 != 0 && s1 != 0 && s0 != s1) {
          if (auto hit = detail::bisect(prob, prev, q, prev_p, tol)) {
            hit->generation = Generation::hypersphere;
            hit->probe = probe;
            cloud.points.push_back(std::move(*hit));
          }
        }
      }
      prev = std::move(q);
      prev_p = q_p;
    }
  }
  return cloud;
}

struct SupportVectorExport {
  std::vector<LabeledVector> vectors;
  std::string notice;
};

inline SupportVectorExport export_support_vectors(const TrainedModel& m) {
  SupportVectorExport out;
  if (const auto* svm = m.svm()) {
    for (auto& [x, label] : support_vectors_original(*svm)) out.vectors.push_back({std::move(x), label});
  } else {
    out.notice = "model " + m.id + " is not an SVM; no support vectors to export";
  }
  return out;
}

/// Full boundary procedure against a trained model and its labelled data.
inline BoundaryCloud map_boundary(const TrainedModel& m, const FeatureMatrix& data, const BoundaryParams& params,
                                  std::vector<std::string>* warnings = nullptr) {
  if (data.group != m.group) fail(ErrorCategory::validation, "boundary: features and model use different layer groups");
  auto prob = [&](const Eigen::VectorXd& x) { return predict_proba(m, x); };
  std::vector<std::size_t> pos_rows, neg_rows;
  for (std::size_t i = 0; i < data.rows(); ++i) (data.y[i] == 1 ? pos_rows : neg_rows).push_back(i);
  const auto pos = data.subset(pos_rows).x, neg = data.subset(neg_rows).x;
  auto keypoints = generate_keypoints(prob, pos, neg, params.n_pairs, params.tol, params.seed);
  BoundaryCloud cloud;
  if (keypoints.size() >= 2) {
    cloud = refine_keypoints(prob, keypoints, params.n_lines, params.n_sphere_samples, params.tol, params.seed,
                             params.probes_per_segment);
  } else {
    cloud.points = std::move(keypoints);
    cloud.tol = params.tol;
    if (warnings) warnings->push_back("fewer than 2 keypoints found; boundary cloud was not refined");
  }
  auto svs = export_support_vectors(m);
  cloud.support_vectors = std::move(svs.vectors);
  if (warnings && !svs.notice.empty()) warnings->push_back(svs.notice);
  return cloud;
}

// ---------------------------------------------------------------------------
// Projection

struct ProjectedRow {
  std::string id;
  double x = 0;
  double y = 0;
  std::string tag;  // data-pos, data-neg, boundary, sv-pos, sv-neg
};

struct Projection {
  std::vector<ProjectedRow> rows;
  std::vector<double> kl_trace;
  std::vector<std::string> warnings;
};

/// One joint t-SNE run over data, boundary points and support vectors.
inline Projection project_boundary(const FeatureMatrix& data, const BoundaryCloud& cloud, const TsneConfig& cfg) {
  const auto n = data.rows() + cloud.points.size() + cloud.support_vectors.size();
  const auto dim = static_cast<Eigen::Index>(data.dim());
  Eigen::MatrixXd all(static_cast<Eigen::Index>(n), dim);
  std::vector<ProjectedRow> rows;
  rows.reserve(n);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < data.rows(); ++i, ++r) {
    all.row(r) = data.x.row(static_cast<Eigen::Index>(i));
    rows.push_back({data.ids[i], 0, 0, data.y[i] == 1 ? "data-pos" : "data-neg"});
  }
  for (std::size_t i = 0; i < cloud.points.size(); ++i, ++r) {
    if (cloud.points[i].x.size() != dim) fail(ErrorCategory::invalid_argument, "projection: boundary point dimension mismatch");
    all.row(r) = cloud.points[i].x.transpose();
    rows.push_back({"boundary_" + std::to_string(i), 0, 0, "boundary"});
  }
  for (std::size_t i = 0; i < cloud.support_vectors.size(); ++i, ++r) {
    if (cloud.support_vectors[i].x.size() != dim)
      fail(ErrorCategory::invalid_argument, "projection: support vector dimension mismatch");
    all.row(r) = cloud.support_vectors[i].x.transpose();
    rows.push_back({"sv_" + std::to_string(i), 0, 0, cloud.support_vectors[i].label == 1 ? "sv-pos" : "sv-neg"});
  }
  auto res = tsne_embed(all, cfg);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].x = res.embedding(static_cast<Eigen::Index>(i), 0);
    rows[i].y = res.embedding(static_cast<Eigen::Index>(i), 1);
  }
  return {std::move(rows), std::move(res.kl_trace), std::move(res.warnings)};
}

// ---------------------------------------------------------------------------
// Text exports

/// x0..x{d-1},p,generation per boundary point.
inline std::string cloud_to_csv(const BoundaryCloud& c, const std::string& provenance = "") {
  std::ostringstream os;
  if (!provenance.empty()) os << "# " << provenance << '\n';
  const auto dim = c.points.empty() ? 0 : c.points.front().x.size();
  for (Eigen::Index d = 0; d < dim; ++d) os << 'x' << d << ',';
  os << "p,generation\n";
  for (const auto& pt : c.points) {
    for (Eigen::Index d = 0; d < dim; ++d) os << format_double(pt.x[d]) << ',';
    os << format_double(pt.p) << ',' << to_string(pt.generation) << '\n';
  }
  return os.str();
}

inline BoundaryCloud cloud_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  BoundaryCloud c;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    auto cells = detail::split_view(line, ',');
    if (cells.size() < 2) fail(ErrorCategory::validation, "boundary cloud row too short");
    BoundaryPoint pt;
    pt.x.resize(static_cast<Eigen::Index>(cells.size() - 2));
    for (std::size_t d = 0; d + 2 < cells.size(); ++d) pt.x[static_cast<Eigen::Index>(d)] = std::stod(std::string(cells[d]));
    pt.p = std::stod(std::string(cells[cells.size() - 2]));
    const auto g = cells.back();
    pt.generation = g == "segment" ? Generation::segment
                    : g == "keypoint_line" ? Generation::keypoint_line
                    : g == "hypersphere" ? Generation::hypersphere
                    : (fail(ErrorCategory::validation, "unknown generation '" + std::string(g) + "'"), Generation::segment);
    c.points.push_back(std::move(pt));
  }
  return c;
}

/// label,x0..x{d-1} per support vector.
inline std::string support_vectors_to_csv(const std::vector<LabeledVector>& svs, const std::string& provenance = "") {
  std::ostringstream os;
  if (!provenance.empty()) os << "# " << provenance << '\n';
  const auto dim = svs.empty() ? 0 : svs.front().x.size();
  os << "label";
  for (Eigen::Index d = 0; d < dim; ++d) os << ",x" << d;
  os << '\n';
  for (const auto& sv : svs) {
    os << sv.label;
    for (Eigen::Index d = 0; d < dim; ++d) os << ',' << format_double(sv.x[d]);
    os << '\n';
  }
  return os.str();
}

inline std::vector<LabeledVector> support_vectors_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<LabeledVector> out;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    auto cells = detail::split_view(line, ',');
    LabeledVector v;
    v.label = cells[0] == "1" ? 1 : 0;
    v.x.resize(static_cast<Eigen::Index>(cells.size() - 1));
    for (std::size_t d = 1; d < cells.size(); ++d) v.x[static_cast<Eigen::Index>(d - 1)] = std::stod(std::string(cells[d]));
    out.push_back(std::move(v));
  }
  return out;
}

/// id,x,y,tag rows for plotting.
inline std::string projection_to_csv(const Projection& p, const std::string& provenance = "") {
  std::ostringstream os;
  if (!provenance.empty()) os << "# " << provenance << '\n';
  os << "id,x,y,tag\n";
  for (const auto& r : p.rows) os << r.id << ',' << format_double(r.x) << ',' << format_double(r.y) << ',' << r.tag << '\n';
  return os.str();
}

}  // namespace layerprobe
