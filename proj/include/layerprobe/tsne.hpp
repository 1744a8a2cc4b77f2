#pragma once

// Exact O(n^2) t-SNE to two dimensions.

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "layerprobe/common.hpp"

namespace layerprobe {

struct TsneConfig {
  double perplexity = 30.0;
  int n_iter = 1000;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  double init_std = 1e-4;
  std::uint64_t seed = 0;
};

inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  return d;
}

struct Calibration {
  Eigen::MatrixXd conditional;  // row i holds P(j | i); zero diagonal
  std::vector<double> entropy_bits;
  std::vector<std::string> warnings;
};

inline constexpr int kCalibrationMaxSteps = 64;
inline constexpr double kCalibrationJitter = 1e-10;

/// Finds, per row, the Gaussian precision whose conditional distribution has
/// entropy log2(perplexity). Precisions are searched in units of the row's
/// mean distance, so scaling all distances leaves P unchanged.
inline Calibration perplexity_calibration(const Eigen::MatrixXd& sq_distances, double perplexity) {
  const Eigen::Index n = sq_distances.rows();
  if (sq_distances.cols() != n) fail(ErrorCategory::invalid_argument, "calibration: distance matrix must be square");
  if (!(perplexity > 1.0)) fail(ErrorCategory::invalid_argument, "calibration: perplexity must be > 1");
  if (n < 3) fail(ErrorCategory::invalid_argument, "calibration: need at least 3 points");
  const double target = std::log2(perplexity);
  if (target > std::log2(static_cast<double>(n - 1)) + 1e-12)
    fail(ErrorCategory::invalid_argument, "calibration: perplexity exceeds the number of neighbours");

  Calibration out;
  out.conditional = Eigen::MatrixXd::Zero(n, n);
  out.entropy_bits.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> d(static_cast<std::size_t>(n - 1)), p(d.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean = 0;
    std::size_t k = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double v = sq_distances(i, j);
      if (!(v >= 0) || !std::isfinite(v)) fail(ErrorCategory::invalid_argument, "calibration: distances must be finite and >= 0");
      d[k++] = v;
      mean += v;
    }
    mean /= static_cast<double>(d.size());
    if (mean == 0) {
      for (std::size_t j = 0; j < d.size(); ++j) d[j] = kCalibrationJitter * static_cast<double>(1 + j % 7);
      mean = 0;
      for (double v : d) mean += v;
      mean /= static_cast<double>(d.size());
      out.warnings.push_back("row " + std::to_string(i) + ": all neighbours coincide; added deterministic jitter");
    }
    double dmin = std::numeric_limits<double>::infinity();
    for (auto& v : d) {
      v /= mean;
      dmin = std::min(dmin, v);
    }

    auto entropy_at = [&](double beta) {
      double sum = 0, weighted = 0;
      for (std::size_t j = 0; j < d.size(); ++j) {
        p[j] = std::exp(-beta * (d[j] - dmin));
        sum += p[j];
        weighted += (d[j] - dmin) * p[j];
      }
      for (auto& v : p) v /= sum;
      return (std::log(sum) + beta * weighted / sum) / std::log(2.0);
    };

    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = entropy_at(beta);
    for (int step = 0; step < kCalibrationMaxSteps && std::abs(h - target) > 1e-6; ++step) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      h = entropy_at(beta);
    }
    if (std::abs(h - target) > 1e-4)
      out.warnings.push_back("row " + std::to_string(i) + ": entropy off target by " + std::to_string(h - target) + " bits");
    out.entropy_bits[static_cast<std::size_t>(i)] = h;
    k = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) out.conditional(i, j) = p[k++];
  }
  return out;
}

/// (P(j|i) + P(i|j)) / 2n.
inline Eigen::MatrixXd joint_probabilities(const Eigen::MatrixXd& conditional) {
  const double n = static_cast<double>(conditional.rows());
  return (conditional + conditional.transpose()) / (2.0 * n);
}

/// sum p log(p / q) over all entries, with 0 log 0 = 0.
inline double kl_divergence(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q) {
  if (P.rows() != Q.rows() || P.cols() != Q.cols()) fail(ErrorCategory::invalid_argument, "kl: shape mismatch");
  double kl = 0;
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
      const double p = P(i, j);
      if (p <= 0) continue;
      if (Q(i, j) <= 0) fail(ErrorCategory::computation, "kl: q = 0 where p > 0");
      kl += p * std::log(p / Q(i, j));
    }
  return kl;
}

struct TsneResult {
  Eigen::MatrixXd embedding;      // n x 2
  std::vector<double> kl_trace;   // kl_trace[t-1]: KL of the layout entering iteration t
  std::vector<std::string> warnings;
};

inline TsneResult tsne_embed(const Eigen::MatrixXd& x, const TsneConfig& cfg) {
  const Eigen::Index n = x.rows();
  if (!(cfg.perplexity > 1.0)) fail(ErrorCategory::invalid_argument, "tsne: perplexity must be > 1");
  if (static_cast<double>(n) < 3.0 * cfg.perplexity)
    fail(ErrorCategory::invalid_argument, "tsne: need at least 3 * perplexity points (have " + std::to_string(n) +
                                              ", perplexity " + std::to_string(cfg.perplexity) + ")");
  if (!x.allFinite()) fail(ErrorCategory::invalid_argument, "tsne: non-finite input");

  auto calib = perplexity_calibration(squared_distances(x), cfg.perplexity);
  const Eigen::MatrixXd P = joint_probabilities(calib.conditional);

  TsneResult res;
  res.warnings = std::move(calib.warnings);
  std::mt19937_64 rng(derive_seed(cfg.seed, "tsne-init"));
  std::normal_distribution<double> init(0.0, cfg.init_std);
  Eigen::MatrixXd Y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    Y(i, 0) = init(rng);
    Y(i, 1) = init(rng);
  }
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2), gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n), grad(n, 2);
  res.kl_trace.reserve(static_cast<std::size_t>(cfg.n_iter));

  for (int it = 1; it <= cfg.n_iter; ++it) {
    double zsum = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double dx = Y(i, 0) - Y(j, 0), dy = Y(i, 1) - Y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = num(j, i) = v;
        zsum += 2.0 * v;
      }
    }
    double kl = 0;
    const double exaggeration = it <= cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      double gx = 0, gy = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double q = num(i, j) / zsum;
        const double p = P(i, j);
        if (p > 0) kl += p * std::log(p / std::max(q, std::numeric_limits<double>::min()));
        const double w = (exaggeration * p - q) * num(i, j);
        gx += w * (Y(i, 0) - Y(j, 0));
        gy += w * (Y(i, 1) - Y(j, 1));
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }
    if (!std::isfinite(kl)) fail(ErrorCategory::computation, "tsne: non-finite KL at iteration " + std::to_string(it));
    res.kl_trace.push_back(kl);

    const double momentum = it <= cfg.momentum_switch ? cfg.initial_momentum : cfg.final_momentum;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = same_sign ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
        update(i, c) = momentum * update(i, c) - cfg.learning_rate * gains(i, c) * grad(i, c);
        Y(i, c) += update(i, c);
      }
    Y.rowwise() -= Y.colwise().mean();
    if (!Y.allFinite()) fail(ErrorCategory::computation, "tsne: non-finite coordinates at iteration " + std::to_string(it));
  }
  res.embedding = std::move(Y);
  return res;
}

}  // namespace layerprobe
