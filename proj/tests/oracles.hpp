#pragma once

// Independent reference computations used by the unit and acceptance suites.
// Nothing here calls the code it is meant to check.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "layerprobe/layerprobe.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// SVM dual by enumeration of active sets.
//
// maximize  sum a - 1/2 a'Qa,  Q_ij = y_i y_j K_ij,  s.t. y'a = 0, 0 <= a <= C.
// Each a_i is at 0, at C, or free. For every pattern the free block solves the
// equality-constrained KKT system; the best feasible stationary point is the
// optimum because the problem is concave and the optimum is a stationary
// point of the face it lies on.

struct DualSolution {
  std::vector<double> alpha;
  double objective = -std::numeric_limits<double>::infinity();
  bool found = false;
};

inline double dual_value(const Eigen::MatrixXd& K, const std::vector<int>& y, const std::vector<double>& a) {
  double lin = 0, quad = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    lin += a[i];
    for (std::size_t j = 0; j < a.size(); ++j) quad += a[i] * a[j] * y[i] * y[j] * K(i, j);
  }
  return lin - 0.5 * quad;
}

/// y in {-1, +1}. Exponential in n; meant for n <= 8.
inline DualSolution brute_force_dual(const Eigen::MatrixXd& K, const std::vector<int>& y, double C) {
  const std::size_t n = y.size();
  std::size_t patterns = 1;
  for (std::size_t i = 0; i < n; ++i) patterns *= 3;
  DualSolution best;
  std::vector<int> state(n);
  for (std::size_t code = 0; code < patterns; ++code) {
    std::size_t c = code;
    std::vector<std::size_t> free_idx;
    std::vector<double> a(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      state[i] = static_cast<int>(c % 3);
      c /= 3;
      if (state[i] == 1) a[i] = C;
      if (state[i] == 2) free_idx.push_back(i);
    }
    const auto f = static_cast<Eigen::Index>(free_idx.size());
    if (f == 0) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += y[i] * a[i];
      if (std::abs(s) > 1e-9) continue;
    } else {
      // [Q_FF y_F; y_F' 0] [a_F; b] = [1 - Q_FB a_B; -y_B' a_B]
      Eigen::MatrixXd M = Eigen::MatrixXd::Zero(f + 1, f + 1);
      Eigen::VectorXd rhs(f + 1);
      double yb = 0;
      for (std::size_t i = 0; i < n; ++i) yb += state[i] == 1 ? y[i] * C : 0.0;
      for (Eigen::Index r = 0; r < f; ++r) {
        const auto i = free_idx[static_cast<std::size_t>(r)];
        double qb = 0;
        for (std::size_t j = 0; j < n; ++j)
          if (state[j] == 1) qb += y[i] * y[j] * K(i, j) * C;
        rhs[r] = 1.0 - qb;
        for (Eigen::Index s = 0; s < f; ++s) {
          const auto j = free_idx[static_cast<std::size_t>(s)];
          M(r, s) = y[i] * y[j] * K(i, j);
        }
        M(r, f) = y[i];
        M(f, r) = y[i];
      }
      rhs[f] = -yb;
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(M);
      const Eigen::VectorXd sol = cod.solve(rhs);
      if ((M * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) continue;
      bool feasible = true;
      for (Eigen::Index r = 0; r < f; ++r) {
        const double v = sol[r];
        if (v < -1e-10 || v > C + 1e-10) feasible = false;
        a[free_idx[static_cast<std::size_t>(r)]] = std::clamp(v, 0.0, C);
      }
      if (!feasible) continue;
    }
    const double obj = dual_value(K, y, a);
    if (obj > best.objective) {
      best.objective = obj;
      best.alpha = a;
      best.found = true;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Binomial upper tail P[X >= k], X ~ Bin(n, 1/2), by exact integer counting.

inline double binomial_tail_half(std::uint64_t k, std::uint64_t n) {
  // n <= 60 keeps every binomial coefficient exact in 64 bits
  std::uint64_t count = 0, coef = 1;  // coef = C(n, i)
  for (std::uint64_t i = 0; i <= n; ++i) {
    if (i >= k) count += coef;
    coef = coef * (n - i) / (i + 1);
  }
  return std::ldexp(static_cast<double>(count), -static_cast<int>(n));
}

// ---------------------------------------------------------------------------
// Central finite differences of loss() with respect to every parameter.

inline layerprobe::LayerParams numeric_gradient(layerprobe::FfnModel m, const Eigen::MatrixXd& x,
                                                std::span<const int> y, double l2, double h = 1e-5) {
  layerprobe::LayerParams g = m.layers;
  auto f = [&] { return layerprobe::loss(m, x, y, l2); };
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    auto& w = m.layers[k].w;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double keep = w.data()[i];
      w.data()[i] = keep + h;
      const double up = f();
      w.data()[i] = keep - h;
      const double down = f();
      w.data()[i] = keep;
      g[k].w.data()[i] = (up - down) / (2 * h);
    }
    auto& b = m.layers[k].b;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double keep = b[i];
      b[i] = keep + h;
      const double up = f();
      b[i] = keep - h;
      const double down = f();
      b[i] = keep;
      g[k].b[i] = (up - down) / (2 * h);
    }
  }
  return g;
}

/// max |a - n| / max(|a|, |n|, floor) over all entries.
inline double max_relative_error(const layerprobe::LayerParams& analytic, const layerprobe::LayerParams& numeric,
                                 double floor = 1e-7) {
  double worst = 0;
  auto visit = [&](const double* a, const double* n, Eigen::Index len) {
    for (Eigen::Index i = 0; i < len; ++i) {
      const double denom = std::max({std::abs(a[i]), std::abs(n[i]), floor});
      worst = std::max(worst, std::abs(a[i] - n[i]) / denom);
    }
  };
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    visit(analytic[k].w.data(), numeric[k].w.data(), analytic[k].w.size());
    visit(analytic[k].b.data(), numeric[k].b.data(), analytic[k].b.size());
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Mean silhouette of a labelled 2-D layout.

inline double silhouette(const Eigen::MatrixXd& y, const std::vector<int>& label) {
  const auto n = y.rows();
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double same = 0, other = 0;
    int n_same = 0, n_other = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (y.row(i) - y.row(j)).norm();
      if (label[i] == label[j]) {
        same += d;
        ++n_same;
      } else {
        other += d;
        ++n_other;
      }
    }
    const double a = n_same ? same / n_same : 0, b = n_other ? other / n_other : 0;
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Fixtures

/// Two isotropic Gaussian blobs centred at -/+ offset * e_0.
inline Eigen::MatrixXd blobs(std::size_t per_blob, std::size_t dim, double offset, double std, std::uint64_t seed,
                             std::vector<int>* labels = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, std);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(2 * per_blob), static_cast<Eigen::Index>(dim));
  if (labels) labels->clear();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int cls = i < static_cast<Eigen::Index>(per_blob) ? 0 : 1;
    for (Eigen::Index d = 0; d < x.cols(); ++d) x(i, d) = g(rng);
    x(i, 0) += cls ? offset : -offset;
    if (labels) labels->push_back(cls);
  }
  return x;
}

/// An RBF SVM whose 0.5 surface is exactly the hyperplane c'x = 0: support
/// vectors +c and -c with equal weight, identity scaler, zero bias, B = 0.
inline layerprobe::TrainedModel linear_boundary_model(const Eigen::VectorXd& c, double gamma = 0.05) {
  layerprobe::SvmModel s;
  s.support_vectors.resize(2, c.size());
  s.support_vectors.row(0) = c.transpose();
  s.support_vectors.row(1) = -c.transpose();
  s.dual_coefs = Eigen::Vector2d(1.0, -1.0);
  s.bias = 0;
  s.gamma = gamma;
  s.C = 10;
  s.platt_A = -4.0;
  s.platt_B = 0.0;
  s.scaler = layerprobe::Standardizer::identity(c.size());
  s.support_indices = {0, 1};
  layerprobe::TrainedModel m;
  m.id = "svm_linear_fixture";
  m.model = s;
  return m;
}

/// Labelled points on both sides of c'x = 0 for the fixture above.
inline layerprobe::FeatureMatrix linear_boundary_data(const Eigen::VectorXd& c, std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  layerprobe::FeatureMatrix fm;
  fm.x.resize(static_cast<Eigen::Index>(2 * per_class), c.size());
  const Eigen::VectorXd u = c.normalized();
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int cls = i < per_class ? 1 : 0;
    Eigen::VectorXd v(c.size());
    for (auto& e : v) e = g(rng);
    v += ((cls ? 2.0 : -2.0) - v.dot(u)) * u + (cls ? 1.0 : -1.0) * std::abs(g(rng)) * u;
    fm.x.row(static_cast<Eigen::Index>(i)) = v.transpose();
    fm.ids.push_back("r" + std::to_string(i));
    fm.y.push_back(cls);
  }
  return fm;
}

}  // namespace oracle
