#pragma once

// RBF-kernel C-SVM trained by SMO with maximal-violating-pair selection, plus
// Platt scaling so the model can report probabilities.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "layerprobe/aggregate.hpp"
#include "layerprobe/common.hpp"
#include "layerprobe/scaler.hpp"

namespace layerprobe {

inline double rbf_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double gamma) {
  if (!(gamma > 0.0)) fail(ErrorCategory::invalid_argument, "rbf_kernel: gamma must be > 0");
  if (x.size() != y.size()) fail(ErrorCategory::invalid_argument, "rbf_kernel: dimension mismatch");
  if (!x.allFinite() || !y.allFinite()) fail(ErrorCategory::invalid_argument, "rbf_kernel: non-finite input");
  return std::exp(-gamma * (x - y).squaredNorm());
}

struct SvmModel {
  Eigen::MatrixXd support_vectors;  // m x dim, in scaled feature space
  Eigen::VectorXd dual_coefs;       // alpha_i * y_i, y in {-1, +1}
  double bias = 0.0;
  double gamma = 1.0;
  double C = 1.0;
  double platt_A = -1.0;
  double platt_B = 0.0;
  Standardizer scaler;

  // training diagnostics, kept with the model for auditing
  std::vector<std::size_t> support_indices;  // rows of the training matrix
  std::size_t iterations = 0;
  double dual_objective = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(scaler.dim()); }
};

struct SmoOptions {
  double tol = 1e-3;
  /// 0 selects the default cap: 10 passes of n pair updates per training row
  /// (10 * n * n), never more than 100000.
  std::size_t max_updates = 0;
};

inline constexpr std::size_t kSmoHardCap = 100000;
/// Post-condition on every trained model: |sum alpha_i y_i| below this.
inline constexpr double kDualBalanceTol = 1e-8;

/// Kernel-space decision value of an already-scaled point.
inline double decision_value_scaled(const SvmModel& m, const Eigen::VectorXd& z) {
  double f = m.bias;
  for (Eigen::Index i = 0; i < m.support_vectors.rows(); ++i)
    f += m.dual_coefs[i] * std::exp(-m.gamma * (m.support_vectors.row(i).transpose() - z).squaredNorm());
  return f;
}

inline double decision_value(const SvmModel& m, const Eigen::VectorXd& x) {
  return decision_value_scaled(m, m.scaler.transform(x));
}

/// p(y = 1 | f) = 1 / (1 + exp(A f + B)), evaluated without overflow.
inline double platt_probability(double f, double A, double B) {
  const double t = A * f + B;
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

inline double predict_proba(const SvmModel& m, const Eigen::VectorXd& x) {
  return platt_probability(decision_value(m, x), m.platt_A, m.platt_B);
}

/// p = 0.5 exactly is assigned to the pathologic class.
inline int predict(const SvmModel& m, const Eigen::VectorXd& x) { return predict_proba(m, x) >= 0.5 ? 1 : 0; }

struct PlattParams {
  double A = 0.0;
  double B = 0.0;
};

/// Regularized maximum-likelihood sigmoid fit with smoothed targets, solved by
/// Newton's method with backtracking (Lin, Lin & Weng formulation).
inline PlattParams fit_platt(std::span<const double> f, std::span<const int> labels) {
  if (f.size() != labels.size()) fail(ErrorCategory::invalid_argument, "fit_platt: size mismatch");
  double prior1 = 0, prior0 = 0;
  for (int y : labels) (y == 1 ? prior1 : prior0) += 1;
  if (prior1 == 0 || prior0 == 0) fail(ErrorCategory::invalid_argument, "fit_platt: both classes required");
  if (std::all_of(f.begin(), f.end(), [&](double v) { return v == f.front(); }))
    fail(ErrorCategory::computation, "fit_platt: degenerate input (all decision values identical)");

  const double hi = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) t[i] = labels[i] == 1 ? hi : lo;

  auto objective = [&](double A, double B) {
    double v = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double z = f[i] * A + B;
      v += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return v;
  };

  constexpr int kMaxIter = 100;
  constexpr double kMinStep = 1e-10;
  constexpr double kSigma = 1e-12;
  double A = 0.0;
  double B = std::log((prior0 + 1.0) / (prior1 + 1.0));
  double fval = objective(A, B);
  for (int it = 0; it < kMaxIter; ++it) {
    double h11 = kSigma, h22 = kSigma, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double z = f[i] * A + B;
      double p, q;
      if (z >= 0) {
        const double e = std::exp(-z);
        p = e / (1.0 + e);
        q = 1.0 / (1.0 + e);
      } else {
        const double e = std::exp(z);
        p = 1.0 / (1.0 + e);
        q = e / (1.0 + e);
      }
      const double d2 = p * q;
      h11 += f[i] * f[i] * d2;
      h22 += d2;
      h21 += f[i] * d2;
      const double d1 = t[i] - p;
      g1 += f[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det;
    const double dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;
    double step = 1.0;
    while (step >= kMinStep) {
      const double nA = A + step * dA, nB = B + step * dB;
      const double nf = objective(nA, nB);
      if (nf < fval + 1e-4 * step * gd) {
        A = nA;
        B = nB;
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < kMinStep) break;
  }
  if (!std::isfinite(A) || !std::isfinite(B)) fail(ErrorCategory::computation, "fit_platt: non-finite parameters");
  return {A, B};
}

/// Dual objective sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij.
inline double svm_dual_objective(const Eigen::MatrixXd& kernel, std::span<const double> alpha, std::span<const int> sign) {
  double lin = 0, quad = 0;
  const auto n = alpha.size();
  for (std::size_t i = 0; i < n; ++i) {
    lin += alpha[i];
    if (alpha[i] == 0) continue;
    for (std::size_t j = 0; j < n; ++j)
      quad += alpha[i] * alpha[j] * sign[i] * sign[j] * kernel(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return lin - 0.5 * quad;
}

inline Eigen::MatrixXd rbf_gram(const Eigen::MatrixXd& z, double gamma) {
  const Eigen::Index n = z.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) k(i, j) = k(j, i) = std::exp(-gamma * (z.row(i) - z.row(j)).squaredNorm());
  }
  return k;
}

/// Trains on rows of `x` with 0/1 labels. Features are standardized inside.
inline SvmModel train_svm(const Eigen::MatrixXd& x, std::span<const int> labels, double C, double gamma,
                          const SmoOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (labels.size() != n) fail(ErrorCategory::invalid_argument, "train_svm: label count mismatch");
  if (!(C > 0) || !(gamma > 0)) fail(ErrorCategory::invalid_argument, "train_svm: C and gamma must be > 0");
  std::size_t npos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) fail(ErrorCategory::invalid_argument, "train_svm: labels must be 0/1");
    npos += l == 1;
  }
  if (npos == 0 || npos == n) fail(ErrorCategory::invalid_argument, "train_svm: single-class input");

  SvmModel model;
  model.C = C;
  model.gamma = gamma;
  model.scaler = Standardizer::fit(x);
  const Eigen::MatrixXd z = model.scaler.transform_rows(x);
  const Eigen::MatrixXd K = rbf_gram(z, gamma);

  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] == 1 ? 1 : -1;
  auto Q = [&](std::size_t i, std::size_t j) {
    return y[i] * y[j] * K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };

  std::vector<double> alpha(n, 0.0);
  std::vector<double> grad(n, -1.0);  // gradient of 1/2 a'Qa - e'a
  const std::size_t cap = opt.max_updates ? opt.max_updates : std::min<std::size_t>(kSmoHardCap, 10 * n * n);
  constexpr double kTau = 1e-12;

  auto up = [&](std::size_t t) { return (y[t] == 1 && alpha[t] < C) || (y[t] == -1 && alpha[t] > 0); };
  auto low = [&](std::size_t t) { return (y[t] == 1 && alpha[t] > 0) || (y[t] == -1 && alpha[t] < C); };

  std::size_t iter = 0;
  bool converged = false;
  for (;;) {
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * grad[t];
      if (up(t) && v > gmax) { gmax = v; i = t; }
      if (low(t) && v < gmin) { gmin = v; j = t; }
    }
    if (i == n || j == n || gmax - gmin < opt.tol) {
      converged = true;
      break;
    }
    if (iter >= cap) break;
    ++iter;

    const double ai_old = alpha[i], aj_old = alpha[j];
    const double kii = Q(i, i), kjj = Q(j, j), kij = Q(i, j);
    if (y[i] != y[j]) {
      double quad = kii + kjj + 2.0 * kij;
      if (quad <= 0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = diff; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = -diff; }
      }
      if (diff > 0) {
        if (alpha[i] > C) { alpha[i] = C; alpha[j] = C - diff; }
      } else {
        if (alpha[j] > C) { alpha[j] = C; alpha[i] = C + diff; }
      }
    } else {
      double quad = kii + kjj - 2.0 * kij;
      if (quad <= 0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) { alpha[i] = C; alpha[j] = sum - C; }
      } else {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = sum; }
      }
      if (sum > C) {
        if (alpha[j] > C) { alpha[j] = C; alpha[i] = sum - C; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = sum; }
      }
    }
    const double dai = alpha[i] - ai_old, daj = alpha[j] - aj_old;
    for (std::size_t t = 0; t < n; ++t) grad[t] += Q(t, i) * dai + Q(t, j) * daj;
  }
  if (!converged)
    fail(ErrorCategory::computation, "train_svm: SMO did not converge within " + std::to_string(iter) + " pair updates");
  {
    double balance = 0;
    for (std::size_t t = 0; t < n; ++t) {
      balance += alpha[t] * y[t];
      if (!(alpha[t] >= 0 && alpha[t] <= C)) fail(ErrorCategory::computation, "train_svm: alpha left [0, C]");
    }
    if (std::abs(balance) > kDualBalanceTol)
      fail(ErrorCategory::computation, "train_svm: sum alpha_i y_i drifted to " + std::to_string(balance));
  }

  // bias from free vectors, or the midpoint of the feasible interval
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (alpha[t] >= C) {
      if (y[t] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (y[t] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      free_sum += yg;
    }
  }
  const double rho = n_free > 0 ? free_sum / static_cast<double>(n_free) : (ub + lb) / 2.0;
  model.bias = -rho;
  model.iterations = iter;
  model.dual_objective = svm_dual_objective(K, alpha, y);

  for (std::size_t t = 0; t < n; ++t)
    if (alpha[t] > 0) model.support_indices.push_back(t);
  const auto m = static_cast<Eigen::Index>(model.support_indices.size());
  model.support_vectors.resize(m, z.cols());
  model.dual_coefs.resize(m);
  for (Eigen::Index s = 0; s < m; ++s) {
    const auto t = model.support_indices[static_cast<std::size_t>(s)];
    model.support_vectors.row(s) = z.row(static_cast<Eigen::Index>(t));
    model.dual_coefs[s] = alpha[t] * y[t];
  }

  std::vector<double> fvals(n);
  for (std::size_t t = 0; t < n; ++t) fvals[t] = decision_value_scaled(model, z.row(static_cast<Eigen::Index>(t)).transpose());
  const auto platt = fit_platt(fvals, labels);
  model.platt_A = platt.A;
  model.platt_B = platt.B;
  return model;
}

inline SvmModel train_svm(const FeatureMatrix& fm, double C, double gamma, const SmoOptions& opt = {}) {
  if (fm.rows() == 0) fail(ErrorCategory::invalid_argument, "train_svm: empty dataset");
  return train_svm(fm.x, fm.y, C, gamma, opt);
}

struct DualFeasibility {
  double equality_residual = 0;  // |sum alpha_i y_i|
  double bound_violation = 0;    // how far any alpha leaves [0, C]
};

/// Checks the stored dual against the labels of the rows it was trained on.
inline DualFeasibility dual_feasibility(const SvmModel& m, std::span<const int> train_labels) {
  DualFeasibility f;
  double sum = 0;
  for (Eigen::Index s = 0; s < m.dual_coefs.size(); ++s) {
    const auto row = m.support_indices.at(static_cast<std::size_t>(s));
    if (row >= train_labels.size()) fail(ErrorCategory::invalid_argument, "dual_feasibility: support index out of range");
    const double y = train_labels[row] == 1 ? 1.0 : -1.0;
    const double alpha = m.dual_coefs[s] * y;
    sum += m.dual_coefs[s];
    f.bound_violation = std::max({f.bound_violation, -alpha, alpha - m.C});
  }
  f.equality_residual = std::abs(sum);
  return f;
}

/// Support vectors mapped back to the original feature space, with their
/// class (sign of the dual coefficient).
inline std::vector<std::pair<Eigen::VectorXd, int>> support_vectors_original(const SvmModel& m) {
  std::vector<std::pair<Eigen::VectorXd, int>> out;
  for (Eigen::Index s = 0; s < m.support_vectors.rows(); ++s)
    out.emplace_back(m.scaler.inverse(m.support_vectors.row(s).transpose()), m.dual_coefs[s] > 0 ? 1 : 0);
  return out;
}

inline nlohmann::json to_json(const SvmModel& m) {
  return {{"kind", "svm-rbf"},
          {"format_version", 1},
          {"gamma", m.gamma},
          {"C", m.C},
          {"bias", m.bias},
          {"platt_A", m.platt_A},
          {"platt_B", m.platt_B},
          {"scaler", to_json(m.scaler)},
          {"dual_coefs", to_json(m.dual_coefs)},
          {"support_vectors", to_json(m.support_vectors)},
          {"support_indices", m.support_indices},
          {"iterations", m.iterations},
          {"dual_objective", m.dual_objective}};
}

inline SvmModel svm_from_json(const nlohmann::json& j) {
  if (j.at("kind") != "svm-rbf" || j.at("format_version") != 1) fail(ErrorCategory::validation, "not an svm-rbf v1 model");
  SvmModel m;
  m.gamma = j.at("gamma").get<double>();
  m.C = j.at("C").get<double>();
  m.bias = j.at("bias").get<double>();
  m.platt_A = j.at("platt_A").get<double>();
  m.platt_B = j.at("platt_B").get<double>();
  m.scaler = standardizer_from_json(j.at("scaler"));
  m.dual_coefs = vector_from_json(j.at("dual_coefs"));
  m.support_vectors = matrix_from_json(j.at("support_vectors"));
  m.support_indices = j.at("support_indices").get<std::vector<std::size_t>>();
  m.iterations = j.at("iterations").get<std::size_t>();
  m.dual_objective = j.at("dual_objective").get<double>();
  if (m.support_vectors.rows() != m.dual_coefs.size() ||
      (m.support_vectors.rows() > 0 && m.support_vectors.cols() != m.scaler.dim()))
    fail(ErrorCategory::validation, "svm model shape mismatch");
  return m;
}

}  // namespace layerprobe
