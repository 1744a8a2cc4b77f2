#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace layerprobe;

namespace {

Eigen::MatrixXd two_points(Eigen::Index dim = 768) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, dim);
  x(0, 0) = 1;
  x(1, 0) = -1;
  return x;
}

const std::vector<int> kTwoLabels{1, 0};

}  // namespace

TEST(Rbf, SelfIsOneAndUnitDistance) {
  const Eigen::VectorXd x = Eigen::VectorXd::Random(768);
  for (double g : {1e-5, 0.3, 40.0}) EXPECT_EQ(rbf_kernel(x, x, g), 1.0);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(768), b = a;
  b[3] = 1;
  EXPECT_NEAR(rbf_kernel(a, b, 1.0), 0.36787944117144233, 1e-15);
}

TEST(Rbf, SymmetricAndChecked) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd x(16), y(16);
    for (auto& v : x) v = g(rng);
    for (auto& v : y) v = g(rng);
    EXPECT_EQ(rbf_kernel(x, y, 0.1), rbf_kernel(y, x, 0.1));
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4), y = Eigen::VectorXd::Zero(5);
  EXPECT_THROW(rbf_kernel(x, y, 1.0), Error);
  y = Eigen::VectorXd::Zero(4);
  y[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(rbf_kernel(x, y, 1.0), Error);
}

TEST(TrainSvm, TwoPointSymmetric) {
  const auto m = train_svm(two_points(), kTwoLabels, 1e3, 0.5);
  ASSERT_EQ(m.dual_coefs.size(), 2);
  EXPECT_NEAR(std::abs(m.dual_coefs[0]), std::abs(m.dual_coefs[1]), 1e-12);
  EXPECT_NEAR(m.bias, 0.0, 1e-9);
  const Eigen::VectorXd mid = Eigen::VectorXd::Zero(768);
  EXPECT_NEAR(decision_value(m, mid), 0.0, 1e-9);
  EXPECT_NEAR(predict_proba(m, mid), 0.5, 1e-6);
  EXPECT_EQ(predict(m, two_points().row(0).transpose()), 1);
  EXPECT_EQ(predict(m, two_points().row(1).transpose()), 0);
}

TEST(TrainSvm, TwoPointMatchesAnalyticDual) {
  // Standardized points are +-e, so K12 = exp(-4 gamma) and the optimum is
  // alpha = 2 / (2 - 2 K12) when that is below C.
  const double gamma = 0.5, k12 = std::exp(-4 * gamma);
  const auto m = train_svm(two_points(8), kTwoLabels, 1e3, gamma);
  EXPECT_NEAR(std::abs(m.dual_coefs[0]), 1.0 / (1.0 - k12), 1e-6);
}

TEST(TrainSvm, XorIsLearned) {
  Eigen::MatrixXd x(4, 2);
  x << 1, 1, -1, -1, 1, -1, -1, 1;
  const std::vector<int> y{0, 0, 1, 1};
  const auto m = train_svm(x, y, 50, 1.0);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(predict(m, x.row(i).transpose()), y[static_cast<std::size_t>(i)]);
  std::vector<int> pm{-1, -1, 1, 1};
  const auto ref = oracle::brute_force_dual(rbf_gram(x, 1.0), pm, 50);
  ASSERT_TRUE(ref.found);
  EXPECT_NEAR(m.dual_objective, ref.objective, 1e-4);
}

TEST(TrainSvm, SingleClassRejected) {
  try {
    train_svm(two_points(), std::vector<int>{1, 1}, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("single-class"), std::string::npos);
  }
}

TEST(TrainSvm, KktAtFreeSupportVectors) {
  std::vector<int> labels;
  const auto x = oracle::blobs(30, 5, 0.8, 1.0, 12, &labels);
  SmoOptions opt;
  opt.tol = 1e-6;
  const auto m = train_svm(x, labels, 10, 0.2, opt);
  std::size_t free = 0;
  for (Eigen::Index s = 0; s < m.dual_coefs.size(); ++s) {
    if (std::abs(m.dual_coefs[s]) >= m.C - 1e-9) continue;
    ++free;
    const double y = m.dual_coefs[s] > 0 ? 1 : -1;
    EXPECT_NEAR(y * decision_value_scaled(m, m.support_vectors.row(s).transpose()), 1.0, 1e-3);
  }
  EXPECT_GT(free, 0u);
}

TEST(TrainSvm, SameInputSameBytes) {
  std::vector<int> labels;
  const auto x = oracle::blobs(20, 6, 1.0, 1.0, 5, &labels);
  EXPECT_EQ(to_json(train_svm(x, labels, 20, 0.1)).dump(), to_json(train_svm(x, labels, 20, 0.1)).dump());
}

TEST(TrainSvm, HardMarginSupportSetMatchesOracle) {
  std::vector<int> labels;
  const auto x = oracle::blobs(4, 3, 2.5, 0.5, 8, &labels);
  const auto m = train_svm(x, labels, 1e4, 0.5);
  const auto z = m.scaler.transform_rows(x);
  std::vector<int> pm;
  for (int l : labels) pm.push_back(l ? 1 : -1);
  const auto ref = oracle::brute_force_dual(rbf_gram(z, 0.5), pm, 1e4);
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i < pm.size(); ++i)
    if (ref.alpha[i] > 1e-9) expect.push_back(i);
  EXPECT_EQ(m.support_indices, expect);
  TrainedModel tm;
  tm.model = m;
  EXPECT_EQ(export_support_vectors(tm).vectors.size(), expect.size());
}

TEST(DecisionValue, ZeroCoefsGiveBias) {
  SvmModel m;
  m.support_vectors = Eigen::MatrixXd::Random(3, 4);
  m.dual_coefs = Eigen::VectorXd::Zero(3);
  m.bias = -0.7;
  m.scaler = Standardizer::identity(4);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(decision_value(m, Eigen::VectorXd::Random(4)), -0.7);
  EXPECT_THROW(decision_value(m, Eigen::VectorXd::Zero(5)), Error);
}

TEST(Platt, SeparatedValuesGiveNegativeSlope) {
  std::vector<double> f;
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    f.push_back(-1);
    y.push_back(0);
    f.push_back(1);
    y.push_back(1);
  }
  const auto p = fit_platt(f, y);
  EXPECT_LT(p.A, 0);
  EXPECT_NEAR(p.B, 0, 1e-6);
}

TEST(Platt, DegenerateInput) {
  std::vector<double> f(6, 0.4);
  std::vector<int> y{0, 1, 0, 1, 0, 1};
  try {
    fit_platt(f, y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate"), std::string::npos);
  }
}

TEST(Platt, ProbabilityStableForLargeArguments) {
  EXPECT_EQ(platt_probability(1e4, -1, 0), 1.0);
  EXPECT_EQ(platt_probability(-1e4, -1, 0), 0.0);
  EXPECT_NEAR(platt_probability(0.3, -2, 0.1), 1.0 / (1.0 + std::exp(-0.5)), 1e-15);
}

TEST(Predict, TieGoesToPathologic) {
  const auto m = oracle::linear_boundary_model(Eigen::Vector2d(1, 0));
  EXPECT_EQ(predict_proba(m, Eigen::Vector2d(0, 3)), 0.5);
  EXPECT_EQ(predict(m, Eigen::Vector2d(0, 3)), 1);
}

TEST(SvmJson, RoundTripKeepsPredictions) {
  std::vector<int> labels;
  const auto x = oracle::blobs(15, 4, 1.0, 1.0, 21, &labels);
  const auto m = train_svm(x, labels, 5, 0.3);
  const auto back = svm_from_json(nlohmann::json::parse(to_json(m).dump()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    EXPECT_EQ(predict_proba(back, x.row(i).transpose()), predict_proba(m, x.row(i).transpose()));
}
