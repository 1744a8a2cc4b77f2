#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace layerprobe;

namespace {

/// p(x) = sigmoid(k * x_0): monotone along any segment crossing x_0 = 0.
auto logistic(double k = 3.0) {
  return [k](const Eigen::VectorXd& x) { return 1.0 / (1.0 + std::exp(-k * x[0])); };
}

FeatureMatrix blob_features(std::size_t per, double offset, std::uint64_t seed) {
  std::vector<int> labels;
  FeatureMatrix fm;
  fm.x = oracle::blobs(per, 4, offset, 1.0, seed, &labels);
  fm.y = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) fm.ids.push_back("b" + std::to_string(i));
  return fm;
}

TrainedModel trained_svm(const FeatureMatrix& fm) {
  TrainedModel m;
  m.id = "svm_blobs";
  m.model = train_svm(fm, 10, 0.1);
  return m;
}

}  // namespace

TEST(FindCrossing, BisectsToTolerance) {
  const Eigen::Vector2d a(0.7324, 1), b(-0.7324, -2);  // p(a) ~ 0.9, p(b) ~ 0.1
  const auto hit = find_crossing(logistic(), a, b, 0.01);
  ASSERT_TRUE(hit);
  EXPECT_LE(std::abs(hit->p - 0.5), 0.01);
  EXPECT_EQ(hit->p, logistic()(hit->x));
}

TEST(FindCrossing, SameSideAndDegenerate) {
  EXPECT_FALSE(find_crossing(logistic(), Eigen::Vector2d(1, 0), Eigen::Vector2d(2, 5), 0.01));
  const Eigen::Vector2d on(0, 4);
  const auto hit = find_crossing(logistic(), on, on, 0.01);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->x, on);
}

TEST(Keypoints, SeparatedBlobs) {
  const auto fm = blob_features(30, 3.0, 1);
  const auto m = trained_svm(fm);
  auto prob = [&](const Eigen::VectorXd& x) { return predict_proba(m, x); };
  const auto pos = fm.subset(std::vector<std::size_t>{30, 31, 32, 33, 34, 35, 36, 37, 38, 39}).x;
  const auto neg = fm.subset(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}).x;
  const auto kp = generate_keypoints(prob, pos, neg, 50, 0.01, 2);
  EXPECT_GE(kp.size(), 45u);
  for (const auto& p : kp) EXPECT_LE(std::abs(prob(p.x) - 0.5), 0.01);
  const auto again = generate_keypoints(prob, pos, neg, 50, 0.01, 2);
  ASSERT_EQ(again.size(), kp.size());
  for (std::size_t i = 0; i < kp.size(); ++i) EXPECT_EQ(again[i].x, kp[i].x);
}

TEST(Keypoints, NoCrossingsNoPoints) {
  const Eigen::MatrixXd pos = Eigen::MatrixXd::Constant(5, 2, -3.0), neg = Eigen::MatrixXd::Constant(4, 2, -1.0);
  EXPECT_TRUE(generate_keypoints(logistic(), pos, neg, 10, 0.01, 0).empty());
}

TEST(Refine, LinearBoundaryStaysOnPlane) {
  Eigen::VectorXd c(4);
  c << 0.5, -1.2, 0.3, 2.0;
  const auto m = oracle::linear_boundary_model(c);
  const auto data = oracle::linear_boundary_data(c, 20, 3);
  BoundaryParams bp;
  bp.n_pairs = 40;
  bp.n_lines = 30;
  bp.n_sphere_samples = 8;
  bp.seed = 4;
  const auto cloud = map_boundary(m, data, bp);
  std::size_t lines = 0, nk = 0;
  for (const auto& p : cloud.points) {
    EXPECT_LE(std::abs(c.dot(p.x)) / c.norm(), 1e-3);
    EXPECT_LE(std::abs(predict_proba(m, p.x) - 0.5), 0.01);
    lines += p.generation == Generation::keypoint_line;
    nk += p.generation == Generation::segment;
  }
  EXPECT_GT(lines, 0u);
  EXPECT_LE(cloud.points.size(), nk + bp.n_lines * bp.probes_per_segment + nk * bp.n_sphere_samples);
  EXPECT_EQ(cloud.support_vectors.size(), 2u);
}

TEST(Refine, NeedsTwoKeypoints) {
  std::vector<BoundaryPoint> one{{Eigen::Vector2d(0, 0), 0.5, Generation::segment, 0}};
  EXPECT_THROW(refine_keypoints(logistic(), one, 5, 5, 0.01, 0), Error);
}

TEST(SupportVectors, TwoPointModelExportsBoth) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 3);
  x(0, 1) = 1;
  x(1, 1) = -1;
  TrainedModel m;
  m.model = train_svm(x, std::vector<int>{1, 0}, 100, 0.5);
  const auto ex = export_support_vectors(m);
  ASSERT_EQ(ex.vectors.size(), 2u);
  EXPECT_EQ(ex.vectors[0].label + ex.vectors[1].label, 1);
  for (const auto& v : ex.vectors) EXPECT_LT((v.x - x.row(v.label ? 0 : 1).transpose()).norm(), 1e-12);
  EXPECT_TRUE(ex.notice.empty());
}

TEST(SupportVectors, FfnHasNone) {
  TrainedModel m;
  m.id = "ffn_1-3";
  FfnConfig cfg;
  cfg.hidden_units = 3;
  m.model = init_ffn(cfg, 4);
  const auto ex = export_support_vectors(m);
  EXPECT_TRUE(ex.vectors.empty());
  EXPECT_FALSE(ex.notice.empty());
}

TEST(MapBoundary, GroupMismatchRejected) {
  auto fm = blob_features(10, 2.0, 5);
  const auto m = trained_svm(fm);
  fm.group = LayerGroup::L7_9;
  EXPECT_THROW(map_boundary(m, fm, {}), Error);
}

TEST(CloudCsv, RoundTrip) {
  const auto fm = blob_features(15, 2.0, 6);
  const auto m = trained_svm(fm);
  BoundaryParams bp;
  bp.n_pairs = 20;
  bp.n_lines = 5;
  bp.n_sphere_samples = 3;
  const auto cloud = map_boundary(m, fm, bp);
  const auto back = cloud_from_csv(cloud_to_csv(cloud, "test"));
  ASSERT_EQ(back.points.size(), cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    EXPECT_EQ(back.points[i].x, cloud.points[i].x);
    EXPECT_EQ(back.points[i].generation, cloud.points[i].generation);
  }
  const auto svs = support_vectors_from_csv(support_vectors_to_csv(cloud.support_vectors));
  ASSERT_EQ(svs.size(), cloud.support_vectors.size());
  EXPECT_EQ(svs.front().x, cloud.support_vectors.front().x);
}

TEST(Projection, RowsAndTagsPreserved) {
  const auto fm = blob_features(30, 2.0, 7);
  const auto m = trained_svm(fm);
  BoundaryParams bp;
  bp.n_pairs = 30;
  bp.n_lines = 10;
  bp.n_sphere_samples = 0;
  const auto cloud = map_boundary(m, fm, bp);
  TsneConfig cfg;
  cfg.perplexity = 10;
  cfg.seed = 8;
  const auto proj = project_boundary(fm, cloud, cfg);
  ASSERT_EQ(proj.rows.size(), fm.rows() + cloud.points.size() + cloud.support_vectors.size());
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    EXPECT_EQ(proj.rows[i].id, fm.ids[i]);
    EXPECT_EQ(proj.rows[i].tag, fm.y[i] ? "data-pos" : "data-neg");
  }
  EXPECT_EQ(proj.rows[fm.rows()].tag, "boundary");
  EXPECT_EQ(proj.rows.back().tag.substr(0, 3), "sv-");

  // boundary points lie between the classes: along the centroid axis on
  // average, and about as far from one centroid as from the other. t-SNE
  // spreads them across the axis, so raw distances are not compared.
  Eigen::Vector2d c0 = Eigen::Vector2d::Zero(), c1 = c0;
  std::vector<Eigen::Vector2d> boundary;
  for (const auto& r : proj.rows) {
    const Eigen::Vector2d p(r.x, r.y);
    if (r.tag == "data-neg") c0 += p / 30.0;
    if (r.tag == "data-pos") c1 += p / 30.0;
    if (r.tag == "boundary") boundary.push_back(p);
  }
  ASSERT_FALSE(boundary.empty());
  const Eigen::Vector2d axis = c1 - c0;
  double t = 0, d0 = 0, d1 = 0;
  const auto nb = static_cast<double>(boundary.size());
  for (const auto& p : boundary) {
    t += (p - c0).dot(axis) / axis.squaredNorm() / nb;
    d0 += (p - c0).norm() / nb;
    d1 += (p - c1).norm() / nb;
  }
  EXPECT_GT(t, 0.0);
  EXPECT_LT(t, 1.0);
  EXPECT_GT(d0 / d1, 0.5);
  EXPECT_LT(d0 / d1, 2.0);
}
