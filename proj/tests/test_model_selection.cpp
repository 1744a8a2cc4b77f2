#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace layerprobe;
using testutil::TempDir;

namespace {

FeatureMatrix rows_50_50() {
  FeatureMatrix fm;
  fm.x = Eigen::MatrixXd::Random(100, 3);
  for (int i = 0; i < 100; ++i) {
    fm.ids.push_back("r" + std::to_string(i));
    fm.y.push_back(i % 2);
  }
  return fm;
}

/// Points on the positive (label 1) or negative side of x_0 = 0.
FeatureMatrix sided(std::vector<double> x0, std::vector<int> y) {
  FeatureMatrix fm;
  fm.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x0.size()), 2);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    fm.x(static_cast<Eigen::Index>(i), 0) = x0[i];
    fm.ids.push_back("p" + std::to_string(i));
  }
  fm.y = std::move(y);
  fm.source_corpus = "fixture";
  return fm;
}

}  // namespace

TEST(Split, StratifiedCounts) {
  const auto fm = rows_50_50();
  const auto s = split_train_test(fm, 0.8, 1);
  EXPECT_EQ(s.train.rows(), 80u);
  EXPECT_EQ(s.test.rows(), 20u);
  EXPECT_EQ(s.train.count(0), 40u);
  EXPECT_EQ(s.test.count(1), 10u);
  std::set<std::string> all(s.train.ids.begin(), s.train.ids.end());
  for (const auto& id : s.test.ids) EXPECT_TRUE(all.insert(id).second);
  EXPECT_EQ(all.size(), 100u);
}

TEST(Split, SameSeedSameSplit) {
  const auto fm = rows_50_50();
  EXPECT_EQ(split_train_test(fm, 0.8, 4).test_rows, split_train_test(fm, 0.8, 4).test_rows);
  EXPECT_NE(split_train_test(fm, 0.8, 4).test_rows, split_train_test(fm, 0.8, 5).test_rows);
}

TEST(Split, TinyInputRejected) {
  auto fm = sided({1, -1, 2}, {1, 0, 1});
  EXPECT_THROW(split_train_test(fm, 0.8, 0), Error);
}

TEST(Folds, PartitionAndStratification) {
  std::vector<int> y(47);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3 == 0;
  const auto fold = stratified_folds(y, 5, 9);
  for (int label : {0, 1}) {
    std::array<int, 5> n{};
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == label) ++n[fold[i]];
    EXPECT_LE(*std::max_element(n.begin(), n.end()) - *std::min_element(n.begin(), n.end()), 1);
  }
  EXPECT_THROW(stratified_folds(std::vector<int>{0, 0, 0, 1, 1}, 3, 0), Error);
}

TEST(Grid, SvmHasTwentyConfigsFfnFortyEight) {
  EXPECT_EQ(GridSpec::svm_default().configs.size(), 20u);
  EXPECT_EQ(GridSpec::ffn_default().configs.size(), 48u);
  EXPECT_EQ(describe(GridSpec::svm_default().configs.front()), "C=5;gamma=1e-05");
}

TEST(Grid, AllTiedPicksSmallestCAndGamma) {
  // low-dimensional, far-apart blobs: every grid point classifies perfectly
  std::vector<int> labels;
  FeatureMatrix fm;
  fm.x = oracle::blobs(20, 2, 6.0, 0.5, 3, &labels);
  fm.y = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) fm.ids.push_back("b" + std::to_string(i));
  const auto cv = grid_search_cv(fm, GridSpec::svm_default(), 5, 3);
  for (const auto& c : cv.cells) ASSERT_EQ(c.mean, 1.0) << describe(c.config);
  const auto& best = std::get<SvmHyper>(cv.best_cell().config);
  EXPECT_EQ(best.C, 5.0);
  EXPECT_DOUBLE_EQ(best.gamma, 1e-5);
  EXPECT_EQ(cv_table_csv(cv).rfind("config,fold1,", 0), 0u);
}

TEST(Grid, ThreadCountDoesNotChangeResults) {
  TempDir dir("grid_jobs");
  const auto m = gen_corpus(testutil::small_spec(15, 4), dir / "c");
  auto fm = build_dataset(m, LayerGroup::L10_12, Level::speaker);
  auto a = run_protocol(fm, GridSpec::svm_default(), 2, 1);
  auto b = run_protocol(fm, GridSpec::svm_default(), 2, 3);
  EXPECT_EQ(cv_table_csv(a.cv), cv_table_csv(b.cv));
  EXPECT_EQ(to_json(a.model).dump(), to_json(b.model).dump());
}

TEST(Evaluate, CountsAndInversion) {
  const auto model = oracle::linear_boundary_model(Eigen::Vector2d(1, 0));
  auto fm = sided({2, 1, -1, -3, 0.5}, {1, 1, 0, 0, 0});
  EXPECT_DOUBLE_EQ(evaluate(model, fm), 0.8);
  for (auto& y : fm.y) y = 1 - y;
  EXPECT_DOUBLE_EQ(evaluate(model, fm), 0.2);
  fm.group = LayerGroup::L4_6;
  EXPECT_THROW(evaluate(model, fm), Error);
}

TEST(Evaluate, SeparableCorpusIsPerfect) {
  TempDir dir("eval_sep");
  const auto m = gen_corpus(testutil::small_spec(25, 5), dir / "c");
  const auto r = run_protocol(build_dataset(m, LayerGroup::L1_3, Level::speaker), GridSpec::svm_default(), 5);
  EXPECT_EQ(r.test_accuracy, 1.0);
  EXPECT_EQ(r.p_value, std::ldexp(1.0, -static_cast<int>(r.split.test.rows())));
}

TEST(Significance, ExactValues) {
  EXPECT_EQ(significance_test(10, 10), std::ldexp(1.0, -10));
  EXPECT_NEAR(significance_test(5, 10), 638.0 / 1024.0, 1e-15);
  EXPECT_NEAR(significance_test(5, 10), 0.623, 1e-3);
  EXPECT_EQ(significance_test(0, 10), 1.0);
  for (std::uint64_t k = 0; k <= 40; ++k) EXPECT_NEAR(significance_test(k, 40), oracle::binomial_tail_half(k, 40), 1e-15);
  EXPECT_NEAR(significance_test(3, 4, 0.25), 13.0 / 256.0, 1e-15);
  EXPECT_THROW(significance_test(0, 0), Error);
  EXPECT_THROW(significance_test(5, 4), Error);
}

TEST(CrossApply, PercentPathologic) {
  const auto model = oracle::linear_boundary_model(Eigen::Vector2d(1, 0));
  EXPECT_DOUBLE_EQ(cross_apply(model, sided({1, 2, -1, -2}, {0, 0, 0, 0})), 50.0);
  EXPECT_DOUBLE_EQ(cross_apply(model, sided({1, 2, 3}, {0, 0, 0})), 100.0);
  EXPECT_THROW(cross_apply(model, FeatureMatrix{}), Error);
}

TEST(CrossApply, OwnTrainingControlsMirrorAccuracy) {
  std::vector<int> labels;
  const auto x = oracle::blobs(30, 4, 0.4, 1.0, 6, &labels);
  FeatureMatrix fm;
  fm.x = x;
  fm.y = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) fm.ids.push_back("b" + std::to_string(i));
  TrainedModel m;
  m.model = train_svm(fm, 5, 0.5);
  std::vector<std::size_t> controls;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!labels[i]) controls.push_back(i);
  const auto ctrl = fm.subset(controls);
  EXPECT_NEAR(cross_apply(m, ctrl), 100.0 - 100.0 * evaluate(m, ctrl), 1e-12);
}

TEST(EvalMatrix, ShapeAndRange) {
  TempDir dir("matrix");
  const auto a = gen_corpus(testutil::small_spec(10, 7, "a"), dir / "a");
  const auto b = gen_shifted_variant(testutil::small_spec(10, 7, "a"), ShiftKind::condition, 8, dir / "b");
  const auto fa = build_datasets(a, Level::speaker), fb = build_datasets(b, Level::speaker);
  std::vector<TrainedModel> models;
  std::vector<CorpusFeatures> corpora(2);
  corpora[0].corpus_id = a.corpus_id;
  corpora[1].corpus_id = b.corpus_id;
  for (auto g : kLayerGroups) {
    TrainedModel m;
    m.id = "svm_" + std::string(to_string(g));
    m.group = g;
    m.model = train_svm(fa[group_index(g)], 5, 1e-4);
    models.push_back(std::move(m));
    corpora[0].by_group[g] = fa[group_index(g)];
    corpora[1].by_group[g] = fb[group_index(g)];
  }
  const auto mat = eval_matrix(models, corpora, 2);
  ASSERT_EQ(mat.percent.size(), 2u);
  for (const auto& row : mat.percent) {
    ASSERT_EQ(row.size(), 4u);
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
    }
  }
  EXPECT_EQ(mat.percent[1][0], 100.0);
  EXPECT_EQ(matrix_to_csv(mat).substr(0, 23), "corpus,1-3,4-6,7-9,10-1");
  EXPECT_EQ(to_json(mat)["rows"][1]["corpus"], b.corpus_id);

  models.push_back(models.front());
  EXPECT_THROW(eval_matrix(models, corpora), Error);
}

TEST(ModelFile, SaveLoadPreservesPredictions) {
  TempDir dir("modelfile");
  std::vector<int> labels;
  const auto x = oracle::blobs(10, 3, 1.0, 1.0, 8, &labels);
  TrainedModel svm;
  svm.id = "svm_7-9";
  svm.group = LayerGroup::L7_9;
  svm.model = train_svm(x, labels, 10, 0.3);
  FfnConfig cfg;
  cfg.hidden_units = 4;
  cfg.max_epochs = 3;
  TrainedModel ffn = svm;
  ffn.id = "ffn_7-9";
  ffn.model = train_ffn(x, labels, cfg).model;
  for (const auto& m : {svm, ffn}) {
    save_model(m, dir / (m.id + ".json"));
    const auto back = load_model(dir / (m.id + ".json"));
    EXPECT_EQ(back.estimator(), m.estimator());
    EXPECT_EQ(back.group, LayerGroup::L7_9);
    EXPECT_EQ(predict_rows(back, x), predict_rows(m, x));
    EXPECT_EQ(to_json(back).dump(), to_json(m).dump());
  }
  EXPECT_THROW(load_model(dir / "none.json"), Error);
}
