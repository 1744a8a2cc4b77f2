#pragma once

// Training protocol: stratified 80/20 split, stratified k-fold grid search,
// refit on the full training split, test accuracy and an exact binomial test
// against chance.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerprobe/aggregate.hpp"
#include "layerprobe/common.hpp"
#include "layerprobe/model.hpp"

namespace layerprobe {

struct SvmHyper {
  double C = 5;
  double gamma = 1e-5;
};

struct FfnHyper {
  double learning_rate = 1e-3;
  Activation activation = Activation::relu;
  int hidden_layers = 2;
  int hidden_units = 64;
};

using Hyper = std::variant<SvmHyper, FfnHyper>;

inline std::string describe(const Hyper& h) {
  if (const auto* s = std::get_if<SvmHyper>(&h)) return "C=" + format_double(s->C) + ";gamma=" + format_double(s->gamma);
  const auto& f = std::get<FfnHyper>(h);
  return "lr=" + format_double(f.learning_rate) + ";activation=" + std::string(to_string(f.activation)) +
         ";layers=" + std::to_string(f.hidden_layers) + ";units=" + std::to_string(f.hidden_units);
}

inline nlohmann::json to_json(const Hyper& h) {
  if (const auto* s = std::get_if<SvmHyper>(&h)) return {{"C", s->C}, {"gamma", s->gamma}};
  const auto& f = std::get<FfnHyper>(h);
  return {{"learning_rate", f.learning_rate},
          {"activation", std::string(to_string(f.activation))},
          {"hidden_layers", f.hidden_layers},
          {"hidden_units", f.hidden_units}};
}

struct GridSpec {
  Estimator estimator = Estimator::svm;
  std::vector<Hyper> configs;
  FfnConfig ffn_base;  // epochs, batching, stopping and the fixed Adam constants
  SmoOptions smo;

  /// gamma in {1e-5, ..., 1e-1} x C in {5, 10, 20, 50}.
  static GridSpec svm_default() {
    GridSpec g;
    g.estimator = Estimator::svm;
    for (int k = 5; k >= 1; --k)
      for (double C : {5.0, 10.0, 20.0, 50.0}) g.configs.push_back(SvmHyper{C, std::pow(10.0, -k)});
    return g;
  }

  /// lr in {1e-1, ..., 1e-4} x {tanh, relu} x {2, 3} hidden layers x {32, 64, 128} units.
  static GridSpec ffn_default() {
    GridSpec g;
    g.estimator = Estimator::ffn;
    for (int k = 1; k <= 4; ++k)
      for (auto act : {Activation::tanh, Activation::relu})
        for (int layers : {2, 3})
          for (int units : {32, 64, 128}) g.configs.push_back(FfnHyper{std::pow(10.0, -k), act, layers, units});
    return g;
  }

  static GridSpec for_estimator(Estimator e) { return e == Estimator::svm ? svm_default() : ffn_default(); }
};

// ---------------------------------------------------------------------------
// Splitting

struct TrainTestSplit {
  FeatureMatrix train;
  FeatureMatrix test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

/// Stratified by label; each class contributes round((1 - ratio) * n_c) test
/// rows. Row order inside each part follows the input order.
inline TrainTestSplit split_train_test(const FeatureMatrix& fm, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0 && train_ratio < 1)) fail(ErrorCategory::invalid_argument, "split: ratio must lie in (0, 1)");
  if (fm.count(0) < 5 || fm.count(1) < 5)
    fail(ErrorCategory::validation, "split: need at least 5 rows per class (have " + std::to_string(fm.count(0)) +
                                        " control, " + std::to_string(fm.count(1)) + " pathologic)");
  std::mt19937_64 rng(derive_seed(seed, "split"));
  TrainTestSplit out;
  for (int label : {0, 1}) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < fm.rows(); ++i)
      if (fm.y[i] == label) rows.push_back(i);
    std::shuffle(rows.begin(), rows.end(), rng);
    auto n_test = static_cast<std::size_t>(std::lround((1.0 - train_ratio) * static_cast<double>(rows.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, rows.size() - 1);
    out.test_rows.insert(out.test_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train_rows.insert(out.train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::sort(out.train_rows.begin(), out.train_rows.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  out.train = fm.subset(out.train_rows);
  out.test = fm.subset(out.test_rows);
  return out;
}

/// fold[i] in [0, k) for every row. Rows are shuffled per class and dealt
/// round-robin, so fold sizes and per-fold class counts differ by at most one.
inline std::vector<std::size_t> stratified_folds(std::span<const int> y, std::size_t k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCategory::invalid_argument, "folds: k must be >= 2");
  std::mt19937_64 rng(derive_seed(seed, "folds"));
  std::vector<std::size_t> dealt;
  for (int label : {0, 1}) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == label) rows.push_back(i);
    if (rows.size() < k)
      fail(ErrorCategory::validation, "folds: class " + std::to_string(label) + " has " + std::to_string(rows.size()) +
                                          " rows, fewer than k = " + std::to_string(k));
    std::shuffle(rows.begin(), rows.end(), rng);
    dealt.insert(dealt.end(), rows.begin(), rows.end());
  }
  std::vector<std::size_t> fold(y.size());
  for (std::size_t p = 0; p < dealt.size(); ++p) fold[dealt[p]] = p % k;
  return fold;
}

// ---------------------------------------------------------------------------
// Fitting and scoring

inline std::variant<SvmModel, FfnModel> fit_hyper(const FeatureMatrix& train, const Hyper& h, const GridSpec& spec,
                                                  std::uint64_t seed) {
  if (const auto* s = std::get_if<SvmHyper>(&h)) return train_svm(train, s->C, s->gamma, spec.smo);
  const auto& f = std::get<FfnHyper>(h);
  FfnConfig cfg = spec.ffn_base;
  cfg.learning_rate = f.learning_rate;
  cfg.activation = f.activation;
  cfg.hidden_layers = f.hidden_layers;
  cfg.hidden_units = f.hidden_units;
  cfg.seed = seed;
  return train_ffn(train, cfg).model;
}

inline std::size_t count_correct(const TrainedModel& m, const FeatureMatrix& data) {
  const auto pred = predict_rows(m, data.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.y[i];
  return correct;
}

inline double evaluate(const TrainedModel& m, const FeatureMatrix& test) {
  if (test.rows() == 0) fail(ErrorCategory::invalid_argument, "evaluate: empty test set");
  if (test.group != m.group)
    fail(ErrorCategory::validation, "evaluate: model trained on layers " + std::string(to_string(m.group)) +
                                        " but features are layers " + std::string(to_string(test.group)));
  return static_cast<double>(count_correct(m, test)) / static_cast<double>(test.rows());
}

/// One-sided exact binomial p-value P(X >= correct), X ~ Bin(n, chance).
inline double significance_test(std::size_t correct, std::size_t n, double chance = 0.5) {
  if (n == 0) fail(ErrorCategory::invalid_argument, "significance_test: n must be >= 1");
  if (correct > n) fail(ErrorCategory::invalid_argument, "significance_test: correct > n");
  if (!(chance > 0 && chance < 1)) fail(ErrorCategory::invalid_argument, "significance_test: chance must lie in (0, 1)");
  if (chance == 0.5 && n <= 1000) {
    // C(n, i) is exact in a double up to well past n = 1000; 2^-n by ldexp
    double binom = 1.0, sum = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      if (i >= correct) sum += binom;
      binom = binom * static_cast<double>(n - i) / static_cast<double>(i + 1);
    }
    return std::min(1.0, std::ldexp(sum, -static_cast<int>(n)));
  }
  const double lp = std::log(chance), lq = std::log1p(-chance);
  double sum = 0;
  for (std::size_t i = correct; i <= n; ++i) {
    const double lt = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) + i * lp + (n - i) * lq;
    sum += std::exp(lt);
  }
  return std::min(1.0, sum);
}

// ---------------------------------------------------------------------------
// Grid search

struct CvCell {
  Hyper config;
  std::vector<double> fold_accuracy;
  double mean = 0;
  double stddev = 0;
};

struct CvResult {
  Estimator estimator = Estimator::svm;
  std::size_t k = 5;
  std::vector<CvCell> cells;
  std::size_t best = 0;
  std::vector<std::size_t> fold_of_row;
  std::vector<std::vector<std::string>> fold_ids;  // held-out ids per fold

  const CvCell& best_cell() const { return cells.at(best); }
};

inline std::uint64_t cell_seed(std::uint64_t seed, const Hyper& h, std::size_t fold) {
  return derive_seed(seed, "cv:" + describe(h), fold);
}

/// Every cell sees the same folds. Best = highest mean accuracy; ties go to
/// the smallest C then smallest gamma (SVM) or the fewest parameters then
/// smallest learning rate (FFN).
inline CvResult grid_search_cv(const FeatureMatrix& train, const GridSpec& spec, std::size_t k, std::uint64_t seed,
                               std::size_t jobs = 1) {
  if (spec.configs.empty()) fail(ErrorCategory::invalid_argument, "grid search: empty grid");
  CvResult res;
  res.estimator = spec.estimator;
  res.k = k;
  res.fold_of_row = stratified_folds(train.y, k, seed);
  res.fold_ids.resize(k);
  std::vector<std::vector<std::size_t>> fit_rows(k), held_rows(k);
  for (std::size_t i = 0; i < train.rows(); ++i) {
    const auto f = res.fold_of_row[i];
    res.fold_ids[f].push_back(train.ids[i]);
    held_rows[f].push_back(i);
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) fit_rows[g].push_back(i);
  }
  std::vector<FeatureMatrix> fit_sets(k), held_sets(k);
  for (std::size_t f = 0; f < k; ++f) {
    fit_sets[f] = train.subset(fit_rows[f]);
    held_sets[f] = train.subset(held_rows[f]);
  }

  const std::size_t n_cells = spec.configs.size();
  std::vector<double> acc(n_cells * k);
  parallel_for(n_cells * k, jobs, [&](std::size_t job) {
    const std::size_t c = job / k, f = job % k;
    TrainedModel m;
    m.group = train.group;
    m.level = train.level;
    m.model = fit_hyper(fit_sets[f], spec.configs[c], spec, cell_seed(seed, spec.configs[c], f));
    acc[job] = evaluate(m, held_sets[f]);
  });

  for (std::size_t c = 0; c < n_cells; ++c) {
    CvCell cell{spec.configs[c], std::vector<double>(acc.begin() + static_cast<std::ptrdiff_t>(c * k),
                                                     acc.begin() + static_cast<std::ptrdiff_t>((c + 1) * k)),
                0, 0};
    for (double a : cell.fold_accuracy) cell.mean += a;
    cell.mean /= static_cast<double>(k);
    for (double a : cell.fold_accuracy) cell.stddev += (a - cell.mean) * (a - cell.mean);
    cell.stddev = std::sqrt(cell.stddev / static_cast<double>(k));
    res.cells.push_back(std::move(cell));
  }

  auto tie_key = [&](const Hyper& h) {
    if (const auto* s = std::get_if<SvmHyper>(&h)) return std::pair<double, double>{s->C, s->gamma};
    const auto& f = std::get<FfnHyper>(h);
    return std::pair<double, double>{
        static_cast<double>(ffn_parameter_count(train.dim(), f.hidden_layers, f.hidden_units)), f.learning_rate};
  };
  double best_mean = -1;
  for (const auto& c : res.cells) best_mean = std::max(best_mean, c.mean);
  bool found = false;
  for (std::size_t c = 0; c < n_cells; ++c) {
    if (res.cells[c].mean < best_mean - 1e-12) continue;
    if (!found || tie_key(res.cells[c].config) < tie_key(res.cells[res.best].config)) {
      res.best = c;
      found = true;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Whole protocol

struct ProtocolResult {
  TrainTestSplit split;
  CvResult cv;
  TrainedModel model;
  std::size_t test_correct = 0;
  double test_accuracy = 0;
  double p_value = 1;
};

inline ProtocolResult run_protocol(const FeatureMatrix& data, const GridSpec& spec, std::uint64_t seed,
                                   std::size_t jobs = 1, std::size_t k = 5, double train_ratio = 0.8) {
  data.check();
  ProtocolResult r;
  r.split = split_train_test(data, train_ratio, seed);
  r.cv = grid_search_cv(r.split.train, spec, k, seed, jobs);
  const Hyper& best = r.cv.best_cell().config;
  r.model.id = std::string(to_string(spec.estimator)) + "_" + std::string(to_string(data.group));
  r.model.group = data.group;
  r.model.level = data.level;
  r.model.model = fit_hyper(r.split.train, best, spec, derive_seed(seed, "final:" + describe(best)));
  r.model.provenance = {{"seed", seed},
                        {"source_corpus", data.source_corpus},
                        {"best_config", to_json(best)},
                        {"cv_folds", k},
                        {"train_ratio", train_ratio},
                        {"train_rows", r.split.train.rows()},
                        {"test_rows", r.split.test.rows()}};
  r.test_correct = count_correct(r.model, r.split.test);
  r.test_accuracy = static_cast<double>(r.test_correct) / static_cast<double>(r.split.test.rows());
  r.p_value = significance_test(r.test_correct, r.split.test.rows());
  return r;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string cv_table_csv(const CvResult& cv) {
  std::ostringstream os;
  os << "config";
  for (std::size_t f = 0; f < cv.k; ++f) os << ",fold" << (f + 1);
  os << ",mean,std\n";
  for (const auto& c : cv.cells) {
    os << describe(c.config);
    for (double a : c.fold_accuracy) os << ',' << format_double(a);
    os << ',' << format_double(c.mean) << ',' << format_double(c.stddev) << '\n';
  }
  return os.str();
}

inline nlohmann::json protocol_summary(const ProtocolResult& r) {
  return {{"model_id", r.model.id},
          {"estimator", std::string(to_string(r.model.estimator()))},
          {"group", std::string(to_string(r.model.group))},
          {"level", std::string(to_string(r.model.level))},
          {"best_config", to_json(r.cv.best_cell().config)},
          {"cv_mean_accuracy", r.cv.best_cell().mean},
          {"configs_evaluated", r.cv.cells.size()},
          {"test_rows", r.split.test.rows()},
          {"test_correct", r.test_correct},
          {"test_accuracy", r.test_accuracy},
          {"significance",
           {{"test", "exact one-sided binomial vs 50% chance"}, {"p_value", r.p_value}, {"alpha", 0.05},
            {"significant", r.p_value < 0.05}}},
          {"test_ids", r.split.test.ids},
          {"provenance", r.model.provenance}};
}

}  // namespace layerprobe
