#pragma once

// Out-of-domain evaluation: share of a corpus classified as pathologic, per
// layer-group model.

#include <cstdio>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerprobe/aggregate.hpp"
#include "layerprobe/model.hpp"

namespace layerprobe {

/// Percent of rows predicted pathologic. Features are pushed through the
/// model's own training scaler.
inline double cross_apply(const TrainedModel& model, const FeatureMatrix& corpus) {
  if (corpus.rows() == 0) fail(ErrorCategory::invalid_argument, "cross_apply: empty corpus " + corpus.source_corpus);
  if (corpus.group != model.group)
    fail(ErrorCategory::validation, "cross_apply: layer-group mismatch (model " + model.id + " uses layers " +
                                        std::string(to_string(model.group)) + ", corpus " + corpus.source_corpus +
                                        " features are layers " + std::string(to_string(corpus.group)) + ")");
  std::size_t positive = 0;
  for (int p : predict_rows(model, corpus.x)) positive += p == 1;
  return 100.0 * static_cast<double>(positive) / static_cast<double>(corpus.rows());
}

inline std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

/// Features of one corpus for every layer group it was aggregated at.
struct CorpusFeatures {
  std::string corpus_id;
  std::map<LayerGroup, FeatureMatrix> by_group;
};

struct CrossEvalMatrix {
  std::vector<std::string> corpora;
  std::vector<LayerGroup> groups;
  std::vector<std::string> model_ids;
  std::vector<std::vector<double>> percent;  // [corpus][column]
};

inline CrossEvalMatrix eval_matrix(std::span<const TrainedModel> models, std::span<const CorpusFeatures> corpora,
                                   std::size_t jobs = 1) {
  CrossEvalMatrix out;
  std::set<LayerGroup> seen_groups;
  for (const auto& m : models) {
    if (!seen_groups.insert(m.group).second)
      fail(ErrorCategory::invalid_argument, "eval_matrix: two models for layer group " + std::string(to_string(m.group)));
    out.groups.push_back(m.group);
    out.model_ids.push_back(m.id);
  }
  std::set<std::string> seen_corpora;
  for (const auto& c : corpora) {
    if (!seen_corpora.insert(c.corpus_id).second)
      fail(ErrorCategory::invalid_argument, "eval_matrix: duplicate corpus " + c.corpus_id);
    out.corpora.push_back(c.corpus_id);
  }
  out.percent.assign(corpora.size(), std::vector<double>(models.size(), 0.0));
  const std::size_t cols = models.size();
  parallel_for(corpora.size() * cols, jobs, [&](std::size_t cell) {
    const auto r = cell / cols, c = cell % cols;
    const auto& corpus = corpora[r];
    auto it = corpus.by_group.find(models[c].group);
    try {
      if (it == corpus.by_group.end())
        fail(ErrorCategory::missing_input, "no features at layers " + std::string(to_string(models[c].group)));
      out.percent[r][c] = cross_apply(models[c], it->second);
    } catch (const Error& e) {
      throw Error(e.category(), "cell [" + corpus.corpus_id + "][" + std::string(to_string(models[c].group)) +
                                    "]: " + e.what());
    }
  });
  return out;
}

/// Corpus rows, layer-group columns, one decimal.
inline std::string matrix_to_csv(const CrossEvalMatrix& m) {
  std::ostringstream os;
  os << "corpus";
  for (auto g : m.groups) os << ',' << to_string(g);
  os << '\n';
  for (std::size_t r = 0; r < m.corpora.size(); ++r) {
    os << m.corpora[r];
    for (double v : m.percent[r]) os << ',' << format_percent(v);
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const CrossEvalMatrix& m) {
  nlohmann::json cols = nlohmann::json::array(), rows = nlohmann::json::array();
  for (std::size_t c = 0; c < m.groups.size(); ++c)
    cols.push_back({{"group", std::string(to_string(m.groups[c]))}, {"model_id", m.model_ids[c]}});
  for (std::size_t r = 0; r < m.corpora.size(); ++r) {
    nlohmann::json cells = nlohmann::json::object();
    for (std::size_t c = 0; c < m.groups.size(); ++c)
      cells[std::string(to_string(m.groups[c]))] = std::stod(format_percent(m.percent[r][c]));
    rows.push_back({{"corpus", m.corpora[r]}, {"percent_pathologic", std::move(cells)}});
  }
  return {{"metric", "percent classified pathologic"}, {"columns", std::move(cols)}, {"rows", std::move(rows)}};
}

}  // namespace layerprobe
