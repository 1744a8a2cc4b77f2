#pragma once

// Mean pooling over frames, layer groups and speakers, and the FeatureMatrix
// that feeds the classifiers.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "layerprobe/common.hpp"
#include "layerprobe/corpus_store.hpp"

namespace layerprobe {

enum class LayerGroup { L1_3, L4_6, L7_9, L10_12 };

inline constexpr std::array<LayerGroup, 4> kLayerGroups = {LayerGroup::L1_3, LayerGroup::L4_6, LayerGroup::L7_9,
                                                           LayerGroup::L10_12};

inline std::string_view to_string(LayerGroup g) {
  switch (g) {
    case LayerGroup::L1_3: return "1-3";
    case LayerGroup::L4_6: return "4-6";
    case LayerGroup::L7_9: return "7-9";
    case LayerGroup::L10_12: return "10-12";
  }
  return "?";
}

inline LayerGroup parse_layer_group(std::string_view s) {
  for (auto g : kLayerGroups)
    if (to_string(g) == s) return g;
  fail(ErrorCategory::invalid_argument, "unknown layer group '" + std::string(s) + "' (expected 1-3, 4-6, 7-9 or 10-12)");
}

inline std::size_t group_index(LayerGroup g) { return static_cast<std::size_t>(g); }

/// 1-based member layers.
inline std::array<std::uint32_t, 3> group_members(LayerGroup g) {
  const auto first = static_cast<std::uint32_t>(3 * group_index(g) + 1);
  return {first, first + 1, first + 2};
}

enum class Level { utterance, speaker };

inline std::string_view to_string(Level l) { return l == Level::speaker ? "speaker" : "utterance"; }

inline Level parse_level(std::string_view s) {
  if (s == "speaker") return Level::speaker;
  if (s == "utterance") return Level::utterance;
  fail(ErrorCategory::invalid_argument, "unknown level '" + std::string(s) + "' (expected utterance or speaker)");
}

/// Row l-1 holds the frame mean of layer l.
using LayerMeans = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline LayerMeans time_pool(const EmbeddingTensor& t) {
  if (t.n_frames() == 0) fail(ErrorCategory::validation, "time_pool: zero frames");
  LayerMeans out = LayerMeans::Zero(kNumLayers, kEmbeddingDim);
  for (std::uint32_t l = 1; l <= kNumLayers; ++l) {
    auto row = out.row(l - 1);
    for (std::uint32_t f = 0; f < t.n_frames(); ++f) {
      const float* src = t.frame_ptr(l, f);
      for (std::uint32_t d = 0; d < kEmbeddingDim; ++d) row[d] += static_cast<double>(src[d]);
    }
    row /= static_cast<double>(t.n_frames());
  }
  return out;
}

inline Eigen::VectorXd layer_group_pool(const LayerMeans& per_layer, LayerGroup g) {
  if (per_layer.rows() != kNumLayers) fail(ErrorCategory::invalid_argument, "layer_group_pool: expected 12 layer rows");
  const auto m = group_members(g);
  Eigen::VectorXd v = per_layer.row(m[0] - 1).transpose();
  v += per_layer.row(m[1] - 1).transpose();
  v += per_layer.row(m[2] - 1).transpose();
  return v / 3.0;
}

inline Eigen::VectorXd speaker_pool(std::span<const Eigen::VectorXd> utterances) {
  if (utterances.empty()) fail(ErrorCategory::validation, "speaker_pool: empty utterance list");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(utterances.front().size());
  for (const auto& u : utterances) {
    if (u.size() != sum.size()) fail(ErrorCategory::invalid_argument, "speaker_pool: dimension mismatch");
    sum += u;
  }
  return sum / static_cast<double>(utterances.size());
}

/// Classifier-ready rows bound to one layer group. Labels are 0/1.
struct FeatureMatrix {
  std::vector<std::string> ids;
  Eigen::MatrixXd x;  // rows x dim
  std::vector<int> y;
  Level level = Level::speaker;
  LayerGroup group = LayerGroup::L1_3;
  std::string source_corpus;

  std::size_t rows() const { return ids.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }

  std::size_t count(int label) const { return static_cast<std::size_t>(std::count(y.begin(), y.end(), label)); }
  bool has_both_classes() const { return count(0) > 0 && count(1) > 0; }

  FeatureMatrix subset(std::span<const std::size_t> rows_to_keep) const {
    FeatureMatrix out;
    out.level = level;
    out.group = group;
    out.source_corpus = source_corpus;
    out.x.resize(static_cast<Eigen::Index>(rows_to_keep.size()), x.cols());
    for (std::size_t i = 0; i < rows_to_keep.size(); ++i) {
      const auto r = rows_to_keep[i];
      out.ids.push_back(ids[r]);
      out.y.push_back(y[r]);
      out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(r));
    }
    return out;
  }

  void check() const {
    if (static_cast<Eigen::Index>(ids.size()) != x.rows() || ids.size() != y.size())
      fail(ErrorCategory::validation, "feature matrix: ids, rows and labels disagree in length");
    if (!x.allFinite()) fail(ErrorCategory::validation, "feature matrix contains non-finite values");
    for (int v : y)
      if (v != 0 && v != 1) fail(ErrorCategory::validation, "feature matrix labels must be 0 or 1");
  }
};

namespace detail {

struct PooledUtterance {
  std::string utterance_id;
  std::string speaker_id;
  int label;
  std::array<Eigen::VectorXd, 4> groups;
};

inline std::vector<PooledUtterance> pool_corpus(const CorpusManifest& m, std::size_t jobs) {
  if (m.utterances.empty()) fail(ErrorCategory::validation, "corpus " + m.corpus_id + " is empty");
  check_manifest(m);
  std::vector<PooledUtterance> out(m.utterances.size());
  parallel_for(m.utterances.size(), jobs, [&](std::size_t i) {
    const auto& r = m.utterances[i];
    EmbeddingTensor t;
    try {
      t = read_embedding(m.resolve(r));
    } catch (const FormatError& e) {
      throw Error(e.category(), "corpus " + m.corpus_id + " failed validation at " + r.utterance_id + ": " + e.what());
    }
    const LayerMeans per_layer = time_pool(t);
    PooledUtterance p{r.utterance_id, r.speaker_id, r.label, {}};
    for (auto g : kLayerGroups) p.groups[group_index(g)] = layer_group_pool(per_layer, g);
    out[i] = std::move(p);
  });
  std::sort(out.begin(), out.end(),
            [](const PooledUtterance& a, const PooledUtterance& b) { return a.utterance_id < b.utterance_id; });
  return out;
}

}  // namespace detail

/// Builds the matrices for all four layer groups in one pass over the files.
/// Rows are sorted by unit id; utterances inside a speaker are summed in
/// utterance-id order so the result is independent of manifest order.
inline std::array<FeatureMatrix, 4> build_datasets(const CorpusManifest& m, Level level, std::size_t jobs = 1) {
  const auto pooled = detail::pool_corpus(m, jobs);
  std::array<FeatureMatrix, 4> out;
  for (auto g : kLayerGroups) {
    auto& fm = out[group_index(g)];
    fm.level = level;
    fm.group = g;
    fm.source_corpus = m.corpus_id;
  }
  if (level == Level::utterance) {
    for (auto g : kLayerGroups) {
      auto& fm = out[group_index(g)];
      fm.x.resize(static_cast<Eigen::Index>(pooled.size()), kEmbeddingDim);
      for (std::size_t i = 0; i < pooled.size(); ++i) {
        fm.ids.push_back(pooled[i].utterance_id);
        fm.y.push_back(pooled[i].label);
        fm.x.row(static_cast<Eigen::Index>(i)) = pooled[i].groups[group_index(g)].transpose();
      }
    }
    return out;
  }
  std::map<std::string, std::vector<const detail::PooledUtterance*>> by_speaker;
  for (const auto& p : pooled) by_speaker[p.speaker_id].push_back(&p);
  for (auto g : kLayerGroups) {
    auto& fm = out[group_index(g)];
    fm.x.resize(static_cast<Eigen::Index>(by_speaker.size()), kEmbeddingDim);
    Eigen::Index row = 0;
    for (const auto& [speaker, utts] : by_speaker) {
      std::vector<Eigen::VectorXd> vs;
      vs.reserve(utts.size());
      for (const auto* u : utts) vs.push_back(u->groups[group_index(g)]);
      fm.ids.push_back(speaker);
      fm.y.push_back(utts.front()->label);
      fm.x.row(row++) = speaker_pool(vs).transpose();
    }
  }
  return out;
}

inline FeatureMatrix build_dataset(const CorpusManifest& m, LayerGroup g, Level level, std::size_t jobs = 1) {
  return std::move(build_datasets(m, level, jobs)[group_index(g)]);
}

// ---------------------------------------------------------------------------
// Export: delimited text (shortest round-trip decimals) and per-row EMB1 files (float32).

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// First line is a `#` comment with metadata; then a header row
/// `unit_id,label,x0..x{dim-1}` and one row per unit.
inline std::string features_to_csv(const FeatureMatrix& fm, const std::string& provenance = "") {
  fm.check();
  std::ostringstream os;
  os << "# layerprobe-features v1 corpus=" << fm.source_corpus << " group=" << to_string(fm.group)
     << " level=" << to_string(fm.level) << " dim=" << fm.dim();
  if (!provenance.empty()) os << " provenance=" << provenance;
  os << "\nunit_id,label";
  for (std::size_t d = 0; d < fm.dim(); ++d) os << ",x" << d;
  os << '\n';
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    os << fm.ids[i] << ',' << fm.y[i];
    for (std::size_t d = 0; d < fm.dim(); ++d)
      os << ',' << format_double(fm.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)));
    os << '\n';
  }
  return os.str();
}

inline void write_features_csv(const FeatureMatrix& fm, const fs::path& path, const std::string& provenance = "") {
  detail::write_file_bytes(path, features_to_csv(fm, provenance));
}

namespace detail {

inline std::vector<std::string_view> split_view(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string meta_value(std::string_view line, std::string_view key) {
  for (auto tok : split_view(line, ' ')) {
    if (tok.size() > key.size() && tok.substr(0, key.size()) == key && tok[key.size()] == '=')
      return std::string(tok.substr(key.size() + 1));
  }
  fail(ErrorCategory::validation, "features file header lacks '" + std::string(key) + "'");
}

}  // namespace detail

inline FeatureMatrix features_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string meta, header, line;
  if (!std::getline(in, meta) || meta.rfind("# layerprobe-features v1", 0) != 0)
    fail(ErrorCategory::validation, "not a layerprobe features file");
  FeatureMatrix fm;
  fm.source_corpus = detail::meta_value(meta, "corpus");
  fm.group = parse_layer_group(detail::meta_value(meta, "group"));
  fm.level = parse_level(detail::meta_value(meta, "level"));
  const std::size_t dim = std::stoul(detail::meta_value(meta, "dim"));
  std::getline(in, header);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_view(line, ',');
    if (cells.size() != dim + 2) fail(ErrorCategory::validation, "features row has wrong number of columns");
    fm.ids.emplace_back(cells[0]);
    fm.y.push_back(cells[1] == "1" ? 1 : (cells[1] == "0" ? 0 : -1));
    std::vector<double> v(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      auto c = cells[d + 2];
      auto res = std::from_chars(c.data(), c.data() + c.size(), v[d]);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size())
        fail(ErrorCategory::validation, "malformed number in features row " + fm.ids.back());
    }
    rows.push_back(std::move(v));
  }
  fm.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < dim; ++d) fm.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];
  fm.check();
  return fm;
}

inline FeatureMatrix read_features_csv(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) fail(ErrorCategory::missing_input, "features file not found: " + path.string());
  return features_from_csv(detail::read_file_bytes(path));
}

/// One EMB1 file per row (n_layers = 1, n_frames = 1), named <unit_id>.emb.
inline void write_features_binary(const FeatureMatrix& fm, const fs::path& dir) {
  fm.check();
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    RawTensor t{1, 1, static_cast<std::uint32_t>(fm.dim()), std::vector<float>(fm.dim())};
    for (std::size_t d = 0; d < fm.dim(); ++d)
      t.data[d] = static_cast<float>(fm.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)));
    write_tensor_file(t, dir / (fm.ids[i] + ".emb"));
  }
}

}  // namespace layerprobe
