#pragma once

// Corpus manifests and the EMB1 embedding file format.
//
// EMB1 layout, little-endian throughout:
//   bytes 0..3   magic "EMB1"
//   bytes 4..7   u32 n_layers
//   bytes 8..11  u32 n_frames
//   bytes 12..15 u32 dim
//   then n_layers * n_frames * dim f32 values, layer-major, frame-major,
//   dim-minor. Layer k (1-based, as used in reports) is stored at index k-1.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerprobe/common.hpp"

namespace layerprobe {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kNumLayers = 12;
inline constexpr std::uint32_t kEmbeddingDim = 768;
inline constexpr std::size_t kTensorHeaderBytes = 16;
inline constexpr int kManifestVersion = 1;

/// Why an embedding file was rejected. The names double as the status
/// strings of ValidationReport.
enum class FormatFault { missing, io, bad_magic, layer_count, dim_mismatch, truncated, trailing_bytes, non_finite, empty };

inline std::string_view to_string(FormatFault f) {
  switch (f) {
    case FormatFault::missing: return "missing";
    case FormatFault::io: return "io error";
    case FormatFault::bad_magic: return "bad magic";
    case FormatFault::layer_count: return "layer count must be 12";
    case FormatFault::dim_mismatch: return "dim mismatch";
    case FormatFault::truncated: return "truncated payload";
    case FormatFault::trailing_bytes: return "trailing bytes";
    case FormatFault::non_finite: return "non-finite value";
    case FormatFault::empty: return "zero frames";
  }
  return "unknown";
}

class FormatError : public Error {
 public:
  FormatError(FormatFault fault, const std::string& detail)
      : Error(fault == FormatFault::missing ? ErrorCategory::missing_input : ErrorCategory::validation,
              std::string(to_string(fault)) + (detail.empty() ? "" : ": " + detail)),
        fault_(fault) {}
  FormatFault fault() const noexcept { return fault_; }

 private:
  FormatFault fault_;
};

/// Any-shape EMB1 payload. Used directly for feature exports (1 x 1 x dim);
/// EmbeddingTensor adds the 12 x frames x 768 contract on top.
struct RawTensor {
  std::uint32_t n_layers = 0;
  std::uint32_t n_frames = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;

  std::size_t expected_size() const {
    return static_cast<std::size_t>(n_layers) * n_frames * dim;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_file_bytes(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw FormatError(FormatFault::missing, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatFault::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatFault::io, "read failed for " + path.string());
  return bytes;
}

inline void write_file_bytes(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCategory::computation, "cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCategory::computation, "write failed: " + path.string());
}

}  // namespace detail

inline std::string encode_tensor(const RawTensor& t) {
  if (t.data.size() != t.expected_size())
    fail(ErrorCategory::invalid_argument, "tensor payload size does not match its shape");
  std::string out;
  out.reserve(kTensorHeaderBytes + 4 * t.data.size());
  out.append("EMB1", 4);
  detail::put_u32(out, t.n_layers);
  detail::put_u32(out, t.n_frames);
  detail::put_u32(out, t.dim);
  for (float v : t.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline RawTensor decode_tensor(const std::string& bytes) {
  if (bytes.size() < kTensorHeaderBytes) {
    if (bytes.size() >= 4 && bytes.compare(0, 4, "EMB1") != 0) throw FormatError(FormatFault::bad_magic, "");
    throw FormatError(FormatFault::truncated, "header shorter than 16 bytes");
  }
  if (bytes.compare(0, 4, "EMB1") != 0) throw FormatError(FormatFault::bad_magic, bytes.substr(0, 4));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  RawTensor t;
  t.n_layers = detail::get_u32(p + 4);
  t.n_frames = detail::get_u32(p + 8);
  t.dim = detail::get_u32(p + 12);
  // widened so a hostile header cannot wrap the size computation
  const auto cells = static_cast<unsigned __int128>(t.n_layers) * t.n_frames * t.dim;
  if (kTensorHeaderBytes + 4 * cells > bytes.size())
    throw FormatError(FormatFault::truncated, "header promises more data than the file holds");
  const std::size_t want = kTensorHeaderBytes + 4 * t.expected_size();
  if (bytes.size() < want)
    throw FormatError(FormatFault::truncated,
                      "expected " + std::to_string(want) + " bytes, got " + std::to_string(bytes.size()));
  if (bytes.size() > want) throw FormatError(FormatFault::trailing_bytes, std::to_string(bytes.size() - want));
  t.data.resize(t.expected_size());
  for (std::size_t i = 0; i < t.data.size(); ++i)
    t.data[i] = std::bit_cast<float>(detail::get_u32(p + kTensorHeaderBytes + 4 * i));
  return t;
}

inline RawTensor read_tensor_file(const fs::path& path) { return decode_tensor(detail::read_file_bytes(path)); }

inline void write_tensor_file(const RawTensor& t, const fs::path& path) {
  detail::write_file_bytes(path, encode_tensor(t));
}

/// Per-utterance hidden states of the 12 transformer blocks.
class EmbeddingTensor {
 public:
  EmbeddingTensor() = default;
  explicit EmbeddingTensor(std::uint32_t n_frames)
      : n_frames_(n_frames), data_(static_cast<std::size_t>(kNumLayers) * n_frames * kEmbeddingDim, 0.0f) {}
  EmbeddingTensor(std::uint32_t n_frames, std::vector<float> data) : n_frames_(n_frames), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(kNumLayers) * n_frames * kEmbeddingDim)
      fail(ErrorCategory::invalid_argument, "embedding payload size does not match 12 x frames x 768");
  }

  std::uint32_t n_frames() const { return n_frames_; }
  static constexpr std::uint32_t n_layers() { return kNumLayers; }
  static constexpr std::uint32_t dim() { return kEmbeddingDim; }

  /// `layer` is 1-based (1..12).
  float& at(std::uint32_t layer, std::uint32_t frame, std::uint32_t d) { return data_[index(layer, frame, d)]; }
  float at(std::uint32_t layer, std::uint32_t frame, std::uint32_t d) const { return data_[index(layer, frame, d)]; }

  /// Contiguous frame row of `dim()` values.
  const float* frame_ptr(std::uint32_t layer, std::uint32_t frame) const { return &data_[index(layer, frame, 0)]; }
  float* frame_ptr(std::uint32_t layer, std::uint32_t frame) { return &data_[index(layer, frame, 0)]; }

  const std::vector<float>& data() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const EmbeddingTensor&, const EmbeddingTensor&) = default;

 private:
  std::size_t index(std::uint32_t layer, std::uint32_t frame, std::uint32_t d) const {
    return ((static_cast<std::size_t>(layer - 1) * n_frames_) + frame) * kEmbeddingDim + d;
  }

  std::uint32_t n_frames_ = 0;
  std::vector<float> data_;
};

inline EmbeddingTensor to_embedding(RawTensor raw) {
  if (raw.n_layers != kNumLayers) throw FormatError(FormatFault::layer_count, "header declares " + std::to_string(raw.n_layers));
  if (raw.dim != kEmbeddingDim) throw FormatError(FormatFault::dim_mismatch, "header declares " + std::to_string(raw.dim));
  if (raw.n_frames == 0) throw FormatError(FormatFault::empty, "");
  EmbeddingTensor t(raw.n_frames, std::move(raw.data));
  if (!t.all_finite()) throw FormatError(FormatFault::non_finite, "");
  return t;
}

inline EmbeddingTensor read_embedding(const fs::path& path) { return to_embedding(read_tensor_file(path)); }

inline void write_embedding(const EmbeddingTensor& t, const fs::path& path) {
  if (t.n_frames() == 0) throw FormatError(FormatFault::empty, path.string());
  if (!t.all_finite()) throw FormatError(FormatFault::non_finite, path.string());
  write_tensor_file(RawTensor{kNumLayers, t.n_frames(), kEmbeddingDim, t.data()}, path);
}

// ---------------------------------------------------------------------------
// Manifests

enum class LabelScheme { pathologic, control, mixed };

inline std::string_view to_string(LabelScheme s) {
  switch (s) {
    case LabelScheme::pathologic: return "pathologic";
    case LabelScheme::control: return "control";
    case LabelScheme::mixed: return "mixed";
  }
  return "mixed";
}

struct UtteranceRecord {
  std::string utterance_id;
  std::string speaker_id;
  int label = 0;  // 1 = pathologic, 0 = control
  std::optional<double> age_years;  // absent is not the same as 0
  std::string content_tag;
  std::string condition_tag;
  std::string embedding_path;  // relative paths resolve against the manifest directory

  friend bool operator==(const UtteranceRecord&, const UtteranceRecord&) = default;
};

struct CorpusManifest {
  std::string corpus_id;
  LabelScheme label_scheme = LabelScheme::mixed;
  std::vector<UtteranceRecord> utterances;
  fs::path base_dir;  // not serialized

  fs::path resolve(const UtteranceRecord& r) const {
    fs::path p(r.embedding_path);
    return p.is_absolute() ? p : base_dir / p;
  }

  friend bool operator==(const CorpusManifest& a, const CorpusManifest& b) {
    return a.corpus_id == b.corpus_id && a.label_scheme == b.label_scheme && a.utterances == b.utterances;
  }
};

/// Checks the manifest invariants that do not need the filesystem.
inline void check_manifest(const CorpusManifest& m) {
  auto bad = [](const std::string& msg) { fail(ErrorCategory::validation, msg); };
  if (m.corpus_id.empty()) bad("corpus_id must be non-empty");
  std::map<std::string, int> speaker_label;
  std::set<std::string> utt_ids;
  for (const auto& r : m.utterances) {
    if (r.utterance_id.empty()) bad("missing required field: utterance_id");
    if (r.speaker_id.empty()) bad("missing required field: speaker_id in " + r.utterance_id);
    if (r.embedding_path.empty()) bad("missing required field: embedding_path in " + r.utterance_id);
    if (!utt_ids.insert(r.utterance_id).second) bad("duplicate utterance_id " + r.utterance_id);
    if (r.label != 0 && r.label != 1) bad("label must be 0 or 1 in " + r.utterance_id);
    if (r.age_years && !(*r.age_years >= 0.0 && *r.age_years <= 120.0))
      bad("age out of range in " + r.utterance_id);
    auto [it, inserted] = speaker_label.emplace(r.speaker_id, r.label);
    if (!inserted && it->second != r.label) bad("conflicting label for speaker " + r.speaker_id);
    if (m.label_scheme == LabelScheme::pathologic && r.label != 1)
      bad("label_scheme pathologic but " + r.utterance_id + " is labeled control");
    if (m.label_scheme == LabelScheme::control && r.label != 0)
      bad("label_scheme control but " + r.utterance_id + " is labeled pathologic");
  }
}

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& r : m.utterances) {
    nlohmann::json j = {{"utterance_id", r.utterance_id},
                        {"speaker_id", r.speaker_id},
                        {"label", r.label},
                        {"content_tag", r.content_tag},
                        {"condition_tag", r.condition_tag},
                        {"embedding_path", r.embedding_path}};
    j["age_years"] = r.age_years ? nlohmann::json(*r.age_years) : nlohmann::json(nullptr);
    utts.push_back(std::move(j));
  }
  return {{"manifest_version", kManifestVersion},
          {"corpus_id", m.corpus_id},
          {"label_scheme", std::string(to_string(m.label_scheme))},
          {"utterances", std::move(utts)}};
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j, fs::path base_dir = {}) {
  auto bad = [](const std::string& msg) { fail(ErrorCategory::validation, msg); };
  if (!j.is_object()) bad("manifest must be an object");
  auto require = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
    auto it = obj.find(key);
    if (it == obj.end()) bad(std::string("missing required field: ") + key);
    return *it;
  };
  auto str = [&](const nlohmann::json& obj, const char* key) {
    const auto& v = require(obj, key);
    if (!v.is_string()) bad(std::string(key) + " must be a string");
    return v.get<std::string>();
  };
  const auto& version = require(j, "manifest_version");
  if (!version.is_number_integer() || version.get<int>() != kManifestVersion)
    bad("unsupported manifest_version (expected 1)");

  CorpusManifest m;
  m.base_dir = std::move(base_dir);
  m.corpus_id = str(j, "corpus_id");
  const std::string scheme = str(j, "label_scheme");
  if (scheme == "pathologic") m.label_scheme = LabelScheme::pathologic;
  else if (scheme == "control") m.label_scheme = LabelScheme::control;
  else if (scheme == "mixed") m.label_scheme = LabelScheme::mixed;
  else bad("unknown label_scheme '" + scheme + "'");

  const auto& utts = require(j, "utterances");
  if (!utts.is_array()) bad("utterances must be an array");
  for (const auto& u : utts) {
    if (!u.is_object()) bad("utterance entries must be objects");
    UtteranceRecord r;
    r.utterance_id = str(u, "utterance_id");
    r.speaker_id = str(u, "speaker_id");
    const auto& label = require(u, "label");
    if (!label.is_number_integer()) bad("label must be 0 or 1 in " + r.utterance_id);
    r.label = label.get<int>();
    if (auto it = u.find("age_years"); it != u.end() && !it->is_null()) {
      if (!it->is_number()) bad("age_years must be a number or null in " + r.utterance_id);
      r.age_years = it->get<double>();
    }
    r.content_tag = str(u, "content_tag");
    r.condition_tag = str(u, "condition_tag");
    r.embedding_path = str(u, "embedding_path");
    m.utterances.push_back(std::move(r));
  }
  check_manifest(m);
  return m;
}

inline CorpusManifest load_manifest(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) fail(ErrorCategory::missing_input, "manifest not found: " + path.string());
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCategory::validation, std::string("manifest parse failure: ") + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void save_manifest(const CorpusManifest& m, const fs::path& path) {
  check_manifest(m);
  detail::write_file_bytes(path, manifest_to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Validation

struct FileCheck {
  std::string utterance_id;
  std::string path;
  bool ok = false;
  std::string status;  // "ok" or a FormatFault name
  std::string message;
};

struct ValidationReport {
  std::string corpus_id;
  std::vector<FileCheck> files;
  std::size_t passed = 0;
  std::size_t failures = 0;
  bool pass = false;
};

inline FileCheck check_embedding_file(const UtteranceRecord& r, const fs::path& path) {
  FileCheck c{r.utterance_id, r.embedding_path, false, "", ""};
  try {
    read_embedding(path);
    c.ok = true;
    c.status = "ok";
  } catch (const FormatError& e) {
    c.status = std::string(to_string(e.fault()));
    c.message = e.what();
  }
  return c;
}

/// Never throws on bad files; every utterance gets a status line.
inline ValidationReport validate_corpus(const CorpusManifest& m, std::size_t jobs = 1) {
  ValidationReport rep;
  rep.corpus_id = m.corpus_id;
  rep.files.resize(m.utterances.size());
  parallel_for(m.utterances.size(), jobs,
               [&](std::size_t i) { rep.files[i] = check_embedding_file(m.utterances[i], m.resolve(m.utterances[i])); });
  for (const auto& f : rep.files) (f.ok ? rep.passed : rep.failures)++;
  rep.pass = rep.failures == 0;
  return rep;
}

inline nlohmann::json to_json(const ValidationReport& rep) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : rep.files)
    files.push_back({{"utterance_id", f.utterance_id}, {"path", f.path}, {"status", f.status}, {"message", f.message}});
  return {{"corpus_id", rep.corpus_id},
          {"pass", rep.pass},
          {"total", rep.files.size()},
          {"passed", rep.passed},
          {"failures", rep.failures},
          {"files", std::move(files)}};
}

}  // namespace layerprobe
