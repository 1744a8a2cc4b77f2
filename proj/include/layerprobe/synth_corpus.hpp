#pragma once

// Synthetic embedding corpora with controllable confounds.
//
// Each frame of layer l (in layer group g) of an utterance is
//
//   w_label(g)     * (+/- separation/2 * noise_std) * label_axis
// + w_condition(g) * (condition_offset + condition shift)
// + w_age(g)       * age_scale * noise_std * (age - age_mean) * age_direction
// + w_content(g)   * content center of the utterance
// + N(0, noise_std^2) per coordinate
//
// where w_*(g) come from layer_profile. Shifted variants keep the geometry of
// the base spec and only move one covariate, so a model trained on the base
// corpus can be probed for what it actually keys on.

#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "layerprobe/aggregate.hpp"
#include "layerprobe/corpus_store.hpp"
#include "layerprobe/scaler.hpp"

namespace layerprobe {

struct CovariateWeights {
  double label = 1.0;
  double condition = 1.0;
  double age = 1.0;
  double content = 0.0;
};

/// Acoustic condition and age dominate the low layers, spoken content the
/// middle ones, and the label signal fades towards the top.
inline std::array<CovariateWeights, 4> default_layer_profile() {
  return {{
      {1.0, 1.0, 1.0, 0.0},  // 1-3
      {1.0, 0.6, 0.5, 1.0},  // 4-6
      {0.6, 0.3, 0.2, 1.0},  // 7-9
      {0.4, 0.2, 0.1, 0.6},  // 10-12
  }};
}

struct SynthSpec {
  std::string corpus_id = "synth";
  std::size_t n_speakers_per_class = 100;
  std::size_t utterances_per_speaker = 3;
  std::uint32_t frames_per_utterance = 2;
  double label_separation = 6.0;  // distance between class means, in noise_std units
  double noise_std = 1.0;
  double condition_scale = 2.0;  // norm of the base condition offset, in noise_std units
  double age_mean = 8.7;
  double age_std = 3.0;
  double age_scale = 0.3;  // displacement per year along age_direction, in noise_std units
  std::size_t n_content_centers = 4;
  double content_scale = 3.0;  // norm of each content center, in noise_std units
  /// Cosine between the shift directions (condition, content) and the label
  /// axis.
  double confound_alignment = 0.6;
  std::array<CovariateWeights, 4> layer_profile = default_layer_profile();
  std::uint64_t seed = 0;

  // Geometry. Empty members are drawn from the seed by complete().
  Eigen::VectorXd label_axis;
  Eigen::VectorXd condition_offset;
  Eigen::VectorXd condition_shift_direction;
  Eigen::VectorXd age_direction;
  Eigen::MatrixXd content_centers;  // k x 768
  Eigen::VectorXd content_shift_direction;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCategory::invalid_argument, "synth spec: " + m); };
    if (corpus_id.empty()) bad("corpus_id must be non-empty");
    if (n_speakers_per_class < 1 || utterances_per_speaker < 1 || frames_per_utterance < 1)
      bad("speaker, utterance and frame counts must be >= 1");
    if (!(noise_std > 0)) bad("noise_std must be > 0");
    if (!(label_separation >= 0)) bad("label_separation must be >= 0");
    if (n_content_centers < 1) bad("need at least one content center");
    if (!(age_std >= 0)) bad("age_std must be >= 0");
    if (!(confound_alignment >= 0 && confound_alignment <= 1)) bad("confound_alignment must lie in [0, 1]");
    for (const auto& w : layer_profile)
      if (w.label < 0 || w.condition < 0 || w.age < 0 || w.content < 0) bad("layer_profile weights must be >= 0");
    auto check_vec = [&](const Eigen::VectorXd& v, const char* name) {
      if (v.size() != 0 && v.size() != kEmbeddingDim) bad(std::string(name) + " must have 768 entries");
    };
    check_vec(label_axis, "label_axis");
    if (label_axis.size() && !(label_axis.norm() > 0)) bad("label_axis must be non-zero");
    check_vec(condition_offset, "condition_offset");
    check_vec(condition_shift_direction, "condition_shift_direction");
    check_vec(age_direction, "age_direction");
    check_vec(content_shift_direction, "content_shift_direction");
    if (content_centers.size() != 0 && (content_centers.cols() != kEmbeddingDim || content_centers.rows() < 1))
      bad("content_centers must be k x 768");
  }

  /// Fills every empty geometry member deterministically from the seed.
  void complete() {
    validate();
    std::mt19937_64 rng(derive_seed(seed, "synth-geometry"));
    std::normal_distribution<double> g(0.0, 1.0);
    auto random_unit = [&] {
      Eigen::VectorXd v(kEmbeddingDim);
      for (auto& e : v) e = g(rng);
      return Eigen::VectorXd(v / v.norm());
    };
    // draw everything in a fixed order so partial overrides keep the rest stable
    const Eigen::VectorXd axis = random_unit();
    const Eigen::VectorXd cond = random_unit();
    const Eigen::VectorXd cond_raw = random_unit();
    const Eigen::VectorXd age_raw = random_unit();
    const Eigen::VectorXd content_raw = random_unit();
    Eigen::MatrixXd centers(static_cast<Eigen::Index>(n_content_centers), kEmbeddingDim);
    for (Eigen::Index k = 0; k < centers.rows(); ++k) centers.row(k) = content_scale * noise_std * random_unit().transpose();

    if (label_axis.size() == 0) label_axis = axis;
    const Eigen::VectorXd u = label_axis.normalized();
    auto orthogonal = [&](const Eigen::VectorXd& v) {
      Eigen::VectorXd w = v - v.dot(u) * u;
      return Eigen::VectorXd(w / w.norm());
    };
    const double a = confound_alignment, b = std::sqrt(1.0 - a * a);
    if (condition_offset.size() == 0) condition_offset = condition_scale * noise_std * cond;
    if (condition_shift_direction.size() == 0) condition_shift_direction = a * u + b * orthogonal(cond_raw);
    if (age_direction.size() == 0) age_direction = orthogonal(age_raw);
    if (content_centers.size() == 0) content_centers = centers;
    if (content_shift_direction.size() == 0) content_shift_direction = a * u + b * orthogonal(content_raw);
  }

  bool is_complete() const {
    return label_axis.size() && condition_offset.size() && condition_shift_direction.size() && age_direction.size() &&
           content_centers.size() && content_shift_direction.size();
  }
};

enum class ShiftKind { condition, age, content };

inline std::string_view to_string(ShiftKind s) {
  switch (s) {
    case ShiftKind::condition: return "condition";
    case ShiftKind::age: return "age";
    case ShiftKind::content: return "content";
  }
  return "?";
}

inline ShiftKind parse_shift(std::string_view s) {
  if (s == "condition") return ShiftKind::condition;
  if (s == "age") return ShiftKind::age;
  if (s == "content") return ShiftKind::content;
  fail(ErrorCategory::invalid_argument, "unknown shift '" + std::string(s) + "' (expected condition, age or content)");
}

namespace detail {

struct GenPlan {
  std::string corpus_id;
  bool pathologic = true;  // generate pathologic speakers too
  Eigen::VectorXd condition;  // total condition vector
  std::string condition_tag = "base";
  double age_offset = 0;
  std::optional<Eigen::VectorXd> content_override;
  std::string noise_tag = "synth-base";
};

inline CorpusManifest generate(const SynthSpec& spec, const GenPlan& plan, const fs::path& out_dir) {
  const std::size_t n_spk = spec.n_speakers_per_class;
  CorpusManifest m;
  m.corpus_id = plan.corpus_id;
  m.label_scheme = plan.pathologic ? LabelScheme::mixed : LabelScheme::control;
  m.base_dir = out_dir;
  const double sigma = spec.noise_std;
  const std::uint32_t frames = spec.frames_per_utterance;
  const std::uint64_t noise_seed = derive_seed(spec.seed, plan.noise_tag);

  for (int label : {0, 1}) {
    if (label == 1 && !plan.pathologic) continue;
    for (std::size_t s = 0; s < n_spk; ++s) {
      char spk_buf[32];
      std::snprintf(spk_buf, sizeof spk_buf, "_%c%04zu", label ? 'p' : 'c', s + 1);
      const std::string speaker = plan.corpus_id + spk_buf;
      std::mt19937_64 spk_rng(derive_seed(noise_seed, "speaker", static_cast<std::uint64_t>(label), s));
      std::normal_distribution<double> age_dist(spec.age_mean, spec.age_std);
      const double age = std::clamp(age_dist(spk_rng) + plan.age_offset, 0.5, 120.0);
      const double class_sign = label == 1 ? 0.5 : -0.5;

      for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u) {
        char utt_buf[16];
        std::snprintf(utt_buf, sizeof utt_buf, "_u%02zu", u + 1);
        const std::string utt = speaker + utt_buf;
        std::mt19937_64 rng(derive_seed(noise_seed, "utterance", static_cast<std::uint64_t>(label), s, u));
        std::normal_distribution<double> noise(0.0, sigma);
        std::string content_tag;
        Eigen::VectorXd content;
        if (plan.content_override) {
          content = *plan.content_override;
          content_tag = "shifted-content";
        } else {
          std::uniform_int_distribution<Eigen::Index> pick(0, spec.content_centers.rows() - 1);
          const auto k = pick(rng);
          content = spec.content_centers.row(k).transpose();
          content_tag = "content-" + std::to_string(k);
        }
        EmbeddingTensor t(frames);
        for (auto g : kLayerGroups) {
          const auto& w = spec.layer_profile[group_index(g)];
          const Eigen::VectorXd mean = w.label * class_sign * spec.label_separation * sigma * spec.label_axis +
                                       w.condition * plan.condition +
                                       w.age * spec.age_scale * sigma * (age - spec.age_mean) * spec.age_direction +
                                       w.content * content;
          for (auto layer : group_members(g))
            for (std::uint32_t f = 0; f < frames; ++f) {
              float* row = t.frame_ptr(layer, f);
              for (std::uint32_t d = 0; d < kEmbeddingDim; ++d) row[d] = static_cast<float>(mean[d] + noise(rng));
            }
        }
        const std::string rel = "emb/" + utt + ".emb";
        write_embedding(t, out_dir / rel);
        m.utterances.push_back({utt, speaker, label, age, content_tag, plan.condition_tag, rel});
      }
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace detail

/// Writes <out_dir>/manifest.json and <out_dir>/emb/*.emb.
inline CorpusManifest gen_corpus(SynthSpec spec, const fs::path& out_dir) {
  spec.complete();
  detail::GenPlan plan;
  plan.corpus_id = spec.corpus_id;
  plan.condition = spec.condition_offset;
  return detail::generate(spec, plan, out_dir);
}

/// Healthy-only corpus from the base control distribution with one covariate
/// moved. Magnitude is in noise_std units for condition and content, and in
/// years for age.
inline CorpusManifest gen_shifted_variant(SynthSpec base, ShiftKind shift, double magnitude, const fs::path& out_dir,
                                          std::string corpus_id = "") {
  base.complete();
  detail::GenPlan plan;
  if (corpus_id.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "_%s_%g", std::string(to_string(shift)).c_str(), magnitude);
    corpus_id = base.corpus_id + buf;
  }
  plan.corpus_id = corpus_id;
  plan.pathologic = false;
  plan.condition = base.condition_offset;
  plan.noise_tag = "synth-shift-" + std::string(to_string(shift));
  switch (shift) {
    case ShiftKind::condition:
      plan.condition += magnitude * base.noise_std * base.condition_shift_direction;
      if (magnitude != 0) plan.condition_tag = "shifted";
      break;
    case ShiftKind::age:
      plan.age_offset = magnitude;
      break;
    case ShiftKind::content:
      plan.content_override = Eigen::VectorXd(base.content_centers.colwise().mean().transpose() +
                                              magnitude * base.noise_std * base.content_shift_direction);
      break;
  }
  return detail::generate(base, plan, out_dir);
}

// ---------------------------------------------------------------------------
// Spec files (JSON). Geometry arrays are optional.

inline nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json profile = nlohmann::json::object();
  for (auto g : kLayerGroups) {
    const auto& w = s.layer_profile[group_index(g)];
    profile[std::string(to_string(g))] = {{"label", w.label}, {"condition", w.condition}, {"age", w.age}, {"content", w.content}};
  }
  nlohmann::json j = {{"corpus_id", s.corpus_id},
                      {"n_speakers_per_class", s.n_speakers_per_class},
                      {"utterances_per_speaker", s.utterances_per_speaker},
                      {"frames_per_utterance", s.frames_per_utterance},
                      {"label_separation", s.label_separation},
                      {"noise_std", s.noise_std},
                      {"condition_scale", s.condition_scale},
                      {"age_mean", s.age_mean},
                      {"age_std", s.age_std},
                      {"age_scale", s.age_scale},
                      {"n_content_centers", s.n_content_centers},
                      {"content_scale", s.content_scale},
                      {"confound_alignment", s.confound_alignment},
                      {"layer_profile", profile},
                      {"seed", s.seed}};
  return j;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.corpus_id = j.value("corpus_id", s.corpus_id);
    s.n_speakers_per_class = j.value("n_speakers_per_class", s.n_speakers_per_class);
    s.utterances_per_speaker = j.value("utterances_per_speaker", s.utterances_per_speaker);
    s.frames_per_utterance = j.value("frames_per_utterance", s.frames_per_utterance);
    s.label_separation = j.value("label_separation", s.label_separation);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.condition_scale = j.value("condition_scale", s.condition_scale);
    s.age_mean = j.value("age_mean", s.age_mean);
    s.age_std = j.value("age_std", s.age_std);
    s.age_scale = j.value("age_scale", s.age_scale);
    s.n_content_centers = j.value("n_content_centers", s.n_content_centers);
    s.content_scale = j.value("content_scale", s.content_scale);
    s.confound_alignment = j.value("confound_alignment", s.confound_alignment);
    s.seed = j.value("seed", s.seed);
    if (auto it = j.find("layer_profile"); it != j.end()) {
      for (auto g : kLayerGroups) {
        auto gi = it->find(std::string(to_string(g)));
        if (gi == it->end()) continue;
        auto& w = s.layer_profile[group_index(g)];
        w.label = gi->value("label", w.label);
        w.condition = gi->value("condition", w.condition);
        w.age = gi->value("age", w.age);
        w.content = gi->value("content", w.content);
      }
    }
    auto vec = [&](const char* key, Eigen::VectorXd& dst) {
      if (auto it = j.find(key); it != j.end()) dst = vector_from_json(*it);
    };
    vec("label_axis", s.label_axis);
    vec("condition_offset", s.condition_offset);
    vec("condition_shift_direction", s.condition_shift_direction);
    vec("age_direction", s.age_direction);
    vec("content_shift_direction", s.content_shift_direction);
    if (auto it = j.find("content_centers"); it != j.end()) {
      const auto rows = it->get<std::vector<std::vector<double>>>();
      s.content_centers.resize(static_cast<Eigen::Index>(rows.size()), kEmbeddingDim);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != kEmbeddingDim) fail(ErrorCategory::invalid_argument, "synth spec: content centers need 768 entries");
        for (std::size_t d = 0; d < kEmbeddingDim; ++d)
          s.content_centers(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = rows[r][d];
      }
      s.n_content_centers = rows.size();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::invalid_argument, std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace layerprobe
