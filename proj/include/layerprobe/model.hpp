#pragma once

#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "layerprobe/aggregate.hpp"
#include "layerprobe/ffn.hpp"
#include "layerprobe/svm_rbf.hpp"

namespace layerprobe {

enum class Estimator { svm, ffn };

inline std::string_view to_string(Estimator e) { return e == Estimator::svm ? "svm" : "ffn"; }

inline Estimator parse_estimator(std::string_view s) {
  if (s == "svm") return Estimator::svm;
  if (s == "ffn") return Estimator::ffn;
  fail(ErrorCategory::invalid_argument, "unknown estimator '" + std::string(s) + "' (expected svm or ffn)");
}

/// A classifier bound to the layer group (and aggregation level) it was
/// trained on.
struct TrainedModel {
  std::string id;
  LayerGroup group = LayerGroup::L1_3;
  Level level = Level::speaker;
  std::variant<SvmModel, FfnModel> model;
  nlohmann::json provenance = nlohmann::json::object();

  Estimator estimator() const { return std::holds_alternative<SvmModel>(model) ? Estimator::svm : Estimator::ffn; }
  const SvmModel* svm() const { return std::get_if<SvmModel>(&model); }
  const FfnModel* ffn() const { return std::get_if<FfnModel>(&model); }
};

inline double predict_proba(const TrainedModel& m, const Eigen::VectorXd& x) {
  return std::visit([&](const auto& inner) { return predict_proba(inner, x); }, m.model);
}

inline int predict(const TrainedModel& m, const Eigen::VectorXd& x) { return predict_proba(m, x) >= 0.5 ? 1 : 0; }

inline std::vector<int> predict_rows(const TrainedModel& m, const Eigen::MatrixXd& x) {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = predict(m, x.row(i).transpose());
  return out;
}

inline nlohmann::json to_json(const TrainedModel& m) {
  return {{"format", "layerprobe-model"},
          {"format_version", 1},
          {"id", m.id},
          {"group", std::string(to_string(m.group))},
          {"level", std::string(to_string(m.level))},
          {"estimator", std::string(to_string(m.estimator()))},
          {"provenance", m.provenance},
          {"model", std::visit([](const auto& inner) { return to_json(inner); }, m.model)}};
}

inline TrainedModel trained_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "layerprobe-model" || j.at("format_version") != 1)
      fail(ErrorCategory::validation, "not a layerprobe-model v1 file");
    TrainedModel m;
    m.id = j.at("id").get<std::string>();
    m.group = parse_layer_group(j.at("group").get<std::string>());
    m.level = parse_level(j.at("level").get<std::string>());
    m.provenance = j.value("provenance", nlohmann::json::object());
    if (parse_estimator(j.at("estimator").get<std::string>()) == Estimator::svm) m.model = svm_from_json(j.at("model"));
    else m.model = ffn_from_json(j.at("model"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::validation, std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const TrainedModel& m, const fs::path& path) {
  detail::write_file_bytes(path, to_json(m).dump(1) + "\n");
}

inline TrainedModel load_model(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) fail(ErrorCategory::missing_input, "model not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_bytes(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCategory::validation, std::string("model parse failure: ") + e.what());
  }
  return trained_model_from_json(j);
}

}  // namespace layerprobe
