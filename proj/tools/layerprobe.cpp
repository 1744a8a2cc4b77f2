// layerprobe: command-line driver over a workspace directory.
//
//   corpora/<id>/manifest.json, emb/       synth output
//   features/<corpus>/<level>_<group>.csv  aggregate output (+ test splits)
//   models/<estimator>_<group>.json        train output
//   reports/                               cv tables, summaries, matrices
//   plots/                                 boundary clouds, t-SNE layouts
//   logs/                                  one JSON run log per invocation
//
// Exit codes: 0 ok, 2 missing input, 3 validation, 4 computation.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "layerprobe/layerprobe.hpp"

namespace lp = layerprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code(lp::ErrorCategory c) {
  switch (c) {
    case lp::ErrorCategory::missing_input: return 2;
    case lp::ErrorCategory::validation: return 3;
    case lp::ErrorCategory::invalid_argument: return 3;
    case lp::ErrorCategory::computation: return 4;
  }
  return 1;
}

struct Global {
  std::string workspace = ".";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

class Workspace {
 public:
  explicit Workspace(fs::path root) : root_(std::move(root)) {}
  fs::path corpus_dir(const std::string& id) const { return root_ / "corpora" / id; }
  fs::path features(const std::string& corpus, lp::Level level, lp::LayerGroup g) const {
    return root_ / "features" / corpus / (std::string(lp::to_string(level)) + "_" + std::string(lp::to_string(g)) + ".csv");
  }
  fs::path dir(const char* sub) const { return root_ / sub; }

 private:
  fs::path root_;
};

void write_text(const fs::path& p, const std::string& s) { lp::detail::write_file_bytes(p, s); }

std::string provenance(const Global& g, const std::string& extra = "") {
  std::string s = "tool=layerprobe-" + std::string(lp::kVersion) + " seed=" + std::to_string(g.seed);
  if (!extra.empty()) s += " " + extra;
  return s;
}

/// Run log: inputs, configuration, seed, version and outputs. No timestamps so
/// that repeated runs compare equal.
struct RunLog {
  explicit RunLog(std::string cmd) : command(std::move(cmd)) {}

  std::string command;
  json config = json::object();
  std::vector<std::string> inputs, outputs;

  void write(const Workspace& ws, const Global& g, const std::string& tag) const {
    json j = {{"command", command}, {"version", std::string(lp::kVersion)}, {"seed", g.seed}, {"jobs", g.jobs},
              {"config", config},   {"inputs", inputs},                     {"outputs", outputs}};
    write_text(ws.dir("logs") / (command + (tag.empty() ? "" : "_" + tag) + ".json"), j.dump(2) + "\n");
  }
};

std::vector<lp::LayerGroup> parse_groups(const std::string& s) {
  if (s == "all") return {lp::kLayerGroups.begin(), lp::kLayerGroups.end()};
  return {lp::parse_layer_group(s)};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec_file, corpus_id, shift;
  double magnitude = 0;
  std::optional<std::size_t> speakers, utterances;
};

void cmd_synth(const Global& g, bool seed_given, const SynthArgs& a) {
  Workspace ws(g.workspace);
  lp::SynthSpec spec;
  RunLog log{"synth"};
  if (!a.spec_file.empty()) {
    std::error_code ec;
    if (!fs::exists(a.spec_file, ec)) lp::fail(lp::ErrorCategory::missing_input, "spec file not found: " + a.spec_file);
    json j;
    try {
      j = json::parse(lp::detail::read_file_bytes(a.spec_file));
    } catch (const json::parse_error& e) {
      lp::fail(lp::ErrorCategory::validation, std::string("spec file: ") + e.what());
    }
    spec = lp::synth_spec_from_json(j);
    if (!j.contains("seed")) spec.seed = g.seed;
    log.inputs.push_back(a.spec_file);
  } else {
    spec.seed = g.seed;
  }
  if (seed_given) spec.seed = g.seed;
  if (a.speakers) spec.n_speakers_per_class = *a.speakers;
  if (a.utterances) spec.utterances_per_speaker = *a.utterances;

  lp::CorpusManifest m;
  std::string id;
  if (a.shift.empty()) {
    if (!a.corpus_id.empty()) spec.corpus_id = a.corpus_id;
    id = spec.corpus_id;
    m = lp::gen_corpus(spec, ws.corpus_dir(id));
  } else {
    const auto kind = lp::parse_shift(a.shift);
    id = a.corpus_id;
    if (id.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "_%s_%g", a.shift.c_str(), a.magnitude);
      id = spec.corpus_id + buf;
    }
    m = lp::gen_shifted_variant(spec, kind, a.magnitude, ws.corpus_dir(id), id);
  }
  json spec_json = lp::to_json(spec);
  spec_json["seed"] = spec.seed;
  if (!a.shift.empty()) spec_json["shift"] = {{"kind", a.shift}, {"magnitude", a.magnitude}, {"corpus_id", id}};
  write_text(ws.corpus_dir(id) / "synth_spec.json", spec_json.dump(2) + "\n");
  log.config = spec_json;
  log.outputs = {(ws.corpus_dir(id) / "manifest.json").string()};
  log.write(ws, g, id);
  std::cout << "synth: " << m.utterances.size() << " utterances -> " << ws.corpus_dir(id).string() << "\n";
}

void cmd_validate(const Global& g, const std::string& manifest) {
  Workspace ws(g.workspace);
  const auto m = lp::load_manifest(manifest);
  const auto rep = lp::validate_corpus(m, g.jobs);
  const auto out = ws.dir("reports") / ("validate_" + m.corpus_id + ".json");
  write_text(out, lp::to_json(rep).dump(2) + "\n");
  RunLog log{"validate"};
  log.inputs = {manifest};
  log.outputs = {out.string()};
  log.write(ws, g, m.corpus_id);
  std::cout << "validate: " << rep.passed << "/" << rep.files.size() << " files ok\n";
  if (!rep.pass)
    lp::fail(lp::ErrorCategory::validation,
             "corpus " + m.corpus_id + ": " + std::to_string(rep.failures) + " embedding file(s) failed validation");
}

void cmd_aggregate(const Global& g, const std::string& manifest, const std::string& group, const std::string& level_s) {
  Workspace ws(g.workspace);
  const auto m = lp::load_manifest(manifest);
  const auto level = lp::parse_level(level_s);
  const auto groups = parse_groups(group);
  const auto sets = lp::build_datasets(m, level, g.jobs);
  RunLog log{"aggregate"};
  log.inputs = {manifest};
  log.config = {{"level", level_s}, {"group", group}};
  for (auto grp : groups) {
    const auto out = ws.features(m.corpus_id, level, grp);
    lp::write_features_csv(sets[lp::group_index(grp)], out, provenance(g));
    log.outputs.push_back(out.string());
  }
  log.write(ws, g, m.corpus_id + "_" + level_s);
  std::cout << "aggregate: " << sets[0].rows() << " " << level_s << " rows x " << groups.size() << " group(s)\n";
}

void cmd_train(const Global& g, const std::string& features, const std::string& est_s, std::size_t folds, double ratio) {
  Workspace ws(g.workspace);
  const auto data = lp::read_features_csv(features);
  auto spec = lp::GridSpec::for_estimator(lp::parse_estimator(est_s));
  const auto r = lp::run_protocol(data, spec, g.seed, g.jobs, folds, ratio);
  auto model = r.model;
  model.provenance["features"] = fs::path(features).filename().string();
  model.provenance["tool"] = "layerprobe-" + std::string(lp::kVersion);

  const auto model_path = ws.dir("models") / (model.id + ".json");
  const auto cv_path = ws.dir("reports") / ("cv_" + model.id + ".csv");
  const auto summary_path = ws.dir("reports") / ("train_" + model.id + ".json");
  const auto test_path = ws.dir("features") / data.source_corpus / ("test_" + model.id + ".csv");
  lp::save_model(model, model_path);
  write_text(cv_path, lp::cv_table_csv(r.cv));
  auto summary = lp::protocol_summary(r);
  summary["provenance"] = model.provenance;
  write_text(summary_path, summary.dump(2) + "\n");
  lp::write_features_csv(r.split.test, test_path, provenance(g, "split=test model=" + model.id));

  RunLog log{"train"};
  log.inputs = {features};
  log.config = {{"estimator", est_s}, {"folds", folds}, {"train_ratio", ratio}, {"configs", spec.configs.size()}};
  log.outputs = {model_path.string(), cv_path.string(), summary_path.string(), test_path.string()};
  log.write(ws, g, model.id);
  std::cout << "train: " << model.id << " best " << lp::describe(r.cv.best_cell().config) << " cv "
            << r.cv.best_cell().mean << " test " << r.test_correct << "/" << r.split.test.rows() << " p=" << r.p_value
            << "\n";
}

void cmd_eval(const Global& g, const std::string& model_path, const std::string& features) {
  Workspace ws(g.workspace);
  const auto model = lp::load_model(model_path);
  const auto data = lp::read_features_csv(features);
  const auto correct = lp::count_correct(model, data);
  const double acc = static_cast<double>(correct) / static_cast<double>(data.rows());
  const double p = lp::significance_test(correct, data.rows());
  json j = {{"model_id", model.id},
            {"corpus", data.source_corpus},
            {"features", fs::path(features).filename().string()},
            {"rows", data.rows()},
            {"correct", correct},
            {"accuracy", acc},
            {"significance", {{"p_value", p}, {"alpha", 0.05}, {"significant", p < 0.05}}}};
  const auto out = ws.dir("reports") / ("eval_" + model.id + "_" + fs::path(features).stem().string() + ".json");
  write_text(out, j.dump(2) + "\n");
  RunLog log{"eval"};
  log.inputs = {model_path, features};
  log.outputs = {out.string()};
  log.write(ws, g, model.id + "_" + fs::path(features).stem().string());
  std::cout << "eval: " << model.id << " " << correct << "/" << data.rows() << " p=" << p << "\n";
}

void cmd_crosseval(const Global& g, const std::vector<std::string>& model_paths, const std::vector<std::string>& corpora,
                   const std::string& name) {
  Workspace ws(g.workspace);
  std::vector<lp::TrainedModel> models;
  for (const auto& p : model_paths) models.push_back(lp::load_model(p));
  std::vector<lp::CorpusFeatures> feats;
  RunLog log{"crosseval"};
  log.inputs = model_paths;
  for (const auto& c : corpora) {
    lp::CorpusFeatures cf{c, {}};
    for (const auto& m : models) {
      if (cf.by_group.count(m.group)) continue;
      const auto path = ws.features(c, m.level, m.group);
      cf.by_group.emplace(m.group, lp::read_features_csv(path));
      log.inputs.push_back(path.string());
    }
    feats.push_back(std::move(cf));
  }
  const auto mat = lp::eval_matrix(models, feats, g.jobs);
  const auto csv = ws.dir("reports") / (name + ".csv");
  const auto js = ws.dir("reports") / (name + ".json");
  write_text(csv, lp::matrix_to_csv(mat));
  auto j = lp::to_json(mat);
  j["seed"] = g.seed;
  write_text(js, j.dump(2) + "\n");
  log.config = {{"corpora", corpora}};
  log.outputs = {csv.string(), js.string()};
  log.write(ws, g, name);
  std::cout << lp::matrix_to_csv(mat);
}

void cmd_boundary(const Global& g, const std::string& model_path, const std::string& features, lp::BoundaryParams params) {
  Workspace ws(g.workspace);
  const auto model = lp::load_model(model_path);
  const auto data = lp::read_features_csv(features);
  params.seed = g.seed;
  std::vector<std::string> warnings;
  const auto cloud = lp::map_boundary(model, data, params, &warnings);
  char prov[256];
  std::snprintf(prov, sizeof prov, "model=%s tol=%g pairs=%zu lines=%zu sphere=%zu", model.id.c_str(), params.tol,
                params.n_pairs, params.n_lines, params.n_sphere_samples);
  const auto cloud_path = ws.dir("plots") / (model.id + "_boundary.csv");
  const auto sv_path = ws.dir("plots") / (model.id + "_support_vectors.csv");
  write_text(cloud_path, lp::cloud_to_csv(cloud, provenance(g, prov)));
  write_text(sv_path, lp::support_vectors_to_csv(cloud.support_vectors, provenance(g, prov)));
  RunLog log{"boundary"};
  log.inputs = {model_path, features};
  log.config = {{"tol", params.tol},
                {"n_pairs", params.n_pairs},
                {"n_lines", params.n_lines},
                {"n_sphere_samples", params.n_sphere_samples},
                {"warnings", warnings}};
  log.outputs = {cloud_path.string(), sv_path.string()};
  log.write(ws, g, model.id);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "boundary: " << cloud.points.size() << " points, " << cloud.support_vectors.size() << " support vectors\n";
}

void cmd_project(const Global& g, const std::string& features, const std::string& cloud_path, const std::string& sv_path,
                 double perplexity, int iterations, std::string name) {
  Workspace ws(g.workspace);
  const auto data = lp::read_features_csv(features);
  std::error_code ec;
  if (!fs::exists(cloud_path, ec)) lp::fail(lp::ErrorCategory::missing_input, "boundary cloud not found: " + cloud_path);
  auto cloud = lp::cloud_from_csv(lp::detail::read_file_bytes(cloud_path));
  if (!sv_path.empty()) {
    if (!fs::exists(sv_path, ec)) lp::fail(lp::ErrorCategory::missing_input, "support vectors not found: " + sv_path);
    cloud.support_vectors = lp::support_vectors_from_csv(lp::detail::read_file_bytes(sv_path));
  }
  if (name.empty()) {
    name = fs::path(cloud_path).stem().string();
    if (name.size() > 9 && name.ends_with("_boundary")) name.resize(name.size() - 9);
  }
  lp::TsneConfig cfg;
  cfg.perplexity = perplexity;
  cfg.n_iter = iterations;
  cfg.seed = g.seed;
  const auto proj = lp::project_boundary(data, cloud, cfg);
  char prov[128];
  std::snprintf(prov, sizeof prov, "perplexity=%g iterations=%d", perplexity, iterations);
  const auto out = ws.dir("plots") / (name + "_tsne.csv");
  write_text(out, lp::projection_to_csv(proj, provenance(g, prov)));
  RunLog log{"project"};
  log.inputs = {features, cloud_path};
  if (!sv_path.empty()) log.inputs.push_back(sv_path);
  log.config = {{"perplexity", perplexity},
                {"iterations", iterations},
                {"final_kl", proj.kl_trace.empty() ? 0.0 : proj.kl_trace.back()},
                {"warnings", proj.warnings}};
  log.outputs = {out.string()};
  log.write(ws, g, name);
  std::cout << "project: " << proj.rows.size() << " rows -> " << out.string() << "\n";
}

/// Accuracy table (estimators x layer groups, percent, * = p < 0.05) plus
/// every cross-evaluation matrix found in reports/.
void cmd_report(const Global& g) {
  Workspace ws(g.workspace);
  const auto reports = ws.dir("reports");
  std::error_code ec;
  if (!fs::is_directory(reports, ec)) lp::fail(lp::ErrorCategory::missing_input, "no reports directory in workspace");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(reports)) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::map<std::string, std::map<std::string, json>> table;  // estimator -> group -> summary
  std::vector<fs::path> matrices;
  for (const auto& f : files) {
    const auto name = f.filename().string();
    if (name.starts_with("train_") && f.extension() == ".json") {
      const auto j = json::parse(lp::detail::read_file_bytes(f));
      table[j.at("estimator").get<std::string>()][j.at("group").get<std::string>()] = j;
    } else if (f.extension() == ".json") {
      const auto j = json::parse(lp::detail::read_file_bytes(f));
      if (j.contains("metric") && j.contains("rows")) matrices.push_back(f);
    }
  }
  if (table.empty() && matrices.empty()) lp::fail(lp::ErrorCategory::missing_input, "nothing to report: no training summaries or matrices");

  std::ostringstream csv, md;
  csv << "estimator";
  md << "# Classification accuracy (%)\n\n| estimator |";
  for (auto grp : lp::kLayerGroups) {
    csv << ",layers " << lp::to_string(grp);
    md << " layers " << lp::to_string(grp) << " |";
  }
  csv << "\n";
  md << "\n|---|---|---|---|---|\n";
  const std::map<std::string, std::string> label = {{"svm", "SVC"}, {"ffn", "FFN"}};
  for (const auto& [est, row] : table) {
    const auto shown = label.count(est) ? label.at(est) : est;
    csv << shown;
    md << "| " << shown << " |";
    for (auto grp : lp::kLayerGroups) {
      auto it = row.find(std::string(lp::to_string(grp)));
      if (it == row.end()) {
        csv << ",";
        md << " - |";
        continue;
      }
      const auto pct = lp::format_percent(100.0 * it->second.at("test_accuracy").get<double>());
      const bool sig = it->second.at("significance").at("significant").get<bool>();
      csv << "," << pct;
      md << " " << pct << (sig ? "*" : "") << " |";
    }
    csv << "\n";
    md << "\n";
  }
  md << "\n`*` exact binomial test against 50% chance, p < 0.05.\n";
  for (const auto& f : matrices) {
    const auto j = json::parse(lp::detail::read_file_bytes(f));
    md << "\n## " << f.stem().string() << " (" << j.at("metric").get<std::string>() << ")\n\n| corpus |";
    for (const auto& c : j.at("columns")) md << " " << c.at("group").get<std::string>() << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < j.at("columns").size(); ++i) md << "---|";
    md << "\n";
    for (const auto& r : j.at("rows")) {
      md << "| " << r.at("corpus").get<std::string>() << " |";
      for (const auto& c : j.at("columns"))
        md << " " << lp::format_percent(r.at("percent_pathologic").at(c.at("group").get<std::string>()).get<double>()) << " |";
      md << "\n";
    }
  }
  const auto csv_path = reports / "accuracy_table.csv";
  const auto md_path = reports / "report.md";
  write_text(csv_path, csv.str());
  write_text(md_path, md.str());
  RunLog log{"report"};
  log.outputs = {csv_path.string(), md_path.string()};
  log.write(ws, g, "");
  std::cout << md.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layerprobe: layer-wise embedding pathology classification toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(lp::kVersion));
  Global g;
  app.add_option("-w,--workspace", g.workspace, "workspace directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", g.seed, "global seed")->capture_default_str();
  app.add_option("-j,--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic corpus");
  c_synth->add_option("--spec", synth.spec_file, "JSON spec file (defaults apply otherwise)");
  c_synth->add_option("--corpus-id", synth.corpus_id, "corpus id / output directory name");
  c_synth->add_option("--shift", synth.shift, "healthy-only variant: condition | age | content");
  c_synth->add_option("--magnitude", synth.magnitude, "shift size (noise_std units; years for age)");
  c_synth->add_option("--speakers", synth.speakers, "speakers per class");
  c_synth->add_option("--utterances", synth.utterances, "utterances per speaker");

  std::string manifest, group = "all", level = "speaker", features, estimator = "svm", model, name;
  auto* c_validate = app.add_subcommand("validate", "check every embedding file referenced by a manifest");
  c_validate->add_option("--manifest", manifest)->required();

  auto* c_aggregate = app.add_subcommand("aggregate", "pool embeddings into layer-group feature tables");
  c_aggregate->add_option("--manifest", manifest)->required();
  c_aggregate->add_option("--group", group, "1-3 | 4-6 | 7-9 | 10-12 | all")->capture_default_str();
  c_aggregate->add_option("--level", level, "utterance | speaker")->capture_default_str();

  std::size_t folds = 5;
  double ratio = 0.8;
  auto* c_train = app.add_subcommand("train", "split, grid-search and fit one estimator on one feature table");
  c_train->add_option("--features", features)->required();
  c_train->add_option("--estimator", estimator, "svm | ffn")->capture_default_str();
  c_train->add_option("--folds", folds)->check(CLI::Range(2, 100))->capture_default_str();
  c_train->add_option("--train-ratio", ratio)->check(CLI::Range(0.05, 0.95))->capture_default_str();

  auto* c_eval = app.add_subcommand("eval", "accuracy and significance of a model on a feature table");
  c_eval->add_option("--model", model)->required();
  c_eval->add_option("--features", features)->required();

  std::vector<std::string> models, corpora;
  std::string matrix_name = "crosseval";
  auto* c_cross = app.add_subcommand("crosseval", "percent classified pathologic, corpora x models");
  c_cross->add_option("--model", models, "model file (repeatable)")->required();
  c_cross->add_option("--corpus", corpora, "corpus id with aggregated features (repeatable)")->required();
  c_cross->add_option("--name", matrix_name, "report basename")->capture_default_str();

  lp::BoundaryParams bp;
  auto* c_boundary = app.add_subcommand("boundary", "sample the 0.5 probability surface of a model");
  c_boundary->add_option("--model", model)->required();
  c_boundary->add_option("--features", features)->required();
  c_boundary->add_option("--tol", bp.tol)->capture_default_str();
  c_boundary->add_option("--pairs", bp.n_pairs)->capture_default_str();
  c_boundary->add_option("--lines", bp.n_lines)->capture_default_str();
  c_boundary->add_option("--sphere", bp.n_sphere_samples)->capture_default_str();

  std::string cloud, svs;
  double perplexity = 30;
  int iterations = 1000;
  auto* c_project = app.add_subcommand("project", "joint t-SNE of data, boundary points and support vectors");
  c_project->add_option("--features", features)->required();
  c_project->add_option("--boundary", cloud)->required();
  c_project->add_option("--support-vectors", svs);
  c_project->add_option("--perplexity", perplexity)->capture_default_str();
  c_project->add_option("--iterations", iterations)->check(CLI::PositiveNumber)->capture_default_str();
  c_project->add_option("--name", name, "output basename");

  auto* c_report = app.add_subcommand("report", "accuracy table and cross-evaluation summary");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_synth) cmd_synth(g, seed_opt->count() > 0, synth);
    else if (*c_validate) cmd_validate(g, manifest);
    else if (*c_aggregate) cmd_aggregate(g, manifest, group, level);
    else if (*c_train) cmd_train(g, features, estimator, folds, ratio);
    else if (*c_eval) cmd_eval(g, model, features);
    else if (*c_cross) cmd_crosseval(g, models, corpora, matrix_name);
    else if (*c_boundary) cmd_boundary(g, model, features, bp);
    else if (*c_project) cmd_project(g, features, cloud, svs, perplexity, iterations, name);
    else if (*c_report) cmd_report(g);
  } catch (const lp::Error& e) {
    std::cerr << json{{"error", std::string(lp::to_string(e.category()))}, {"message", e.what()}}.dump() << "\n";
    return exit_code(e.category());
  } catch (const json::exception& e) {
    std::cerr << json{{"error", "validation"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "computation"}, {"message", e.what()}}.dump() << "\n";
    return 4;
  }
  return 0;
}
