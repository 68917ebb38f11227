#include "cfseg/workflow.hpp"

#include <chrono>
#include <iostream>

#include "cfseg/causal.hpp"
#include "cfseg/classifier.hpp"
#include "cfseg/evaluation.hpp"
#include "cfseg/hvae.hpp"
#include "cfseg/pipeline.hpp"
#include "cfseg/segmenter.hpp"
#include "cfseg/study.hpp"
#include "cfseg/synth.hpp"

namespace cfseg::workflow {

namespace {

io::Json section(const io::Json& config, const char* name) {
  if (!config.contains(name)) return io::Json::object();
  const auto& s = config.at(name);
  if (!s.is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
  return s;
}

io::Json sub(const io::Json& s, const char* name) {
  return s.contains(name) ? s.at(name) : io::Json::object();
}

// Collects the run record while a command executes and writes it on success or failure.
class RunRecord {
 public:
  RunRecord(std::string command, const io::Json& config, fs::path out)
      : out_(std::move(out)), start_(std::chrono::steady_clock::now()) {
    record_ = {{"command", std::move(command)},
               {"started_at", study::now_iso8601()},
               {"config_hash", config_hash(config)},
               {"config", config},
               {"seeds", io::Json::object()},
               {"checksums", io::Json::object()},
               {"outputs", io::Json::object()},
               {"status", "running"}};
  }

  io::Json& operator[](const char* key) { return record_[key]; }

  io::Json finish(const std::string& status) {
    record_["status"] = status;
    record_["finished_at"] = study::now_iso8601();
    record_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    io::write_json(out_ / "run_record.json", record_);
    return record_;
  }

  template <class F>
  io::Json run(F&& body) {
    try {
      return finish(body());
    } catch (const std::exception& e) {
      record_["error"] = e.what();
      finish("failed");
      throw;
    }
  }

 private:
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
  io::Json record_;
};

synth::Manifest load_dataset(const fs::path& data) {
  const auto file = fs::is_directory(data) ? data / synth::kManifestName : data;
  if (!fs::exists(file)) throw IoError(file.string(), "dataset manifest not found");
  return synth::Manifest::load(file);
}

pipeline::ResultsManifest load_results(const fs::path& p) {
  const auto file = fs::is_directory(p) ? p / pipeline::kResultsName : p;
  if (!fs::exists(file)) throw IoError(file.string(), "results manifest not found");
  return pipeline::ResultsManifest::load(file);
}

}  // namespace

io::Json load_config(const std::optional<fs::path>& path) {
  if (!path) return io::Json::object();
  const auto j = io::read_json(*path);
  if (!j.is_object()) throw ConfigError(path->string() + ": config must be a JSON object");
  static const std::set<std::string> known{"data", "hvae", "seg", "classifier", "study", "evaluate"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError(path->string() + ": unknown section '" + k + "'");
  return j;
}

std::string config_hash(const io::Json& config) { return io::sha256_hex(config.dump()); }

io::Json gen_data(const io::Json& config, const fs::path& out, std::optional<std::uint64_t> seed) {
  auto c = synth::dataset_config_from_json(section(config, "data"));
  if (seed) c.seed = *seed;
  const auto effective = synth::to_json(c);
  fs::create_directories(out);
  RunRecord rec("gen-data", effective, out);
  return rec.run([&] {
    rec["seeds"]["data"] = c.seed;
    const auto m = synth::build_dataset(c, out);
    int diseased = 0;
    for (const auto& r : m.records) diseased += r.attributes.disease;
    rec["outputs"] = {{"manifest", (out / synth::kManifestName).string()},
                      {"n", m.records.size()},
                      {"diseased", diseased},
                      {"train", m.split(synth::Split::Train).size()},
                      {"val", m.split(synth::Split::Val).size()},
                      {"test", m.split(synth::Split::Test).size()}};
    rec["checksums"]["manifest"] = io::sha256_file(out / synth::kManifestName);
    return std::string("ok");
  });
}

io::Json train_hvae(const io::Json& config, const fs::path& data, const fs::path& out,
                    std::optional<std::uint64_t> seed) {
  const auto s = section(config, "hvae");
  const auto model_config = hvae::hvae_config_from_json(sub(s, "model"));
  auto train_config = hvae::hvae_train_config_from_json(sub(s, "train"));
  if (seed) train_config.seed = *seed;
  const io::Json effective{{"model", hvae::to_json(model_config)}, {"train", hvae::to_json(train_config)}};
  fs::create_directories(out);
  RunRecord rec("train-hvae", effective, out);
  return rec.run([&] {
    rec["seeds"]["train"] = train_config.seed;
    const auto manifest = load_dataset(data);
    rec["checksums"]["manifest"] = io::sha256_file(manifest.root / synth::kManifestName);
    try {
      auto result = hvae::train(manifest, model_config, train_config, out / "hvae_last_finite.pt");
      hvae::save(out / "hvae.pt", result.model);
      io::write_json(out / "hvae_train_report.json", result.report.to_json());
      rec["checksums"]["hvae"] = checkpoint::parameter_checksum(*result.model);
      rec["outputs"] = {{"checkpoint", (out / "hvae.pt").string()}, {"best_epoch", result.report.best_epoch}};
    } catch (const hvae::TrainingDiverged& e) {
      io::write_json(out / "hvae_train_report.json", e.report().to_json());
      throw;
    }
    return std::string("ok");
  });
}

io::Json train_seg(const io::Json& config, const fs::path& data, const fs::path& out,
                   std::optional<std::uint64_t> seed) {
  const auto s = section(config, "seg");
  const auto model_config = seg::seg_model_config_from_json(sub(s, "model"));
  auto train_config = seg::seg_train_config_from_json(sub(s, "train"));
  if (seed) train_config.seed = *seed;
  const io::Json effective{{"model", seg::to_json(model_config)}, {"train", seg::to_json(train_config)}};
  fs::create_directories(out);
  RunRecord rec("train-seg", effective, out);
  return rec.run([&] {
    rec["seeds"]["train"] = train_config.seed;
    const auto manifest = load_dataset(data);
    rec["checksums"]["manifest"] = io::sha256_file(manifest.root / synth::kManifestName);
    auto result = seg::train_seg(manifest, model_config, train_config);
    seg::save(out / "seg.pt", result.model);
    io::write_json(out / "seg_train_report.json", result.report.to_json());
    rec["checksums"]["seg"] = result.report.checksum;
    rec["outputs"] = {{"checkpoint", (out / "seg.pt").string()}, {"best_epoch", result.report.best_epoch}};
    return std::string("ok");
  });
}

io::Json train_classifier(const io::Json& config, const fs::path& data, const fs::path& out,
                          std::optional<std::uint64_t> seed) {
  auto c = classifier::classifier_config_from_json(section(config, "classifier"));
  if (seed) c.seed = *seed;
  fs::create_directories(out);
  RunRecord rec("train-clf", classifier::to_json(c), out);
  return rec.run([&] {
    rec["seeds"]["train"] = c.seed;
    const auto manifest = load_dataset(data);
    auto result = classifier::train_classifier(manifest, c);
    classifier::save(out / "classifier.pt", result.model);
    rec["checksums"]["classifier"] = checkpoint::parameter_checksum(*result.model);
    rec["outputs"] = {{"checkpoint", (out / "classifier.pt").string()},
                      {"val_accuracy", result.val_accuracy},
                      {"val_balanced_accuracy", result.val_balanced_accuracy}};
    return std::string("ok");
  });
}

io::Json infer(const io::Json&, const fs::path& data, const InferPaths& models, const std::string& arm,
               const fs::path& out, const std::string& split) {
  const auto arms = pipeline::arm_selection_from_string(arm);
  const io::Json effective{{"arm", arm},
                           {"split", split},
                           {"seg_checkpoint", models.seg_checkpoint.string()},
                           {"hvae_checkpoint", models.hvae_checkpoint ? models.hvae_checkpoint->string() : ""}};
  fs::create_directories(out);
  RunRecord rec("infer", effective, out);
  return rec.run([&] {
    const auto manifest = load_dataset(data);
    pipeline::Models m;
    m.seg = seg::load(models.seg_checkpoint);
    if (arms != pipeline::ArmSelection::Direct) {
      if (!models.hvae_checkpoint) throw ArgumentError("the cfseg arm needs an HVAE checkpoint");
      auto hv = hvae::load(*models.hvae_checkpoint);
      rec["checksums"]["hvae"] = checkpoint::parameter_checksum(*hv);
      m.engine = causal::CausalEngine::with_hvae(hv);
    }
    pipeline::BatchOptions options;
    if (split != "all") options.split = synth::split_from_string(split);
    const auto summary = pipeline::batch_infer(manifest, m, arms, out, options);
    rec["checksums"]["seg"] = seg::checksum(m.seg);
    rec["outputs"] = {{"results", (out / pipeline::kResultsName).string()},
                      {"ok", summary.ok},
                      {"failed", summary.failed}};
    if (!summary.success()) {
      io::Json failed = io::Json::array();
      for (const auto& r : summary.results.records)
        if (!r.ok()) failed.push_back({{"id", r.id()}, {"arm", pipeline::to_string(r.arm)}, {"error", r.error}});
      rec["failed_samples"] = failed;
      return std::string("partial");
    }
    return std::string("ok");
  });
}

io::Json evaluate(const io::Json& config, const fs::path& data, const std::vector<fs::path>& results,
                  const fs::path& out) {
  const auto s = section(config, "evaluate");
  eval::ReportOptions options;
  options.split = synth::split_from_string(s.value("split", std::string("test")));
  options.pixel_area = s.value("pixel_area", options.pixel_area);
  options.qualitative_panels = s.value("qualitative_panels", options.qualitative_panels);
  options.write_figures = s.value("write_figures", options.write_figures);
  options.config_hash = config_hash(config);
  io::Json inputs = io::Json::array();
  for (const auto& r : results) inputs.push_back(r.string());
  fs::create_directories(out);
  RunRecord rec("evaluate", {{"evaluate", s}, {"results", inputs}}, out);
  return rec.run([&] {
    const auto dataset = load_dataset(data);
    std::vector<pipeline::ResultsManifest> manifests;
    for (const auto& r : results) manifests.push_back(load_results(r));
    const auto report = eval::build_report(dataset, manifests, options);
    eval::write_report(report, dataset, manifests, options, out);
    rec["checksums"]["seg"] = report.seg_checksum;
    rec["outputs"] = {{"report", (out / "report.json").string()},
                      {"dice_table", (out / "dice_table.csv").string()},
                      {"n_diseased", report.n_diseased},
                      {"n_healthy", report.n_healthy}};
    return std::string("ok");
  });
}

io::Json audit_counterfactuals(const fs::path& data, const AuditPaths& paths, const fs::path& out,
                               const std::string& split) {
  const io::Json effective{{"results", paths.results.string()},
                           {"hvae_checkpoint", paths.hvae_checkpoint.string()},
                           {"seg_checkpoint", paths.seg_checkpoint.string()},
                           {"classifier_checkpoint", paths.classifier_checkpoint.string()},
                           {"split", split}};
  fs::create_directories(out);
  RunRecord rec("audit-cf", effective, out);
  return rec.run([&] {
    const auto dataset = load_dataset(data);
    const auto results = load_results(paths.results);
    auto hv = hvae::load(paths.hvae_checkpoint);
    auto seg_model = seg::load(paths.seg_checkpoint);
    auto clf = classifier::load(paths.classifier_checkpoint);
    const auto engine = causal::CausalEngine::with_hvae(hv);
    const auto s = synth::split_from_string(split);
    const synth::RenderParams render_params;

    std::map<std::string, const pipeline::ResultRecord*> cf_by_id;
    for (const auto& r : results.records)
      if (r.arm == pipeline::Arm::CfSeg && r.ok() && r.cf_image_path) cf_by_id[r.id()] = &r;

    double l1_cf = 0, l1_orig = 0, healthy_votes = 0;
    int n_diseased = 0;
    double composition = 0, recon_l1 = 0;
    int n_healthy = 0;
    io::Json per_sample = io::Json::array();
    for (const auto* r : dataset.split(s)) {
      const auto image = io::read_image_png(dataset.path_of(r->image_path));
      if (r->attributes.disease) {
        if (!r->anatomy) throw DataError(r->id + ": manifest lacks anatomy parameters for re-rendering");
        const auto it = cf_by_id.find(r->id);
        if (it == cf_by_id.end()) throw DataError(r->id + ": no counterfactual in the results");
        const auto cf = io::read_image_png(results.path_of(*it->second->cf_image_path));
        auto healthy_attrs = r->attributes;
        healthy_attrs.disease = 0;
        healthy_attrs.severity = 0.0;
        const auto truth = synth::render(healthy_attrs, *r->anatomy, render_params).image;
        require_same_shape(cf, truth, "audit");
        double a = 0, b = 0;
        for (std::size_t i = 0; i < truth.values().size(); ++i) {
          a += std::abs(cf.values()[i] - truth.values()[i]);
          b += std::abs(image.values()[i] - truth.values()[i]);
        }
        a /= static_cast<double>(truth.values().size());
        b /= static_cast<double>(truth.values().size());
        const double p = classifier::predict_proba(clf, cf);
        l1_cf += a;
        l1_orig += b;
        healthy_votes += p < 0.5 ? 1 : 0;
        ++n_diseased;
        per_sample.push_back({{"id", r->id},
                              {"severity", r->attributes.severity},
                              {"l1_cf", a},
                              {"l1_orig", b},
                              {"p_disease_cf", p},
                              {"p_disease_orig", classifier::predict_proba(clf, image)}});
      } else {
        const auto recon = causal::image_of(engine.counterfactual(causal::observation_of(r->attributes, image), {}));
        composition += eval::dice(seg::segment(seg_model, recon), seg::segment(seg_model, image), eval::Structure::Both);
        double l1 = 0;
        for (std::size_t i = 0; i < image.values().size(); ++i) l1 += std::abs(recon.values()[i] - image.values()[i]);
        recon_l1 += l1 / static_cast<double>(image.values().size());
        ++n_healthy;
      }
    }
    io::Json audit{{"split", split},
                   {"n_diseased", n_diseased},
                   {"n_healthy", n_healthy},
                   {"mean_l1_cf_vs_truth", n_diseased ? l1_cf / n_diseased : 0.0},
                   {"mean_l1_orig_vs_truth", n_diseased ? l1_orig / n_diseased : 0.0},
                   {"fraction_cf_classified_healthy", n_diseased ? healthy_votes / n_diseased : 0.0},
                   {"mean_composition_dice_healthy", n_healthy ? composition / n_healthy : 0.0},
                   {"mean_recon_l1_healthy", n_healthy ? recon_l1 / n_healthy : 0.0},
                   {"samples", per_sample}};
    io::write_json(out / "cf_audit.json", audit);
    rec["checksums"]["hvae"] = checkpoint::parameter_checksum(*hv);
    rec["checksums"]["seg"] = seg::checksum(seg_model);
    rec["checksums"]["classifier"] = checkpoint::parameter_checksum(*clf);
    rec["outputs"] = {{"audit", (out / "cf_audit.json").string()}};
    return std::string("ok");
  });
}

io::Json make_study(const io::Json& config, const fs::path& results, const fs::path& out,
                    std::optional<std::uint64_t> seed) {
  auto spec = study::session_spec_from_json(section(config, "study"));
  if (seed) spec.seed = *seed;
  fs::create_directories(out);
  RunRecord rec("make-study", study::to_json(spec), out);
  return rec.run([&] {
    rec["seeds"]["study"] = spec.seed;
    study::SessionStore store(out / "sessions", load_results(results));
    const auto session = store.create(spec);
    rec["outputs"] = {{"session_id", session.id},
                      {"n_trials", session.trials.size()},
                      {"event_log", (out / "sessions" / (session.id + ".events.jsonl")).string()}};
    return std::string("ok");
  });
}

void serve_study(const fs::path& sessions, const std::optional<fs::path>& results, const std::string& host,
                 int port) {
  std::optional<pipeline::ResultsManifest> manifest;
  if (results) manifest = load_results(*results);
  study::SessionStore store(sessions, std::move(manifest));
  study::StudyServer server(store);
  const int bound = server.bind(host, port);
  std::cerr << "[study] serving " << store.ids().size() << " session(s) on http://" << host << ":" << bound << "\n";
  if (!server.listen()) throw IoError(host, "server stopped unexpectedly");
}

}  // namespace cfseg::workflow
