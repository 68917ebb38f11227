#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "cfseg/checkpoint.hpp"
#include "cfseg/errors.hpp"
#include "cfseg/workflow.hpp"

namespace fs = std::filesystem;
namespace wf = cfseg::workflow;

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual segmentation toolkit"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data = std::getenv("CFSEG_DATA_DIR") ? std::getenv("CFSEG_DATA_DIR") : "";

  auto common = [&](CLI::App* cmd, bool needs_data) {
    cmd->add_option("--config", config_path, "project config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--seed", seed, "override the command's seed");
    if (needs_data) cmd->add_option("--data", data, "dataset directory (default: $CFSEG_DATA_DIR)");
  };

  auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset");
  common(gen, false);
  auto* hvae = app.add_subcommand("train-hvae", "train the image mechanism");
  common(hvae, true);
  auto* seg = app.add_subcommand("train-seg", "train the segmenter on silver masks");
  common(seg, true);
  auto* clf = app.add_subcommand("train-clf", "train the disease classifier used by audit-cf");
  common(clf, true);

  std::string arm = "both", split = "test", seg_ckpt, hvae_ckpt, clf_ckpt, results_dir;
  auto* inf = app.add_subcommand("infer", "direct and/or counterfactual segmentation");
  common(inf, true);
  inf->add_option("--arm", arm, "direct | cfseg | both")->check(CLI::IsMember({"direct", "cfseg", "both"}));
  inf->add_option("--seg", seg_ckpt, "segmenter checkpoint")->required();
  inf->add_option("--hvae", hvae_ckpt, "HVAE checkpoint (cfseg arm)");
  inf->add_option("--split", split, "train | val | test | all");

  std::vector<std::string> result_dirs;
  auto* ev = app.add_subcommand("evaluate", "Dice table, volume densities, figures");
  common(ev, true);
  ev->add_option("--results", result_dirs, "infer output directories")->required();

  auto* audit = app.add_subcommand("audit-cf", "check counterfactuals against true healthy renders");
  common(audit, true);
  audit->add_option("--results", results_dir, "infer output with the cfseg arm")->required();
  audit->add_option("--hvae", hvae_ckpt, "HVAE checkpoint")->required();
  audit->add_option("--seg", seg_ckpt, "segmenter checkpoint")->required();
  audit->add_option("--classifier", clf_ckpt, "classifier checkpoint")->required();

  auto* mk = app.add_subcommand("make-study", "create a preference-study session offline");
  common(mk, false);
  mk->add_option("--results", results_dir, "infer output with both arms")->required();

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string sessions;
  auto* serve = app.add_subcommand("serve-study", "serve the preference-study HTTP API");
  serve->add_option("--sessions", sessions, "session directory")->required();
  serve->add_option("--results", results_dir, "infer output used for new sessions");
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  CLI11_PARSE(app, argc, argv);

  auto require_data = [&] {
    if (data.empty()) throw cfseg::ArgumentError("--data is required (or set CFSEG_DATA_DIR)");
    return fs::path(data);
  };

  try {
    const auto config = wf::load_config(config_path ? std::optional<fs::path>(*config_path) : std::nullopt);
    cfseg::io::Json record;
    if (*gen) record = wf::gen_data(config, out, seed);
    else if (*hvae) record = wf::train_hvae(config, require_data(), out, seed);
    else if (*seg) record = wf::train_seg(config, require_data(), out, seed);
    else if (*clf) record = wf::train_classifier(config, require_data(), out, seed);
    else if (*inf) {
      wf::InferPaths paths{seg_ckpt, hvae_ckpt.empty() ? std::nullopt : std::optional<fs::path>(hvae_ckpt)};
      record = wf::infer(config, require_data(), paths, arm, out, split);
    } else if (*ev) {
      std::vector<fs::path> dirs(result_dirs.begin(), result_dirs.end());
      record = wf::evaluate(config, require_data(), dirs, out);
    } else if (*audit) {
      record = wf::audit_counterfactuals(require_data(), {results_dir, hvae_ckpt, seg_ckpt, clf_ckpt}, out);
    } else if (*mk) {
      record = wf::make_study(config, results_dir, out, seed);
    } else if (*serve) {
      wf::serve_study(sessions, results_dir.empty() ? std::nullopt : std::optional<fs::path>(results_dir), host,
                      port);
      return 0;
    }
    std::cout << record.dump(2) << "\n";
    return record.value("status", "") == "ok" ? 0 : 1;
  } catch (const cfseg::checkpoint::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const cfseg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
