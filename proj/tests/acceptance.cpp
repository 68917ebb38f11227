// Runs the default end-to-end sequence (artifacts are cached between runs) and checks
// every acceptance criterion at its stated tolerance. Prints one PASS/FAIL line each.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "cfseg/io.hpp"
#include "cfseg/workflow.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
namespace wf = cfseg::workflow;
using cfseg::io::Json;

namespace {

struct Outcome {
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(const std::string& name, bool pass, const std::string& detail) {
  outcomes.push_back({name, pass, detail});
  std::printf("[%s] %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Runs `body` unless `dir` holds a successful run for the same stage key.
Json stage(const std::string& name, const fs::path& dir, const Json& key, const std::function<Json()>& body) {
  const auto marker = dir / "acceptance_stage.json";
  const auto record = dir / "run_record.json";
  const auto hash = wf::config_hash(key);
  if (fs::exists(marker) && fs::exists(record)) {
    const auto m = cfseg::io::read_json(marker);
    const auto r = cfseg::io::read_json(record);
    if (m.value("key_hash", "") == hash && r.value("status", "") == "ok") {
      std::cerr << "[acceptance] " << name << ": cached\n";
      return r;
    }
  }
  std::cerr << "[acceptance] " << name << ": running\n";
  fs::remove_all(dir);
  auto r = body();
  cfseg::io::write_json(marker, {{"stage", name}, {"key_hash", hash}});
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_artifacts");
  const fs::path config_path = argc > 2 ? fs::path(argv[2]) : fs::path(CFSEG_DEFAULT_CONFIG);
  const auto config = wf::load_config(config_path);
  fs::create_directories(root);

  std::vector<Json> records;
  try {
    const auto data = root / "data";
    records.push_back(stage("gen-data", data, {{"data", config.value("data", Json::object())}},
                            [&] { return wf::gen_data(config, data); }));
    const Json data_key{{"data", records.back()["checksums"]["manifest"]}};

    const auto hvae_dir = root / "hvae";
    records.push_back(stage("train-hvae", hvae_dir, {{"hvae", config.value("hvae", Json::object())}, {"in", data_key}},
                            [&] { return wf::train_hvae(config, data, hvae_dir); }));
    const auto seg_dir = root / "seg";
    records.push_back(stage("train-seg", seg_dir, {{"seg", config.value("seg", Json::object())}, {"in", data_key}},
                            [&] { return wf::train_seg(config, data, seg_dir); }));
    const auto clf_dir = root / "classifier";
    records.push_back(stage("train-clf", clf_dir,
                            {{"classifier", config.value("classifier", Json::object())}, {"in", data_key}},
                            [&] { return wf::train_classifier(config, data, clf_dir); }));

    const Json model_key{{"in", data_key},
                         {"hvae", records[1]["checksums"]["hvae"]},
                         {"seg", records[2]["checksums"]["seg"]}};
    const auto infer_dir = root / "infer";
    records.push_back(stage("infer", infer_dir, model_key, [&] {
      return wf::infer(config, data, {seg_dir / "seg.pt", hvae_dir / "hvae.pt"}, "both", infer_dir);
    }));
    const auto eval_dir = root / "evaluate";
    records.push_back(stage("evaluate", eval_dir, {{"models", model_key}, {"evaluate", config.value("evaluate", Json::object())}},
                            [&] { return wf::evaluate(config, data, {infer_dir}, eval_dir); }));
    const auto audit_dir = root / "audit";
    records.push_back(stage("audit-cf", audit_dir, {{"models", model_key}, {"clf", records[3]["checksums"]["classifier"]}},
                            [&] {
                              return wf::audit_counterfactuals(
                                  data, {infer_dir, hvae_dir / "hvae.pt", seg_dir / "seg.pt", clf_dir / "classifier.pt"},
                                  audit_dir);
                            }));

    const auto rep = cfseg::io::read_json(eval_dir / "report.json");
    const auto audit = cfseg::io::read_json(audit_dir / "cf_audit.json");
    const auto& gains = rep["gain_cfseg_minus_direct"];
    auto g = [&](const char* st, const char* col) {
      const auto& v = gains[st][col];
      return v.is_number() ? v.get<double>() : std::nan("");
    };

    {
      const double both = g("both", "all"), right = g("right", "all"), left = g("left", "all");
      report("improvement-under-disease", both >= 0.03 && right >= left,
             "gain both " + fmt(both) + " (>= 0.03); right " + fmt(right) + " >= left " + fmt(left));
    }
    {
      const auto& h = rep["dice_healthy"];
      const double d = h["direct"]["both"].get<double>(), c = h["cfseg"]["both"].get<double>();
      report("no-harm-on-healthy", c >= d - 0.02, "cfseg " + fmt(c) + " >= direct " + fmt(d) + " - 0.02");
    }
    {
      const double dv = g("both", "dvplus"), all = g("both", "all");
      report("dvplus-amplification", dv > all,
             "gain on dV+ " + fmt(dv) + " > gain on all diseased " + fmt(all) + " (|dV+| = " +
                 std::to_string(rep["dvplus"]["both"]["count"].get<int>()) + " of " +
                 std::to_string(rep["counts"]["diseased"].get<int>()) + ")");
    }
    {
      const double cf = audit["mean_l1_cf_vs_truth"], orig = audit["mean_l1_orig_vs_truth"];
      report("counterfactual-l1-oracle", cf < 0.5 * orig,
             "L1(cf, truth) " + fmt(cf, 5) + " < 0.5 x L1(orig, truth) " + fmt(0.5 * orig, 5));
      const double healthy = audit["fraction_cf_classified_healthy"];
      report("counterfactual-classifier", healthy >= 0.9, "healthy fraction " + fmt(healthy, 3) + " >= 0.90");
    }
    {
      const double comp = audit["mean_composition_dice_healthy"];
      report("composition", comp >= 0.95, "Dice(seg(recon), seg(orig)) " + fmt(comp) + " >= 0.95");
    }
    {
      const auto& ov = rep["nf_vs_diseased_right"]["overlap"];
      const double c = ov["cfseg"], d = ov["direct"];
      report("population-volume-overlap", c > d, "overlap cfseg " + fmt(c) + " > direct " + fmt(d));
    }
    {
      const auto m = oracle::compare_metrics(1000, 8, 424242);
      const double worst = std::max({m.max_dice_error, m.max_volume_error, m.max_overlap_error});
      report("metric-oracles", worst <= 1e-12, "max |lib - brute force| = " + fmt(worst, 15) + " <= 1e-12");
      const auto gc = gradcheck::hvae_elbo(60, 3);
      report("elbo-gradient-check", gc.max_rel_error <= 1e-3,
             "max rel error " + fmt(gc.max_rel_error, 7) + " over " + std::to_string(gc.checked) +
                 " coordinates <= 1e-3");
    }
    {
      const double s = rep["silver_dice_diseased"];
      report("silver-calibration", s >= 0.82 && s <= 0.92, "Dice(silver, gt) diseased " + fmt(s) + " in [0.82, 0.92]");
    }
    {
      const auto& out = records[0]["outputs"];
      const auto& dc = records[0]["config"];
      const int n = out["n"], diseased = out["diseased"];
      const bool shape = dc["size"] == 64 && out["train"].get<int>() >= 2000 && out["test"].get<int>() == 300 &&
                         std::abs(static_cast<double>(diseased) / n - 0.1) <= 0.02;
      double wall = 0;
      for (const auto& r : records) wall += r.value("wall_seconds", 0.0);
      report("default-config-and-runtime", shape && wall < 4 * 3600.0,
             "64x64, train " + std::to_string(out["train"].get<int>()) + " / test " +
                 std::to_string(out["test"].get<int>()) + ", diseased " + fmt(100.0 * diseased / n, 1) +
                 "%, pipeline wall " + fmt(wall / 60.0, 1) + " min < 240 min");
    }
  } catch (const std::exception& e) {
    report("pipeline", false, std::string("sequence failed: ") + e.what());
  }

  int failed = 0;
  for (const auto& o : outcomes) failed += !o.pass;
  std::printf("%zu criteria, %d failed\n", outcomes.size(), failed);
  return failed == 0 ? 0 : 1;
}
