#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "cfseg/causal.hpp"
#include "cfseg/grid.hpp"
#include "cfseg/results.hpp"
#include "cfseg/segmenter.hpp"
#include "cfseg/synth.hpp"

namespace cfseg::pipeline {

enum class Stage { Abduction, Decode, Segment };
std::string to_string(Stage s);

// A component failure inside infer_cfseg, tagged with the stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(Stage stage, const std::string& what)
      : std::runtime_error(to_string(stage) + ": " + what), stage_(stage) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

Mask infer_direct(seg::SegModel& seg_model, const Image& image);

struct CfSegOutput {
  Mask mask;
  Image cf_image;
};

// Segments the pseudo-healthy counterfactual do(disease := 0, severity := 0).
// Applied regardless of the observed disease label.
CfSegOutput infer_cfseg(const causal::CausalEngine& engine, seg::SegModel& seg_model, const Image& image,
                        const synth::AttributeVector& parents);

enum class ArmSelection { Direct, CfSeg, Both };
ArmSelection arm_selection_from_string(const std::string& s);

struct Models {
  seg::SegModel seg{nullptr};
  std::optional<causal::CausalEngine> engine;  // required for the cfseg arm
};

struct BatchOptions {
  std::optional<synth::Split> split = synth::Split::Test;  // nullopt = every record
  bool verbose = false;
};

struct BatchSummary {
  ResultsManifest results;
  int ok = 0;
  int failed = 0;
  bool success() const noexcept { return failed == 0; }
};

// Writes preds/<arm>/<id>_pred.png, cf/<id>_cf.png and results.jsonl under out_dir.
// Per-sample failures are recorded with status "error" and do not stop the batch.
BatchSummary batch_infer(const synth::Manifest& manifest, Models& models, ArmSelection arms,
                         const std::filesystem::path& out_dir, const BatchOptions& options = {});

}  // namespace cfseg::pipeline
