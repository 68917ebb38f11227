#include "cfseg/pipeline.hpp"

#include <chrono>
#include <iostream>

namespace cfseg::pipeline {

namespace fs = std::filesystem;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Abduction: return "abduction";
    case Stage::Decode: return "decode";
    case Stage::Segment: return "segment";
  }
  return "unknown";
}

ArmSelection arm_selection_from_string(const std::string& s) {
  if (s == "direct") return ArmSelection::Direct;
  if (s == "cfseg") return ArmSelection::CfSeg;
  if (s == "both") return ArmSelection::Both;
  throw ArgumentError("arm must be one of direct, cfseg, both (got '" + s + "')");
}

Mask infer_direct(seg::SegModel& seg_model, const Image& image) { return seg::segment(seg_model, image); }

CfSegOutput infer_cfseg(const causal::CausalEngine& engine, seg::SegModel& seg_model, const Image& image,
                        const synth::AttributeVector& parents) {
  const auto observation = causal::observation_of(parents, image);
  causal::ExogenousPosterior posterior;
  try {
    posterior = engine.abduct(observation);
  } catch (const std::exception& e) {
    throw StageError(Stage::Abduction, e.what());
  }
  Image cf;
  try {
    cf = causal::image_of(engine.predict(posterior, observation, causal::pseudo_healthy()));
  } catch (const std::exception& e) {
    throw StageError(Stage::Decode, e.what());
  }
  try {
    auto mask = seg::segment(seg_model, cf);
    return {std::move(mask), std::move(cf)};
  } catch (const std::exception& e) {
    throw StageError(Stage::Segment, e.what());
  }
}

namespace {

synth::ManifestRecord rebased(const synth::Manifest& manifest, const synth::ManifestRecord& r, const fs::path& root) {
  const auto base = fs::absolute(root).lexically_normal();
  auto rel = [&](const std::string& p) {
    return fs::absolute(manifest.path_of(p)).lexically_normal().lexically_relative(base).generic_string();
  };
  auto out = r;
  out.image_path = rel(r.image_path);
  out.gt_mask_path = rel(r.gt_mask_path);
  out.silver_mask_path = rel(r.silver_mask_path);
  return out;
}

}  // namespace

BatchSummary batch_infer(const synth::Manifest& manifest, Models& models, ArmSelection arms,
                         const fs::path& out_dir, const BatchOptions& options) {
  if (!models.seg) throw ArgumentError("batch_infer: no segmenter loaded");
  const bool run_direct = arms != ArmSelection::CfSeg;
  const bool run_cf = arms != ArmSelection::Direct;
  if (run_cf && !models.engine) throw ArgumentError("batch_infer: the cfseg arm needs a causal engine");

  BatchSummary summary;
  summary.results.root = out_dir;
  const auto checksum = seg::checksum(models.seg);
  fs::create_directories(out_dir);

  std::vector<const synth::ManifestRecord*> records;
  if (options.split) records = manifest.split(*options.split);
  else
    for (const auto& r : manifest.records) records.push_back(&r);

  for (const auto* r : records) {
    std::optional<Image> image;
    std::string load_error;
    try {
      image = io::read_image_png(manifest.path_of(r->image_path));
    } catch (const std::exception& e) {
      load_error = e.what();
    }
    for (const Arm arm : {Arm::Direct, Arm::CfSeg}) {
      if ((arm == Arm::Direct && !run_direct) || (arm == Arm::CfSeg && !run_cf)) continue;
      ResultRecord out;
      out.sample = rebased(manifest, *r, out_dir);
      out.arm = arm;
      out.seg_checksum = checksum;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        if (!image) throw IoError(r->image_path, load_error);
        const auto pred_rel = fs::path("preds") / to_string(arm) / (r->id + "_pred.png");
        if (arm == Arm::Direct) {
          io::write_mask_png(out_dir / pred_rel, infer_direct(models.seg, *image));
        } else {
          const auto result = infer_cfseg(*models.engine, models.seg, *image, r->attributes);
          const auto cf_rel = fs::path("cf") / (r->id + "_cf.png");
          io::write_image_png(out_dir / cf_rel, result.cf_image);
          io::write_mask_png(out_dir / pred_rel, result.mask);
          out.cf_image_path = cf_rel.generic_string();
        }
        out.pred_mask_path = pred_rel.generic_string();
        ++summary.ok;
      } catch (const std::exception& e) {
        out.status = "error";
        out.error = e.what();
        ++summary.failed;
        std::cerr << "[infer] " << r->id << " (" << to_string(arm) << ") failed: " << e.what() << "\n";
      }
      out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      summary.results.records.push_back(std::move(out));
    }
    if (options.verbose && summary.results.records.size() % 100 == 0)
      std::cerr << "[infer] " << summary.results.records.size() << " predictions\n";
  }
  summary.results.save(out_dir / kResultsName);
  return summary;
}

}  // namespace cfseg::pipeline
