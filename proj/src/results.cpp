#include "cfseg/results.hpp"

namespace cfseg::pipeline {

std::string to_string(Arm a) { return a == Arm::Direct ? "direct" : "cfseg"; }

Arm arm_from_string(const std::string& s) {
  if (s == "direct") return Arm::Direct;
  if (s == "cfseg") return Arm::CfSeg;
  throw ArgumentError("unknown arm '" + s + "' (expected direct or cfseg)");
}

io::Json to_json(const ResultRecord& r) {
  io::Json j = synth::to_json(r.sample);
  j["arm"] = to_string(r.arm);
  j["pred_mask_path"] = r.pred_mask_path;
  if (r.cf_image_path) j["cf_image_path"] = *r.cf_image_path;
  j["seg_checksum"] = r.seg_checksum;
  j["wall_ms"] = r.wall_ms;
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

ResultRecord result_from_json(const io::Json& j) {
  ResultRecord r;
  r.sample = synth::record_from_json(j);
  try {
    r.arm = arm_from_string(j.at("arm").get<std::string>());
    r.pred_mask_path = j.value("pred_mask_path", std::string{});
    if (j.contains("cf_image_path")) r.cf_image_path = j.at("cf_image_path").get<std::string>();
    r.seg_checksum = j.at("seg_checksum").get<std::string>();
    r.wall_ms = j.value("wall_ms", 0.0);
    r.status = j.value("status", std::string("ok"));
    r.error = j.value("error", std::string{});
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("results record: ") + e.what());
  }
  return r;
}

ResultsManifest ResultsManifest::load(const std::filesystem::path& file) {
  ResultsManifest m;
  m.root = file.parent_path();
  for (const auto& j : io::read_jsonl(file)) {
    try {
      m.records.push_back(result_from_json(j));
    } catch (const std::exception& e) {
      throw IoError(file.string(), e.what());
    }
  }
  return m;
}

void ResultsManifest::save(const std::filesystem::path& file) const {
  std::vector<io::Json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.push_back(to_json(r));
  io::write_jsonl(file, lines);
}

}  // namespace cfseg::pipeline
