#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfseg/io.hpp"
#include "cfseg/synth.hpp"

namespace cfseg::pipeline {

enum class Arm { Direct, CfSeg };
std::string to_string(Arm a);
Arm arm_from_string(const std::string& s);

// One line of a results manifest: the dataset record (paths rebased onto the results
// root) plus the inference outputs.
struct ResultRecord {
  synth::ManifestRecord sample;
  Arm arm = Arm::Direct;
  std::string pred_mask_path;
  std::optional<std::string> cf_image_path;
  std::string seg_checksum;
  double wall_ms = 0.0;
  std::string status = "ok";  // "ok" or "error"
  std::string error;

  const std::string& id() const noexcept { return sample.id; }
  bool ok() const noexcept { return status == "ok"; }
};

io::Json to_json(const ResultRecord& r);
ResultRecord result_from_json(const io::Json& j);

struct ResultsManifest {
  std::filesystem::path root;
  std::vector<ResultRecord> records;

  static ResultsManifest load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;
  std::filesystem::path path_of(const std::string& relative) const { return io::resolve(root, relative); }
};

inline constexpr const char* kResultsName = "results.jsonl";

}  // namespace cfseg::pipeline
