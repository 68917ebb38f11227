#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfseg/grid.hpp"
#include "cfseg/io.hpp"

// Synthetic chest-image SCM: independent roots sex, scanner, disease; severity a
// child of disease; image = render(parents, anatomy).
namespace cfseg::synth {

struct AttributeVector {
  int sex = 0;
  int scanner = 0;
  int disease = 0;  // 0 = no finding, 1 = effusion
  double severity = 0.0;

  void validate() const;
  friend bool operator==(const AttributeVector&, const AttributeVector&) = default;
};

io::Json to_json(const AttributeVector& a);
AttributeVector attributes_from_json(const io::Json& j);

struct Marginals {
  double p_sex = 0.5;
  double p_scanner = 0.5;
  double p_disease = 0.1;
  double severity_min = 0.2;
  double severity_max = 0.8;
};

std::vector<AttributeVector> sample_attributes(std::uint64_t seed, int n,
                                               const Marginals& marginals = {});

struct Ellipse {
  double cx = 0, cy = 0;  // pixel coordinates of the center
  double ax = 0, ay = 0;  // semi-axes in pixels, before sex scaling
  friend bool operator==(const Ellipse&, const Ellipse&) = default;
};

// Exogenous image noise of the generator.
struct AnatomyParams {
  int size = 64;
  Ellipse right;  // patient's right lung, drawn on the image's left half
  Ellipse left;
  double gain = 1.0;
  double offset = 0.0;
  std::uint64_t texture_seed = 0;
  friend bool operator==(const AnatomyParams&, const AnatomyParams&) = default;
};

io::Json to_json(const AnatomyParams& a);
AnatomyParams anatomy_from_json(const io::Json& j);

AnatomyParams sample_anatomy(std::uint64_t seed, int size);

// Semi-axis multiplier applied by the sex parent.
double sex_scale(int sex);

// Effective ellipse after parent-dependent scaling.
Ellipse scaled(const Ellipse& e, int sex);

// Throws ValidationError unless both scaled ellipses are inside the image and disjoint.
void validate_anatomy(const AnatomyParams& anatomy, int sex);

struct RenderParams {
  double opacity_left = 0.24;   // additive intensity at the lung base
  double right_factor = 1.25;   // right-lung opacity relative to left
};

struct Rendered {
  Image image;
  Mask gt_mask;
};

Rendered render(const AttributeVector& attrs, const AnatomyParams& anatomy,
                const RenderParams& params = {});

struct DegradeParams {
  double k_right = 0.65;
  double k_left = 0.4;
  // Effusions at or below this severity leave the silver mask untouched.
  double visibility = 0.25;
  int jitter_rows = 1;
};

Mask degrade_to_silver(const Mask& gt_mask, const AttributeVector& attrs, std::uint64_t seed,
                       const DegradeParams& params = {});

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SplitRatios {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

struct DatasetConfig {
  int n = 3000;
  std::uint64_t seed = 1234;
  int size = 64;
  SplitRatios split_ratios;
  double disease_prevalence = 0.1;
  double degrade_k_right = 0.65;
  double degrade_k_left = 0.4;

  void validate() const;
  Marginals marginals() const;
  DegradeParams degrade() const;
};

DatasetConfig dataset_config_from_json(const io::Json& j);
io::Json to_json(const DatasetConfig& c);

// Assigns splits stratified by disease; totals follow the ratios with largest-deficit rounding.
std::vector<Split> assign_splits(const std::vector<AttributeVector>& attrs, const SplitRatios& r,
                                 std::uint64_t seed);

struct ManifestRecord {
  std::string id;
  std::string image_path;
  std::string gt_mask_path;
  std::string silver_mask_path;
  AttributeVector attributes;
  Split split = Split::Train;
  std::optional<AnatomyParams> anatomy;  // kept for oracle re-rendering
  std::uint64_t sample_seed = 0;
};

io::Json to_json(const ManifestRecord& r);
ManifestRecord record_from_json(const io::Json& j);

struct Manifest {
  std::filesystem::path root;  // paths in records are relative to this
  std::vector<ManifestRecord> records;

  static Manifest load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  std::vector<const ManifestRecord*> split(Split s) const;
  std::filesystem::path path_of(const std::string& relative) const { return io::resolve(root, relative); }
};

inline constexpr const char* kManifestName = "manifest.jsonl";

// Writes images/, masks/ and manifest.jsonl under out_dir; returns the manifest.
Manifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

}  // namespace cfseg::synth
