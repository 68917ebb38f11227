#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "cfseg/grid.hpp"
#include "cfseg/io.hpp"
#include "cfseg/synth.hpp"

namespace cfseg::seg {

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kClasses = 3;

struct SegModelConfig {
  int size = 64;
  int depth = 4;
  int base_channels = 16;

  void validate() const;
};

io::Json to_json(const SegModelConfig& c);
SegModelConfig seg_model_config_from_json(const io::Json& j);

// U-Net: two 3x3 conv + BN + ReLU per stage, max-pool down, transposed conv up, skips.
class SegModelImpl : public torch::nn::Module {
 public:
  explicit SegModelImpl(SegModelConfig config);
  torch::Tensor forward(const torch::Tensor& images);  // logits [N, 3, H, W]
  const SegModelConfig& config() const noexcept { return config_; }

 private:
  SegModelConfig config_;
  torch::nn::ModuleList down_{nullptr};
  torch::nn::ModuleList up_{nullptr};
  torch::nn::ModuleList merge_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(SegModel);

struct SegTrainConfig {
  double ce_weight = 0.5;
  double dice_weight = 0.5;
  int epochs = 12;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 11;
  bool augment_intensity = false;
  // Training labels always come from this manifest field; anything else is rejected.
  std::string label_field = "silver_mask_path";
  bool verbose = true;

  void validate() const;
};

io::Json to_json(const SegTrainConfig& c);
SegTrainConfig seg_train_config_from_json(const io::Json& j);

struct SegEpoch {
  int epoch = 0;
  double train_loss = 0;
  double val_dice_silver = 0;          // mean foreground Dice vs silver, val split
  double val_dice_silver_healthy = 0;  // same, healthy val samples only
  double seconds = 0;
};

struct SegReport {
  std::vector<SegEpoch> epochs;
  int best_epoch = 0;
  std::string checksum;
  io::Json to_json() const;
};

struct SegTrainResult {
  SegModel model{nullptr};
  SegReport report;
};

// Cross-entropy plus soft-Dice on the silver masks of the train split; keeps the epoch with
// the best validation Dice against silver. Ground-truth masks are never read.
SegTrainResult train_seg(const synth::Manifest& manifest, const SegModelConfig& model_config,
                         const SegTrainConfig& config);

// Per-pixel argmax, deterministic.
Mask segment(SegModel& model, const Image& image);
torch::Tensor segment_batch(SegModel& model, const torch::Tensor& images);  // [N, H, W] long

torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& labels);

void save(const std::filesystem::path& path, const SegModel& model);
SegModel load(const std::filesystem::path& path);
std::string checksum(const SegModel& model);

}  // namespace cfseg::seg
