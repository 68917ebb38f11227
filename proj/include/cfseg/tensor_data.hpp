#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "cfseg/grid.hpp"
#include "cfseg/synth.hpp"

namespace cfseg {

// [1, 1, H, W] float32
torch::Tensor to_tensor(const Image& image);
// [H, W] long
torch::Tensor to_tensor(const Mask& mask);
// Accepts [H, W], [1, H, W] or [1, 1, H, W].
Image image_from_tensor(const torch::Tensor& t);
Mask mask_from_tensor(const torch::Tensor& t);

// Parent variables the image mechanism can be conditioned on, in canonical order.
inline const std::vector<std::string> kImageParents{"sex", "scanner", "disease", "severity"};

// [P] float32 with the selected parents in the given order.
torch::Tensor parent_vector(const synth::AttributeVector& a, const std::vector<std::string>& parents);

struct TensorSplit {
  std::vector<std::string> ids;
  torch::Tensor images;     // [N, 1, H, W]
  torch::Tensor masks;      // [N, H, W] long, silver or gt depending on the loader
  torch::Tensor disease;    // [N] float
  std::vector<synth::AttributeVector> attributes;

  std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
};

enum class MaskSource { None, Silver, Gt };

TensorSplit load_split(const synth::Manifest& manifest, synth::Split split, MaskSource masks);

torch::Tensor parents_of(const TensorSplit& data, const std::vector<std::string>& parents);

// Epoch order; with diseased_fraction > 0 draws that share of each epoch from diseased samples.
std::vector<std::int64_t> epoch_order(const TensorSplit& data, double diseased_fraction,
                                      torch::Generator& gen);

}  // namespace cfseg
