#include "cfseg/tensor_data.hpp"

#include <algorithm>

namespace cfseg {

torch::Tensor to_tensor(const Image& image) {
  auto t = torch::empty({1, 1, image.height(), image.width()}, torch::kFloat32);
  std::copy(image.values().begin(), image.values().end(), t.data_ptr<float>());
  return t;
}

torch::Tensor to_tensor(const Mask& mask) {
  auto t = torch::empty({mask.height(), mask.width()}, torch::kLong);
  std::copy(mask.values().begin(), mask.values().end(), t.data_ptr<std::int64_t>());
  return t;
}

Image image_from_tensor(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  while (c.dim() > 2) {
    if (c.size(0) != 1) throw ArgumentError("image_from_tensor expects a single image");
    c = c.squeeze(0);
  }
  Image image(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  std::copy_n(c.data_ptr<float>(), image.size(), image.values().begin());
  return image;
}

Mask mask_from_tensor(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kLong).contiguous();
  while (c.dim() > 2) c = c.squeeze(0);
  Mask mask(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  const auto* p = c.data_ptr<std::int64_t>();
  auto out = mask.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(p[i]);
  validate_mask(mask);
  return mask;
}

torch::Tensor parent_vector(const synth::AttributeVector& a, const std::vector<std::string>& parents) {
  auto t = torch::empty({static_cast<std::int64_t>(parents.size())}, torch::kFloat32);
  auto* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < parents.size(); ++i) {
    const auto& name = parents[i];
    if (name == "sex") p[i] = static_cast<float>(a.sex);
    else if (name == "scanner") p[i] = static_cast<float>(a.scanner);
    else if (name == "disease") p[i] = static_cast<float>(a.disease);
    else if (name == "severity") p[i] = static_cast<float>(a.severity);
    else throw ArgumentError("unknown image parent '" + name + "'");
  }
  return t;
}

TensorSplit load_split(const synth::Manifest& manifest, synth::Split split, MaskSource masks) {
  const auto records = manifest.split(split);
  TensorSplit out;
  std::vector<torch::Tensor> images, labels;
  std::vector<float> disease;
  for (const auto* r : records) {
    out.ids.push_back(r->id);
    out.attributes.push_back(r->attributes);
    images.push_back(to_tensor(io::read_image_png(manifest.path_of(r->image_path))));
    disease.push_back(static_cast<float>(r->attributes.disease));
    if (masks == MaskSource::Silver)
      labels.push_back(to_tensor(io::read_mask_png(manifest.path_of(r->silver_mask_path))));
    else if (masks == MaskSource::Gt)
      labels.push_back(to_tensor(io::read_mask_png(manifest.path_of(r->gt_mask_path))));
  }
  if (!images.empty()) out.images = torch::cat(images, 0);
  if (!labels.empty()) out.masks = torch::stack(labels, 0);
  out.disease = torch::tensor(disease, torch::kFloat32);
  return out;
}

torch::Tensor parents_of(const TensorSplit& data, const std::vector<std::string>& parents) {
  std::vector<torch::Tensor> rows;
  rows.reserve(data.attributes.size());
  for (const auto& a : data.attributes) rows.push_back(parent_vector(a, parents));
  if (rows.empty()) return torch::empty({0, static_cast<std::int64_t>(parents.size())});
  return torch::stack(rows, 0);
}

std::vector<std::int64_t> epoch_order(const TensorSplit& data, double diseased_fraction,
                                      torch::Generator& gen) {
  const std::int64_t n = data.size();
  std::vector<std::int64_t> order;
  if (n == 0) return order;
  std::vector<std::int64_t> sick, well;
  for (std::int64_t i = 0; i < n; ++i) (data.attributes[i].disease ? sick : well).push_back(i);
  auto draw = [&](const std::vector<std::int64_t>& pool, std::int64_t k) {
    if (pool.empty() || k <= 0) return;
    // Whole permutations first, then a partial one, so every sample appears before repeats.
    while (k > 0) {
      auto perm = torch::randperm(static_cast<std::int64_t>(pool.size()), gen);
      const auto* p = perm.data_ptr<std::int64_t>();
      for (std::int64_t i = 0; i < perm.numel() && k > 0; ++i, --k) order.push_back(pool[p[i]]);
    }
  };
  if (diseased_fraction <= 0 || sick.empty() || well.empty()) {
    auto perm = torch::randperm(n, gen);
    order.assign(perm.data_ptr<std::int64_t>(), perm.data_ptr<std::int64_t>() + n);
    return order;
  }
  const auto n_sick = static_cast<std::int64_t>(std::llround(diseased_fraction * static_cast<double>(n)));
  draw(sick, std::max<std::int64_t>(n_sick, static_cast<std::int64_t>(sick.size())));
  draw(well, n - static_cast<std::int64_t>(order.size()));
  auto perm = torch::randperm(static_cast<std::int64_t>(order.size()), gen);
  std::vector<std::int64_t> shuffled(order.size());
  const auto* p = perm.data_ptr<std::int64_t>();
  for (std::size_t i = 0; i < order.size(); ++i) shuffled[i] = order[p[i]];
  return shuffled;
}

}  // namespace cfseg
