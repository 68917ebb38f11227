#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include <torch/torch.h>

#include "cfseg/hvae.hpp"

// Central finite differences of the ELBO against autograd, in double precision with the
// reparameterisation noise held fixed.
namespace gradcheck {

struct Result {
  int checked = 0;
  double max_rel_error = 0;
};

inline Result hvae_elbo(int coordinates = 60, std::uint64_t seed = 3) {
  using namespace cfseg::hvae;
  torch::manual_seed(static_cast<std::int64_t>(seed));
  HvaeConfig c;
  c.size = 8;
  c.levels = 2;
  c.latent_channels = {3, 2};
  c.width = 6;
  c.embed_dim = 4;
  c.likelihood_scale = 0.3;
  HvaeModel model(c);
  model->to(torch::kDouble);
  model->train();

  const auto opts = torch::TensorOptions().dtype(torch::kDouble);
  const auto images = torch::rand({2, 1, 8, 8}, opts);
  const auto parents = torch::tensor({{1.0, 0.0, 1.0, 0.6}, {0.0, 1.0, 0.0, 0.0}}, opts);
  std::vector<torch::Tensor> noise;
  for (int i = 0; i < c.levels; ++i) {
    const int r = c.latent_resolution(i);
    noise.push_back(torch::randn({2, c.latent_channels[static_cast<std::size_t>(i)], r, r}, opts));
  }
  auto objective = [&] { return model->elbo(images, parents, &noise).elbo; };

  model->zero_grad();
  objective().backward();

  std::vector<torch::Tensor> params;
  for (auto& p : model->parameters())
    if (p.numel() > 0) params.push_back(p);

  std::mt19937_64 rng(seed);
  Result out;
  torch::NoGradGuard guard;
  const double h = 1e-6;
  for (int k = 0; k < coordinates; ++k) {
    auto& p = params[rng() % params.size()];
    const auto flat = p.view(-1);
    const auto idx = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(flat.numel()));
    const double analytic = p.grad().view(-1)[idx].item<double>();
    const double orig = flat[idx].item<double>();
    flat[idx] = orig + h;
    const double up = objective().item<double>();
    flat[idx] = orig - h;
    const double down = objective().item<double>();
    flat[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-2});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / scale);
    ++out.checked;
  }
  return out;
}

}  // namespace gradcheck
