#include "cfseg/hvae.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numbers>

#include <ATen/CPUGeneratorImpl.h>

namespace cfseg::hvae {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

nn::Conv2d conv1(int in, int out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 1)); }

struct ResBlockImpl : nn::Module {
  explicit ResBlockImpl(int channels) {
    a = register_module("a", conv3(channels, channels));
    b = register_module("b", conv3(channels, channels));
    torch::NoGradGuard guard;
    b->weight.mul_(0.1);
  }
  torch::Tensor forward(const torch::Tensor& x) { return x + b(torch::silu(a(torch::silu(x)))); }
  nn::Conv2d a{nullptr}, b{nullptr};
};
TORCH_MODULE(ResBlock);

struct DownBlockImpl : nn::Module {
  DownBlockImpl(int in, int out) {
    conv = register_module("conv", conv3(in, out, 2));
    res = register_module("res", ResBlock(out));
  }
  torch::Tensor forward(const torch::Tensor& x) { return res(torch::silu(conv(x))); }
  nn::Conv2d conv{nullptr};
  ResBlock res{nullptr};
};
TORCH_MODULE(DownBlock);

// Gaussian parameter head: conv3x3 -> SiLU -> conv1x1 to (mean, raw scale).
nn::Sequential gaussian_head(int in, int hidden, int latent) {
  return nn::Sequential(conv3(in, hidden), nn::SiLU(), conv1(hidden, 2 * latent));
}

torch::Tensor positive_scale(const torch::Tensor& raw) { return F::softplus(raw) + 1e-3; }

torch::Tensor gaussian_kl(const torch::Tensor& mq, const torch::Tensor& sq, const torch::Tensor& mp,
                          const torch::Tensor& sp) {
  const auto kl = torch::log(sp) - torch::log(sq) + (sq.square() + (mq - mp).square()) / (2 * sp.square()) - 0.5;
  return kl.flatten(1).sum(1);
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest));
}

torch::Tensor broadcast(const torch::Tensor& emb, std::int64_t r) {
  return emb.view({emb.size(0), emb.size(1), 1, 1}).expand({emb.size(0), emb.size(1), r, r});
}

// Normalised (y, x) coordinates in [-1, 1], shape [N, 2, r, r].
torch::Tensor coord_grid(std::int64_t r, std::int64_t batch, const torch::TensorOptions& options) {
  const auto line = torch::linspace(-1.0, 1.0, r, options);
  const auto yx = torch::meshgrid({line, line}, "ij");
  return torch::stack({yx[0], yx[1]}).unsqueeze(0).expand({batch, 2, r, r});
}

// Feature-wise modulation by the parents: x * (1 + gamma) + beta.
torch::Tensor film(const torch::Tensor& x, const torch::Tensor& params) {
  const auto gb = params.view({params.size(0), -1, 1, 1}).chunk(2, 1);
  return x * (1 + gb[0]) + gb[1];
}

}  // namespace

void HvaeConfig::validate() const {
  if (levels < 2) throw ConfigError("hvae: levels must be >= 2");
  if (static_cast<int>(latent_channels.size()) != levels)
    throw ConfigError("hvae: latent_channels needs one entry per level");
  for (int c : latent_channels)
    if (c < 1) throw ConfigError("hvae: latent channel counts must be positive");
  if (size < 8 || (size >> (levels + 1)) < 1 || size % (1 << (levels + 1)) != 0)
    throw ConfigError("hvae: size must be divisible by 2^(levels+1)");
  if (width < 4 || embed_dim < 1) throw ConfigError("hvae: width >= 4 and embed_dim >= 1 required");
  if (!(beta > 0)) throw ConfigError("hvae: beta must be > 0");
  if (!(likelihood_scale > 0)) throw ConfigError("hvae: likelihood_scale must be > 0");
  if (parents.empty()) throw ConfigError("hvae: at least one parent is required");
  for (const auto& p : parents)
    if (std::find(kImageParents.begin(), kImageParents.end(), p) == kImageParents.end())
      throw ConfigError("hvae: unknown parent '" + p + "'");
}

int HvaeConfig::latent_resolution(int level) const { return size >> (levels + 1 - level); }

io::Json to_json(const HvaeConfig& c) {
  return {{"size", c.size},       {"levels", c.levels},           {"latent_channels", c.latent_channels},
          {"width", c.width},     {"embed_dim", c.embed_dim},     {"beta", c.beta},
          {"likelihood_scale", c.likelihood_scale},               {"prior_parents", c.prior_parents},
          {"posterior_parents", c.posterior_parents},
          {"parents", c.parents}};
}

HvaeConfig hvae_config_from_json(const io::Json& j) {
  HvaeConfig c;
  try {
    c.size = j.value("size", c.size);
    c.levels = j.value("levels", c.levels);
    if (j.contains("latent_channels")) {
      c.latent_channels = j.at("latent_channels").get<std::vector<int>>();
    } else if (c.levels != 3) {
      c.latent_channels.assign(static_cast<std::size_t>(c.levels), 4);
    }
    c.width = j.value("width", c.width);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.beta = j.value("beta", c.beta);
    c.likelihood_scale = j.value("likelihood_scale", c.likelihood_scale);
    c.prior_parents = j.value("prior_parents", c.prior_parents);
    c.posterior_parents = j.value("posterior_parents", c.posterior_parents);
    if (j.contains("parents")) c.parents = j.at("parents").get<std::vector<std::string>>();
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("hvae config: ") + e.what());
  }
  c.validate();
  return c;
}

bool LatentStack::all_finite() const {
  for (const auto& z : levels)
    if (!torch::isfinite(z).all().item<bool>()) return false;
  return true;
}

int HvaeModelImpl::channels_at(int resolution) const {
  if (resolution >= config_.size) return std::max(8, config_.width / 2);
  return config_.width;
}

HvaeModelImpl::HvaeModelImpl(HvaeConfig config) : config_(std::move(config)) {
  config_.validate();
  const int S = config_.size, L = config_.levels, W = config_.width, E = config_.embed_dim;
  const int P = static_cast<int>(config_.parents.size());

  embedding_ = register_module("embedding", nn::Sequential(nn::Linear(P, E), nn::SiLU(), nn::Linear(E, E)));
  stem_ = register_module("stem", conv3(1, channels_at(S)));
  down_ = register_module("down", nn::ModuleList());
  for (int r = S; r > config_.latent_resolution(0); r /= 2) {
    down_->push_back(DownBlock(channels_at(r), channels_at(r / 2)));
    down_resolutions_.push_back(r / 2);
  }

  top_state_ = register_parameter("top_state", torch::zeros({1, W, config_.latent_resolution(0), config_.latent_resolution(0)}));
  prior_ = register_module("prior", nn::ModuleList());
  posterior_ = register_module("posterior", nn::ModuleList());
  z_proj_ = register_module("z_proj", nn::ModuleList());
  level_parent_ = register_module("level_parent", nn::ModuleList());
  level_block_ = register_module("level_block", nn::ModuleList());
  level_up_ = register_module("level_up", nn::ModuleList());
  dec_state_ = register_parameter("dec_state", torch::zeros({1, W, config_.latent_resolution(0), config_.latent_resolution(0)}));
  dec_proj_ = register_module("dec_proj", nn::ModuleList());
  dec_block_ = register_module("dec_block", nn::ModuleList());
  dec_up_ = register_module("dec_up", nn::ModuleList());
  dec_coord_ = register_module("dec_coord", nn::ModuleList());
  for (int i = 0; i < L; ++i) {
    const int cz = config_.latent_channels[static_cast<std::size_t>(i)];
    prior_->push_back(gaussian_head(config_.prior_parents ? W + E : W, W, cz));
    posterior_->push_back(gaussian_head(config_.posterior_parents ? W + W + E : W + W, W, cz));
    dec_proj_->push_back(conv1(cz, W));
    level_parent_->push_back(nn::Linear(E, 2 * W));
    dec_block_->push_back(ResBlock(W));
    dec_coord_->push_back(conv1(2, W));
    if (i + 1 < L) {
      z_proj_->push_back(conv1(cz, W));
      level_block_->push_back(ResBlock(W));
      level_up_->push_back(conv3(W, W));
      dec_up_->push_back(conv3(W, W));
    }
  }

  out_up_ = register_module("out_up", nn::ModuleList());
  out_parent_ = register_module("out_parent", nn::ModuleList());
  out_block_ = register_module("out_block", nn::ModuleList());
  out_coord_ = register_module("out_coord", nn::ModuleList());
  for (int r = config_.latent_resolution(L - 1); r < S; r *= 2) {
    const int cin = r == config_.latent_resolution(L - 1) ? W : channels_at(r);
    out_up_->push_back(conv3(cin, channels_at(r * 2)));
    out_parent_->push_back(nn::Linear(E, 2 * channels_at(r * 2)));
    out_block_->push_back(ResBlock(channels_at(r * 2)));
    out_coord_->push_back(conv1(2, channels_at(r * 2)));
  }
  head_ = register_module("head", conv3(channels_at(S), 1));
}

void HvaeModelImpl::check_images(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 1 || images.size(2) != config_.size || images.size(3) != config_.size)
    throw ArgumentError("hvae: expected images of shape [N, 1, " + std::to_string(config_.size) + ", " +
                        std::to_string(config_.size) + "]");
}

void HvaeModelImpl::check_latents(const LatentStack& latents, std::int64_t batch) const {
  if (static_cast<int>(latents.depth()) != config_.levels)
    throw ArgumentError("hvae: latent stack has " + std::to_string(latents.depth()) + " levels, model has " +
                        std::to_string(config_.levels));
  for (int i = 0; i < config_.levels; ++i) {
    const auto& z = latents.levels[static_cast<std::size_t>(i)];
    const int r = config_.latent_resolution(i);
    if (z.dim() != 4 || z.size(0) != batch || z.size(1) != config_.latent_channels[static_cast<std::size_t>(i)] ||
        z.size(2) != r || z.size(3) != r)
      throw ArgumentError("hvae: latent level " + std::to_string(i) + " does not match the hierarchy");
  }
}

torch::Tensor HvaeModelImpl::embed(const torch::Tensor& parents) {
  if (parents.dim() != 2 || parents.size(1) != static_cast<std::int64_t>(config_.parents.size()))
    throw ArgumentError("hvae: parents must have shape [N, " + std::to_string(config_.parents.size()) + "]");
  return embedding_->forward(parents.to(top_state_.dtype()));
}

std::vector<torch::Tensor> HvaeModelImpl::bottom_up(const torch::Tensor& images) {
  check_images(images);
  std::vector<torch::Tensor> by_level(static_cast<std::size_t>(config_.levels));
  auto h = torch::silu(stem_(images.to(top_state_.dtype())));
  for (std::size_t k = 0; k < down_->size(); ++k) {
    h = down_[k]->as<DownBlock>()->forward(h);
    for (int i = 0; i < config_.levels; ++i)
      if (config_.latent_resolution(i) == down_resolutions_[k]) by_level[static_cast<std::size_t>(i)] = h;
  }
  return by_level;
}

HvaeModelImpl::TopDown HvaeModelImpl::top_down(const std::vector<torch::Tensor>* features,
                                                const torch::Tensor& emb, Mode mode, const LatentStack* given,
                                                const std::vector<torch::Tensor>* noise,
                                                std::optional<torch::Generator> gen, std::int64_t batch) {
  TopDown out;
  // u carries only latent information into the prior and posterior; s is the decoder stream.
  auto u = top_state_.expand({batch, -1, -1, -1});
  auto s = dec_state_.expand({batch, -1, -1, -1});
  for (int i = 0; i < config_.levels; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const bool last = i + 1 == config_.levels;
    torch::Tensor z;
    if (mode == Mode::Given) {
      z = given->levels[idx].to(s.dtype());
    } else {
      const std::int64_t r = config_.latent_resolution(i);
      const auto e = broadcast(emb, r);
      const auto prior =
          prior_[idx]->as<nn::Sequential>()->forward(config_.prior_parents ? torch::cat({u, e}, 1) : u).chunk(2, 1);
      const auto post_in = config_.posterior_parents ? torch::cat({u, (*features)[idx], e}, 1)
                                                     : torch::cat({u, (*features)[idx]}, 1);
      const auto post = posterior_[idx]->as<nn::Sequential>()->forward(post_in).chunk(2, 1);
      const auto mq = post[0], sq = positive_scale(post[1]);
      if (mode == Mode::PosteriorMean) {
        z = mq;
      } else {
        torch::Tensor eps;
        if (noise) eps = (*noise)[idx];
        else if (gen) eps = torch::randn(mq.sizes(), *gen, mq.options());
        else eps = torch::randn_like(mq);
        z = mq + sq * eps;
      }
      out.kl.push_back(gaussian_kl(mq, sq, prior[0], positive_scale(prior[1])));
      if (!last) {
        u = level_block_[idx]->as<ResBlock>()->forward(u + z_proj_[idx]->as<nn::Conv2d>()->forward(z));
        u = level_up_[idx]->as<nn::Conv2d>()->forward(upsample2(u));
      }
    }
    out.latents.levels.push_back(z);
    s = s + dec_proj_[idx]->as<nn::Conv2d>()->forward(z) +
        dec_coord_[idx]->as<nn::Conv2d>()->forward(coord_grid(s.size(2), batch, s.options()));
    s = film(s, level_parent_[idx]->as<nn::Linear>()->forward(emb));
    s = dec_block_[idx]->as<ResBlock>()->forward(s);
    if (!last) s = dec_up_[idx]->as<nn::Conv2d>()->forward(upsample2(s));
  }
  for (std::size_t k = 0; k < out_up_->size(); ++k) {
    s = torch::silu(out_up_[k]->as<nn::Conv2d>()->forward(upsample2(s)));
    s = s + out_coord_[k]->as<nn::Conv2d>()->forward(coord_grid(s.size(2), batch, s.options()));
    s = film(s, out_parent_[k]->as<nn::Linear>()->forward(emb));
    s = out_block_[k]->as<ResBlock>()->forward(s);
  }
  out.mean = torch::sigmoid(head_(torch::silu(s)));
  return out;
}

ElboTerms HvaeModelImpl::elbo(const torch::Tensor& images, const torch::Tensor& parents,
                              const std::vector<torch::Tensor>* noise, std::optional<torch::Generator> gen) {
  const auto features = bottom_up(images);
  const auto emb = embed(parents);
  auto td = top_down(&features, emb, Mode::Sample, nullptr, noise, gen, images.size(0));
  const double sigma = config_.likelihood_scale;
  const auto x = images.to(td.mean.dtype());
  const auto nll = (0.5 * ((x - td.mean) / sigma).square() + std::log(sigma) + 0.5 * std::log(2 * std::numbers::pi))
                       .flatten(1)
                       .sum(1);
  ElboTerms terms;
  terms.reconstruction = nll.mean();
  auto total_kl = torch::zeros_like(nll);
  for (const auto& k : td.kl) {
    terms.kl.push_back(k.mean());
    total_kl = total_kl + k;
  }
  terms.elbo = -(nll + total_kl).mean();
  terms.mean = td.mean;
  return terms;
}

LatentStack HvaeModelImpl::encode(const torch::Tensor& images, const torch::Tensor& parents,
                                  std::optional<torch::Generator> sample_gen) {
  const auto features = bottom_up(images);
  const auto emb = embed(parents);
  auto td = top_down(&features, emb, sample_gen ? Mode::Sample : Mode::PosteriorMean, nullptr, nullptr, sample_gen,
                     images.size(0));
  return std::move(td.latents);
}

torch::Tensor HvaeModelImpl::decode(const LatentStack& latents, const torch::Tensor& parents) {
  const std::int64_t batch = parents.dim() == 2 ? parents.size(0) : -1;
  check_latents(latents, batch);
  const auto emb = embed(parents);
  auto td = top_down(nullptr, emb, Mode::Given, &latents, nullptr, std::nullopt, batch);
  return td.mean.clamp(0.0, 1.0);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be > 0");
  if (diseased_fraction < 0 || diseased_fraction >= 1) throw ConfigError("train: diseased_fraction in [0, 1)");
  if (kl_warmup_epochs < 0) throw ConfigError("train: kl_warmup_epochs must be >= 0");
  if (initial_beta) {
    if (!(*initial_beta > 0)) throw ConfigError("train: initial_beta must be > 0");
    if (kl_warmup_epochs > 0) throw ConfigError("train: initial_beta and kl_warmup_epochs are exclusive");
    if (beta_decay_epochs < 1) throw ConfigError("train: initial_beta needs beta_decay_epochs >= 1");
  }
  if (!(final_lr_fraction > 0 && final_lr_fraction <= 1)) throw ConfigError("train: final_lr_fraction in (0, 1]");
}

io::Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"diseased_fraction", c.diseased_fraction},
          {"kl_warmup_epochs", c.kl_warmup_epochs},
          {"final_lr_fraction", c.final_lr_fraction},
          {"initial_beta", c.initial_beta ? io::Json(*c.initial_beta) : io::Json(nullptr)},
          {"beta_decay_epochs", c.beta_decay_epochs}};
}

TrainConfig hvae_train_config_from_json(const io::Json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.diseased_fraction = j.value("diseased_fraction", c.diseased_fraction);
    c.kl_warmup_epochs = j.value("kl_warmup_epochs", c.kl_warmup_epochs);
    c.final_lr_fraction = j.value("final_lr_fraction", c.final_lr_fraction);
    if (j.contains("initial_beta") && !j.at("initial_beta").is_null()) c.initial_beta = j.at("initial_beta").get<double>();
    c.beta_decay_epochs = j.value("beta_decay_epochs", c.beta_decay_epochs);
    c.verbose = j.value("verbose", c.verbose);
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("hvae train config: ") + e.what());
  }
  c.validate();
  return c;
}

io::Json TrainReport::to_json() const {
  io::Json epochs_json = io::Json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_elbo", e.train_elbo},
                           {"train_reconstruction", e.train_reconstruction},
                           {"train_kl", e.train_kl},
                           {"val_elbo", e.val_elbo},
                           {"val_l1", e.val_l1},
                           {"best_val_elbo", e.best_val_elbo},
                           {"seconds", e.seconds}});
  }
  return {{"best_epoch", best_epoch}, {"epochs", epochs_json}};
}

namespace {

torch::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

struct Validation {
  double elbo = 0;
  double l1 = 0;
};

Validation validate_model(HvaeModel& model, const torch::Tensor& images, const torch::Tensor& parents,
                          std::uint64_t seed, int batch_size) {
  torch::NoGradGuard guard;
  model->eval();
  auto gen = make_generator(seed);
  double elbo_sum = 0, l1_sum = 0;
  const std::int64_t n = images.size(0);
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto end = std::min<std::int64_t>(start + batch_size, n);
    const auto x = images.slice(0, start, end);
    const auto pa = parents.slice(0, start, end);
    elbo_sum += model->elbo(x, pa, nullptr, gen).elbo.item<double>() * static_cast<double>(end - start);
    const auto recon = model->decode(model->encode(x, pa), pa);
    l1_sum += (recon - x).abs().mean().item<double>() * static_cast<double>(end - start);
  }
  model->train();
  return {elbo_sum / static_cast<double>(n), l1_sum / static_cast<double>(n)};
}

double kl_weight(double beta, const TrainConfig& tc, int epoch) {
  if (tc.initial_beta) {
    const double f = std::min(1.0, static_cast<double>(epoch - 1) / tc.beta_decay_epochs);
    return std::exp((1.0 - f) * std::log(*tc.initial_beta) + f * std::log(beta));
  }
  if (tc.kl_warmup_epochs > 0) return beta * std::min(1.0, static_cast<double>(epoch) / tc.kl_warmup_epochs);
  return beta;
}

}  // namespace

TrainResult train(const synth::Manifest& manifest, const HvaeConfig& config, const TrainConfig& tc,
                  const std::optional<std::filesystem::path>& checkpoint_on_failure) {
  config.validate();
  tc.validate();
  torch::manual_seed(tc.seed);
  const auto train_data = load_split(manifest, synth::Split::Train, MaskSource::None);
  const auto val_data = load_split(manifest, synth::Split::Val, MaskSource::None);
  if (train_data.size() == 0) throw DataError("hvae: manifest has no train samples");
  if (val_data.size() == 0) throw DataError("hvae: manifest has no val samples");
  const auto train_parents = parents_of(train_data, config.parents);
  const auto val_parents = parents_of(val_data, config.parents);

  HvaeModel model(config);
  model->check_images(train_data.images);
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(tc.learning_rate));
  auto gen = make_generator(tc.seed);

  TrainResult result;
  checkpoint::Snapshot best, last_finite;
  last_finite.capture(*model);
  double best_val = -std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double beta = kl_weight(config.beta, tc, epoch);
    const double progress = tc.epochs > 1 ? static_cast<double>(epoch - 1) / (tc.epochs - 1) : 0.0;
    const double lr = tc.learning_rate * (tc.final_lr_fraction + (1.0 - tc.final_lr_fraction) * 0.5 *
                                                                     (1.0 + std::cos(std::numbers::pi * progress)));
    for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    const auto order = epoch_order(train_data, tc.diseased_fraction, gen);
    const auto order_t = torch::tensor(order, torch::kLong);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_kl.assign(static_cast<std::size_t>(config.levels), 0.0);
    std::int64_t seen = 0;
    for (std::int64_t start = 0; start < order_t.numel(); start += tc.batch_size) {
      const auto idx = order_t.slice(0, start, std::min<std::int64_t>(start + tc.batch_size, order_t.numel()));
      const auto x = train_data.images.index_select(0, idx);
      const auto pa = train_parents.index_select(0, idx);
      auto terms = model->elbo(x, pa, nullptr, gen);
      auto kl_total = torch::zeros({}, terms.elbo.options());
      for (const auto& k : terms.kl) kl_total = kl_total + k;
      const auto loss = terms.reconstruction + beta * kl_total;
      if (!std::isfinite(loss.item<double>())) {
        last_finite.restore(*model);
        if (checkpoint_on_failure) save(*checkpoint_on_failure, model);
        throw TrainingDiverged("hvae: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                   std::to_string(start) + "; last finite weights restored" +
                                   (checkpoint_on_failure ? " and written to " + checkpoint_on_failure->string() : ""),
                               result.report);
      }
      optimizer.zero_grad();
      loss.backward();
      torch::nn::utils::clip_grad_norm_(model->parameters(), 200.0);
      optimizer.step();
      const auto b = idx.numel();
      seen += b;
      stats.train_elbo += terms.elbo.item<double>() * static_cast<double>(b);
      stats.train_reconstruction += terms.reconstruction.item<double>() * static_cast<double>(b);
      for (std::size_t l = 0; l < terms.kl.size(); ++l)
        stats.train_kl[l] += terms.kl[l].item<double>() * static_cast<double>(b);
    }
    stats.train_elbo /= static_cast<double>(seen);
    stats.train_reconstruction /= static_cast<double>(seen);
    for (auto& k : stats.train_kl) k /= static_cast<double>(seen);

    const auto val = validate_model(model, val_data.images, val_parents, tc.seed + 1, 2 * tc.batch_size);
    stats.val_elbo = val.elbo;
    stats.val_l1 = val.l1;
    if (std::isfinite(val.elbo) && val.elbo > best_val) {
      best_val = val.elbo;
      best.capture(*model);
      result.report.best_epoch = epoch;
    }
    stats.best_val_elbo = best_val;
    last_finite.capture(*model);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(stats);
    if (tc.verbose) {
      std::cerr << "[hvae] epoch " << epoch << "/" << tc.epochs << " elbo " << stats.train_elbo << " recon "
                << stats.train_reconstruction << " kl";
      for (double k : stats.train_kl) std::cerr << ' ' << k;
      std::cerr << " | val elbo " << stats.val_elbo << " l1 " << stats.val_l1 << " (" << stats.seconds << "s)\n";
    }
  }
  if (!best.empty()) best.restore(*model);
  model->eval();
  result.model = model;
  return result;
}

void save(const std::filesystem::path& path, const HvaeModel& model) {
  checkpoint::save(path, {"hvae", kCheckpointVersion, to_json(model->config())}, *model);
}

HvaeModel load(const std::filesystem::path& path) {
  const auto header = checkpoint::read_header(path, "hvae", kCheckpointVersion);
  HvaeModel model(hvae_config_from_json(header.config));
  checkpoint::load_parameters(path, *model);
  model->eval();
  return model;
}

LatentStack encode(HvaeModel& model, const Image& image, const synth::AttributeVector& parents) {
  torch::NoGradGuard guard;
  return model->encode(to_tensor(image), parent_vector(parents, model->config().parents).unsqueeze(0));
}

Image decode(HvaeModel& model, const LatentStack& latents, const synth::AttributeVector& parents) {
  torch::NoGradGuard guard;
  return image_from_tensor(model->decode(latents, parent_vector(parents, model->config().parents).unsqueeze(0)));
}

}  // namespace cfseg::hvae
