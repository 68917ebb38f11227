#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cfseg/checkpoint.hpp"
#include "cfseg/grid.hpp"
#include "cfseg/synth.hpp"
#include "cfseg/tensor_data.hpp"

// Conditional hierarchical VAE acting as the image mechanism: the latent stack is the
// image's exogenous noise, the parents enter the posterior heads and every decoder stage.
// Latent and decoder states are kept in separate streams.
namespace cfseg::hvae {

inline constexpr int kCheckpointVersion = 4;

struct HvaeConfig {
  int size = 64;
  int levels = 3;
  std::vector<int> latent_channels{8, 4, 2};  // coarse -> fine
  int width = 32;                             // channels at latent resolutions
  int embed_dim = 16;
  double beta = 4.0;  // final KL weight; higher trades reconstruction sharpness for abduction
  double likelihood_scale = 0.02;  // fixed std of the Gaussian image likelihood
  // Feed the parent embedding to the prior and posterior heads of every level.
  bool prior_parents = true;
  bool posterior_parents = true;
  std::vector<std::string> parents = kImageParents;

  void validate() const;
  // Spatial side of latent level i (0 = coarsest).
  int latent_resolution(int level) const;
};

io::Json to_json(const HvaeConfig& c);
HvaeConfig hvae_config_from_json(const io::Json& j);

// Posterior latents z_1..z_L, coarse to fine; each [N, C_i, R_i, R_i].
struct LatentStack {
  std::vector<torch::Tensor> levels;

  std::size_t depth() const noexcept { return levels.size(); }
  bool all_finite() const;
};

struct ElboTerms {
  torch::Tensor elbo;                    // mean over batch, nats per image
  torch::Tensor reconstruction;          // mean negative log-likelihood
  std::vector<torch::Tensor> kl;         // per level, mean over batch
  torch::Tensor mean;                    // decoded likelihood mean
};

class HvaeModelImpl : public torch::nn::Module {
 public:
  explicit HvaeModelImpl(HvaeConfig config);

  const HvaeConfig& config() const noexcept { return config_; }

  // Reparameterised ELBO. `noise` (one tensor per level) fixes the sampling noise, e.g.
  // for gradient checks; otherwise it is drawn from `gen` or the global generator.
  ElboTerms elbo(const torch::Tensor& images, const torch::Tensor& parents,
                 const std::vector<torch::Tensor>* noise = nullptr,
                 std::optional<torch::Generator> gen = std::nullopt);

  // Posterior means at every level (deterministic abduction); with a generator, samples instead.
  LatentStack encode(const torch::Tensor& images, const torch::Tensor& parents,
                     std::optional<torch::Generator> sample_gen = std::nullopt);

  // Likelihood mean clipped to [0, 1].
  torch::Tensor decode(const LatentStack& latents, const torch::Tensor& parents);

  void check_images(const torch::Tensor& images) const;
  void check_latents(const LatentStack& latents, std::int64_t batch) const;

 private:
  struct TopDown {
    torch::Tensor mean;
    LatentStack latents;
    std::vector<torch::Tensor> kl;
  };
  enum class Mode { Sample, PosteriorMean, Given };

  std::vector<torch::Tensor> bottom_up(const torch::Tensor& images);
  torch::Tensor embed(const torch::Tensor& parents);
  TopDown top_down(const std::vector<torch::Tensor>* features, const torch::Tensor& emb, Mode mode,
                   const LatentStack* given, const std::vector<torch::Tensor>* noise,
                   std::optional<torch::Generator> gen, std::int64_t batch);
  int channels_at(int resolution) const;

  HvaeConfig config_;
  torch::nn::Sequential embedding_{nullptr};
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList down_{nullptr};        // one per halving, full -> coarsest
  torch::Tensor top_state_;
  torch::nn::ModuleList prior_{nullptr};       // per level
  torch::nn::ModuleList posterior_{nullptr};   // per level
  torch::nn::ModuleList z_proj_{nullptr};      // per level
  torch::nn::ModuleList level_parent_{nullptr};
  torch::nn::ModuleList level_block_{nullptr};
  torch::nn::ModuleList level_up_{nullptr};    // between latent levels
  torch::Tensor dec_state_;                    // decoder stream, parent-aware
  torch::nn::ModuleList dec_proj_{nullptr};
  torch::nn::ModuleList dec_block_{nullptr};
  torch::nn::ModuleList dec_up_{nullptr};
  torch::nn::ModuleList dec_coord_{nullptr};   // coordinate embedding per decoder stage
  torch::nn::ModuleList out_up_{nullptr};      // from finest latent to full resolution
  torch::nn::ModuleList out_parent_{nullptr};
  torch::nn::ModuleList out_block_{nullptr};
  torch::nn::ModuleList out_coord_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  std::vector<int> down_resolutions_;          // resolution after each down block
};
TORCH_MODULE(HvaeModel);

struct TrainConfig {
  int epochs = 45;
  int batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 7;
  double diseased_fraction = 0.5;  // share of each epoch drawn from diseased samples (0 = natural)
  int kl_warmup_epochs = 0;        // linear beta warm-up from 0
  // Optional KL weight at epoch 1, decayed log-linearly to the model's beta over
  // beta_decay_epochs. Excludes warm-up.
  std::optional<double> initial_beta = 30.0;
  int beta_decay_epochs = 35;
  double final_lr_fraction = 0.05; // cosine decay target, relative to learning_rate
  bool verbose = true;

  void validate() const;
};

io::Json to_json(const TrainConfig& c);
TrainConfig hvae_train_config_from_json(const io::Json& j);

struct EpochStats {
  int epoch = 0;
  double train_elbo = 0;
  double train_reconstruction = 0;
  std::vector<double> train_kl;
  double val_elbo = 0;
  double val_l1 = 0;  // mean |x - decode(encode(x))| on the validation split
  double best_val_elbo = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  io::Json to_json() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, TrainReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const TrainReport& report() const noexcept { return report_; }

 private:
  TrainReport report_;
};

struct TrainResult {
  HvaeModel model{nullptr};
  TrainReport report;
};

// Trains on the manifest's train split, validates on val, keeps the best-validation weights.
// On a non-finite loss, writes the last finite weights to `checkpoint_on_failure` (if set)
// and throws TrainingDiverged.
TrainResult train(const synth::Manifest& manifest, const HvaeConfig& config, const TrainConfig& train,
                  const std::optional<std::filesystem::path>& checkpoint_on_failure = std::nullopt);

void save(const std::filesystem::path& path, const HvaeModel& model);
HvaeModel load(const std::filesystem::path& path);

// Single-image convenience wrappers.
LatentStack encode(HvaeModel& model, const Image& image, const synth::AttributeVector& parents);
Image decode(HvaeModel& model, const LatentStack& latents, const synth::AttributeVector& parents);

}  // namespace cfseg::hvae
