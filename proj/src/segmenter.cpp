#include "cfseg/segmenter.hpp"

#include <chrono>
#include <iostream>

#include <ATen/CPUGeneratorImpl.h>

#include "cfseg/checkpoint.hpp"
#include "cfseg/evaluation.hpp"
#include "cfseg/tensor_data.hpp"

namespace cfseg::seg {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

struct DoubleConvImpl : nn::Module {
  DoubleConvImpl(int in, int out) {
    body = register_module(
        "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(false)), nn::BatchNorm2d(out),
                               nn::ReLU(), nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)),
                               nn::BatchNorm2d(out), nn::ReLU()));
  }
  torch::Tensor forward(const torch::Tensor& x) { return body->forward(x); }
  nn::Sequential body{nullptr};
};
TORCH_MODULE(DoubleConv);

}  // namespace

void SegModelConfig::validate() const {
  if (depth < 2) throw ConfigError("segmenter: depth must be >= 2");
  if (base_channels < 1) throw ConfigError("segmenter: base_channels must be >= 1");
  if (size % (1 << (depth - 1)) != 0) throw ConfigError("segmenter: size must be divisible by 2^(depth-1)");
}

io::Json to_json(const SegModelConfig& c) {
  return {{"size", c.size}, {"depth", c.depth}, {"base_channels", c.base_channels}, {"classes", kClasses}};
}

SegModelConfig seg_model_config_from_json(const io::Json& j) {
  SegModelConfig c;
  try {
    c.size = j.value("size", c.size);
    c.depth = j.value("depth", c.depth);
    c.base_channels = j.value("base_channels", c.base_channels);
    if (j.value("classes", kClasses) != kClasses) throw ConfigError("segmenter: class count is fixed at 3");
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("segmenter config: ") + e.what());
  }
  c.validate();
  return c;
}

SegModelImpl::SegModelImpl(SegModelConfig config) : config_(config) {
  config_.validate();
  down_ = register_module("down", nn::ModuleList());
  up_ = register_module("up", nn::ModuleList());
  merge_ = register_module("merge", nn::ModuleList());
  int in = 1;
  for (int d = 0; d < config_.depth; ++d) {
    const int out = config_.base_channels << d;
    down_->push_back(DoubleConv(in, out));
    in = out;
  }
  for (int d = config_.depth - 2; d >= 0; --d) {
    const int out = config_.base_channels << d;
    up_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(out * 2, out, 2).stride(2)));
    merge_->push_back(DoubleConv(out * 2, out));
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(config_.base_channels, kClasses, 1)));
}

torch::Tensor SegModelImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 1 || images.size(2) != config_.size || images.size(3) != config_.size)
    throw ArgumentError("segmenter: expected images of shape [N, 1, " + std::to_string(config_.size) + ", " +
                        std::to_string(config_.size) + "]");
  std::vector<torch::Tensor> skips;
  auto h = images;
  for (std::size_t d = 0; d < down_->size(); ++d) {
    if (d > 0) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
    h = down_[d]->as<DoubleConv>()->forward(h);
    skips.push_back(h);
  }
  for (std::size_t u = 0; u < up_->size(); ++u) {
    h = up_[u]->as<nn::ConvTranspose2d>()->forward(h);
    h = merge_[u]->as<DoubleConv>()->forward(torch::cat({h, skips[skips.size() - 2 - u]}, 1));
  }
  return head_(h);
}

void SegTrainConfig::validate() const {
  if (ce_weight < 0 || dice_weight < 0) throw ConfigError("segmenter: loss weights must be nonnegative");
  if (ce_weight + dice_weight <= 0) throw ConfigError("segmenter: at least one loss weight must be positive");
  if (epochs < 1) throw ConfigError("segmenter: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("segmenter: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("segmenter: learning_rate must be > 0");
  if (label_field != "silver_mask_path")
    throw ConfigError("segmenter: training labels must come from silver_mask_path, got '" + label_field + "'");
}

io::Json to_json(const SegTrainConfig& c) {
  return {{"ce_weight", c.ce_weight},
          {"dice_weight", c.dice_weight},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"augment_intensity", c.augment_intensity},
          {"label_field", c.label_field}};
}

SegTrainConfig seg_train_config_from_json(const io::Json& j) {
  SegTrainConfig c;
  try {
    c.ce_weight = j.value("ce_weight", c.ce_weight);
    c.dice_weight = j.value("dice_weight", c.dice_weight);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.augment_intensity = j.value("augment_intensity", c.augment_intensity);
    c.label_field = j.value("label_field", c.label_field);
    c.verbose = j.value("verbose", c.verbose);
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("segmenter train config: ") + e.what());
  }
  c.validate();
  return c;
}

io::Json SegReport::to_json() const {
  io::Json e = io::Json::array();
  for (const auto& s : epochs)
    e.push_back({{"epoch", s.epoch},
                 {"train_loss", s.train_loss},
                 {"val_dice_silver", s.val_dice_silver},
                 {"val_dice_silver_healthy", s.val_dice_silver_healthy},
                 {"seconds", s.seconds}});
  return {{"best_epoch", best_epoch}, {"checksum", checksum}, {"epochs", e}};
}

torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  const auto probs = torch::softmax(logits, 1);
  const auto onehot = F::one_hot(labels, kClasses).permute({0, 3, 1, 2}).to(probs.dtype());
  const auto inter = (probs * onehot).sum({0, 2, 3});
  const auto denom = probs.sum({0, 2, 3}) + onehot.sum({0, 2, 3});
  const auto dice = (2 * inter + 1.0) / (denom + 1.0);
  return 1.0 - dice.mean();
}

namespace {

struct ValScore {
  double all = 0;
  double healthy = 0;
};

ValScore validation_dice(SegModel& model, const TensorSplit& val) {
  if (val.size() == 0) return {};
  const auto pred = segment_batch(model, val.images);
  double sum = 0, sum_h = 0;
  int n_h = 0;
  for (std::int64_t i = 0; i < val.size(); ++i) {
    const double d = eval::dice(mask_from_tensor(pred[i]), mask_from_tensor(val.masks[i]), eval::Structure::Both);
    sum += d;
    if (!val.attributes[static_cast<std::size_t>(i)].disease) {
      sum_h += d;
      ++n_h;
    }
  }
  return {sum / static_cast<double>(val.size()), n_h ? sum_h / n_h : 0.0};
}

}  // namespace

SegTrainResult train_seg(const synth::Manifest& manifest, const SegModelConfig& model_config,
                         const SegTrainConfig& config) {
  config.validate();
  model_config.validate();
  for (const auto& r : manifest.records) {
    if (r.silver_mask_path.empty())
      throw ConfigError("segmenter: record " + r.id + " has no silver_mask_path");
    if (!r.gt_mask_path.empty() && manifest.path_of(r.silver_mask_path) == manifest.path_of(r.gt_mask_path))
      throw ConfigError("segmenter: record " + r.id + " routes the ground-truth mask into the training channel");
  }
  torch::manual_seed(config.seed);
  const auto train = load_split(manifest, synth::Split::Train, MaskSource::Silver);
  const auto val = load_split(manifest, synth::Split::Val, MaskSource::Silver);
  if (train.size() == 0) throw DataError("segmenter: manifest has no train samples");

  SegModel model(model_config);
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
  checkpoint::Snapshot best;
  double best_score = -1;
  SegTrainResult result;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    model->train();
    const auto order = torch::randperm(train.size(), gen);
    double loss_sum = 0;
    for (std::int64_t start = 0; start < order.numel(); start += config.batch_size) {
      const auto idx = order.slice(0, start, std::min<std::int64_t>(start + config.batch_size, order.numel()));
      auto x = train.images.index_select(0, idx);
      const auto y = train.masks.index_select(0, idx);
      if (config.augment_intensity) {
        const auto gain = 0.9 + 0.2 * torch::rand({x.size(0), 1, 1, 1}, gen);
        const auto shift = -0.05 + 0.1 * torch::rand({x.size(0), 1, 1, 1}, gen);
        x = (x * gain + shift).clamp(0.0, 1.0);
      }
      const auto logits = model->forward(x);
      auto loss = config.ce_weight * F::cross_entropy(logits, y) + config.dice_weight * soft_dice_loss(logits, y);
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += loss.item<double>() * static_cast<double>(idx.numel());
    }
    SegEpoch stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train.size());
    const auto score = validation_dice(model, val.size() ? val : train);
    stats.val_dice_silver = score.all;
    stats.val_dice_silver_healthy = score.healthy;
    if (score.all > best_score) {
      best_score = score.all;
      best.capture(*model);
      result.report.best_epoch = epoch;
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(stats);
    if (config.verbose)
      std::cerr << "[seg] epoch " << epoch << "/" << config.epochs << " loss " << stats.train_loss << " | val dice "
                << stats.val_dice_silver << " healthy " << stats.val_dice_silver_healthy << " (" << stats.seconds
                << "s)\n";
  }
  best.restore(*model);
  model->eval();
  result.report.checksum = checksum(model);
  result.model = model;
  return result;
}

torch::Tensor segment_batch(SegModel& model, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  const bool was_training = model->is_training();
  model->eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t start = 0; start < images.size(0); start += 64) {
    const auto x = images.slice(0, start, std::min<std::int64_t>(start + 64, images.size(0)));
    out.push_back(model->forward(x).argmax(1));
  }
  if (was_training) model->train();
  if (out.empty()) return torch::empty({0, images.size(2), images.size(3)}, torch::kLong);
  return torch::cat(out, 0);
}

Mask segment(SegModel& model, const Image& image) {
  return mask_from_tensor(segment_batch(model, to_tensor(image))[0]);
}

void save(const std::filesystem::path& path, const SegModel& model) {
  checkpoint::save(path, {"segmenter", kCheckpointVersion, to_json(model->config())}, *model);
}

SegModel load(const std::filesystem::path& path) {
  const auto header = checkpoint::read_header(path, "segmenter", kCheckpointVersion);
  SegModel model(seg_model_config_from_json(header.config));
  checkpoint::load_parameters(path, *model);
  model->eval();
  return model;
}

std::string checksum(const SegModel& model) { return checkpoint::parameter_checksum(*model); }

}  // namespace cfseg::seg
