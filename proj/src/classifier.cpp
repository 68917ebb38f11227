#include "cfseg/classifier.hpp"

#include <iostream>

#include <ATen/CPUGeneratorImpl.h>

#include "cfseg/checkpoint.hpp"
#include "cfseg/tensor_data.hpp"

namespace cfseg::classifier {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

io::Json to_json(const ClassifierConfig& c) {
  return {{"size", c.size},       {"width", c.width}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"seed", c.seed}};
}

ClassifierConfig classifier_config_from_json(const io::Json& j) {
  ClassifierConfig c;
  try {
    c.size = j.value("size", c.size);
    c.width = j.value("width", c.width);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.verbose = j.value("verbose", c.verbose);
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("classifier config: ") + e.what());
  }
  if (c.epochs < 1 || c.batch_size < 1 || c.width < 1) throw ConfigError("classifier: invalid config");
  return c;
}

DiseaseClassifierImpl::DiseaseClassifierImpl(int size, int width) : size_(size), width_(width) {
  features_ = register_module("features", nn::Sequential());
  const int widths[] = {1, width, 2 * width, 2 * width, 2 * width};
  for (int i = 0; i < 4; ++i) {
    features_->push_back(nn::Conv2d(nn::Conv2dOptions(widths[i], widths[i + 1], 3).stride(2).padding(1)));
    features_->push_back(nn::ReLU());
  }
  const int r = size / 16;
  head_ = register_module("head", nn::Linear(2 * width * r * r, 1));
}

torch::Tensor DiseaseClassifierImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(2) != size_ || images.size(3) != size_)
    throw ArgumentError("classifier: unexpected image shape");
  return head_(features_->forward(images).flatten(1)).squeeze(1);
}

ClassifierResult train_classifier(const synth::Manifest& manifest, const ClassifierConfig& config) {
  torch::manual_seed(config.seed);
  const auto train = load_split(manifest, synth::Split::Train, MaskSource::None);
  const auto val = load_split(manifest, synth::Split::Val, MaskSource::None);
  if (train.size() == 0) throw DataError("classifier: no train samples");
  DiseaseClassifier model(config.size, config.width);
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    model->train();
    // Class-balanced epochs: half of each batch stream is diseased.
    const auto order = torch::tensor(epoch_order(train, 0.5, gen), torch::kLong);
    double loss_sum = 0;
    for (std::int64_t start = 0; start < order.numel(); start += config.batch_size) {
      const auto idx = order.slice(0, start, std::min<std::int64_t>(start + config.batch_size, order.numel()));
      const auto logits = model->forward(train.images.index_select(0, idx));
      const auto loss = F::binary_cross_entropy_with_logits(logits, train.disease.index_select(0, idx));
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += loss.item<double>() * static_cast<double>(idx.numel());
    }
    if (config.verbose) std::cerr << "[clf] epoch " << epoch << " loss " << loss_sum / order.numel() << "\n";
  }
  model->eval();
  ClassifierResult result;
  result.model = model;
  if (val.size() > 0) {
    const auto pred = (predict_proba(model, val.images) > 0.5).to(torch::kFloat32);
    result.val_accuracy = (pred == val.disease).to(torch::kFloat32).mean().item<double>();
    const auto pos = val.disease > 0.5;
    const double tpr = pos.any().item<bool>() ? pred.masked_select(pos).mean().item<double>() : 1.0;
    const double tnr = (~pos).any().item<bool>() ? 1.0 - pred.masked_select(~pos).mean().item<double>() : 1.0;
    result.val_balanced_accuracy = 0.5 * (tpr + tnr);
  }
  return result;
}

torch::Tensor predict_proba(DiseaseClassifier& model, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  model->eval();
  return torch::sigmoid(model->forward(images));
}

double predict_proba(DiseaseClassifier& model, const Image& image) {
  return predict_proba(model, to_tensor(image))[0].item<double>();
}

void save(const std::filesystem::path& path, const DiseaseClassifier& model) {
  checkpoint::save(path, {"classifier", kCheckpointVersion, {{"size", model->size()}, {"width", model->width()}}},
                   *model);
}

DiseaseClassifier load(const std::filesystem::path& path) {
  const auto h = checkpoint::read_header(path, "classifier", kCheckpointVersion);
  DiseaseClassifier model(h.config.at("size").get<int>(), h.config.at("width").get<int>());
  checkpoint::load_parameters(path, *model);
  model->eval();
  return model;
}

}  // namespace cfseg::classifier
