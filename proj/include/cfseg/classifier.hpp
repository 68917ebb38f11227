#pragma once

#include <filesystem>

#include <torch/torch.h>

#include "cfseg/grid.hpp"
#include "cfseg/io.hpp"
#include "cfseg/synth.hpp"

// Disease classifier used only to audit counterfactuals (is do(disease := 0) effective?).
// Trained independently of the image mechanism, on observed images and labels.
namespace cfseg::classifier {

inline constexpr int kCheckpointVersion = 1;

struct ClassifierConfig {
  int size = 64;
  int width = 16;
  int epochs = 6;
  int batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 23;
  bool verbose = true;
};

io::Json to_json(const ClassifierConfig& c);
ClassifierConfig classifier_config_from_json(const io::Json& j);

class DiseaseClassifierImpl : public torch::nn::Module {
 public:
  DiseaseClassifierImpl(int size, int width);
  torch::Tensor forward(const torch::Tensor& images);  // logits [N]
  int size() const noexcept { return size_; }
  int width() const noexcept { return width_; }

 private:
  int size_, width_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(DiseaseClassifier);

struct ClassifierResult {
  DiseaseClassifier model{nullptr};
  double val_accuracy = 0;
  double val_balanced_accuracy = 0;
};

ClassifierResult train_classifier(const synth::Manifest& manifest, const ClassifierConfig& config);

// P(disease = 1) per image.
torch::Tensor predict_proba(DiseaseClassifier& model, const torch::Tensor& images);
double predict_proba(DiseaseClassifier& model, const Image& image);

void save(const std::filesystem::path& path, const DiseaseClassifier& model);
DiseaseClassifier load(const std::filesystem::path& path);

}  // namespace cfseg::classifier
