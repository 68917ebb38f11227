#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "cfseg/io.hpp"

namespace cfseg::checkpoint {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Header {
  std::string kind;   // "hvae", "segmenter", "classifier"
  int version = 0;
  io::Json config;    // hyperparameters needed to rebuild the module
};

// One archive per model: header fields plus the module's parameters and buffers.
void save(const std::filesystem::path& path, const Header& header, const torch::nn::Module& module);

// Reads and checks the header; throws CheckpointError on kind or version mismatch.
Header read_header(const std::filesystem::path& path, const std::string& kind, int expected_version);

// Loads parameters into a module built from the header's config.
void load_parameters(const std::filesystem::path& path, torch::nn::Module& module);

// SHA-256 over parameter and buffer names and float64-cast values, in registration order.
std::string parameter_checksum(const torch::nn::Module& module);

// In-memory copy of a module's state, used to keep the best-validation weights.
class Snapshot {
 public:
  void capture(const torch::nn::Module& module);
  void restore(torch::nn::Module& module) const;
  bool empty() const noexcept { return params_.empty(); }

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> buffers_;
};

}  // namespace cfseg::checkpoint
