#include "cfseg/checkpoint.hpp"

#include <vector>

namespace cfseg::checkpoint {

namespace {
constexpr const char* kFormat = "cfseg-checkpoint";
}

void save(const std::filesystem::path& path, const Header& header, const torch::nn::Module& module) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  archive.write("format", c10::IValue(std::string(kFormat)));
  archive.write("kind", c10::IValue(header.kind));
  archive.write("version", c10::IValue(static_cast<int64_t>(header.version)));
  archive.write("config", c10::IValue(header.config.dump()));
  torch::serialize::OutputArchive params;
  module.save(params);
  archive.write("model", params);
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError(path.string(), e.what_without_backtrace());
  }
}

Header read_header(const std::filesystem::path& path, const std::string& kind, int expected_version) {
  if (!std::filesystem::exists(path)) throw IoError(path.string(), "checkpoint not found");
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError(path.string() + ": unreadable checkpoint: " + e.what_without_backtrace());
  }
  c10::IValue format, k, version, config;
  if (!archive.try_read("format", format) || !format.isString() || format.toStringRef() != kFormat)
    throw CheckpointError(path.string() + ": not a cfseg checkpoint");
  archive.read("kind", k);
  archive.read("version", version);
  archive.read("config", config);
  Header h;
  h.kind = k.toStringRef();
  h.version = static_cast<int>(version.toInt());
  if (h.kind != kind)
    throw CheckpointError(path.string() + ": checkpoint holds a '" + h.kind + "' model, expected '" + kind + "'");
  if (h.version != expected_version)
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(h.version) +
                          " does not match supported version " + std::to_string(expected_version));
  h.config = io::Json::parse(config.toStringRef());
  return h;
}

void load_parameters(const std::filesystem::path& path, torch::nn::Module& module) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::serialize::InputArchive params;
  archive.read("model", params);
  try {
    module.load(params);
  } catch (const c10::Error& e) {
    throw CheckpointError(path.string() + ": parameters do not match the model: " + e.what_without_backtrace());
  }
}

std::string parameter_checksum(const torch::nn::Module& module) {
  std::vector<std::uint8_t> bytes;
  auto append = [&](const std::string& name, const torch::Tensor& t) {
    bytes.insert(bytes.end(), name.begin(), name.end());
    const auto c = t.detach().to(torch::kCPU, torch::kDouble).contiguous();
    const auto* p = reinterpret_cast<const std::uint8_t*>(c.data_ptr<double>());
    bytes.insert(bytes.end(), p, p + c.numel() * sizeof(double));
  };
  for (const auto& item : module.named_parameters()) append(item.key(), item.value());
  for (const auto& item : module.named_buffers()) append(item.key(), item.value());
  return io::sha256_hex(bytes);
}

void Snapshot::capture(const torch::nn::Module& module) {
  torch::NoGradGuard guard;
  params_.clear();
  buffers_.clear();
  for (const auto& p : module.parameters()) params_.push_back(p.detach().clone());
  for (const auto& b : module.buffers()) buffers_.push_back(b.detach().clone());
}

void Snapshot::restore(torch::nn::Module& module) const {
  torch::NoGradGuard guard;
  auto params = module.parameters();
  auto buffers = module.buffers();
  if (params.size() != params_.size() || buffers.size() != buffers_.size())
    throw CheckpointError("snapshot does not match module layout");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(params_[i]);
  for (std::size_t i = 0; i < buffers.size(); ++i) buffers[i].copy_(buffers_[i]);
}

}  // namespace cfseg::checkpoint
