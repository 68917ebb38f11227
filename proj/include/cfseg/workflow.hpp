#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "cfseg/io.hpp"

// End-to-end commands shared by the CLI and the acceptance suite. Each writes a
// run_record.json next to its outputs and returns it.
namespace cfseg::workflow {

namespace fs = std::filesystem;

// The project config: one JSON object with optional sections data, hvae, seg,
// classifier and study. Missing sections take defaults.
io::Json load_config(const std::optional<fs::path>& path);
std::string config_hash(const io::Json& config);

io::Json gen_data(const io::Json& config, const fs::path& out, std::optional<std::uint64_t> seed = {});
io::Json train_hvae(const io::Json& config, const fs::path& data, const fs::path& out,
                    std::optional<std::uint64_t> seed = {});
io::Json train_seg(const io::Json& config, const fs::path& data, const fs::path& out,
                   std::optional<std::uint64_t> seed = {});
io::Json train_classifier(const io::Json& config, const fs::path& data, const fs::path& out,
                          std::optional<std::uint64_t> seed = {});

struct InferPaths {
  fs::path seg_checkpoint;
  std::optional<fs::path> hvae_checkpoint;
};
// arm: direct | cfseg | both. The run record's "status" is "partial" when any sample failed.
io::Json infer(const io::Json& config, const fs::path& data, const InferPaths& models, const std::string& arm,
               const fs::path& out, const std::string& split = "test");

io::Json evaluate(const io::Json& config, const fs::path& data, const std::vector<fs::path>& results,
                  const fs::path& out);

struct AuditPaths {
  fs::path results;  // an infer output containing the cfseg arm
  fs::path hvae_checkpoint;
  fs::path seg_checkpoint;
  fs::path classifier_checkpoint;
};
// Compares each diseased test counterfactual with the true healthy re-render of the same
// anatomy, scores it with an independently trained disease classifier, and checks that
// reconstructions of healthy test images segment like the originals.
io::Json audit_counterfactuals(const fs::path& data, const AuditPaths& paths, const fs::path& out,
                               const std::string& split = "test");

io::Json make_study(const io::Json& config, const fs::path& results, const fs::path& out,
                    std::optional<std::uint64_t> seed = {});

void serve_study(const fs::path& sessions, const std::optional<fs::path>& results, const std::string& host,
                 int port);

}  // namespace cfseg::workflow
