#pragma once

#include <filesystem>
#include <span>

#include "cfseg/evaluation.hpp"

namespace cfseg::eval::figures {

// Volume density plots (SVG) and qualitative overlay panels (PNG).
void write_all(const EvalReport& report, const synth::Manifest& dataset,
               std::span<const pipeline::ResultsManifest> results, const ReportOptions& options,
               const std::filesystem::path& dir);

}  // namespace cfseg::eval::figures
