#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cfseg/grid.hpp"
#include "cfseg/io.hpp"
#include "cfseg/results.hpp"
#include "cfseg/synth.hpp"

namespace cfseg::eval {

enum class Structure { RightLung = 1, LeftLung = 2, Both = 3 };

std::string to_string(Structure s);
// Accepts 1, 2 or 3 (both); anything else is an ArgumentError.
Structure structure_from_label(int label);
inline constexpr std::array<Structure, 3> kStructures{Structure::RightLung, Structure::LeftLung,
                                                      Structure::Both};

// 2|A ∩ B| / (|A| + |B|) over the labelled pixels of the structure. For Both, a pixel
// counts towards the intersection only when the two labels agree. Two empty sets give 1.0.
double dice(const Mask& a, const Mask& b, Structure s);

std::size_t count(const Mask& mask, Structure s);

double volume(const Mask& mask, Structure s, double pixel_area);
double volume(const Mask& mask, int label, double pixel_area);

enum class Method { Gt, Silver, Direct, CfSeg };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct VolumeRecord {
  std::string id;
  Method method = Method::Gt;
  double right = 0.0;
  double left = 0.0;
  double both = 0.0;

  double get(Structure s) const;
};

VolumeRecord volumes_of(const std::string& id, const Mask& mask, Method method, double pixel_area);

// Ids whose expert volume exceeds the silver volume for the structure.
std::set<std::string> delta_v_plus(std::span<const VolumeRecord> expert,
                                   std::span<const VolumeRecord> silver, Structure s);

struct HistogramRange {
  double lo = 0.0;
  double hi = 1.0;
};

// Normalised histogram counts on [lo, hi], last bin closed.
std::vector<double> histogram(std::span<const double> values, int bins, HistogramRange range);

// Histogram-intersection overlap of two samples on a shared range (pooled min/max by default).
double density_overlap(std::span<const double> a, std::span<const double> b, int bins,
                       std::optional<HistogramRange> range = std::nullopt);

// Freedman-Diaconis bin count for the pooled sample, clamped to [1, max_bins].
int freedman_diaconis_bins(std::span<const double> pooled, int max_bins = 64);

// Type-7 quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double q);

// Gaussian KDE evaluated on a grid; bandwidth by Silverman's rule. For figures only.
std::vector<double> kde(std::span<const double> values, std::span<const double> grid);

struct ReportOptions {
  synth::Split split = synth::Split::Test;
  double pixel_area = 1.0;
  int qualitative_panels = 4;
  bool write_figures = true;
  std::string config_hash;
};

struct ArmStats {
  // structure -> mean Dice over the whole group and over the ΔV+ subset
  std::map<Structure, double> all;
  std::map<Structure, double> dvplus;
};

struct EvalReport {
  io::Json json;  // full structured report

  // Diseased-group Dice table and related numbers, also present in `json`.
  std::map<Method, ArmStats> diseased;
  std::map<Method, std::map<Structure, double>> healthy;
  std::map<Structure, std::set<std::string>> dvplus_ids;
  std::map<Method, double> nf_vs_diseased_overlap_right;
  double silver_dice_diseased = 0.0;
  std::string seg_checksum;
  std::size_t n_diseased = 0;
  std::size_t n_healthy = 0;

  std::size_t table_cells() const;
  std::string dice_csv() const;
};

// Loads the dataset manifest (gt, silver, attributes) and result manifests, checks that the
// arms share sample ids and segmenter checksum, and computes every report quantity.
EvalReport build_report(const synth::Manifest& dataset,
                        std::span<const pipeline::ResultsManifest> results,
                        const ReportOptions& options);

// Writes report.json, dice_table.csv and figures under out_dir.
void write_report(const EvalReport& report, const synth::Manifest& dataset,
                  std::span<const pipeline::ResultsManifest> results, const ReportOptions& options,
                  const std::filesystem::path& out_dir);

}  // namespace cfseg::eval
