#include "cfseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "figures.hpp"

namespace cfseg::eval {

std::string to_string(Structure s) {
  switch (s) {
    case Structure::RightLung: return "right";
    case Structure::LeftLung: return "left";
    case Structure::Both: return "both";
  }
  return "both";
}

Structure structure_from_label(int label) {
  if (label == 1) return Structure::RightLung;
  if (label == 2) return Structure::LeftLung;
  if (label == 3) return Structure::Both;
  throw ArgumentError("invalid structure label " + std::to_string(label) + " (expected 1, 2 or 3=both)");
}

namespace {

bool in_structure(std::uint8_t v, Structure s) {
  return s == Structure::Both ? v != kBackground : v == static_cast<std::uint8_t>(s);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

io::Json number_or_null(double v) { return std::isfinite(v) ? io::Json(v) : io::Json(nullptr); }

}  // namespace

double dice(const Mask& a, const Mask& b, Structure s) {
  require_same_shape(a, b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const bool ia = in_structure(va[i], s);
    const bool ib = in_structure(vb[i], s);
    na += ia;
    nb += ib;
    both += ia && ib && va[i] == vb[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::size_t count(const Mask& mask, Structure s) {
  return static_cast<std::size_t>(
      std::count_if(mask.values().begin(), mask.values().end(), [s](auto v) { return in_structure(v, s); }));
}

double volume(const Mask& mask, Structure s, double pixel_area) {
  if (!(pixel_area > 0)) throw ArgumentError("pixel_area must be > 0");
  return static_cast<double>(count(mask, s)) * pixel_area;
}

double volume(const Mask& mask, int label, double pixel_area) {
  return volume(mask, structure_from_label(label), pixel_area);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Gt: return "gt";
    case Method::Silver: return "silver";
    case Method::Direct: return "direct";
    case Method::CfSeg: return "cfseg";
  }
  return "gt";
}

Method method_from_string(const std::string& s) {
  if (s == "gt" || s == "expert") return Method::Gt;
  if (s == "silver") return Method::Silver;
  if (s == "direct") return Method::Direct;
  if (s == "cfseg") return Method::CfSeg;
  throw ArgumentError("unknown method '" + s + "'");
}

double VolumeRecord::get(Structure s) const {
  switch (s) {
    case Structure::RightLung: return right;
    case Structure::LeftLung: return left;
    case Structure::Both: return both;
  }
  return both;
}

VolumeRecord volumes_of(const std::string& id, const Mask& mask, Method method, double pixel_area) {
  return {id, method, volume(mask, Structure::RightLung, pixel_area),
          volume(mask, Structure::LeftLung, pixel_area), volume(mask, Structure::Both, pixel_area)};
}

std::set<std::string> delta_v_plus(std::span<const VolumeRecord> expert,
                                   std::span<const VolumeRecord> silver, Structure s) {
  std::map<std::string, double> silver_by_id;
  for (const auto& r : silver) {
    if (r.get(s) < 0) throw DataError("negative volume for " + r.id);
    if (!silver_by_id.emplace(r.id, r.get(s)).second) throw DataError("duplicate silver id " + r.id);
  }
  if (silver_by_id.size() != expert.size())
    throw DataError("expert and silver volume lists cover different ids");
  std::set<std::string> out;
  for (const auto& r : expert) {
    const auto it = silver_by_id.find(r.id);
    if (it == silver_by_id.end()) throw DataError("id " + r.id + " has no silver volume");
    if (r.get(s) - it->second > 0) out.insert(r.id);
  }
  return out;
}

std::vector<double> histogram(std::span<const double> values, int bins, HistogramRange range) {
  if (bins < 1) throw ArgumentError("bins must be >= 1");
  if (!(range.hi >= range.lo)) throw ArgumentError("histogram range must satisfy lo <= hi");
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  if (values.empty()) return h;
  const double width = (range.hi - range.lo) / bins;
  for (double v : values) {
    int b = 0;
    if (width > 0) b = static_cast<int>(std::floor((v - range.lo) / width));
    // Values outside the range are clamped into the edge bins.
    b = std::clamp(b, 0, bins - 1);
    h[static_cast<std::size_t>(b)] += 1.0;
  }
  for (auto& c : h) c /= static_cast<double>(values.size());
  return h;
}

double density_overlap(std::span<const double> a, std::span<const double> b, int bins,
                       std::optional<HistogramRange> range) {
  if (a.empty() || b.empty()) throw ArgumentError("density_overlap needs two nonempty samples");
  HistogramRange r;
  if (range) {
    r = *range;
  } else {
    const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
    const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
    r = {std::min(*amin, *bmin), std::max(*amax, *bmax)};
  }
  const auto ha = histogram(a, bins, r);
  const auto hb = histogram(b, bins, r);
  double overlap = 0.0;
  for (std::size_t i = 0; i < ha.size(); ++i) overlap += std::min(ha[i], hb[i]);
  return std::clamp(overlap, 0.0, 1.0);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

int freedman_diaconis_bins(std::span<const double> pooled, int max_bins) {
  if (pooled.empty()) throw ArgumentError("freedman_diaconis_bins of empty sample");
  std::vector<double> v(pooled.begin(), pooled.end());
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double range = *mx - *mn;
  if (range <= 0) return 1;
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  const double n = static_cast<double>(v.size());
  int bins = 0;
  if (iqr > 0) {
    bins = static_cast<int>(std::ceil(range / (2.0 * iqr * std::cbrt(1.0 / n))));
  } else {
    bins = static_cast<int>(std::ceil(std::sqrt(n)));
  }
  return std::clamp(bins, 1, max_bins);
}

std::vector<double> kde(std::span<const double> values, std::span<const double> grid) {
  std::vector<double> out(grid.size(), 0.0);
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  const double m = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - m) * (v - m);
  const double sd = values.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  std::vector<double> copy(values.begin(), values.end());
  const double iqr = quantile(copy, 0.75) - quantile(copy, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (spread <= 0) spread = sd > 0 ? sd : 1.0;
  const double h = 0.9 * spread * std::pow(n, -0.2);
  const double norm = 1.0 / (n * h * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double v : values) {
      const double z = (grid[g] - v) / h;
      acc += std::exp(-0.5 * z * z);
    }
    out[g] = acc * norm;
  }
  return out;
}

std::size_t EvalReport::table_cells() const {
  std::size_t n = 0;
  for (const auto& [method, stats] : diseased) n += stats.all.size() + stats.dvplus.size();
  return n;
}

std::string EvalReport::dice_csv() const {
  std::ostringstream out;
  out << "method,structure,all,dvplus\n";
  out.precision(6);
  for (const auto& [method, stats] : diseased) {
    for (const auto s : kStructures) {
      out << to_string(method) << ',' << to_string(s) << ',';
      const double a = stats.all.at(s), d = stats.dvplus.at(s);
      if (std::isfinite(a)) out << std::fixed << 100.0 * a;
      out << ',';
      if (std::isfinite(d)) out << std::fixed << 100.0 * d;
      out << '\n';
    }
  }
  return out.str();
}

namespace {

struct Sample {
  const synth::ManifestRecord* record = nullptr;
  Mask gt;
  Mask silver;
  std::map<Method, Mask> pred;
};

Method method_of(pipeline::Arm arm) { return arm == pipeline::Arm::Direct ? Method::Direct : Method::CfSeg; }

}  // namespace

EvalReport build_report(const synth::Manifest& dataset,
                        std::span<const pipeline::ResultsManifest> results,
                        const ReportOptions& options) {
  std::map<std::string, const synth::ManifestRecord*> eval_records;
  for (const auto* r : dataset.split(options.split)) eval_records.emplace(r->id, r);

  // Collect predictions per arm, restricted to the evaluation split.
  std::map<Method, std::map<std::string, std::filesystem::path>> preds;
  std::set<std::string> checksums;
  for (const auto& manifest : results) {
    for (const auto& r : manifest.records) {
      checksums.insert(r.seg_checksum);
      if (!r.ok() || !eval_records.contains(r.id())) continue;
      preds[method_of(r.arm)][r.id()] = manifest.path_of(r.pred_mask_path);
    }
  }
  if (checksums.size() > 1)
    throw DataError("segmenter checksum mismatch across arms; comparison is invalid");
  if (preds.empty()) throw DataError("no successful predictions on the evaluation split");

  std::set<std::string> ids;
  for (const auto& [id, _] : preds.begin()->second) ids.insert(id);
  for (const auto& [method, by_id] : preds) {
    std::set<std::string> other;
    for (const auto& [id, _] : by_id) other.insert(id);
    if (other != ids) throw DataError("arms cover different sample ids");
  }

  std::vector<Sample> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) {
    Sample s;
    s.record = eval_records.at(id);
    s.gt = io::read_mask_png(dataset.path_of(s.record->gt_mask_path));
    s.silver = io::read_mask_png(dataset.path_of(s.record->silver_mask_path));
    for (const auto& [method, by_id] : preds) {
      s.pred[method] = io::read_mask_png(by_id.at(id));
      require_same_shape(s.pred[method], s.gt, "build_report");
    }
    samples.push_back(std::move(s));
  }

  EvalReport report;
  report.seg_checksum = checksums.empty() ? "" : *checksums.begin();
  std::vector<const Sample*> diseased, healthy;
  for (const auto& s : samples) (s.record->attributes.disease ? diseased : healthy).push_back(&s);
  report.n_diseased = diseased.size();
  report.n_healthy = healthy.size();

  std::vector<VolumeRecord> gt_vol, silver_vol;
  for (const auto* s : diseased) {
    gt_vol.push_back(volumes_of(s->record->id, s->gt, Method::Gt, options.pixel_area));
    silver_vol.push_back(volumes_of(s->record->id, s->silver, Method::Silver, options.pixel_area));
  }
  for (const auto st : kStructures) report.dvplus_ids[st] = delta_v_plus(gt_vol, silver_vol, st);

  std::vector<double> silver_dice;
  for (const auto* s : diseased) silver_dice.push_back(dice(s->silver, s->gt, Structure::Both));
  report.silver_dice_diseased = mean_of(silver_dice);

  std::vector<Method> methods;
  for (const auto& [method, _] : preds) methods.push_back(method);

  io::Json table = io::Json::object();
  for (const auto method : methods) {
    ArmStats stats;
    io::Json jm = io::Json::object();
    for (const auto st : kStructures) {
      std::vector<double> all, sub;
      for (const auto* s : diseased) {
        const double d = dice(s->pred.at(method), s->gt, st);
        all.push_back(d);
        if (report.dvplus_ids[st].contains(s->record->id)) sub.push_back(d);
      }
      stats.all[st] = mean_of(all);
      stats.dvplus[st] = mean_of(sub);
      jm[to_string(st)] = {{"all", number_or_null(stats.all[st])}, {"dvplus", number_or_null(stats.dvplus[st])}};
      std::vector<double> h;
      for (const auto* s : healthy) h.push_back(dice(s->pred.at(method), s->gt, st));
      report.healthy[method][st] = mean_of(h);
    }
    report.diseased[method] = stats;
    table[to_string(method)] = jm;
  }

  // Volumes per method and group, for the density comparisons.
  auto volumes_for = [&](const std::vector<const Sample*>& group, Method m, Structure st) {
    std::vector<double> v;
    for (const auto* s : group) {
      const Mask& mask = m == Method::Gt ? s->gt : m == Method::Silver ? s->silver : s->pred.at(m);
      v.push_back(volume(mask, st, options.pixel_area));
    }
    return v;
  };
  std::vector<Method> all_methods{Method::Gt, Method::Silver};
  all_methods.insert(all_methods.end(), methods.begin(), methods.end());

  io::Json volumes_json = io::Json::object();
  for (const auto m : all_methods)
    for (const auto st : kStructures) {
      volumes_json[to_string(m)]["healthy"][to_string(st)] = volumes_for(healthy, m, st);
      volumes_json[to_string(m)]["diseased"][to_string(st)] = volumes_for(diseased, m, st);
    }
  io::Json group_ids = {{"healthy", io::Json::array()}, {"diseased", io::Json::array()}};
  for (const auto* s : healthy) group_ids["healthy"].push_back(s->record->id);
  for (const auto* s : diseased) group_ids["diseased"].push_back(s->record->id);

  io::Json nf_vs_pe = io::Json::object();
  if (!diseased.empty() && !healthy.empty()) {
    std::vector<double> pooled;
    for (const auto m : all_methods) {
      for (const auto* group : {&healthy, &diseased}) {
        const auto v = volumes_for(*group, m, Structure::RightLung);
        pooled.insert(pooled.end(), v.begin(), v.end());
      }
    }
    const int bins = freedman_diaconis_bins(pooled);
    const auto [lo, hi] = std::minmax_element(pooled.begin(), pooled.end());
    const HistogramRange range{*lo, *hi};
    nf_vs_pe["bins"] = bins;
    nf_vs_pe["range"] = {range.lo, range.hi};
    nf_vs_pe["bin_policy"] = "freedman-diaconis on pooled right-lung volumes (all methods, both groups)";
    for (const auto m : all_methods) {
      const auto nf = volumes_for(healthy, m, Structure::RightLung);
      const auto pe = volumes_for(diseased, m, Structure::RightLung);
      const double ov = density_overlap(nf, pe, bins, range);
      report.nf_vs_diseased_overlap_right[m] = ov;
      nf_vs_pe["overlap"][to_string(m)] = ov;
    }
  }

  io::Json vs_expert = io::Json::object();
  if (!diseased.empty()) {
    for (const auto st : kStructures) {
      std::vector<double> pooled;
      for (const auto m : all_methods) {
        const auto v = volumes_for(diseased, m, st);
        pooled.insert(pooled.end(), v.begin(), v.end());
      }
      const int bins = freedman_diaconis_bins(pooled);
      const auto [lo, hi] = std::minmax_element(pooled.begin(), pooled.end());
      const auto gt = volumes_for(diseased, Method::Gt, st);
      io::Json js{{"bins", bins}, {"range", {*lo, *hi}}};
      for (const auto m : all_methods) {
        const auto v = volumes_for(diseased, m, st);
        js["mean_volume"][to_string(m)] = mean_of(v);
        js["overlap_with_gt"][to_string(m)] = density_overlap(v, gt, bins, HistogramRange{*lo, *hi});
      }
      vs_expert[to_string(st)] = js;
    }
  }

  io::Json gains = io::Json::object();
  if (report.diseased.contains(Method::Direct) && report.diseased.contains(Method::CfSeg)) {
    for (const auto st : kStructures) {
      const auto& d = report.diseased.at(Method::Direct);
      const auto& c = report.diseased.at(Method::CfSeg);
      gains[to_string(st)] = {
          {"all", number_or_null(c.all.at(st) - d.all.at(st))},
          {"dvplus", number_or_null(c.dvplus.at(st) - d.dvplus.at(st))},
          {"healthy", number_or_null(report.healthy.at(Method::CfSeg).at(st) -
                                     report.healthy.at(Method::Direct).at(st))}};
    }
  }

  io::Json healthy_json = io::Json::object();
  for (const auto& [m, per] : report.healthy)
    for (const auto& [st, v] : per) healthy_json[to_string(m)][to_string(st)] = number_or_null(v);

  io::Json dv = io::Json::object();
  for (const auto& [st, set] : report.dvplus_ids) {
    dv[to_string(st)] = {{"count", set.size()}, {"ids", std::vector<std::string>(set.begin(), set.end())}};
  }

  report.json = {
      {"split", synth::to_string(options.split)},
      {"seg_checksum", report.seg_checksum},
      {"config_hash", options.config_hash},
      {"counts", {{"diseased", report.n_diseased}, {"healthy", report.n_healthy}}},
      {"dice_diseased", table},
      {"dice_healthy", healthy_json},
      {"gain_cfseg_minus_direct", gains},
      {"dvplus", dv},
      {"silver_dice_diseased", number_or_null(report.silver_dice_diseased)},
      {"volume_density_diseased", vs_expert},
      {"nf_vs_diseased_right", nf_vs_pe},
      {"pixel_area", options.pixel_area},
      {"ids", group_ids},
      {"volumes", volumes_json},
      {"footnotes",
       {"Dice of two empty masks is defined as 1.0.",
        "Both-lung Dice counts a pixel as overlapping only when the two labels agree.",
        "Expert masks are the generator's ground-truth masks.",
        "Density overlap is histogram intersection on a shared range; KDE curves are illustrative."}}};
  return report;
}

void write_report(const EvalReport& report, const synth::Manifest& dataset,
                  std::span<const pipeline::ResultsManifest> results, const ReportOptions& options,
                  const std::filesystem::path& out_dir) {
  io::write_json(out_dir / "report.json", report.json);
  io::write_text(out_dir / "dice_table.csv", report.dice_csv());
  if (options.write_figures) figures::write_all(report, dataset, results, options, out_dir / "figures");
}

}  // namespace cfseg::eval
