#include "figures.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cfseg::eval::figures {

namespace {

const char* colour(const std::string& method) {
  if (method == "gt") return "#222222";
  if (method == "silver") return "#1f77b4";
  if (method == "direct") return "#ff7f0e";
  if (method == "cfseg") return "#2ca02c";
  return "#9467bd";
}

struct Curve {
  std::string label;
  std::string colour;
  std::vector<double> values;
  bool dashed = false;
};

class Svg {
 public:
  Svg(int width, int height) : width_(width), height_(height) {}

  void panel(double x0, double y0, double w, double h, const std::string& title,
             const std::vector<Curve>& curves) {
    double lo = 1e300, hi = -1e300;
    for (const auto& c : curves)
      for (double v : c.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    if (lo > hi) return;
    const double pad = std::max(1.0, 0.1 * (hi - lo));
    lo -= pad;
    hi += pad;
    std::vector<double> grid(120);
    for (std::size_t i = 0; i < grid.size(); ++i)
      grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
    std::vector<std::vector<double>> dens;
    double ymax = 0;
    for (const auto& c : curves) {
      dens.push_back(kde(c.values, grid));
      for (double d : dens.back()) ymax = std::max(ymax, d);
    }
    if (ymax <= 0) ymax = 1;

    const double left = x0 + 45, bottom = y0 + h - 30, pw = w - 60, ph = h - 60;
    out_ << "<rect x='" << left << "' y='" << bottom - ph << "' width='" << pw << "' height='" << ph
         << "' fill='none' stroke='#999'/>\n";
    out_ << "<text x='" << left + pw / 2 << "' y='" << y0 + 18
         << "' text-anchor='middle' font-size='13'>" << title << "</text>\n";
    out_ << "<text x='" << left << "' y='" << bottom + 16 << "' font-size='10'>" << lo << "</text>\n";
    out_ << "<text x='" << left + pw << "' y='" << bottom + 16 << "' font-size='10' text-anchor='end'>"
         << hi << "</text>\n";
    out_ << "<text x='" << left + pw / 2 << "' y='" << bottom + 26
         << "' font-size='10' text-anchor='middle'>volume (px)</text>\n";
    for (std::size_t k = 0; k < curves.size(); ++k) {
      out_ << "<polyline fill='none' stroke-width='1.6' stroke='" << curves[k].colour << "'"
           << (curves[k].dashed ? " stroke-dasharray='5,3'" : "") << " points='";
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const double px = left + pw * (grid[i] - lo) / (hi - lo);
        const double py = bottom - ph * dens[k][i] / ymax;
        out_ << px << ',' << py << ' ';
      }
      out_ << "'/>\n";
      const double ly = bottom - ph + 14 + 14 * static_cast<double>(k);
      out_ << "<line x1='" << left + pw - 90 << "' y1='" << ly - 4 << "' x2='" << left + pw - 72
           << "' y2='" << ly - 4 << "' stroke='" << curves[k].colour << "' stroke-width='2'"
           << (curves[k].dashed ? " stroke-dasharray='5,3'" : "") << "/>\n";
      out_ << "<text x='" << left + pw - 68 << "' y='" << ly << "' font-size='10'>" << curves[k].label
           << "</text>\n";
    }
  }

  std::string str() const {
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width_ << "' height='" << height_
      << "' font-family='sans-serif'>\n<rect width='100%' height='100%' fill='white'/>\n"
      << out_.str() << "</svg>\n";
    return s.str();
  }

 private:
  int width_, height_;
  std::ostringstream out_;
};

std::vector<double> volumes(const io::Json& report, const std::string& method, const std::string& group,
                            const std::string& structure) {
  const auto& v = report.at("volumes");
  if (!v.contains(method)) return {};
  return v.at(method).at(group).at(structure).get<std::vector<double>>();
}

void blit(io::RgbImage& canvas, const io::RgbImage& tile, int y0, int x0, int scale) {
  for (int y = 0; y < tile.height(); ++y)
    for (int x = 0; x < tile.width(); ++x)
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx) canvas(y0 + y * scale + dy, x0 + x * scale + dx) = tile(y, x);
}

}  // namespace

void write_all(const EvalReport& report, const synth::Manifest& dataset,
               std::span<const pipeline::ResultsManifest> results, const ReportOptions& options,
               const std::filesystem::path& dir) {
  const io::Json& j = report.json;
  std::vector<std::string> methods{"gt", "silver"};
  for (const auto& [m, _] : report.diseased) methods.push_back(to_string(m));

  // Volume densities on diseased samples, one panel per structure.
  {
    Svg svg(3 * 330, 260);
    int k = 0;
    for (const auto st : kStructures) {
      std::vector<Curve> curves;
      for (const auto& m : methods)
        curves.push_back({m == "gt" ? "expert" : m, colour(m), volumes(j, m, "diseased", to_string(st))});
      svg.panel(330.0 * k++, 0, 330, 260, to_string(st) + " lung(s), diseased", curves);
    }
    io::write_text(dir / "volume_density_diseased.svg", svg.str());
  }

  // Right-lung volume densities, healthy versus diseased, one panel per method.
  if (report.n_healthy > 0 && report.n_diseased > 0) {
    Svg svg(static_cast<int>(methods.size()) * 300, 260);
    int k = 0;
    for (const auto& m : methods) {
      std::vector<Curve> curves{{"no finding", "#1f77b4", volumes(j, m, "healthy", "right"), false},
                                {"effusion", "#d62728", volumes(j, m, "diseased", "right"), true}};
      std::ostringstream title;
      title.precision(3);
      title << (m == "gt" ? "expert" : m) << " (overlap " << report.nf_vs_diseased_overlap_right.at(method_from_string(m))
            << ")";
      svg.panel(300.0 * k++, 0, 300, 260, title.str(), curves);
    }
    io::write_text(dir / "right_volume_nf_vs_diseased.svg", svg.str());
  }

  // Qualitative panels for the diseased samples with the largest right-lung silver deficit.
  if (options.qualitative_panels <= 0 || report.n_diseased == 0) return;
  std::map<std::string, const synth::ManifestRecord*> by_id;
  for (const auto& r : dataset.records) by_id.emplace(r.id, &r);
  std::map<std::string, std::map<pipeline::Arm, const pipeline::ResultRecord*>> res;
  std::map<const pipeline::ResultRecord*, const pipeline::ResultsManifest*> owner;
  for (const auto& m : results)
    for (const auto& r : m.records)
      if (r.ok()) {
        res[r.id()][r.arm] = &r;
        owner[&r] = &m;
      }

  std::vector<std::pair<double, std::string>> ranked;
  const auto& ids = j.at("ids").at("diseased");
  const auto gt_right = volumes(j, "gt", "diseased", "right");
  const auto silver_right = volumes(j, "silver", "diseased", "right");
  for (std::size_t i = 0; i < ids.size(); ++i)
    ranked.emplace_back(-(gt_right[i] - silver_right[i]), ids[i].get<std::string>());
  std::sort(ranked.begin(), ranked.end());
  ranked.resize(std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(options.qualitative_panels)));

  const int scale = 3;
  for (const auto& [_, id] : ranked) {
    const auto* rec = by_id.at(id);
    const Image image = io::read_image_png(dataset.path_of(rec->image_path));
    std::vector<io::RgbImage> tiles;
    tiles.push_back(io::overlay(image, io::read_mask_png(dataset.path_of(rec->silver_mask_path))));
    tiles.push_back(io::overlay(image, io::read_mask_png(dataset.path_of(rec->gt_mask_path))));
    const auto& arms = res[id];
    if (arms.contains(pipeline::Arm::Direct)) {
      const auto* r = arms.at(pipeline::Arm::Direct);
      tiles.push_back(io::overlay(image, io::read_mask_png(owner.at(r)->path_of(r->pred_mask_path))));
    }
    if (arms.contains(pipeline::Arm::CfSeg)) {
      const auto* r = arms.at(pipeline::Arm::CfSeg);
      const Mask cf_mask = io::read_mask_png(owner.at(r)->path_of(r->pred_mask_path));
      tiles.push_back(io::overlay(image, cf_mask));
      if (r->cf_image_path)
        tiles.push_back(io::overlay(io::read_image_png(owner.at(r)->path_of(*r->cf_image_path)), cf_mask));
    }
    const int h = image.height() * scale, w = image.width() * scale, gap = 4;
    io::RgbImage canvas(h, static_cast<int>(tiles.size()) * (w + gap) - gap, io::Rgb{255, 255, 255});
    for (std::size_t t = 0; t < tiles.size(); ++t) blit(canvas, tiles[t], 0, static_cast<int>(t) * (w + gap), scale);
    io::write_rgb_png(dir / ("panel_" + id + ".png"), canvas);
  }
}

}  // namespace cfseg::eval::figures
