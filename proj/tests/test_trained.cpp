// Properties of the models trained by the acceptance run. Reads its artifacts; run after it.
#include "torch_doctest.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "cfseg/causal.hpp"
#include "cfseg/hvae.hpp"
#include "cfseg/io.hpp"

namespace fs = std::filesystem;
using namespace cfseg;

namespace {

const fs::path kRoot = CFSEG_ACCEPTANCE_ARTIFACTS;

struct Trained {
  synth::Manifest manifest;
  hvae::HvaeModel model{nullptr};
};

Trained& trained() {
  static Trained t = [] {
    Trained out;
    out.manifest = synth::Manifest::load(kRoot / "data" / synth::kManifestName);
    out.model = hvae::load(kRoot / "hvae" / "hvae.pt");
    return out;
  }();
  return t;
}

double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) s += std::abs(a(y, x) - b(y, x));
  return s / (a.height() * a.width());
}

Image load_image(const synth::ManifestRecord& r) { return io::read_image_png(trained().manifest.path_of(r.image_path)); }

// Rows in the bottom `fraction` of each lung's vertical extent.
Mask lower_lung(const Mask& gt, double fraction) {
  Mask region(gt.height(), gt.width());
  for (const auto label : {kRightLung, kLeftLung}) {
    int top = gt.height(), bottom = -1;
    for (int y = 0; y < gt.height(); ++y)
      for (int x = 0; x < gt.width(); ++x)
        if (gt(y, x) == label) top = std::min(top, y), bottom = std::max(bottom, y);
    if (bottom < 0) continue;
    const double cut = bottom + 1 - fraction * (bottom - top + 1);
    for (int y = 0; y < gt.height(); ++y)
      for (int x = 0; x < gt.width(); ++x)
        if (gt(y, x) == label && y >= cut) region(y, x) = 1;
  }
  return region;
}

double mean_over(const Image& img, const Mask& region) {
  double s = 0;
  int n = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (region(y, x)) s += img(y, x), ++n;
  return n ? s / n : 0.0;
}

}  // namespace

TEST_CASE("training report: one entry per epoch, nonnegative KL, monotone best validation ELBO") {
  const auto report = io::read_json(kRoot / "hvae" / "hvae_train_report.json");
  const auto record = io::read_json(kRoot / "hvae" / "run_record.json");
  const auto& epochs = report.at("epochs");
  REQUIRE(static_cast<int>(epochs.size()) == record.at("config").at("train").at("epochs").get<int>());
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& e : epochs) {
    for (const auto& kl : e.at("train_kl")) CHECK(kl.get<double>() >= 0.0);
    CHECK(e.at("best_val_elbo").get<double>() >= best);
    best = e.at("best_val_elbo").get<double>();
  }
  REQUIRE(epochs.size() >= 5);
  CHECK(epochs[4].at("train_elbo").get<double>() > epochs[0].at("train_elbo").get<double>());
}

TEST_CASE("healthy test reconstructions stay within the validation 95th percentile") {
  auto& t = trained();
  std::vector<double> val;
  double test_sum = 0;
  int test_n = 0;
  for (const auto& r : t.manifest.records) {
    if (r.attributes.disease != 0 || r.split == synth::Split::Train) continue;
    const auto img = load_image(r);
    const double e = mean_abs_diff(hvae::decode(t.model, hvae::encode(t.model, img, r.attributes), r.attributes), img);
    if (r.split == synth::Split::Val) val.push_back(e);
    else test_sum += e, ++test_n;
  }
  REQUIRE(!val.empty());
  REQUIRE(test_n > 0);
  std::sort(val.begin(), val.end());
  const double p95 = val[static_cast<std::size_t>(0.95 * static_cast<double>(val.size() - 1))];
  CHECK(test_sum / test_n <= p95);
}

TEST_CASE("the decoder responds to the disease parent") {
  auto& t = trained();
  double total = 0;
  int n = 0;
  for (const auto* r : t.manifest.split(synth::Split::Val)) {
    if (n == 100) break;
    auto pa = r->attributes;
    const auto z = hvae::encode(t.model, load_image(*r), pa);
    const auto a = hvae::decode(t.model, z, pa);
    pa.disease = 1 - pa.disease;
    pa.severity = pa.disease ? 0.5 : 0.0;
    total += mean_abs_diff(a, hvae::decode(t.model, z, pa));
    ++n;
  }
  CHECK(total / n > 0.0);
}

TEST_CASE("pseudo-healthy decode darkens the lower lung relative to reconstruction") {
  auto& t = trained();
  const auto engine = causal::CausalEngine::with_hvae(t.model);
  double recon_sum = 0, cf_sum = 0;
  int n = 0;
  for (const auto* r : t.manifest.split(synth::Split::Test)) {
    if (r->attributes.disease != 1) continue;
    const auto gt = io::read_mask_png(t.manifest.path_of(r->gt_mask_path));
    const auto region = lower_lung(gt, r->attributes.severity);
    const auto obs = causal::observation_of(r->attributes, load_image(*r));
    const auto recon = causal::image_of(engine.counterfactual(obs, {}));
    const auto cf = engine.counterfactual(obs, causal::pseudo_healthy());
    recon_sum += mean_over(recon, region);
    cf_sum += mean_over(causal::image_of(cf), region);
    CHECK(causal::attributes_of(cf).sex == r->attributes.sex);
    CHECK(causal::attributes_of(cf).scanner == r->attributes.scanner);
    ++n;
  }
  REQUIRE(n > 0);
  CHECK(cf_sum / n < recon_sum / n);
}
