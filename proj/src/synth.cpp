#include "cfseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cfseg/errors.hpp"

namespace cfseg::synth {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Stream tags keep the attribute, anatomy, silver and split draws independent.
constexpr std::uint64_t kAttrStream = 0xA771;
constexpr std::uint64_t kSplitStream = 0x5B17;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double ellipse_radius(const Ellipse& e, double x, double y) {
  const double dx = (x - e.cx) / e.ax;
  const double dy = (y - e.cy) / e.ay;
  return std::sqrt(dx * dx + dy * dy);
}

struct Texture {
  std::array<double, 3> fx{}, fy{}, phase{}, amp{};
  double rib_period = 6.0;
  double rib_phase = 0.0;
};

Texture make_texture(std::uint64_t seed, int size) {
  auto rng = make_rng(seed, 0x7E47);
  Texture t;
  std::uniform_int_distribution<int> freq(1, 3);
  for (int i = 0; i < 3; ++i) {
    t.fx[i] = freq(rng);
    t.fy[i] = freq(rng);
    t.phase[i] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    t.amp[i] = uniform(rng, 0.004, 0.010);
  }
  t.rib_period = size * uniform(rng, 0.08, 0.11);
  t.rib_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return t;
}

}  // namespace

void AttributeVector::validate() const {
  if (sex != 0 && sex != 1) throw ValidationError("sex must be 0 or 1");
  if (scanner != 0 && scanner != 1) throw ValidationError("scanner must be 0 or 1");
  if (disease != 0 && disease != 1) throw ValidationError("disease must be 0 or 1");
  if (!(severity >= 0.0 && severity <= 1.0)) throw ValidationError("severity must lie in [0, 1]");
  if (disease == 0 && severity != 0.0) throw ValidationError("severity must be 0 when disease = 0");
  if (disease == 1 && severity == 0.0) throw ValidationError("severity must be > 0 when disease = 1");
}

io::Json to_json(const AttributeVector& a) {
  return {{"sex", a.sex}, {"scanner", a.scanner}, {"disease", a.disease}, {"severity", a.severity}};
}

AttributeVector attributes_from_json(const io::Json& j) {
  AttributeVector a;
  a.sex = j.at("sex").get<int>();
  a.scanner = j.at("scanner").get<int>();
  a.disease = j.at("disease").get<int>();
  a.severity = j.at("severity").get<double>();
  return a;
}

std::vector<AttributeVector> sample_attributes(std::uint64_t seed, int n, const Marginals& m) {
  if (n < 1) throw ArgumentError("sample_attributes: n must be >= 1, got " + std::to_string(n));
  auto rng = make_rng(seed, kAttrStream);
  std::bernoulli_distribution sex(m.p_sex), scanner(m.p_scanner), disease(m.p_disease);
  std::vector<AttributeVector> out(static_cast<std::size_t>(n));
  for (auto& a : out) {
    a.sex = sex(rng);
    a.scanner = scanner(rng);
    a.disease = disease(rng);
    // Always consume the severity draw so the stream layout does not depend on disease.
    const double s = uniform(rng, m.severity_min, m.severity_max);
    a.severity = a.disease ? s : 0.0;
  }
  return out;
}

io::Json to_json(const AnatomyParams& a) {
  auto ell = [](const Ellipse& e) {
    return io::Json{{"cx", e.cx}, {"cy", e.cy}, {"ax", e.ax}, {"ay", e.ay}};
  };
  return {{"size", a.size},     {"right", ell(a.right)},   {"left", ell(a.left)},
          {"gain", a.gain},     {"offset", a.offset},      {"texture_seed", a.texture_seed}};
}

AnatomyParams anatomy_from_json(const io::Json& j) {
  auto ell = [](const io::Json& e) {
    return Ellipse{e.at("cx").get<double>(), e.at("cy").get<double>(), e.at("ax").get<double>(),
                   e.at("ay").get<double>()};
  };
  AnatomyParams a;
  a.size = j.at("size").get<int>();
  a.right = ell(j.at("right"));
  a.left = ell(j.at("left"));
  a.gain = j.at("gain").get<double>();
  a.offset = j.at("offset").get<double>();
  a.texture_seed = j.at("texture_seed").get<std::uint64_t>();
  return a;
}

AnatomyParams sample_anatomy(std::uint64_t seed, int size) {
  if (size < 8) throw ArgumentError("image size must be >= 8");
  auto rng = make_rng(seed, 0xA4A7);
  const double s = size;
  AnatomyParams a;
  a.size = size;
  a.right = {s * uniform(rng, 0.28, 0.32), s * uniform(rng, 0.47, 0.53),
             s * uniform(rng, 0.115, 0.14), s * uniform(rng, 0.24, 0.29)};
  a.left = {s * uniform(rng, 0.68, 0.72), s * uniform(rng, 0.47, 0.53),
            s * uniform(rng, 0.105, 0.13), s * uniform(rng, 0.22, 0.27)};
  a.gain = uniform(rng, 0.92, 1.08);
  a.offset = uniform(rng, -0.03, 0.03);
  a.texture_seed = rng();
  return a;
}

double sex_scale(int sex) { return sex == 1 ? 1.06 : 0.94; }

Ellipse scaled(const Ellipse& e, int sex) {
  const double k = sex_scale(sex);
  return {e.cx, e.cy, e.ax * k, e.ay * k};
}

void validate_anatomy(const AnatomyParams& anatomy, int sex) {
  const double s = anatomy.size;
  for (const auto& raw : {anatomy.right, anatomy.left}) {
    const Ellipse e = scaled(raw, sex);
    if (!(e.ax > 0 && e.ay > 0)) throw ValidationError("ellipse semi-axes must be positive");
    if (e.cx - e.ax < 0 || e.cx + e.ax > s || e.cy - e.ay < 0 || e.cy + e.ay > s)
      throw ValidationError("lung ellipse extends outside the image bounds");
  }
  const Ellipse r = scaled(anatomy.right, sex);
  const Ellipse l = scaled(anatomy.left, sex);
  if (r.cx + r.ax >= l.cx - l.ax) throw ValidationError("lung ellipses overlap");
  if (!(anatomy.gain > 0)) throw ValidationError("gain must be positive");
}

Rendered render(const AttributeVector& attrs, const AnatomyParams& anatomy,
                const RenderParams& params) {
  attrs.validate();
  validate_anatomy(anatomy, attrs.sex);
  const int n = anatomy.size;
  const double s = n;
  const Texture tex = make_texture(anatomy.texture_seed, n);
  const std::array<Ellipse, 2> lungs{scaled(anatomy.right, attrs.sex), scaled(anatomy.left, attrs.sex)};
  const std::array<double, 2> opacity{params.opacity_left * params.right_factor, params.opacity_left};
  const double contrast = attrs.scanner == 1 ? 0.85 : 1.0;
  const double shift = attrs.scanner == 1 ? 0.05 : 0.0;

  Rendered out{Image(n, n), Mask(n, n)};
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double bg = 0.62 + 0.08 * py / s +
                  0.12 * std::exp(-std::pow((px - s / 2) / (0.08 * s), 2.0));
      for (int i = 0; i < 3; ++i)
        bg += tex.amp[i] * std::cos(2 * std::numbers::pi * (tex.fx[i] * px + tex.fy[i] * py) / s +
                                    tex.phase[i]);
      double value = bg;
      for (int l = 0; l < 2; ++l) {
        const Ellipse& e = lungs[l];
        const double r = ellipse_radius(e, px, py);
        if (r < 1.0) out.gt_mask(y, x) = static_cast<std::uint8_t>(l + 1);
        // Anti-aliased edge over roughly one pixel.
        const double w = std::clamp((1.0 - r) * std::min(e.ax, e.ay) + 0.5, 0.0, 1.0);
        if (w <= 0.0) continue;
        const double lung = 0.22 + 0.01 * std::sin(2 * std::numbers::pi * py / tex.rib_period + tex.rib_phase);
        double inside = lung;
        if (attrs.disease == 1) {
          const double band = 2.0 * e.ay * attrs.severity;
          const double start = e.cy + e.ay - band;
          const double t = std::clamp((py - start) / band, 0.0, 1.0);
          inside = lung + opacity[l] * t;
        }
        value = (1.0 - w) * value + w * inside;
      }
      value = contrast * (value - 0.5) + 0.5 + shift;
      value = anatomy.gain * value + anatomy.offset;
      out.image(y, x) = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
  return out;
}

Mask degrade_to_silver(const Mask& gt_mask, const AttributeVector& attrs, std::uint64_t seed,
                       const DegradeParams& params) {
  validate_mask(gt_mask);
  attrs.validate();
  Mask silver = gt_mask;
  if (attrs.disease == 0 || attrs.severity <= params.visibility) return silver;

  auto rng = make_rng(seed, 0x51F7);
  std::uniform_int_distribution<int> jitter(-params.jitter_rows, params.jitter_rows);
  for (const auto label : {kRightLung, kLeftLung}) {
    const double k = label == kRightLung ? params.k_right : params.k_left;
    int top = gt_mask.height(), bottom = -1;
    for (int y = 0; y < gt_mask.height(); ++y)
      for (int x = 0; x < gt_mask.width(); ++x)
        if (gt_mask(y, x) == label) {
          top = std::min(top, y);
          bottom = std::max(bottom, y);
        }
    if (bottom < 0) continue;
    const int rows = bottom - top + 1;
    const int cut = std::max(1, static_cast<int>(std::lround(k * attrs.severity * rows)));
    for (int x = 0; x < gt_mask.width(); ++x) {
      const int col_cut = std::clamp(cut + jitter(rng), 1, rows);
      const int first_removed = bottom - col_cut + 1;
      for (int y = first_removed; y <= bottom; ++y)
        if (silver(y, x) == label) silver(y, x) = kBackground;
    }
  }
  return silver;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + s + "'");
}

void DatasetConfig::validate() const {
  if (n < 1) throw ConfigError("n must be >= 1");
  if (size < 16 || size % 16 != 0) throw ConfigError("size must be a positive multiple of 16");
  const double total = split_ratios.train + split_ratios.val + split_ratios.test;
  if (split_ratios.train < 0 || split_ratios.val < 0 || split_ratios.test < 0 ||
      std::abs(total - 1.0) > 1e-6)
    throw ConfigError("split_ratios must be nonnegative and sum to 1");
  if (disease_prevalence < 0 || disease_prevalence > 1)
    throw ConfigError("disease_prevalence must lie in [0, 1]");
  if (degrade_k_right < 0 || degrade_k_right > 1 || degrade_k_left < 0 || degrade_k_left > 1)
    throw ConfigError("degrade_k_* must lie in [0, 1]");
}

Marginals DatasetConfig::marginals() const {
  Marginals m;
  m.p_disease = disease_prevalence;
  return m;
}

DegradeParams DatasetConfig::degrade() const {
  DegradeParams d;
  d.k_right = degrade_k_right;
  d.k_left = degrade_k_left;
  d.jitter_rows = std::max(1, size / 64);
  return d;
}

DatasetConfig dataset_config_from_json(const io::Json& j) {
  static const std::vector<std::string> kKeys = {"n", "seed", "size", "split_ratios", "disease_prevalence",
                                                 "degrade_k_right", "degrade_k_left"};
  for (const auto& [key, _] : j.items())
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end())
      throw ConfigError("unknown dataset config key '" + key + "'");
  DatasetConfig c;
  try {
    c.n = j.value("n", c.n);
    c.seed = j.value("seed", c.seed);
    c.size = j.value("size", c.size);
    c.disease_prevalence = j.value("disease_prevalence", c.disease_prevalence);
    c.degrade_k_right = j.value("degrade_k_right", c.degrade_k_right);
    c.degrade_k_left = j.value("degrade_k_left", c.degrade_k_left);
    if (j.contains("split_ratios")) {
      const auto& r = j.at("split_ratios");
      if (r.is_array()) {
        if (r.size() != 3) throw ConfigError("split_ratios array must have 3 entries (train, val, test)");
        const double total = r[0].get<double>() + r[1].get<double>() + r[2].get<double>();
        c.split_ratios = {r[0].get<double>() / total, r[1].get<double>() / total,
                          r[2].get<double>() / total};
      } else {
        c.split_ratios = {r.at("train").get<double>(), r.at("val").get<double>(),
                          r.at("test").get<double>()};
      }
    }
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("dataset config: ") + e.what());
  }
  c.validate();
  return c;
}

io::Json to_json(const DatasetConfig& c) {
  return {{"n", c.n},
          {"seed", c.seed},
          {"size", c.size},
          {"split_ratios",
           {{"train", c.split_ratios.train}, {"val", c.split_ratios.val}, {"test", c.split_ratios.test}}},
          {"disease_prevalence", c.disease_prevalence},
          {"degrade_k_right", c.degrade_k_right},
          {"degrade_k_left", c.degrade_k_left}};
}

std::vector<Split> assign_splits(const std::vector<AttributeVector>& attrs, const SplitRatios& r,
                                 std::uint64_t seed) {
  std::vector<std::size_t> diseased, healthy;
  for (std::size_t i = 0; i < attrs.size(); ++i) (attrs[i].disease ? diseased : healthy).push_back(i);
  auto rng = make_rng(seed, kSplitStream);
  std::shuffle(diseased.begin(), diseased.end(), rng);
  std::shuffle(healthy.begin(), healthy.end(), rng);

  // Walk both strata back to back, always filling the split furthest behind its quota.
  // Contiguous strata make each class near-proportional and the totals exact.
  const std::array<double, 3> ratio{r.train, r.val, r.test};
  std::array<std::size_t, 3> assigned{};
  std::vector<Split> out(attrs.size(), Split::Train);
  std::size_t position = 0;
  for (const auto* stratum : {&diseased, &healthy}) {
    for (std::size_t idx : *stratum) {
      ++position;
      int best = 0;
      double best_deficit = -1e300;
      for (int s = 0; s < 3; ++s) {
        const double deficit = ratio[s] * static_cast<double>(position) - static_cast<double>(assigned[s]);
        if (deficit > best_deficit + 1e-12) {
          best_deficit = deficit;
          best = s;
        }
      }
      ++assigned[best];
      out[idx] = static_cast<Split>(best);
    }
  }
  return out;
}

io::Json to_json(const ManifestRecord& r) {
  io::Json j{{"id", r.id},
             {"image_path", r.image_path},
             {"gt_mask_path", r.gt_mask_path},
             {"silver_mask_path", r.silver_mask_path},
             {"sex", r.attributes.sex},
             {"scanner", r.attributes.scanner},
             {"disease", r.attributes.disease},
             {"severity", r.attributes.severity},
             {"split", to_string(r.split)}};
  if (r.anatomy) j["anatomy"] = to_json(*r.anatomy);
  j["sample_seed"] = r.sample_seed;
  return j;
}

ManifestRecord record_from_json(const io::Json& j) {
  ManifestRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.image_path = j.at("image_path").get<std::string>();
    r.gt_mask_path = j.value("gt_mask_path", std::string{});
    r.silver_mask_path = j.value("silver_mask_path", std::string{});
    r.attributes = attributes_from_json(j);
    r.split = split_from_string(j.value("split", std::string("train")));
    if (j.contains("anatomy")) r.anatomy = anatomy_from_json(j.at("anatomy"));
    r.sample_seed = j.value("sample_seed", std::uint64_t{0});
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("manifest record: ") + e.what());
  }
  r.attributes.validate();
  return r;
}

Manifest Manifest::load(const std::filesystem::path& file) {
  Manifest m;
  m.root = file.parent_path();
  for (const auto& j : io::read_jsonl(file)) {
    try {
      m.records.push_back(record_from_json(j));
    } catch (const ValidationError& e) {
      throw IoError(file.string(), e.what());
    }
  }
  return m;
}

void Manifest::save(const std::filesystem::path& file) const {
  std::vector<io::Json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.push_back(to_json(r));
  io::write_jsonl(file, lines);
}

std::vector<const ManifestRecord*> Manifest::split(Split s) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

Manifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string(), ec.message());

  const auto attrs = sample_attributes(config.seed, config.n, config.marginals());
  const auto splits = assign_splits(attrs, config.split_ratios, config.seed);
  const DegradeParams degrade = config.degrade();

  Manifest manifest;
  manifest.root = out_dir;
  manifest.records.resize(attrs.size());
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    auto seeder = make_rng(config.seed, (std::uint64_t{1} << 40) | i);
    const std::uint64_t sample_seed = seeder();
    AnatomyParams anatomy = sample_anatomy(sample_seed, config.size);
    const Rendered rendered = render(attrs[i], anatomy);
    const Mask silver = degrade_to_silver(rendered.gt_mask, attrs[i], sample_seed, degrade);

    char id[16];
    std::snprintf(id, sizeof id, "s%06zu", i);
    ManifestRecord& r = manifest.records[i];
    r.id = id;
    r.image_path = "images/" + r.id + ".png";
    r.gt_mask_path = "masks/" + r.id + "_gt.png";
    r.silver_mask_path = "masks/" + r.id + "_silver.png";
    r.attributes = attrs[i];
    r.split = splits[i];
    r.anatomy = anatomy;
    r.sample_seed = sample_seed;
    io::write_image_png(out_dir / r.image_path, rendered.image);
    io::write_mask_png(out_dir / r.gt_mask_path, rendered.gt_mask);
    io::write_mask_png(out_dir / r.silver_mask_path, silver);
  }
  manifest.save(out_dir / kManifestName);
  io::write_json(out_dir / "data_config.json", to_json(config));
  return manifest;
}

}  // namespace cfseg::synth
