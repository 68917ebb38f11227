#include "cfseg/causal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include <ATen/CPUGeneratorImpl.h>

namespace cfseg::causal {

namespace {

double scalar(const Value& v, const std::string& what) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw ArgumentError(what + ": expected a scalar value");
}

double parent_scalar(const Assignment& parents, const std::string& name) {
  const auto it = parents.find(name);
  if (it == parents.end()) throw ArgumentError("missing parent '" + name + "'");
  return scalar(it->second, name);
}

bool is_binary(const std::string& name) { return name == "sex" || name == "scanner" || name == "disease"; }

}  // namespace

Exogenous IdentityMechanism::abduct(const Value& observed, const Assignment&) const {
  return scalar(observed, "identity mechanism");
}

Value IdentityMechanism::predict(const Assignment&, const Exogenous& noise) const {
  if (const auto* d = std::get_if<double>(&noise)) return *d;
  throw ArgumentError("identity mechanism: noise is not identified");
}

Exogenous SeverityMechanism::abduct(const Value& observed, const Assignment& parents) const {
  const double severity = scalar(observed, "severity");
  if (parent_scalar(parents, "disease") >= 0.5) return severity;
  return std::monostate{};
}

Value SeverityMechanism::predict(const Assignment& parents, const Exogenous& noise) const {
  if (parent_scalar(parents, "disease") < 0.5) return 0.0;
  if (const auto* d = std::get_if<double>(&noise)) return *d;
  return prior_mean_;
}

HvaeImageMechanism::HvaeImageMechanism(hvae::HvaeModel model, std::optional<std::uint64_t> sample_seed)
    : model_(std::move(model)), sample_seed_(sample_seed) {
  model_->eval();
}

synth::AttributeVector HvaeImageMechanism::attributes_from(const Assignment& parents) const {
  synth::AttributeVector a;
  for (const auto& name : model_->config().parents) {
    const double v = parent_scalar(parents, name);
    if (name == "sex") a.sex = static_cast<int>(std::lround(v));
    else if (name == "scanner") a.scanner = static_cast<int>(std::lround(v));
    else if (name == "disease") a.disease = static_cast<int>(std::lround(v));
    else if (name == "severity") a.severity = v;
  }
  return a;
}

Exogenous HvaeImageMechanism::abduct(const Value& observed, const Assignment& parents) const {
  const auto* image = std::get_if<Image>(&observed);
  if (!image) throw ArgumentError("image mechanism: observed value is not an image");
  torch::NoGradGuard guard;
  const auto pa = parent_vector(attributes_from(parents), model_->config().parents).unsqueeze(0);
  if (sample_seed_) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(*sample_seed_);
    return model_->encode(to_tensor(*image), pa, gen);
  }
  return model_->encode(to_tensor(*image), pa);
}

Value HvaeImageMechanism::predict(const Assignment& parents, const Exogenous& noise) const {
  const auto* latents = std::get_if<hvae::LatentStack>(&noise);
  if (!latents) throw ArgumentError("image mechanism: noise is not a latent stack");
  torch::NoGradGuard guard;
  const auto pa = parent_vector(attributes_from(parents), model_->config().parents).unsqueeze(0);
  return image_from_tensor(model_->decode(*latents, pa));
}

CausalGraph::CausalGraph(std::vector<VariableSpec> variables) {
  std::map<std::string, const VariableSpec*> by_name;
  for (const auto& v : variables) {
    if (v.name.empty()) throw ValidationError("graph: variable without a name");
    if (!by_name.emplace(v.name, &v).second) throw ValidationError("graph: duplicate variable '" + v.name + "'");
    if (v.mechanism.empty()) throw ValidationError("graph: variable '" + v.name + "' has no mechanism");
  }
  for (const auto& v : variables)
    for (const auto& p : v.parents)
      if (!by_name.contains(p)) throw ValidationError("graph: '" + v.name + "' has unknown parent '" + p + "'");

  // Kahn's algorithm, stable in declaration order.
  std::set<std::string> placed;
  while (order_.size() < variables.size()) {
    bool progressed = false;
    for (const auto& v : variables) {
      if (placed.contains(v.name)) continue;
      if (std::all_of(v.parents.begin(), v.parents.end(), [&](const auto& p) { return placed.contains(p); })) {
        order_.push_back(v);
        placed.insert(v.name);
        progressed = true;
      }
    }
    if (!progressed) throw ValidationError("graph: cycle detected");
  }

  if (contains("image")) {
    const auto& img = variable("image");
    for (const auto& p : img.parents)
      if (std::find(kImageParents.begin(), kImageParents.end(), p) == kImageParents.end())
        throw ValidationError("graph: image parent '" + p + "' is not an attribute variable");
    if (std::find(img.parents.begin(), img.parents.end(), "disease") == img.parents.end())
      throw ValidationError("graph: image must have disease as a parent");
  }
}

CausalGraph CausalGraph::standard(const std::vector<std::string>& image_parents) {
  std::vector<VariableSpec> v{{"sex", {}, "identity"},
                              {"scanner", {}, "identity"},
                              {"disease", {}, "identity"},
                              {"severity", {"disease"}, "severity_gate"},
                              {"image", image_parents, "hvae"}};
  return CausalGraph(std::move(v));
}

CausalGraph CausalGraph::from_json(const io::Json& j) {
  std::vector<VariableSpec> vars;
  try {
    for (const auto& v : j.at("variables"))
      vars.push_back({v.at("name").get<std::string>(), v.value("parents", std::vector<std::string>{}),
                      v.at("mechanism").get<std::string>()});
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("graph spec: ") + e.what());
  }
  return CausalGraph(std::move(vars));
}

io::Json CausalGraph::to_json() const {
  io::Json vars = io::Json::array();
  for (const auto& v : order_) vars.push_back({{"name", v.name}, {"parents", v.parents}, {"mechanism", v.mechanism}});
  return {{"variables", vars}};
}

const VariableSpec& CausalGraph::variable(const std::string& name) const {
  for (const auto& v : order_)
    if (v.name == name) return v;
  throw ArgumentError("graph has no variable '" + name + "'");
}

bool CausalGraph::contains(const std::string& name) const {
  return std::any_of(order_.begin(), order_.end(), [&](const auto& v) { return v.name == name; });
}

bool CausalGraph::is_descendant(const std::string& node, const std::string& ancestor) const {
  std::function<bool(const std::string&)> walk = [&](const std::string& n) {
    for (const auto& p : variable(n).parents)
      if (p == ancestor || walk(p)) return true;
    return false;
  };
  return walk(node);
}

Intervention pseudo_healthy() { return {{"disease", 0.0}, {"severity", 0.0}}; }

CausalEngine::CausalEngine(CausalGraph graph, std::map<std::string, std::shared_ptr<const Mechanism>> registry)
    : graph_(std::move(graph)), registry_(std::move(registry)) {
  for (const auto& v : graph_.variables())
    if (!registry_.contains(v.mechanism))
      throw ValidationError("graph: mechanism '" + v.mechanism + "' for '" + v.name + "' is not registered");
  if (graph_.contains("image")) {
    const auto* hv = dynamic_cast<const HvaeImageMechanism*>(registry_.at(graph_.variable("image").mechanism).get());
    if (hv) {
      auto expected = hv->model()->config().parents;
      auto actual = graph_.variable("image").parents;
      std::sort(expected.begin(), expected.end());
      std::sort(actual.begin(), actual.end());
      if (expected != actual) throw ValidationError("graph: image parents differ from the HVAE's conditioning set");
    }
  }
}

CausalEngine CausalEngine::with_hvae(hvae::HvaeModel model, AbductionMode mode, std::uint64_t sample_seed) {
  const auto parents = model->config().parents;
  std::map<std::string, std::shared_ptr<const Mechanism>> registry{
      {"identity", std::make_shared<IdentityMechanism>()},
      {"severity_gate", std::make_shared<SeverityMechanism>()},
      {"hvae", std::make_shared<HvaeImageMechanism>(
                   std::move(model), mode == AbductionMode::Sample ? std::optional(sample_seed) : std::nullopt)}};
  return CausalEngine(CausalGraph::standard(parents), std::move(registry));
}

const Mechanism& CausalEngine::mechanism_of(const VariableSpec& v) const { return *registry_.at(v.mechanism); }

ExogenousPosterior CausalEngine::abduct(const Assignment& observation) const {
  std::vector<std::string> missing;
  for (const auto& v : graph_.variables())
    if (!observation.contains(v.name)) missing.push_back(v.name);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw IncompleteEvidenceError("observation is missing: " + list);
  }
  ExogenousPosterior posterior;
  for (const auto& v : graph_.variables()) {
    Assignment parents;
    for (const auto& p : v.parents) parents.emplace(p, observation.at(p));
    posterior.noise.emplace(v.name, mechanism_of(v).abduct(observation.at(v.name), parents));
  }
  return posterior;
}

void CausalEngine::validate_intervention(const Intervention& intervention) const {
  for (const auto& [name, value] : intervention) {
    if (!graph_.contains(name)) throw ArgumentError("intervention on unknown variable '" + name + "'");
    if (name == "image") {
      if (!std::holds_alternative<Image>(value)) throw ArgumentError("image intervention must be an image");
      continue;
    }
    const double v = scalar(value, name);
    if (is_binary(name) && v != 0.0 && v != 1.0) throw ArgumentError(name + " must be 0 or 1");
    if (name == "severity" && !(v >= 0.0 && v <= 1.0)) throw ArgumentError("severity must lie in [0, 1]");
  }
}

Assignment CausalEngine::predict(const ExogenousPosterior& posterior, const Assignment& observation,
                                 const Intervention& intervention) const {
  validate_intervention(intervention);
  Assignment out;
  for (const auto& v : graph_.variables()) {
    if (const auto it = intervention.find(v.name); it != intervention.end()) {
      out.emplace(v.name, it->second);
      continue;
    }
    if (!posterior.covers(v.name)) throw ArgumentError("posterior does not cover '" + v.name + "'");
    Assignment parents;
    for (const auto& p : v.parents) parents.emplace(p, out.at(p));
    const auto& noise = posterior.noise.at(v.name);
    // Unidentified noise with unchanged parents: the observation itself is the answer.
    if (std::holds_alternative<std::monostate>(noise) && observation.contains(v.name)) {
      bool parents_changed = false;
      for (const auto& p : v.parents) {
        const auto* a = std::get_if<double>(&parents.at(p));
        const auto* b = std::get_if<double>(&observation.at(p));
        parents_changed |= !(a && b && *a == *b);
      }
      if (!parents_changed) {
        out.emplace(v.name, observation.at(v.name));
        continue;
      }
    }
    out.emplace(v.name, mechanism_of(v).predict(parents, noise));
  }
  return out;
}

Assignment CausalEngine::counterfactual(const Assignment& observation, const Intervention& intervention) const {
  validate_intervention(intervention);
  return predict(abduct(observation), observation, intervention);
}

Assignment observation_of(const synth::AttributeVector& attrs, Image image) {
  return {{"sex", static_cast<double>(attrs.sex)},
          {"scanner", static_cast<double>(attrs.scanner)},
          {"disease", static_cast<double>(attrs.disease)},
          {"severity", attrs.severity},
          {"image", std::move(image)}};
}

synth::AttributeVector attributes_of(const Assignment& values) {
  synth::AttributeVector a;
  a.sex = static_cast<int>(std::lround(scalar(values.at("sex"), "sex")));
  a.scanner = static_cast<int>(std::lround(scalar(values.at("scanner"), "scanner")));
  a.disease = static_cast<int>(std::lround(scalar(values.at("disease"), "disease")));
  a.severity = scalar(values.at("severity"), "severity");
  return a;
}

const Image& image_of(const Assignment& values) {
  const auto it = values.find("image");
  if (it == values.end()) throw ArgumentError("assignment has no image");
  return std::get<Image>(it->second);
}

}  // namespace cfseg::causal
