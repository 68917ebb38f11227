#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cfseg/grid.hpp"
#include "cfseg/hvae.hpp"
#include "cfseg/io.hpp"
#include "cfseg/synth.hpp"

// Structural causal model over {sex, scanner, disease, severity, image} and the
// abduction -> action -> prediction counterfactual procedure.
namespace cfseg::causal {

using Value = std::variant<double, Image>;

// Inferred exogenous noise of one variable. monostate marks noise the evidence does not
// identify (e.g. severity noise of a healthy record).
using Exogenous = std::variant<std::monostate, double, hvae::LatentStack>;

struct ExogenousPosterior {
  std::map<std::string, Exogenous> noise;
  bool covers(const std::string& variable) const { return noise.contains(variable); }
};

using Assignment = std::map<std::string, Value>;

class Mechanism {
 public:
  virtual ~Mechanism() = default;
  virtual std::string id() const = 0;
  virtual Exogenous abduct(const Value& observed, const Assignment& parents) const = 0;
  virtual Value predict(const Assignment& parents, const Exogenous& noise) const = 0;
};

// X := U; abduction returns the observed value.
class IdentityMechanism final : public Mechanism {
 public:
  std::string id() const override { return "identity"; }
  Exogenous abduct(const Value& observed, const Assignment& parents) const override;
  Value predict(const Assignment& parents, const Exogenous& noise) const override;
};

// severity := disease * U, U ~ Uniform(lo, hi). Unidentified noise predicts the prior mean.
class SeverityMechanism final : public Mechanism {
 public:
  explicit SeverityMechanism(double prior_mean = 0.5) : prior_mean_(prior_mean) {}
  std::string id() const override { return "severity_gate"; }
  Exogenous abduct(const Value& observed, const Assignment& parents) const override;
  Value predict(const Assignment& parents, const Exogenous& noise) const override;

 private:
  double prior_mean_;
};

// image := decode(U, parents) with U the HVAE latent stack.
class HvaeImageMechanism final : public Mechanism {
 public:
  explicit HvaeImageMechanism(hvae::HvaeModel model, std::optional<std::uint64_t> sample_seed = std::nullopt);
  std::string id() const override { return "hvae"; }
  Exogenous abduct(const Value& observed, const Assignment& parents) const override;
  Value predict(const Assignment& parents, const Exogenous& noise) const override;
  const hvae::HvaeModel& model() const noexcept { return model_; }

 private:
  synth::AttributeVector attributes_from(const Assignment& parents) const;
  mutable hvae::HvaeModel model_;
  std::optional<std::uint64_t> sample_seed_;
};

struct VariableSpec {
  std::string name;
  std::vector<std::string> parents;
  std::string mechanism;
};

class CausalGraph {
 public:
  CausalGraph() = default;
  explicit CausalGraph(std::vector<VariableSpec> variables);

  // The default graph: independent roots sex, scanner, disease; severity <- disease;
  // image <- the given image parents.
  static CausalGraph standard(const std::vector<std::string>& image_parents = kImageParents);
  static CausalGraph from_json(const io::Json& j);
  io::Json to_json() const;

  const std::vector<VariableSpec>& variables() const noexcept { return order_; }  // topological
  const VariableSpec& variable(const std::string& name) const;
  bool contains(const std::string& name) const;
  bool is_descendant(const std::string& node, const std::string& ancestor) const;

 private:
  std::vector<VariableSpec> order_;
};

using Intervention = std::map<std::string, Value>;

// do(disease := 0, severity := 0)
Intervention pseudo_healthy();

enum class AbductionMode { PosteriorMean, Sample };

class CausalEngine {
 public:
  CausalEngine(CausalGraph graph, std::map<std::string, std::shared_ptr<const Mechanism>> registry);

  // Standard graph with identity roots, the severity gate and the given HVAE.
  static CausalEngine with_hvae(hvae::HvaeModel model, AbductionMode mode = AbductionMode::PosteriorMean,
                                std::uint64_t sample_seed = 0);

  const CausalGraph& graph() const noexcept { return graph_; }

  ExogenousPosterior abduct(const Assignment& observation) const;
  // Intervened variables take their forced values; every other variable is re-simulated
  // from its abducted noise under the (possibly modified) parents.
  Assignment predict(const ExogenousPosterior& posterior, const Assignment& observation,
                     const Intervention& intervention) const;
  Assignment counterfactual(const Assignment& observation, const Intervention& intervention) const;

  void validate_intervention(const Intervention& intervention) const;

 private:
  const Mechanism& mechanism_of(const VariableSpec& v) const;

  CausalGraph graph_;
  std::map<std::string, std::shared_ptr<const Mechanism>> registry_;
};

Assignment observation_of(const synth::AttributeVector& attrs, Image image);
synth::AttributeVector attributes_of(const Assignment& values);
const Image& image_of(const Assignment& values);

}  // namespace cfseg::causal
