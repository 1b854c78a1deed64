#include "trajprint/attacks.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <numeric>

#include "trajprint/error.hpp"
#include "trajprint/random.hpp"

namespace trajprint {

std::string attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::FinetuneProxy: return "finetune";
    case AttackKind::Prune: return "prune";
    case AttackKind::Quantize: return "quantize";
  }
  return "unknown";
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "finetune") return AttackKind::FinetuneProxy;
  if (name == "prune") return AttackKind::Prune;
  if (name == "quantize") return AttackKind::Quantize;
  fail(ErrorCode::Parse, "unknown attack kind '" + name + "'");
}

void AttackSpec::validate() const {
  require(steps >= 0, ErrorCode::InvalidArgument, "attack steps must be >= 0");
  require(ratio >= 0.0 && ratio <= 1.0, ErrorCode::InvalidArgument,
          "prune ratio must lie in [0, 1]");
  require(mantissa_bits >= 1, ErrorCode::InvalidArgument, "mantissa bits must be >= 1");
  require(shift_norm >= 0.0, ErrorCode::InvalidArgument, "shift norm must be >= 0");
}

nlohmann::json AttackSpec::to_json() const {
  nlohmann::json j = {{"kind", attack_kind_name(kind)}, {"seed", seed}};
  switch (kind) {
    case AttackKind::FinetuneProxy:
      j["steps"] = steps;
      j["learning_rate"] = learning_rate;
      j["shift_norm"] = shift_norm;
      break;
    case AttackKind::Prune: j["ratio"] = ratio; break;
    case AttackKind::Quantize: j["mantissa_bits"] = mantissa_bits; break;
  }
  return j;
}

AttackSpec AttackSpec::from_json(const nlohmann::json& j) {
  AttackSpec s;
  s.kind = parse_attack_kind(j.at("kind").get<std::string>());
  s.steps = j.value("steps", s.steps);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.shift_norm = j.value("shift_norm", s.shift_norm);
  s.ratio = j.value("ratio", s.ratio);
  s.mantissa_bits = j.value("mantissa_bits", s.mantissa_bits);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

std::string AttackSpec::label() const {
  switch (kind) {
    case AttackKind::FinetuneProxy:
      return "finetune(shift=" + nlohmann::json(shift_norm).dump() +
             ",steps=" + std::to_string(steps) + ")";
    case AttackKind::Prune: return "prune(" + nlohmann::json(ratio).dump() + ")";
    case AttackKind::Quantize: return "quantize(" + std::to_string(mantissa_bits) + "b)";
  }
  return "unknown";
}

std::vector<double> shift_vector(std::uint64_t seed, std::size_t dim, double norm) {
  Rng rng(derive_seed(seed, "finetune-shift"));
  auto v = rng.normal_vector(dim);
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (auto& x : v) x *= norm / n;
  return v;
}

namespace {

nlohmann::json attacked_provenance(const DenoiserModel& source, const nlohmann::json& spec) {
  nlohmann::json p = source.provenance();
  p["source_model_id"] = source.model_id();
  p["attacks"].push_back(spec);
  return p;
}

GmmParams read_gmm(const nlohmann::json& j) {
  GmmParams g;
  g.weights = j.at("weights").get<std::vector<double>>();
  g.means = j.at("means").get<std::vector<double>>();
  g.variance = j.at("variance").get<double>();
  return g;
}

}  // namespace

DenoiserModel finetune_proxy(const DenoiserModel& model, int steps, double learning_rate,
                             std::span<const double> shift, std::uint64_t seed) {
  require(steps >= 0, ErrorCode::InvalidArgument, "fine-tune steps must be >= 0");
  require(shift.size() == model.dim(), ErrorCode::DimensionMismatch,
          "shift dimension differs from the model");
  double shift_norm = 0.0;
  for (double v : shift) shift_norm += v * v;
  const nlohmann::json spec = {{"kind", "finetune"},
                               {"steps", steps},
                               {"learning_rate", learning_rate},
                               {"shift_norm", std::sqrt(shift_norm)},
                               {"seed", seed}};
  const std::size_t d = model.dim();

  if (model.kind() == ModelKind::AnalyticGmm) {
    GmmParams g = model.gmm();
    for (std::size_t k = 0; k < g.components(); ++k) {
      for (std::size_t i = 0; i < d; ++i) g.means[k * d + i] += shift[i];
    }
    return DenoiserModel::analytic_gmm(std::move(g), model.schedule().steps,
                                       attacked_provenance(model, spec));
  }

  require(model.provenance().contains("train_data"), ErrorCode::UnsupportedKind,
          "MLP model carries no training-data provenance to fine-tune on");
  GmmParams data = read_gmm(model.provenance().at("train_data"));
  for (std::size_t k = 0; k < data.components(); ++k) {
    for (std::size_t i = 0; i < d; ++i) data.means[k * d + i] += shift[i];
  }
  if (steps == 0) {
    return DenoiserModel::mlp(model.mlp(), d, model.schedule().steps,
                              attacked_provenance(model, spec));
  }
  return continue_mlp_training(model, data, steps, 32, learning_rate,
                               derive_seed(seed, "finetune-train"),
                               attacked_provenance(model, spec));
}

DenoiserModel prune(const DenoiserModel& model, double ratio) {
  require(model.kind() == ModelKind::Mlp, ErrorCode::UnsupportedKind,
          "pruning applies to MLP models only");
  require(ratio >= 0.0 && ratio <= 1.0, ErrorCode::InvalidArgument,
          "prune ratio must lie in [0, 1]");
  MlpParams p = model.mlp();

  struct Slot {
    std::size_t layer;
    std::size_t index;
    double magnitude;
  };
  std::vector<Slot> slots;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (std::size_t i = 0; i < p.layers[l].weight.size(); ++i) {
      slots.push_back({l, i, std::abs(p.layers[l].weight[i])});
    }
  }
  std::stable_sort(slots.begin(), slots.end(),
                   [](const Slot& a, const Slot& b) { return a.magnitude < b.magnitude; });
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(slots.size())));
  for (std::size_t i = 0; i < count; ++i) p.layers[slots[i].layer].weight[slots[i].index] = 0.0;

  const nlohmann::json spec = {{"kind", "prune"}, {"ratio", ratio}, {"seed", 0}};
  return DenoiserModel::mlp(std::move(p), model.dim(), model.schedule().steps,
                            attacked_provenance(model, spec));
}

double round_mantissa(double value, int mantissa_bits) {
  require(mantissa_bits >= 1, ErrorCode::InvalidArgument, "mantissa bits must be >= 1");
  if (value == 0.0 || !std::isfinite(value) || mantissa_bits >= 52) return value;
  const int exponent = std::ilogb(value);
  const double ulp = std::ldexp(1.0, exponent - mantissa_bits);
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double q = std::nearbyint(value / ulp) * ulp;
  std::fesetround(saved);
  return q;
}

DenoiserModel quantize(const DenoiserModel& model, int mantissa_bits) {
  require(mantissa_bits >= 1, ErrorCode::InvalidArgument, "mantissa bits must be >= 1");
  const nlohmann::json spec = {
      {"kind", "quantize"}, {"mantissa_bits", mantissa_bits}, {"seed", 0}};
  auto q = [&](double v) { return round_mantissa(v, mantissa_bits); };

  if (model.kind() == ModelKind::AnalyticGmm) {
    GmmParams g = model.gmm();
    for (auto& w : g.weights) w = q(w);
    // Rounded weights may no longer sum to one; renormalize them.
    const double total = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-12) {
      for (auto& w : g.weights) w /= total;
    }
    for (auto& m : g.means) m = q(m);
    g.variance = q(g.variance);
    return DenoiserModel::analytic_gmm(std::move(g), model.schedule().steps,
                                       attacked_provenance(model, spec));
  }
  MlpParams p = model.mlp();
  for (auto& l : p.layers) {
    for (auto& w : l.weight) w = q(w);
    for (auto& b : l.bias) b = q(b);
  }
  return DenoiserModel::mlp(std::move(p), model.dim(), model.schedule().steps,
                            attacked_provenance(model, spec));
}

DenoiserModel apply_attack(const DenoiserModel& model, const AttackSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case AttackKind::FinetuneProxy:
      return finetune_proxy(model, spec.steps, spec.learning_rate,
                            shift_vector(spec.seed, model.dim(), spec.shift_norm), spec.seed);
    case AttackKind::Prune: return prune(model, spec.ratio);
    case AttackKind::Quantize: return quantize(model, spec.mantissa_bits);
  }
  fail(ErrorCode::InvalidArgument, "unknown attack");
}

}  // namespace trajprint
