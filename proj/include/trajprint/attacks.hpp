#pragma once

// Post-release model modifications used in the robustness study. Every attack
// returns a new model and leaves its input untouched.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajprint/diffusion.hpp"

namespace trajprint {

enum class AttackKind { FinetuneProxy, Prune, Quantize };

std::string attack_kind_name(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

struct AttackSpec {
  AttackKind kind = AttackKind::Quantize;
  // FinetuneProxy
  int steps = 500;
  double learning_rate = 1e-4;
  double shift_norm = 0.1;
  // Prune
  double ratio = 0.1;
  // Quantize
  int mantissa_bits = 10;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static AttackSpec from_json(const nlohmann::json& j);
  std::string label() const;
};

/// Seeded direction scaled to `norm`.
std::vector<double> shift_vector(std::uint64_t seed, std::size_t dim, double norm);

/// MLP: continues denoising training on its training mixture with every mean
/// moved by `shift`. Mixture model: means become mu_k + shift.
DenoiserModel finetune_proxy(const DenoiserModel& model, int steps, double learning_rate,
                             std::span<const double> shift, std::uint64_t seed);

/// Zeroes the `ratio` fraction of MLP weights with the smallest magnitude,
/// ranked globally across layers (stable order on ties). Biases are kept.
DenoiserModel prune(const DenoiserModel& model, double ratio);

/// Rounds to the nearest double with `mantissa_bits` fraction bits, ties to even.
double round_mantissa(double value, int mantissa_bits);
/// Rounds every stored parameter; inference stays in double precision.
DenoiserModel quantize(const DenoiserModel& model, int mantissa_bits);

DenoiserModel apply_attack(const DenoiserModel& model, const AttackSpec& spec);

}  // namespace trajprint
