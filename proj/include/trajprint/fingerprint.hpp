#pragma once

// Fingerprint synthesis: invert the target model's trajectory from a
// watermarked anchor, then optimize the input noise under the watermark loss
// plus output-side (reconstruction) and input-side (latent) anchoring.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajprint/autodiff.hpp"
#include "trajprint/diffusion.hpp"
#include "trajprint/watermark.hpp"

namespace trajprint {

struct OptimConfig {
  int iterations = 200;
  double learning_rate = 0.1;
  double lambda_rec = 0.6;
  double lambda_reg = 0.05;
  double gamma = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t segment_length = 1;
  double early_stop = 1e-4;
  std::uint64_t seed = 0;
  std::uint64_t perceptual_seed = 0x5eed;

  void validate() const;
  nlohmann::json to_json() const;
  static OptimConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical (key-sorted) JSON form.
  std::string hash() const;
};

/// Gradient-domain structural distance: squared first differences of both
/// vectors after a fixed seeded orthogonal rotation.
class PerceptualProxy {
 public:
  PerceptualProxy(std::uint64_t seed, std::size_t dim);

  double operator()(std::span<const double> a, std::span<const double> b) const;
  ad::Var operator()(ad::Tape& tape, const ad::Var& a, const ad::Var& b) const;

 private:
  std::size_t dim_;
  std::vector<double> operator_;  // (D-1) x D: difference of rotated coordinates
};

/// ||generated - I_w||^2 + gamma * proxy(generated, I_w).
ad::Var rec_loss(ad::Tape& tape, const ad::Var& generated, const ad::Var& target, double gamma,
                 const PerceptualProxy& proxy);
/// ||z - origin||^2.
ad::Var reg_loss(ad::Tape& tape, const ad::Var& z, const ad::Var& origin);

struct LossParts {
  double watermark = 0.0;
  double reconstruction = 0.0;
  double regularization = 0.0;
  double total = 0.0;
};

/// Everything the objective needs besides z.
struct FingerprintProblem {
  DenoiserModel model;
  WatermarkKey key;
  Anchor anchor;
  LatentCodec codec;
  std::vector<int> grid;  // descending sampling grid

  FingerprintProblem(DenoiserModel m, WatermarkKey k, Anchor a);
  FingerprintProblem(DenoiserModel m, WatermarkKey k, Anchor a, LatentCodec c,
                     std::vector<int> g);
};

struct TotalLoss {
  ad::Var total;
  ad::Var watermark;
  ad::Var reconstruction;
  ad::Var regularization;

  LossParts values() const;
};

/// L_w + lambda_rec * L_rec + lambda_reg * L_reg at z, with Psi recorded
/// through the checkpointed sampler.
TotalLoss total_loss(ad::Tape& tape, const FingerprintProblem& problem, const ad::Var& z,
                     const ad::Var& origin, const OptimConfig& config,
                     const PerceptualProxy& proxy);
LossParts evaluate_loss(const FingerprintProblem& problem, std::span<const double> z,
                        std::span<const double> origin, const OptimConfig& config);

struct FingerprintRecord {
  std::string model_id;
  Anchor anchor;
  std::vector<double> origin;  // x_T, or the random draw for the baseline
  std::vector<double> noise;   // z*
  std::vector<LossParts> trace;
  int iterations_run = 0;
  int best_iteration = 0;
  double target_bit_accuracy = 0.0;
  bool baseline = false;
  OptimConfig config;
  std::string config_hash;
  std::uint64_t record_seed = 0;
};

/// Trajectory-anchored synthesis. The model is only read.
FingerprintRecord synthesize(const FingerprintProblem& problem, const OptimConfig& config);
/// Control: starts from a seeded N(0, I) draw and anchors L_reg to that draw.
FingerprintRecord synthesize_random_baseline(const FingerprintProblem& problem,
                                             const OptimConfig& config);

/// Shared Adam loop from an explicit start and regularization origin.
FingerprintRecord optimize_noise(const FingerprintProblem& problem, const OptimConfig& config,
                                 std::vector<double> start, std::vector<double> origin,
                                 bool baseline);

}  // namespace trajprint
