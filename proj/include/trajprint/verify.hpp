#pragma once

// Black-box ownership verification: query a suspect with each fingerprint
// noise, decode the watermark, and test mean bit accuracy against chance.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajprint/diffusion.hpp"
#include "trajprint/fingerprint.hpp"
#include "trajprint/watermark.hpp"

namespace trajprint {

/// 1 - (1/L) sum |m_j - m'_j|.
double bit_accuracy(const Message& a, const Message& b);

/// Regularized incomplete beta I_x(a, b) by Lentz continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
/// P(T > t) for Student-t with `dof` degrees of freedom.
double student_t_upper_tail(double t, double dof);

enum class Tail { Upper, TwoSided };

struct TTestResult {
  double mean = 0.0;
  double stddev = 0.0;  // divisor N - 1
  double t = 0.0;       // +-infinity under the zero-variance rule
  double p = 0.5;
  std::size_t n = 0;
};

/// One-sample t-test of the mean against mu0. With zero sample variance,
/// p is 0 (mean above mu0), 1 (below) or 0.5 with t = 0 (equal).
TTestResult t_test(std::span<const double> samples, double mu0 = 0.5, Tail tail = Tail::Upper);

/// One atomic generation call: noise in, image out.
using SamplingClosure = std::function<std::vector<double>(std::span<const double>)>;

/// Closure over a model's default deterministic sampler and a decoder.
SamplingClosure black_box(const DenoiserModel& model, LatentCodec codec);
SamplingClosure black_box(const DenoiserModel& model);

enum class Verdict { Infringing, NotProven };
std::string verdict_name(Verdict v);

struct VerificationReport {
  std::string suspect_id;
  std::vector<std::string> record_models;  // fingerprint source per record
  std::vector<double> bit_accuracies;
  double mean = 0.0;
  double stddev = 0.0;
  double t = 0.0;
  double p = 0.5;
  double alpha = 1e-3;
  Tail tail = Tail::Upper;
  Verdict verdict = Verdict::NotProven;
  std::size_t n = 0;

  nlohmann::json to_json() const;
  static VerificationReport from_json(const nlohmann::json& j);
};

/// Calls `suspect` exactly once per record, in record order.
VerificationReport verify(const SamplingClosure& suspect, const std::string& suspect_id,
                          std::span<const FingerprintRecord> records, const WatermarkKey& key,
                          double alpha = 1e-3, Tail tail = Tail::Upper);

struct CrossMatrix {
  std::vector<std::string> model_ids;
  /// cells[row][col]: row = verifying model, col = fingerprint source.
  std::vector<std::vector<VerificationReport>> cells;

  nlohmann::json to_json() const;
  /// Table layout: one row per verifier, "BA (p)" per source column.
  std::string to_csv() const;
};

/// `workers` > 1 evaluates cells on a thread pool; output order is fixed.
CrossMatrix cross_matrix(std::span<const DenoiserModel> models,
                         std::span<const std::vector<FingerprintRecord>> record_sets,
                         const WatermarkKey& key, double alpha = 1e-3, Tail tail = Tail::Upper,
                         std::size_t workers = 1);

/// Fraction of `trials` simulated verifications of N uniformly random k-bit
/// decodes that reject H0 at `alpha`.
double null_rejection_rate(std::uint64_t seed, std::size_t trials, std::size_t records,
                           std::size_t bits, double alpha);

}  // namespace trajprint
