#pragma once

// Analytic spread-spectrum codec: k orthonormal carrier patterns, antipodal
// embedding after projecting out the host's component in the pattern span,
// and linear correlation decoding.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajprint/autodiff.hpp"

namespace trajprint {

struct WatermarkKey {
  std::uint64_t seed = 0;
  std::size_t bits = 16;      // k
  std::size_t dim = 16;       // D
  double strength = 0.5;      // beta
  double temperature = 8.0;   // kappa
  std::vector<double> patterns;  // k x D, orthonormal rows

  std::span<const double> pattern(std::size_t j) const {
    return std::span<const double>(patterns).subspan(j * dim, dim);
  }
};

WatermarkKey make_key(std::uint64_t seed, std::size_t bits, std::size_t dim, double strength,
                      double temperature);

struct Message {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  /// Rendered as '0'/'1' characters, bit 0 first.
  std::string str() const;
  static Message parse(const std::string& text);
  friend bool operator==(const Message&, const Message&) = default;
};

Message random_message(std::uint64_t seed, std::size_t bits);

struct Anchor {
  std::vector<double> carrier;      // I_0
  std::vector<double> watermarked;  // I_w
  Message message;
  std::uint64_t key_seed = 0;
};

/// I_w = (I_0 minus its projection on the pattern span) + beta * sum_j (2 m_j - 1) p_j.
std::vector<double> embed(std::span<const double> carrier, const Message& message,
                          const WatermarkKey& key);
Anchor make_anchor(std::span<const double> carrier, const Message& message,
                   const WatermarkKey& key);

/// logits_j = kappa * <I, p_j>.
std::vector<double> decode_soft(std::span<const double> image, const WatermarkKey& key);
ad::Var decode_soft(ad::Tape& tape, const ad::Var& image, const WatermarkKey& key);
/// Bit j is 1 iff logit_j > 0; a zero logit decodes to 0.
Message decode_hard(std::span<const double> image, const WatermarkKey& key);

/// Mean over bits of the logistic cross-entropy, each term evaluated as a
/// stabilized softplus (log-sum-exp over {0, -s_j * logit_j}).
double bce_loss(std::span<const double> logits, const Message& message);
ad::Var bce_loss(ad::Tape& tape, const ad::Var& logits, const Message& message);

}  // namespace trajprint
