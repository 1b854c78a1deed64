#include "trajprint/watermark.hpp"

#include <algorithm>
#include <cmath>

#include "trajprint/error.hpp"
#include "trajprint/random.hpp"

namespace trajprint {

using ad::Tape;
using ad::Var;

WatermarkKey make_key(std::uint64_t seed, std::size_t bits, std::size_t dim, double strength,
                      double temperature) {
  require(bits >= 1 && bits <= dim, ErrorCode::InvalidArgument,
          "watermark needs 1 <= k <= D, got k = " + std::to_string(bits) +
              ", D = " + std::to_string(dim));
  require(strength > 0.0 && temperature > 0.0, ErrorCode::InvalidArgument,
          "watermark strength and temperature must be positive");
  WatermarkKey key;
  key.seed = seed;
  key.bits = bits;
  key.dim = dim;
  key.strength = strength;
  key.temperature = temperature;
  key.patterns = orthonormal_rows(derive_seed(seed, "watermark-patterns"), bits, dim);
  return key;
}

std::string Message::str() const {
  std::string s;
  s.reserve(bits.size());
  for (auto b : bits) s.push_back(b ? '1' : '0');
  return s;
}

Message Message::parse(const std::string& text) {
  Message m;
  m.bits.reserve(text.size());
  for (char c : text) {
    require(c == '0' || c == '1', ErrorCode::Parse, "message must be a string of 0/1");
    m.bits.push_back(c == '1' ? 1 : 0);
  }
  return m;
}

Message random_message(std::uint64_t seed, std::size_t bits) {
  Rng rng(seed);
  return Message{rng.bits(bits)};
}

namespace {

void check_dims(std::size_t size, const WatermarkKey& key) {
  require(size == key.dim, ErrorCode::DimensionMismatch,
          "vector of size " + std::to_string(size) + " for watermark key of dimension " +
              std::to_string(key.dim));
}

void check_message(const Message& m, std::size_t bits) {
  require(m.size() == bits, ErrorCode::DimensionMismatch,
          "message of " + std::to_string(m.size()) + " bits, expected " + std::to_string(bits));
}

}  // namespace

std::vector<double> embed(std::span<const double> carrier, const Message& message,
                          const WatermarkKey& key) {
  check_dims(carrier.size(), key);
  check_message(message, key.bits);
  std::vector<double> out(carrier.begin(), carrier.end());
  for (std::size_t j = 0; j < key.bits; ++j) {
    const auto p = key.pattern(j);
    double proj = 0.0;
    for (std::size_t i = 0; i < key.dim; ++i) proj += p[i] * carrier[i];
    const double target = message.bits[j] ? key.strength : -key.strength;
    for (std::size_t i = 0; i < key.dim; ++i) out[i] += (target - proj) * p[i];
  }
  return out;
}

Anchor make_anchor(std::span<const double> carrier, const Message& message,
                   const WatermarkKey& key) {
  Anchor a;
  a.carrier.assign(carrier.begin(), carrier.end());
  a.watermarked = embed(carrier, message, key);
  a.message = message;
  a.key_seed = key.seed;
  return a;
}

std::vector<double> decode_soft(std::span<const double> image, const WatermarkKey& key) {
  check_dims(image.size(), key);
  std::vector<double> logits(key.bits);
  for (std::size_t j = 0; j < key.bits; ++j) {
    const auto p = key.pattern(j);
    double acc = 0.0;
    for (std::size_t i = 0; i < key.dim; ++i) acc += p[i] * image[i];
    logits[j] = key.temperature * acc;
  }
  return logits;
}

Var decode_soft(Tape& tape, const Var& image, const WatermarkKey& key) {
  check_dims(image.size(), key);
  return scale(key.temperature,
               matvec(tape.constant(key.patterns, ad::Shape{key.bits, key.dim}), image));
}

Message decode_hard(std::span<const double> image, const WatermarkKey& key) {
  const auto logits = decode_soft(image, key);
  Message m;
  m.bits.reserve(logits.size());
  for (double l : logits) m.bits.push_back(l > 0.0 ? 1 : 0);
  return m;
}

double bce_loss(std::span<const double> logits, const Message& message) {
  check_message(message, logits.size());
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double u = message.bits[j] ? -logits[j] : logits[j];
    // softplus(u) = log(1 + e^u)
    total += std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
  }
  return total / static_cast<double>(logits.size());
}

Var bce_loss(Tape& tape, const Var& logits, const Message& message) {
  check_message(message, logits.size());
  const std::size_t k = logits.size();
  // u_j = -s_j * logit_j with s_j = 2 m_j - 1, then softplus(u_j) = lse(0, u_j).
  std::vector<double> flip(k);
  for (std::size_t j = 0; j < k; ++j) flip[j] = message.bits[j] ? -1.0 : 1.0;
  Var u = logits * tape.constant(std::move(flip));
  Var zero = tape.constant({0.0});
  std::vector<Var> terms;
  terms.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> e(k, 0.0);
    e[j] = 1.0;
    const Var pair[2] = {zero, inner(u, tape.constant(std::move(e)))};
    terms.push_back(log_sum_exp(ad::concat(pair)));
  }
  return inner(ad::concat(terms), tape.constant(std::vector<double>(k, 1.0 / static_cast<double>(k))));
}

}  // namespace trajprint
