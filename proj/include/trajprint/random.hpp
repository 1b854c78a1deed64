#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trajprint {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Hashes a sequence of doubles by their exact bit patterns.
void append_doubles(std::string& buffer, std::span<const double> values);

/// Per-purpose seed derivation: first 8 bytes of
/// SHA-256("trajprint-seed|<master>|<purpose>|<index>") read big-endian.
std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::vector<double> normal_vector(std::size_t n);
  std::vector<std::uint8_t> bits(std::size_t n);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Rows of a seeded random orthonormal basis (modified Gram-Schmidt, two
/// passes, over Gaussian draws). Returns `rows` x `dim` row-major.
std::vector<double> orthonormal_rows(std::uint64_t seed, std::size_t rows, std::size_t dim);

}  // namespace trajprint
