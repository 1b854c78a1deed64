#include "trajprint/random.hpp"

#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <cstring>

#include "trajprint/error.hpp"

namespace trajprint {

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::InvalidArgument, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

void append_doubles(std::string& buffer, std::span<const double> values) {
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 7; i >= 0; --i) buffer.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index) {
  const std::string material = "trajprint-seed|" + std::to_string(master) + "|" +
                               std::string(purpose) + "|" + std::to_string(index);
  const std::string hex = sha256_hex(material);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

std::vector<double> Rng::normal_vector(std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = normal();
  return v;
}

std::vector<std::uint8_t> Rng::bits(std::size_t n) {
  std::vector<std::uint8_t> b(n);
  for (auto& x : b) x = uniform() < 0.5 ? 0 : 1;
  return b;
}

std::vector<double> orthonormal_rows(std::uint64_t seed, std::size_t rows, std::size_t dim) {
  require(rows >= 1 && rows <= dim, ErrorCode::InvalidArgument,
          "orthonormal basis needs 1 <= rows <= dim");
  Rng rng(seed);
  std::vector<double> basis(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double* v = basis.data() + r * dim;
    for (;;) {
      for (std::size_t c = 0; c < dim; ++c) v[c] = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t q = 0; q < r; ++q) {
          const double* u = basis.data() + q * dim;
          double dot = 0.0;
          for (std::size_t c = 0; c < dim; ++c) dot += u[c] * v[c];
          for (std::size_t c = 0; c < dim; ++c) v[c] -= dot * u[c];
        }
      }
      double norm = 0.0;
      for (std::size_t c = 0; c < dim; ++c) norm += v[c] * v[c];
      norm = std::sqrt(norm);
      // Redraw on a (measure-zero) near-dependent draw.
      if (norm > 1e-6) {
        for (std::size_t c = 0; c < dim; ++c) v[c] /= norm;
        break;
      }
    }
  }
  return basis;
}

}  // namespace trajprint
