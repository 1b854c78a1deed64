#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "trajprint/error.hpp"
#include "trajprint/watermark.hpp"

using namespace trajprint;

namespace {

std::vector<double> logits_of(const WatermarkKey& key, std::span<const double> image) {
  return decode_soft(image, key);
}

}  // namespace

TEST_CASE("keys are deterministic with orthonormal patterns") {
  const auto key = make_key(77, 16, 16, 0.5, 8.0);
  const auto again = make_key(77, 16, 16, 0.5, 8.0);
  CHECK(key.patterns == again.patterns);
  CHECK(make_key(78, 16, 16, 0.5, 8.0).patterns != key.patterns);
  double off = 0.0, diag = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      const double g = testing::dot(key.pattern(i), key.pattern(j));
      if (i == j) {
        diag = std::max(diag, std::abs(g - 1.0));
      } else {
        off = std::max(off, std::abs(g));
      }
    }
  }
  CHECK(diag <= 1e-10);
  CHECK(off <= 1e-10);
  CHECK_THROWS_AS(make_key(1, 17, 16, 0.5, 8.0), Error);
  CHECK_THROWS_AS(make_key(1, 8, 16, 0.0, 8.0), Error);
  CHECK_THROWS_AS(make_key(1, 8, 16, 0.5, -1.0), Error);
}

TEST_CASE("embed then decode is exact on 1000 random cases and every payload") {
  Rng rng(2024);
  for (std::size_t bits = 1; bits <= 16; ++bits) {
    const auto key = make_key(rng.uniform_int(0, 1 << 30), bits, 16, 0.5, 8.0);
    const int cases = bits == 16 ? 1000 : 100;
    for (int c = 0; c < cases; ++c) {
      auto carrier = rng.normal_vector(16);
      for (double& v : carrier) v *= 10.0;
      const Message m{rng.bits(bits)};
      REQUIRE(decode_hard(embed(carrier, m, key), key) == m);
    }
  }
}

TEST_CASE("clean embeds decode to logits of exactly +-kappa beta") {
  Rng rng(5);
  const auto key = make_key(3, 12, 16, 0.5, 8.0);
  const auto carrier = rng.normal_vector(16);
  const Message ones{std::vector<std::uint8_t>(12, 1)};
  const auto iw = embed(carrier, ones, key);
  for (std::size_t j = 0; j < 12; ++j) {
    CHECK(testing::dot(iw, key.pattern(j)) == doctest::Approx(0.5).epsilon(1e-12));
  }
  const Message m{rng.bits(12)};
  const auto logits = logits_of(key, embed(carrier, m, key));
  for (std::size_t j = 0; j < 12; ++j) {
    CHECK(logits[j] == doctest::Approx(m.bits[j] ? 4.0 : -4.0).epsilon(1e-12));
  }
}

TEST_CASE("embedding distortion") {
  // I_w - I_0 lies in the pattern span with coordinates beta s_j - <I_0, p_j>.
  // Averaged over a message and its complement the cross term cancels,
  // leaving ||proj(I_0)||^2 + k beta^2.
  Rng rng(9);
  const auto key = make_key(4, 10, 16, 0.5, 8.0);
  auto distortion = [&](std::span<const double> carrier, const Message& m) {
    const auto iw = embed(carrier, m, key);
    double d = 0.0;
    for (std::size_t i = 0; i < 16; ++i) d += (iw[i] - carrier[i]) * (iw[i] - carrier[i]);
    return d;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const auto carrier = rng.normal_vector(16);
    Message m{rng.bits(10)};
    Message flipped = m;
    for (auto& b : flipped.bits) b = 1 - b;
    double proj = 0.0, exact = 0.0;
    for (std::size_t j = 0; j < 10; ++j) {
      const double c = testing::dot(carrier, key.pattern(j));
      proj += c * c;
      const double e = 0.5 * (m.bits[j] ? 1.0 : -1.0) - c;
      exact += e * e;
    }
    CHECK(distortion(carrier, m) == doctest::Approx(exact).epsilon(1e-12));
    const double mean = 0.5 * (distortion(carrier, m) + distortion(carrier, flipped));
    CHECK(mean == doctest::Approx(proj + 10 * 0.25).epsilon(1e-12));
  }
}

TEST_CASE("zero image decodes to all zeros") {
  const auto key = make_key(1, 16, 16, 0.5, 8.0);
  const std::vector<double> zero(16, 0.0);
  for (double l : decode_soft(zero, key)) CHECK(l == 0.0);
  CHECK(decode_hard(zero, key) == Message{std::vector<std::uint8_t>(16, 0)});
}

TEST_CASE("dimension mismatches are rejected") {
  const auto key = make_key(1, 8, 16, 0.5, 8.0);
  const std::vector<double> short_image(15, 1.0);
  CHECK_THROWS_AS(decode_soft(short_image, key), Error);
  CHECK_THROWS_AS(embed(short_image, Message{std::vector<std::uint8_t>(8, 0)}, key), Error);
  const std::vector<double> ok(16, 1.0);
  CHECK_THROWS_AS(embed(ok, Message{std::vector<std::uint8_t>(7, 0)}, key), Error);
}

TEST_CASE("bit-error rate under Gaussian noise matches Phi(-beta/sigma)") {
  // erfc oracle: Phi(-x) = erfc(x / sqrt 2) / 2
  const auto key = make_key(11, 16, 16, 0.5, 8.0);
  Rng rng(31);
  for (double sigma : {0.1, 0.5}) {
    const double p = 0.5 * std::erfc((0.5 / sigma) / std::sqrt(2.0));
    const std::size_t trials = 100'000;
    std::size_t errors = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const Message m{rng.bits(16)};
      auto iw = embed(rng.normal_vector(16), m, key);
      for (double& v : iw) v += sigma * rng.normal();
      const auto got = decode_hard(iw, key);
      for (std::size_t j = 0; j < 16; ++j) errors += got.bits[j] != m.bits[j];
    }
    const double n = 16.0 * trials;
    const double expected = p * n;
    // 3 binomial standard deviations plus one count of slack for p ~ 3e-7
    CHECK(std::abs(errors - expected) <= 3.0 * std::sqrt(n * p * (1.0 - p)) + 1.0);
  }
}

TEST_CASE("bce loss") {
  const Message m{{1, 0, 1, 1}};
  const std::vector<double> zero(4, 0.0);
  CHECK(bce_loss(zero, m) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> perfect{4.0, -4.0, 4.0, 4.0};
  // softplus(-4) = log(1 + e^-4)
  CHECK(bce_loss(perfect, m) == doctest::Approx(0.018149927917809738).epsilon(1e-14));
  auto flipped = perfect;
  flipped[2] = -4.0;
  CHECK(bce_loss(flipped, m) > bce_loss(perfect, m));
  const std::vector<double> huge{800.0, -800.0, -800.0, 800.0};
  const double l = bce_loss(huge, m);
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(200.0).epsilon(1e-12));
  const std::vector<double> wrong_length(3, 0.0);
  CHECK_THROWS_AS(bce_loss(wrong_length, m), Error);
}

TEST_CASE("tape decode and loss agree with the plain versions and with differences") {
  const auto key = make_key(8, 16, 16, 0.5, 8.0);
  Rng rng(14);
  const Message m{rng.bits(16)};
  const auto x0 = rng.normal_vector(16);
  ad::Tape tape;
  ad::Var x = tape.leaf(x0);
  ad::Var logits = decode_soft(tape, x, key);
  CHECK(testing::max_abs_diff(logits.value(), decode_soft(x0, key)) <= 1e-14);
  ad::Var loss = bce_loss(tape, logits, m);
  CHECK(loss.scalar() == doctest::Approx(bce_loss(decode_soft(x0, key), m)).epsilon(1e-14));
  const ad::Var wrt[1] = {x};
  const auto g = tape.backward(loss, wrt)[0];
  auto f = [&](std::span<const double> v) { return bce_loss(decode_soft(v, key), m); };
  for (int probe = 0; probe < 5; ++probe) {
    const auto u = testing::unit_direction(rng, 16);
    CHECK(testing::dot(g, u) == doctest::Approx(testing::directional_fd(f, x0, u, 1e-5)).epsilon(1e-6));
  }
  // linearity
  std::vector<double> sum(16);
  const auto y0 = rng.normal_vector(16);
  for (std::size_t i = 0; i < 16; ++i) sum[i] = 2.0 * x0[i] + y0[i];
  const auto a = decode_soft(x0, key), b = decode_soft(y0, key), c = decode_soft(sum, key);
  for (std::size_t j = 0; j < 16; ++j) CHECK(c[j] == doctest::Approx(2.0 * a[j] + b[j]).epsilon(1e-12));
}

TEST_CASE("messages render and parse as bit strings") {
  const Message m{{1, 0, 0, 1, 1}};
  CHECK(m.str() == "10011");
  CHECK(Message::parse("10011") == m);
  CHECK_THROWS_AS(Message::parse("10a1"), Error);
}
