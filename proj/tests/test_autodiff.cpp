#include <cmath>
#include <cstring>
#include <numbers>

#include "doctest.h"
#include "support.hpp"
#include "trajprint/autodiff.hpp"
#include "trajprint/error.hpp"
#include "trajprint/random.hpp"

using namespace trajprint;
using namespace trajprint::ad;

namespace {

// Scalar function of the leaf values, built on a fresh tape.
using Builder = std::function<Var(Tape&, const Var&)>;

double eval(const Builder& f, std::span<const double> x, Shape shape) {
  Tape tape;
  Var v = tape.leaf({x.begin(), x.end()}, shape);
  return f(tape, v).scalar();
}

std::vector<double> grad(const Builder& f, std::span<const double> x, Shape shape) {
  Tape tape;
  Var v = tape.leaf({x.begin(), x.end()}, shape);
  Var loss = f(tape, v);
  const Var wrt[1] = {v};
  return tape.backward(loss, wrt)[0];
}

// Max over coordinates of |analytic - central difference| / max(|fd|, 1).
double fd_error(const Builder& f, std::vector<double> x, Shape shape, double h = 1e-5) {
  const auto g = grad(f, x, shape);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = eval(f, x, shape);
    x[i] = keep - h;
    const double down = eval(f, x, shape);
    x[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(g[i] - fd) / std::max(std::abs(fd), 1.0));
  }
  return worst;
}

std::vector<double> uniform_points(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> x(n);
  for (double& v : x) v = lo + (hi - lo) * rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("multiply x*x at 3 has gradient 6") {
  Tape tape;
  Var x = tape.leaf({3.0});
  Var y = x * x;
  const Var wrt[1] = {x};
  CHECK(y.scalar() == 9.0);
  CHECK(tape.backward(y, wrt)[0][0] == 6.0);
}

TEST_CASE("log_sum_exp of (0,0) is ln 2 with gradient (1/2, 1/2)") {
  Tape tape;
  Var v = tape.leaf({0.0, 0.0});
  Var y = log_sum_exp(v);
  const Var wrt[1] = {v};
  const auto g = tape.backward(y, wrt)[0];
  CHECK(y.scalar() == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(g[0] == 0.5);
  CHECK(g[1] == 0.5);
}

TEST_CASE("log_sum_exp is stable for large inputs") {
  Tape tape;
  Var v = tape.leaf({1000.0, 1000.0});
  CHECK(log_sum_exp(v).scalar() == doctest::Approx(1000.0 + std::numbers::ln2));
}

TEST_CASE("loss gradient with respect to itself is one") {
  Tape tape;
  Var x = tape.leaf({2.0});
  Var y = exp(x);
  const Var wrt[1] = {y};
  // y is not a leaf; the identity holds for a scalar leaf loss.
  CHECK_THROWS_AS(tape.backward(y, wrt), Error);
  const Var self[1] = {x};
  CHECK(tape.backward(x, self)[0][0] == 1.0);
}

TEST_CASE("backward of a constant-only loss is zero") {
  Tape tape;
  Var x = tape.leaf({1.0, 2.0});
  Var c = tape.constant({4.0, 5.0});
  Var y = squared_norm(c);
  const Var wrt[1] = {x};
  const auto g = tape.backward(y, wrt)[0];
  CHECK(g == std::vector<double>{0.0, 0.0});
}

TEST_CASE("gradient of inner(x, c) is c") {
  Tape tape;
  Var x = tape.leaf({1.0, -2.0, 0.5});
  const std::vector<double> cv{0.3, 0.7, -1.1};
  Var c = tape.constant(cv);
  Var y = inner(x, c);
  const Var wrt[1] = {x};
  CHECK(tape.backward(y, wrt)[0] == cv);
}

TEST_CASE("every primitive matches central differences to 1e-6") {
  Rng rng(11);
  const std::size_t n = 5;
  const auto c = rng.normal_vector(n);
  auto reduce = [c](Tape& t, const Var& v) { return inner(t.constant(c), v); };

  SUBCASE("add, subtract, multiply") {
    const auto other = rng.normal_vector(n);
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = uniform_points(rng, n, -3.0, 3.0);
      CHECK(fd_error([&](Tape& t, const Var& v) { return reduce(t, v + t.constant(other)); }, x,
                     {n, 1}) <= 1e-6);
      CHECK(fd_error([&](Tape& t, const Var& v) { return reduce(t, t.constant(other) - v); }, x,
                     {n, 1}) <= 1e-6);
      CHECK(fd_error([&](Tape& t, const Var& v) { return reduce(t, v * v); }, x, {n, 1}) <= 1e-6);
    }
  }
  SUBCASE("scalar multiply in both arguments") {
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = uniform_points(rng, n, -3.0, 3.0);
      // first coordinate scales the rest
      CHECK(fd_error(
                [&](Tape& t, const Var& v) {
                  Var s = inner(v, t.constant({1.0, 0.0, 0.0, 0.0, 0.0}));
                  return reduce(t, scale(s, v));
                },
                x, {n, 1}) <= 1e-6);
    }
  }
  SUBCASE("matvec in both arguments") {
    const std::size_t rows = 3;
    const auto m = rng.normal_vector(rows * n);
    const auto y = rng.normal_vector(n);
    const auto w = rng.normal_vector(rows);
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = uniform_points(rng, n, -3.0, 3.0);
      CHECK(fd_error(
                [&](Tape& t, const Var& v) {
                  return inner(t.constant(w), matvec(t.constant(m, {rows, n}), v));
                },
                x, {n, 1}) <= 1e-6);
      const auto mx = uniform_points(rng, rows * n, -3.0, 3.0);
      CHECK(fd_error(
                [&](Tape& t, const Var& v) {
                  return inner(t.constant(w), matvec(v, t.constant(y)));
                },
                mx, {rows, n}) <= 1e-6);
    }
  }
  SUBCASE("exp, log, tanh, sigmoid") {
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = uniform_points(rng, n, -3.0, 3.0);
      const auto pos = uniform_points(rng, n, 0.1, 3.0);
      CHECK(fd_error([&](Tape& t, const Var& v) { return reduce(t, exp(v)); }, x, {n, 1}) <= 1e-6);
      CHECK(fd_error([&](Tape& t, const Var& v) { return reduce(t, log(v)); }, pos, {n, 1}) <=
            1e-6);
      CHECK(fd_error([&](Tape& t, const Var& v) { return reduce(t, tanh(v)); }, x, {n, 1}) <= 1e-6);
      CHECK(fd_error([&](Tape& t, const Var& v) { return reduce(t, sigmoid(v)); }, x, {n, 1}) <=
            1e-6);
    }
  }
  SUBCASE("log_sum_exp, squared_norm, inner, concat") {
    const auto w = rng.normal_vector(2 * n);
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = uniform_points(rng, n, -3.0, 3.0);
      CHECK(fd_error([](Tape&, const Var& v) { return log_sum_exp(v); }, x, {n, 1}) <= 1e-6);
      CHECK(fd_error([](Tape&, const Var& v) { return squared_norm(v); }, x, {n, 1}) <= 1e-6);
      CHECK(fd_error([](Tape&, const Var& v) { return inner(v, tanh(v)); }, x, {n, 1}) <= 1e-6);
      CHECK(fd_error(
                [&](Tape& t, const Var& v) {
                  const Var parts[2] = {exp(v), v};
                  Var cat = concat(parts);
                  return inner(t.constant(w), cat);
                },
                x, {n, 1}) <= 1e-6);
    }
  }
}

TEST_CASE("shape mismatches name the op and shapes") {
  Tape tape;
  Var a = tape.leaf({1.0, 2.0});
  Var b = tape.leaf({1.0, 2.0, 3.0});
  try {
    (void)(a + b);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("2x1") != std::string::npos);
    CHECK(msg.find("3x1") != std::string::npos);
  }
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  CHECK_THROWS_AS(tape.leaf({std::nan("")}), Error);
  Var neg = tape.leaf({-1.0});
  try {
    (void)log(neg);
    FAIL("expected a non-finite error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
  }
  Var big = tape.leaf({1000.0});
  CHECK_THROWS_AS(exp(big), Error);
}

TEST_CASE("backward rejects non-scalar losses and foreign tensors") {
  Tape tape, other;
  Var x = tape.leaf({1.0, 2.0});
  Var y = other.leaf({1.0});
  const Var wrt[1] = {x};
  try {
    (void)tape.backward(x * x, wrt);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  const Var foreign[1] = {y};
  try {
    (void)tape.backward(squared_norm(x), foreign);
    FAIL("expected a tape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotOnTape);
  }
  CHECK_THROWS_AS(x + y, Error);
}

TEST_CASE("record grows the tape by one and is bit-reproducible") {
  Rng rng(3);
  const auto v = rng.normal_vector(8);
  auto run = [&] {
    Tape tape;
    Var x = tape.leaf(v);
    const std::size_t before = tape.size();
    Var y = tanh(x);
    CHECK(tape.size() == before + 1);
    return log_sum_exp(y * x).scalar();
  };
  const double a = run(), b = run();
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);
}

TEST_CASE("checkpointing matches plain recording") {
  Rng rng(5);
  const std::size_t n = 16;
  const auto m = rng.normal_vector(n * n);
  std::vector<StepFn> steps;
  for (int i = 0; i < 25; ++i) {
    const double s = 0.2 + 0.01 * i;
    steps.emplace_back([m, s, n](Tape& t, const Var& x) {
      return tanh(scale(s, matvec(t.constant(m, {n, n}), x))) + x;
    });
  }
  const auto x0 = rng.normal_vector(n);
  auto gradient = [&](std::size_t segment, CheckpointStats* stats) {
    Tape tape;
    Var x = tape.leaf(x0);
    Var out = segment == 0 ? chain(tape, x, steps) : with_checkpointing(tape, x, steps, segment, stats);
    const Var wrt[1] = {x};
    std::vector<double> value = out.value();
    Var loss = squared_norm(out);
    return std::pair{value, tape.backward(loss, wrt)[0]};
  };
  const auto [plain_value, plain] = gradient(0, nullptr);

  SUBCASE("one segment is bitwise equal") {
    const auto [value, g] = gradient(25, nullptr);
    CHECK(value == plain_value);
    CHECK(g == plain);
  }
  SUBCASE("segment length 1 within 1e-12") {
    const auto [value, g] = gradient(1, nullptr);
    CHECK(testing::max_abs_diff(value, plain_value) == 0.0);
    CHECK(testing::max_abs_diff(g, plain) / testing::norm(plain) <= 1e-12);
  }
  SUBCASE("segment length 5 stores at most 5 + 5 states") {
    CheckpointStats stats;
    const auto [value, g] = gradient(5, &stats);
    CHECK(stats.segments == 5);
    CHECK(stats.stored_states + stats.peak_recomputed <= 10);
    CHECK(testing::max_abs_diff(g, plain) / testing::norm(plain) <= 1e-10);
  }
  SUBCASE("uneven final segment") {
    const auto [value, g] = gradient(7, nullptr);
    CHECK(testing::max_abs_diff(g, plain) / testing::norm(plain) <= 1e-10);
  }
  SUBCASE("segment length 0 is rejected") {
    Tape tape;
    Var x = tape.leaf(x0);
    CHECK_THROWS_AS(with_checkpointing(tape, x, steps, 0), Error);
  }
}
