#include <cmath>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "doctest.h"
#include "support.hpp"
#include "trajprint/error.hpp"
#include "trajprint/verify.hpp"

using namespace trajprint;

namespace {

// P(T > t) by integrating the Student-t density over [t, inf).
double integrated_upper_tail(double t, double dof) {
  const double c = std::exp(boost::math::lgamma((dof + 1.0) / 2.0) -
                            boost::math::lgamma(dof / 2.0)) /
                   std::sqrt(dof * M_PI);
  auto density = [&](double x) { return c * std::pow(1.0 + x * x / dof, -(dof + 1.0) / 2.0); };
  boost::math::quadrature::exp_sinh<double> integrator;
  const double tail = integrator.integrate([&](double u) { return density(std::abs(t) + u); },
                                           0.0, std::numeric_limits<double>::infinity());
  return t >= 0.0 ? tail : 1.0 - tail;
}

std::vector<double> samples_with(double mean, double sd, std::size_t n) {
  // symmetric construction with exact mean and unbiased sd
  std::vector<double> s(n, mean);
  const double a = sd * std::sqrt(static_cast<double>(n - 1) / 2.0);
  s[0] += a;
  s[1] -= a;
  return s;
}

}  // namespace

TEST_CASE("bit accuracy") {
  const Message m{{1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 1, 0, 1}};
  CHECK(bit_accuracy(m, m) == 1.0);
  Message one = m;
  one.bits[5] = 1 - one.bits[5];
  CHECK(bit_accuracy(m, one) == 0.9375);
  Message comp = m;
  for (auto& b : comp.bits) b = 1 - b;
  CHECK(bit_accuracy(m, comp) == 0.0);
  CHECK_THROWS_AS(bit_accuracy(m, Message{{1, 0}}), Error);

  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Message a{rng.bits(16)}, b{rng.bits(16)};
    CHECK(bit_accuracy(a, b) == bit_accuracy(b, a));
    Message pa = a, pb = b;
    std::reverse(pa.bits.begin(), pa.bits.end());
    std::reverse(pb.bits.begin(), pb.bits.end());
    CHECK(bit_accuracy(pa, pb) == bit_accuracy(a, b));
  }
}

TEST_CASE("incomplete beta special cases") {
  CHECK(regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  // I_x(1, 1) = x and I_x(a, 1) = x^a
  CHECK(regularized_incomplete_beta(1.0, 1.0, 0.37) == doctest::Approx(0.37).epsilon(1e-14));
  CHECK(regularized_incomplete_beta(3.5, 1.0, 0.6) ==
        doctest::Approx(std::pow(0.6, 3.5)).epsilon(1e-13));
  // symmetry I_x(a, b) = 1 - I_{1-x}(b, a)
  CHECK(regularized_incomplete_beta(2.5, 4.0, 0.3) ==
        doctest::Approx(1.0 - regularized_incomplete_beta(4.0, 2.5, 0.7)).epsilon(1e-13));
}

TEST_CASE("Student-t tail against Boost and against quadrature") {
  for (double dof : {1.0, 2.0, 3.0, 4.0, 9.0, 19.0, 40.0}) {
    const boost::math::students_t dist(dof);
    for (double t : {-6.0, -1.5, -0.2, 0.0, 0.3, 1.0, 2.2, 5.0, 30.0}) {
      const double expected = boost::math::cdf(boost::math::complement(dist, t));
      CHECK(std::abs(student_t_upper_tail(t, dof) - expected) <= 1e-12);
    }
  }
  // N <= 5: one-sample p-values against direct integration of the density
  Rng rng(12);
  for (std::size_t n = 2; n <= 5; ++n) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s(n);
      for (double& v : s) v = 0.55 + 0.1 * rng.normal();
      const auto r = t_test(s);
      CHECK(std::abs(r.p - integrated_upper_tail(r.t, static_cast<double>(n - 1))) <= 1e-9);
    }
  }
}

TEST_CASE("t-test reference values") {
  // oracle: mpmath regularized incomplete beta, 30 digits
  auto big = t_test(samples_with(0.998, 0.005, 20));
  CHECK(big.t == doctest::Approx(445.424741117958096663).epsilon(1e-10));
  CHECK(big.p < 1e-12);
  CHECK(big.p == doctest::Approx(5.98262857779074583023e-40).epsilon(1e-8));
  auto small = t_test(samples_with(0.52, 0.1, 20));
  CHECK(small.t == doctest::Approx(0.894427190999916623).epsilon(1e-12));
  CHECK(small.p == doctest::Approx(0.191142067683715308245).epsilon(1e-11));
  CHECK(small.stddev == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(student_t_upper_tail(1.3, 1.0) == doctest::Approx(0.20871440016015271031).epsilon(1e-12));
  CHECK(student_t_upper_tail(2.5, 3.0) == doctest::Approx(0.043853323504032777595).epsilon(1e-12));
  CHECK(student_t_upper_tail(-1.1, 4.0) == doctest::Approx(0.83345817522622301259).epsilon(1e-12));

  const auto two = t_test(samples_with(0.52, 0.1, 20), 0.5, Tail::TwoSided);
  CHECK(two.p == doctest::Approx(2.0 * small.p).epsilon(1e-12));
}

TEST_CASE("t-test degenerate rule and errors") {
  const std::vector<double> half(5, 0.5), high(5, 0.9), low(5, 0.1);
  auto r = t_test(half);
  CHECK(r.t == 0.0);
  CHECK(r.p == 0.5);
  CHECK(t_test(high).p == 0.0);
  CHECK(std::isinf(t_test(high).t));
  CHECK(t_test(low).p == 1.0);
  const std::vector<double> one{0.9};
  CHECK_THROWS_AS(t_test(one), Error);
}

TEST_CASE("false-positive rate under H0") {
  const double rate = null_rejection_rate(7, 10'000, 20, 16, 1e-3);
  CHECK(rate <= 0.002);
}

TEST_CASE("verify queries each record once through the closure") {
  const auto model = DenoiserModel::analytic_gmm(random_gmm(5, 16, 4, 5.0, 25.0), 25);
  const auto key = make_key(9, 16, 16, 0.5, 8.0);
  std::vector<FingerprintRecord> records;
  for (std::uint64_t r = 0; r < 4; ++r) {
    Rng rng(derive_seed(r, "carrier"));
    auto carrier = rng.normal_vector(16);
    for (double& v : carrier) v *= 5.0;
    const FingerprintProblem problem(model, key, make_anchor(carrier, random_message(r, 16), key));
    OptimConfig config;
    config.seed = r;
    records.push_back(synthesize(problem, config));
  }
  int calls = 0;
  const auto inner = black_box(model);
  SamplingClosure counted = [&](std::span<const double> z) {
    ++calls;
    return inner(z);
  };
  const auto report = verify(counted, model.model_id(), records, key);
  CHECK(calls == 4);
  CHECK(report.n == 4);
  CHECK(report.verdict == Verdict::Infringing);
  CHECK(report.mean >= 0.95);
  for (double ba : report.bit_accuracies) CHECK((ba >= 0.0 && ba <= 1.0));

  const auto back = VerificationReport::from_json(report.to_json());
  CHECK(back.to_json() == report.to_json());

  CHECK_THROWS_AS(verify(counted, "x", std::span<const FingerprintRecord>(records).first(1), key),
                  Error);
  CHECK_THROWS_AS(verify(counted, "x", std::span<const FingerprintRecord>(), key), Error);

  const DenoiserModel models[1] = {model};
  const std::vector<FingerprintRecord> sets[1] = {records};
  const auto matrix = cross_matrix(models, sets, key);
  REQUIRE(matrix.cells.size() == 1);
  CHECK(matrix.cells[0][0].verdict == Verdict::Infringing);
  CHECK(matrix.to_csv().find(model.model_id()) != std::string::npos);
}
