#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "trajprint/random.hpp"

namespace testing {

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central difference of f along u at x.
inline double directional_fd(const std::function<double(std::span<const double>)>& f,
                             std::span<const double> x, std::span<const double> u, double h) {
  std::vector<double> p(x.begin(), x.end()), m(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] += h * u[i];
    m[i] -= h * u[i];
  }
  return (f(p) - f(m)) / (2.0 * h);
}

inline std::vector<double> unit_direction(trajprint::Rng& rng, std::size_t n) {
  auto u = rng.normal_vector(n);
  const double s = norm(u);
  for (double& x : u) x /= s;
  return u;
}

}  // namespace testing
