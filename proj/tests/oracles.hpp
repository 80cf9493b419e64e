#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <cmath>
#include <span>
#include <vector>

#include "asyncfmm/geometry.hpp"
#include "asyncfmm/kernels.hpp"

namespace oracle {

using asyncfmm::Body;
using asyncfmm::Vec3;

inline double factorial(int k) {
  double f = 1.0;
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

//! Legendre polynomials P_0..P_{n-1} at x.
inline std::vector<double> legendre(int n, double x) {
  std::vector<double> p(std::size_t(std::max(n, 2)));
  p[0] = 1.0;
  p[1] = x;
  for (int k = 2; k < n; ++k) p[std::size_t(k)] = ((2 * k - 1) * x * p[std::size_t(k - 1)] - (k - 1) * p[std::size_t(k - 2)]) / k;
  return p;
}

//! Potential at `target` of the sources expanded about `source_center`
//! (multipole) and `target_center` (local), keeping every term of total
//! degree below `order`. This is the exact value a P2M, M2L, L2P chain
//! must reproduce.
inline double truncated_potential(std::span<const Body> sources, const Vec3& source_center,
                                  const Vec3& target_center, const Vec3& target, int order) {
  const Vec3 R0 = target_center - source_center;
  const double r0 = asyncfmm::norm(R0);
  const Vec3 y = target - target_center;
  double phi = 0.0;
  for (const Body& s : sources) {
    const Vec3 u = y - (s.position - source_center);
    const double un = asyncfmm::norm(u);
    if (un == 0.0) {
      phi += s.charge / r0;
      continue;
    }
    const double c = -asyncfmm::dot(u, R0) / (un * r0);
    const auto p = legendre(order, c);
    double term = 0.0;
    for (int n = 0; n < order; ++n) term += std::pow(un, n) / std::pow(r0, n + 1) * p[std::size_t(n)];
    phi += s.charge * term;
  }
  return phi;
}

inline Vec3 truncated_field(std::span<const Body> sources, const Vec3& source_center, const Vec3& target_center,
                            const Vec3& target, int order, double h) {
  Vec3 g;
  for (int d = 0; d < 3; ++d) {
    Vec3 up = target, dn = target;
    up[std::size_t(d)] += h;
    dn[std::size_t(d)] -= h;
    g[std::size_t(d)] = (truncated_potential(sources, source_center, target_center, up, order) -
                         truncated_potential(sources, source_center, target_center, dn, order)) /
                        (2 * h);
  }
  return g;
}

//! Sum over a of c[a] * y^a / a! with powers taken by std::pow.
inline double polynomial(const asyncfmm::Expansion& exp, std::span<const double> c, const Vec3& y) {
  double sum = 0.0;
  for (std::size_t i = 0; i < exp.size(); ++i) {
    const auto& a = exp.alpha(i);
    double term = c[i];
    for (int d = 0; d < 3; ++d) term *= std::pow(y[std::size_t(d)], a[std::size_t(d)]) / factorial(a[std::size_t(d)]);
    sum += term;
  }
  return sum;
}

inline Vec3 polynomial_gradient(const asyncfmm::Expansion& exp, std::span<const double> c, const Vec3& y) {
  Vec3 g;
  for (std::size_t i = 0; i < exp.size(); ++i) {
    const auto& a = exp.alpha(i);
    for (int k = 0; k < 3; ++k) {
      if (a[std::size_t(k)] == 0) continue;
      double term = c[i];
      for (int d = 0; d < 3; ++d) {
        const int e = a[std::size_t(d)] - (d == k ? 1 : 0);
        term *= std::pow(y[std::size_t(d)], e) / factorial(e);
      }
      g[std::size_t(k)] += term;
    }
  }
  return g;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double max_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<Body> ball(asyncfmm::Rng& rng, std::size_t n, const Vec3& center, double radius) {
  std::vector<Body> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p;
    do {
      for (int d = 0; d < 3; ++d) p[std::size_t(d)] = 2 * rng.uniform() - 1;
    } while (asyncfmm::norm2(p) > 1.0);
    out[i].position = center + radius * p;
    out[i].charge = rng.uniform() - 0.3;
    out[i].id = i;
  }
  return out;
}

//! Relative L2 error of `approx` against `exact`.
inline double rel_l2(std::span<const double> approx, std::span<const double> exact) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    num += (approx[i] - exact[i]) * (approx[i] - exact[i]);
    den += exact[i] * exact[i];
  }
  return std::sqrt(num / den);
}

}  // namespace oracle
