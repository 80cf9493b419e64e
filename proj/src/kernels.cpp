#include "asyncfmm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace asyncfmm {

Expansion::Expansion(int order) : order_(order) {
  const std::size_t n = coeff_count(order);
  alpha_.reserve(n);
  lookup_.assign(std::size_t(order) * order * order, -1);
  for (int deg = 0; deg < order; ++deg)
    for (int ax = deg; ax >= 0; --ax)
      for (int ay = deg - ax; ay >= 0; --ay) {
        const int az = deg - ax - ay;
        lookup_[(std::size_t(ax) * order + ay) * order + az] = int(alpha_.size());
        alpha_.push_back({std::uint8_t(ax), std::uint8_t(ay), std::uint8_t(az)});
        degree_.push_back(deg);
      }

  auto fact = [](int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
  };
  fact_.resize(n);
  inv_fact_.resize(n);
  power_parent_.resize(n, 0);
  power_axis_.resize(n, 0);
  raise_.resize(n);
  lower_.resize(n);
  lower2_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = alpha_[i];
    fact_[i] = fact(a[0]) * fact(a[1]) * fact(a[2]);
    inv_fact_[i] = 1.0 / fact_[i];
    for (int k = 0; k < 3; ++k) {
      int up[3] = {a[0], a[1], a[2]};
      up[k] += 1;
      raise_[i][k] = find(up[0], up[1], up[2]);
      int dn[3] = {a[0], a[1], a[2]};
      dn[k] -= 1;
      lower_[i][k] = dn[k] >= 0 ? find(dn[0], dn[1], dn[2]) : -1;
      dn[k] -= 1;
      lower2_[i][k] = dn[k] >= 0 ? find(dn[0], dn[1], dn[2]) : -1;
    }
    if (i > 0) {
      int k = 0;
      while (a[k] == 0) ++k;
      power_axis_[i] = std::uint8_t(k);
      power_parent_[i] = std::uint32_t(lower_[i][k]);
    }
  }

  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t g = 0; g < n; ++g) {
      if (degree_[b] + degree_[g] >= order) continue;
      const auto& ab = alpha_[b];
      const auto& ag = alpha_[g];
      const int s = find(ab[0] + ag[0], ab[1] + ag[1], ab[2] + ag[2]);
      pairs_.push_back({std::uint32_t(b), std::uint32_t(g), std::uint32_t(s)});
    }
}

const Expansion& Expansion::of(int order) {
  if (order < 1 || order > kMaxOrder) throw std::domain_error("expansion order must be in [1, 16]");
  static const auto tables = [] {
    std::array<std::unique_ptr<Expansion>, kMaxOrder + 1> t;
    for (int p = 1; p <= kMaxOrder; ++p) t[std::size_t(p)].reset(new Expansion(p));
    return t;
  }();
  return *tables[std::size_t(order)];
}

int Expansion::find(int ax, int ay, int az) const {
  if (ax < 0 || ay < 0 || az < 0 || ax + ay + az >= order_) return -1;
  return lookup_[(std::size_t(ax) * order_ + ay) * order_ + az];
}

void Expansion::scaled_powers(const Vec3& y, std::span<double> out) const {
  out[0] = 1.0;
  for (std::size_t i = 1; i < alpha_.size(); ++i) {
    const int k = power_axis_[i];
    out[i] = out[power_parent_[i]] * y[std::size_t(k)] / double(alpha_[i][std::size_t(k)]);
  }
}

void laplace_derivatives(const Expansion& exp, const Vec3& r, std::span<double> out) {
  const double r2 = norm2(r);
  if (!(r2 > 0.0)) throw std::domain_error("laplace_derivatives: zero distance");
  const double inv_r2 = 1.0 / r2;
  // Taylor coefficients a_g = D^g(1/r)/g! satisfy
  // |g| r^2 a_g = -(2|g|-1) sum_k r_k a_{g-e_k} - (|g|-1) sum_k a_{g-2e_k}
  out[0] = std::sqrt(inv_r2);
  for (std::size_t i = 1; i < exp.size(); ++i) {
    const int n = exp.degree(i);
    double s1 = 0.0, s2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const int l1 = exp.lower(i, k);
      if (l1 >= 0) s1 += r[std::size_t(k)] * out[std::size_t(l1)];
      const int l2 = exp.lower2(i, k);
      if (l2 >= 0) s2 += out[std::size_t(l2)];
    }
    out[i] = -(double(2 * n - 1) * s1 + double(n - 1) * s2) * inv_r2 / double(n);
  }
  for (std::size_t i = 1; i < exp.size(); ++i) out[i] *= exp.factorial(i);
}

void p2p(std::span<Body> targets, std::span<const Body> sources) {
  for (Body& t : targets) {
    double pot = 0.0, fx = 0.0, fy = 0.0, fz = 0.0;
    const Vec3 xi = t.position;
    for (const Body& s : sources) {
      const double dx = s.position[0] - xi[0];
      const double dy = s.position[1] - xi[1];
      const double dz = s.position[2] - xi[2];
      const double r2 = dx * dx + dy * dy + dz * dz;
      if (r2 == 0.0) continue;
      const double inv_r = 1.0 / std::sqrt(r2);
      const double qr = s.charge * inv_r;
      const double qr3 = qr * inv_r * inv_r;
      pot += qr;
      fx += qr3 * dx;
      fy += qr3 * dy;
      fz += qr3 * dz;
    }
    t.potential += pot;
    t.force[0] += fx;
    t.force[1] += fy;
    t.force[2] += fz;
  }
}

void p2p(std::span<Body> targets, std::span<Body> sources, bool mutual) {
  if (!mutual) {
    p2p(targets, std::span<const Body>(sources));
    return;
  }
  // Reaction sums are kept per source and flushed at the end so that each
  // source sees its targets in ascending order, like a one-sided call.
  std::vector<double> rp(sources.size(), 0.0), rx(sources.size(), 0.0), ry(sources.size(), 0.0),
      rz(sources.size(), 0.0);
  for (Body& t : targets) {
    double pot = 0.0, fx = 0.0, fy = 0.0, fz = 0.0;
    const Vec3 xi = t.position;
    for (std::size_t j = 0; j < sources.size(); ++j) {
      const Body& s = sources[j];
      const double dx = s.position[0] - xi[0];
      const double dy = s.position[1] - xi[1];
      const double dz = s.position[2] - xi[2];
      const double r2 = dx * dx + dy * dy + dz * dz;
      if (r2 == 0.0) continue;
      const double inv_r = 1.0 / std::sqrt(r2);
      const double qr = s.charge * inv_r;
      const double qr3 = qr * inv_r * inv_r;
      pot += qr;
      fx += qr3 * dx;
      fy += qr3 * dy;
      fz += qr3 * dz;
      const double pr = t.charge * inv_r;
      const double pr3 = pr * inv_r * inv_r;
      rp[j] += pr;
      rx[j] += pr3 * -dx;
      ry[j] += pr3 * -dy;
      rz[j] += pr3 * -dz;
    }
    t.potential += pot;
    t.force[0] += fx;
    t.force[1] += fy;
    t.force[2] += fz;
  }
  for (std::size_t j = 0; j < sources.size(); ++j) {
    sources[j].potential += rp[j];
    sources[j].force[0] += rx[j];
    sources[j].force[1] += ry[j];
    sources[j].force[2] += rz[j];
  }
}

void p2p_self(std::span<Body> bodies) { p2p(bodies, std::span<const Body>(bodies)); }

void p2m_add(const Expansion& exp, const Vec3& center, std::span<const Body> bodies, std::span<double> M) {
  std::vector<double> t(exp.size());
  for (const Body& b : bodies) {
    exp.scaled_powers(b.position - center, t);
    for (std::size_t i = 0; i < t.size(); ++i) M[i] += b.charge * t[i];
  }
}

Coeffs p2m(int order, const Vec3& center, std::span<const Body> bodies) {
  const Expansion& exp = Expansion::of(order);
  Coeffs M(exp.size(), 0.0);
  p2m_add(exp, center, bodies, M);
  return M;
}

void m2m_add(const Expansion& exp, std::span<const double> child, const Vec3& shift, std::span<double> parent) {
  std::vector<double> t(exp.size());
  exp.scaled_powers(shift, t);
  for (const auto& term : exp.pair_terms()) parent[term.sum] += child[term.lhs] * t[term.rhs];
}

Coeffs m2m(int order, std::span<const double> child, const Vec3& shift) {
  const Expansion& exp = Expansion::of(order);
  Coeffs M(exp.size(), 0.0);
  m2m_add(exp, child, shift, M);
  return M;
}

void m2l_add(const Expansion& exp, std::span<const double> M, const Vec3& displacement, std::span<double> L) {
  if (!(norm2(displacement) > 0.0)) throw std::domain_error("m2l: zero displacement");
  const std::size_t n = exp.size();
  std::vector<double> D(n), signedM(n);
  laplace_derivatives(exp, -displacement, D);
  for (std::size_t i = 0; i < n; ++i) signedM[i] = (exp.degree(i) & 1) ? -M[i] : M[i];
  for (const auto& term : exp.pair_terms()) L[term.lhs] += signedM[term.rhs] * D[term.sum];
}

Coeffs m2l(int order, std::span<const double> M, const Vec3& displacement) {
  const Expansion& exp = Expansion::of(order);
  Coeffs L(exp.size(), 0.0);
  m2l_add(exp, M, displacement, L);
  return L;
}

void l2l_add(const Expansion& exp, std::span<const double> parent, const Vec3& shift, std::span<double> child) {
  std::vector<double> t(exp.size());
  exp.scaled_powers(shift, t);
  for (const auto& term : exp.pair_terms()) child[term.lhs] += parent[term.sum] * t[term.rhs];
}

Coeffs l2l(int order, std::span<const double> parent, const Vec3& shift) {
  const Expansion& exp = Expansion::of(order);
  Coeffs L(exp.size(), 0.0);
  l2l_add(exp, parent, shift, L);
  return L;
}

void l2p(const Expansion& exp, std::span<const double> L, const Vec3& center, std::span<Body> bodies) {
  const std::size_t n = exp.size();
  std::vector<double> t(n);
  for (Body& b : bodies) {
    exp.scaled_powers(b.position - center, t);
    double pot = 0.0;
    Vec3 grad;
    for (std::size_t i = 0; i < n; ++i) {
      pot += L[i] * t[i];
      for (int k = 0; k < 3; ++k) {
        const int up = exp.raise(i, k);
        if (up >= 0) grad[std::size_t(k)] += L[std::size_t(up)] * t[i];
      }
    }
    b.potential += pot;
    b.force += grad;
  }
}

DirectResult direct_sum(std::span<const Body> bodies) {
  std::vector<std::size_t> all(bodies.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return direct_sum(bodies, all);
}

DirectResult direct_sum(std::span<const Body> bodies, std::span<const std::size_t> targets) {
  DirectResult out;
  out.potential.resize(targets.size());
  out.force.resize(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Body t = bodies[targets[k]];
    t.potential = 0.0;
    t.force = {};
    p2p(std::span<Body>(&t, 1), bodies);
    out.potential[k] = t.potential;
    out.force[k] = t.force;
  }
  return out;
}

}  // namespace asyncfmm
