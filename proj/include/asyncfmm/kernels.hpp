#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "asyncfmm/geometry.hpp"

namespace asyncfmm {

inline constexpr int kMaxOrder = 16;

//! Number of multi-indices alpha with |alpha| < order.
constexpr std::size_t coeff_count(int order) {
  return std::size_t(order) * std::size_t(order + 1) * std::size_t(order + 2) / 6;
}

using Coeffs = std::vector<double>;

/// Multi-index tables for a Cartesian Taylor basis truncated at total degree
/// `order - 1`. Coefficients are stored in graded-lexicographic order:
/// degree ascending, then alpha_x descending, then alpha_y descending.
///
/// Conventions used by every operator in this header:
///  - multipoles are scaled moments, M[a] = sum_j q_j (x_j - c)^a / a!
///  - locals are derivatives of the potential at the expansion center,
///    L[a] = d^a phi(c), so that phi(c + y) = sum_a L[a] y^a / a!
///  - forces follow the direct kernel, f = +grad(phi).
class Expansion {
 public:
  struct Term {
    std::uint32_t lhs;  //!< beta
    std::uint32_t rhs;  //!< gamma
    std::uint32_t sum;  //!< beta + gamma
  };

  static const Expansion& of(int order);

  int order() const { return order_; }
  std::size_t size() const { return alpha_.size(); }
  const std::array<std::uint8_t, 3>& alpha(std::size_t i) const { return alpha_[i]; }
  int degree(std::size_t i) const { return degree_[i]; }
  //! Index of (ax, ay, az), or -1 when the total degree is not below order().
  int find(int ax, int ay, int az) const;
  double inv_factorial(std::size_t i) const { return inv_fact_[i]; }
  double factorial(std::size_t i) const { return fact_[i]; }

  //! out[a] = y^a / a! for every multi-index.
  void scaled_powers(const Vec3& y, std::span<double> out) const;

  //! All (beta, gamma) pairs with |beta| + |gamma| < order.
  std::span<const Term> pair_terms() const { return pairs_; }

  //! Index of alpha + e_axis for alpha of degree < order - 1, otherwise -1.
  int raise(std::size_t i, int axis) const { return raise_[i][std::size_t(axis)]; }
  int lower(std::size_t i, int axis) const { return lower_[i][std::size_t(axis)]; }
  int lower2(std::size_t i, int axis) const { return lower2_[i][std::size_t(axis)]; }

 private:
  explicit Expansion(int order);

  int order_;
  std::vector<std::array<std::uint8_t, 3>> alpha_;
  std::vector<int> degree_;
  std::vector<int> lookup_;
  std::vector<double> fact_;
  std::vector<double> inv_fact_;
  std::vector<std::uint32_t> power_parent_;
  std::vector<std::uint8_t> power_axis_;
  std::vector<std::array<int, 3>> raise_;
  std::vector<std::array<int, 3>> lower_;
  std::vector<std::array<int, 3>> lower2_;
  std::vector<Term> pairs_;
};

//! D[g] = d^g (1/|r|) at r, for every |g| < order. Requires r != 0.
void laplace_derivatives(const Expansion& exp, const Vec3& r, std::span<double> out);

//! Direct Laplace interaction. Accumulates potential += q/|r| and
//! force += q (x_j - x_i)/|r|^3 into every target; coincident pairs are
//! skipped. Each target sums its sources in ascending index order into a
//! zero-initialized accumulator that is then added to the target.
void p2p(std::span<Body> targets, std::span<const Body> sources);

//! Mutual variant: also applies the reaction to `sources`, which must not
//! overlap `targets`. Bitwise identical to p2p(targets, sources) followed by
//! p2p(sources, targets).
void p2p(std::span<Body> targets, std::span<Body> sources, bool mutual);

//! All pairs inside one slice, each pair evaluated once.
void p2p_self(std::span<Body> bodies);

void p2m_add(const Expansion& exp, const Vec3& center, std::span<const Body> bodies, std::span<double> M);
Coeffs p2m(int order, const Vec3& center, std::span<const Body> bodies);

//! shift = child center - parent center.
void m2m_add(const Expansion& exp, std::span<const double> child, const Vec3& shift, std::span<double> parent);
Coeffs m2m(int order, std::span<const double> child, const Vec3& shift);

//! displacement = source center - target center; throws std::domain_error when zero.
void m2l_add(const Expansion& exp, std::span<const double> M, const Vec3& displacement, std::span<double> L);
Coeffs m2l(int order, std::span<const double> M, const Vec3& displacement);

//! shift = child center - parent center.
void l2l_add(const Expansion& exp, std::span<const double> parent, const Vec3& shift, std::span<double> child);
Coeffs l2l(int order, std::span<const double> parent, const Vec3& shift);

void l2p(const Expansion& exp, std::span<const double> L, const Vec3& center, std::span<Body> bodies);

struct DirectResult {
  std::vector<double> potential;
  std::vector<Vec3> force;
};

//! Exact all-pairs reference, indexed like `bodies`.
DirectResult direct_sum(std::span<const Body> bodies);

//! Direct sum restricted to the given target indices.
DirectResult direct_sum(std::span<const Body> bodies, std::span<const std::size_t> targets);

}  // namespace asyncfmm
