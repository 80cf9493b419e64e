#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "asyncfmm/geometry.hpp"
#include "asyncfmm/kernels.hpp"

namespace asyncfmm {

inline constexpr std::uint32_t kNoParent = std::numeric_limits<std::uint32_t>::max();

struct Cell {
  static constexpr std::uint8_t kLeaf = 1;
  //! Children and bodies were not shipped; only the multipole is valid.
  static constexpr std::uint8_t kMultipoleOnly = 2;

  MortonKey key;
  std::uint32_t parent = kNoParent;
  std::uint32_t child_begin = 0;
  std::uint32_t child_count = 0;
  std::uint32_t body_begin = 0;
  std::uint32_t body_count = 0;
  std::uint64_t subtree_bodies = 0;  //!< bodies under this cell in the owner's tree
  std::uint8_t flags = 0;
  Vec3 geom_center;  //!< center of the octant this cell was carved from
  Box tight_box;
  Vec3 center;  //!< expansion center, the tight box center
  double radius = 0.0;

  bool leaf() const { return flags & kLeaf; }
  bool multipole_only() const { return flags & kMultipoleOnly; }
  int level() const { return key.level; }
};

/// Flat octree over a body array permuted into key order. Cells are stored
/// root first and the children of every cell are contiguous, so parents
/// always precede their children.
class Tree {
 public:
  std::vector<Cell> cells;
  std::vector<Body> bodies;
  Box bounds;  //!< root octant
  int ncrit = 1;

  int order() const { return order_; }
  std::size_t coeffs() const { return coeff_count(order_); }

  //! Allocates zeroed multipole and local coefficients for order `p`.
  void reset_expansions(int p);

  std::span<double> multipole(std::size_t cell) { return {M_.data() + cell * coeffs(), coeffs()}; }
  std::span<const double> multipole(std::size_t cell) const { return {M_.data() + cell * coeffs(), coeffs()}; }
  std::span<double> local(std::size_t cell) { return {L_.data() + cell * coeffs(), coeffs()}; }
  std::span<const double> local(std::size_t cell) const { return {L_.data() + cell * coeffs(), coeffs()}; }
  std::span<const double> multipoles() const { return M_; }

  std::span<Body> cell_bodies(std::size_t cell) {
    return {bodies.data() + cells[cell].body_begin, cells[cell].body_count};
  }
  std::span<const Body> cell_bodies(std::size_t cell) const {
    return {bodies.data() + cells[cell].body_begin, cells[cell].body_count};
  }

  bool empty() const { return bodies.empty(); }
  std::size_t max_level() const;

 private:
  int order_ = 0;
  std::vector<double> M_;
  std::vector<double> L_;
};

/// Top-down octant subdivision of the cube enclosing `bounds` (kept as
/// Tree::bounds, so cells stay cubic on slab-shaped partitions) until a cell holds at most
/// `ncrit` bodies (or the key depth is exhausted). Bodies must lie inside the
/// inflated bounds; std::domain_error otherwise.
Tree build(std::vector<Body> bodies, const Box& bounds, int ncrit);

//! P2M at leaves and M2M at interior cells, children before parents.
void upward_pass(Tree& tree, int order);

//! L2L from parents into children, then L2P at every leaf.
void downward_pass(Tree& tree);

}  // namespace asyncfmm
