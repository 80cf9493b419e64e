#include "asyncfmm/tree.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace asyncfmm {

void Tree::reset_expansions(int p) {
  order_ = p;
  M_.assign(cells.size() * coeffs(), 0.0);
  L_.assign(cells.size() * coeffs(), 0.0);
}

std::size_t Tree::max_level() const {
  std::size_t level = 0;
  for (const Cell& c : cells) level = std::max(level, std::size_t(c.key.level));
  return level;
}

namespace {

struct Builder {
  Tree& tree;
  const std::vector<std::uint64_t>& keys;
  Vec3 extent;

  void split(std::uint32_t index) {
    const Cell cell = tree.cells[index];
    if (cell.body_count <= std::uint32_t(tree.ncrit) || cell.key.level >= kMaxLevel) {
      tree.cells[index].flags = Cell::kLeaf;
      return;
    }
    const int child_level = cell.key.level + 1;
    const int shift = 3 * (kMaxLevel - child_level);
    const double half = std::ldexp(0.5, -child_level);

    const auto first_child = std::uint32_t(tree.cells.size());
    std::uint32_t begin = cell.body_begin;
    const std::uint32_t end = cell.body_begin + cell.body_count;
    while (begin < end) {
      const int octant = int((keys[begin] >> shift) & 7u);
      std::uint32_t stop = begin;
      while (stop < end && int((keys[stop] >> shift) & 7u) == octant) ++stop;
      Cell child;
      child.key = cell.key.child(octant);
      child.parent = index;
      child.body_begin = begin;
      child.body_count = stop - begin;
      child.subtree_bodies = child.body_count;
      for (int d = 0; d < 3; ++d) {
        const double sign = ((octant >> d) & 1) ? 1.0 : -1.0;
        child.geom_center[std::size_t(d)] = cell.geom_center[std::size_t(d)] + sign * half * extent[std::size_t(d)];
      }
      tree.cells.push_back(child);
      begin = stop;
    }
    tree.cells[index].child_begin = first_child;
    tree.cells[index].child_count = std::uint32_t(tree.cells.size()) - first_child;
    for (std::uint32_t c = first_child; c < first_child + tree.cells[index].child_count; ++c) split(c);
  }
};

}  // namespace

Tree build(std::vector<Body> bodies, const Box& bounds, int ncrit) {
  if (ncrit < 1) throw std::invalid_argument("build: ncrit must be at least 1");
  Tree tree;
  tree.bounds = enclosing_cube(bounds);
  tree.ncrit = ncrit;

  std::vector<std::uint64_t> keys(bodies.size());
  for (std::size_t i = 0; i < bodies.size(); ++i) keys[i] = local_key(bodies[i].position, tree.bounds, kMaxLevel).value;
  std::vector<std::size_t> order(bodies.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  tree.bodies.resize(bodies.size());
  std::vector<std::uint64_t> sorted_keys(bodies.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    tree.bodies[i] = bodies[order[i]];
    sorted_keys[i] = keys[order[i]];
  }

  Cell root;
  root.body_count = std::uint32_t(bodies.size());
  root.subtree_bodies = bodies.size();
  root.geom_center = tree.bounds.center();
  tree.cells.push_back(root);
  Builder builder{tree, sorted_keys, tree.bounds.max - tree.bounds.min};
  builder.split(0);

  for (std::size_t i = tree.cells.size(); i-- > 0;) {
    Cell& c = tree.cells[i];
    if (c.body_count == 0) {
      c.tight_box = Box::at(c.geom_center);
    } else if (c.leaf()) {
      c.tight_box = Box::at(tree.bodies[c.body_begin].position);
      for (const Body& b : tree.cell_bodies(i)) c.tight_box.extend(b.position);
    } else {
      c.tight_box = tree.cells[c.child_begin].tight_box;
      for (std::uint32_t k = 1; k < c.child_count; ++k) c.tight_box.extend(tree.cells[c.child_begin + k].tight_box);
    }
    c.center = c.tight_box.center();
    c.radius = c.tight_box.radius();
  }
  return tree;
}

void upward_pass(Tree& tree, int order) {
  tree.reset_expansions(order);
  const Expansion& exp = Expansion::of(order);
  for (std::size_t i = tree.cells.size(); i-- > 0;) {
    const Cell& c = tree.cells[i];
    if (c.leaf()) {
      p2m_add(exp, c.center, tree.cell_bodies(i), tree.multipole(i));
    } else {
      for (std::uint32_t k = c.child_begin; k < c.child_begin + c.child_count; ++k)
        m2m_add(exp, tree.multipole(k), tree.cells[k].center - c.center, tree.multipole(i));
    }
  }
}

void downward_pass(Tree& tree) {
  if (tree.order() == 0) return;
  const Expansion& exp = Expansion::of(tree.order());
  for (std::size_t i = 0; i < tree.cells.size(); ++i) {
    const Cell& c = tree.cells[i];
    if (c.parent != kNoParent)
      l2l_add(exp, tree.local(c.parent), c.center - tree.cells[c.parent].center, tree.local(i));
    if (c.leaf()) l2p(exp, tree.local(i), c.center, tree.cell_bodies(i));
  }
}

}  // namespace asyncfmm
