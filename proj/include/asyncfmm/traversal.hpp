#pragma once

#include <cstdint>
#include <mutex>
#include <span>
#include <vector>

#include "asyncfmm/tree.hpp"

namespace asyncfmm {

struct TraversalConfig {
  double theta = 0.4;
  int nspawn = 1000;  //!< a target cell forks tasks only above this many bodies
  bool mutual = false;
};

//! Throws ConfigError unless 0 < theta < 1 and nspawn >= 1.
void validate(const TraversalConfig& cfg);

/// Read-only view of whatever a traversal reads from the source side: a
/// local tree or one received LET fragment.
struct SourceView {
  std::span<const Cell> cells;
  std::span<const double> M;
  std::span<const Body> bodies;
  int order = 0;
  bool remote = false;

  static SourceView of(const Tree& tree, bool remote = false);
  std::span<const double> multipole(std::size_t cell) const {
    const std::size_t n = coeff_count(order);
    return M.subspan(cell * n, n);
  }
  std::span<const Body> cell_bodies(std::size_t cell) const {
    return bodies.subspan(cells[cell].body_begin, cells[cell].body_count);
  }
};

//! Accept iff (R_t + R_s) < theta * |c_t - c_s|.
bool mac(const Cell& target, const Cell& source, double theta);

/// Interaction tallies of one or more traversals, indexed by target cell.
/// P2P counts are source bodies per target leaf, M2L counts are source cells.
struct InteractionStats {
  std::vector<std::uint64_t> m2l_local;
  std::vector<std::uint64_t> m2l_remote;
  std::vector<std::uint64_t> p2p_local;
  std::vector<std::uint64_t> p2p_remote;
  std::uint64_t m2l_calls = 0;
  std::uint64_t p2p_pairs = 0;  //!< target-source body pairs evaluated
  std::uint64_t visits = 0;     //!< cell pairs examined
  std::uint64_t missing = 0;    //!< pairs that needed data a fragment did not carry

  explicit InteractionStats(std::size_t cells = 0);
  void merge(const InteractionStats& other);
};

//! Per-body list lengths l_i and r_i in tree body order: M2L source cells
//! along the ancestor chain plus P2P source bodies of the leaf.
struct BodyLists {
  std::vector<std::uint64_t> local;
  std::vector<std::uint64_t> remote;
};
BodyLists body_lists(const Tree& target, const InteractionStats& stats);

/// Record of every accepted cell pair, for coverage checks. Indices refer to
/// the target tree and the traversed source view.
struct PairLog {
  struct Entry {
    std::uint32_t target;
    std::uint32_t source;
    bool m2l;
  };
  std::vector<Entry> entries;
  std::mutex mutex;
};

struct TraversalOptions {
  bool kernels = true;  //!< false only tallies interactions
  PairLog* log = nullptr;
};

/// Dual tree traversal of `target` against `source`, starting at both roots.
/// M2L goes into target.local() and P2P into target bodies; the target tree
/// must have expansions allocated at the source order. With cfg.mutual the
/// source must be the target tree itself and runs sequentially; otherwise
/// target subtrees above nspawn bodies run as TBB tasks, joined before the
/// parent proceeds, so results do not depend on nspawn.
InteractionStats dual_traverse(Tree& target, const SourceView& source, const TraversalConfig& cfg,
                               const TraversalOptions& opts = {});

struct CoverageReport {
  std::size_t n = 0;
  std::vector<std::uint32_t> counts;  //!< n x n, row = target id, column = source id
  std::size_t gaps = 0;
  std::size_t multiples = 0;

  std::uint32_t at(std::size_t target, std::size_t source) const { return counts[target * n + source]; }
  bool exactly_once() const { return gaps == 0 && multiples == 0; }
};

//! Expands a pair log into the cover-count matrix over body ids < n.
CoverageReport coverage_check(const Tree& target, const SourceView& source, const PairLog& log, std::size_t n);

}  // namespace asyncfmm
