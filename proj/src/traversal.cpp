#include "asyncfmm/traversal.hpp"

#include <atomic>
#include <stdexcept>

#include <tbb/task_group.h>

namespace asyncfmm {

void validate(const TraversalConfig& cfg) {
  if (!(cfg.theta > 0.0 && cfg.theta < 1.0)) throw ConfigError("theta must lie in (0, 1)");
  if (cfg.nspawn < 1) throw ConfigError("nspawn must be at least 1");
}

SourceView SourceView::of(const Tree& tree, bool remote) {
  return {tree.cells, tree.multipoles(), tree.bodies, tree.order(), remote};
}

bool mac(const Cell& target, const Cell& source, double theta) {
  return target.radius + source.radius < theta * norm(target.center - source.center);
}

InteractionStats::InteractionStats(std::size_t cells)
    : m2l_local(cells, 0), m2l_remote(cells, 0), p2p_local(cells, 0), p2p_remote(cells, 0) {}

void InteractionStats::merge(const InteractionStats& other) {
  if (m2l_local.size() != other.m2l_local.size()) throw std::invalid_argument("merge: cell count mismatch");
  for (std::size_t i = 0; i < m2l_local.size(); ++i) {
    m2l_local[i] += other.m2l_local[i];
    m2l_remote[i] += other.m2l_remote[i];
    p2p_local[i] += other.p2p_local[i];
    p2p_remote[i] += other.p2p_remote[i];
  }
  m2l_calls += other.m2l_calls;
  p2p_pairs += other.p2p_pairs;
  visits += other.visits;
  missing += other.missing;
}

BodyLists body_lists(const Tree& target, const InteractionStats& stats) {
  const std::size_t nc = target.cells.size();
  std::vector<std::uint64_t> chain_local(nc, 0), chain_remote(nc, 0);
  BodyLists out{std::vector<std::uint64_t>(target.bodies.size(), 0),
                std::vector<std::uint64_t>(target.bodies.size(), 0)};
  for (std::size_t i = 0; i < nc; ++i) {
    const Cell& c = target.cells[i];
    chain_local[i] = stats.m2l_local[i];
    chain_remote[i] = stats.m2l_remote[i];
    if (c.parent != kNoParent) {
      chain_local[i] += chain_local[c.parent];
      chain_remote[i] += chain_remote[c.parent];
    }
    if (c.leaf())
      for (std::uint32_t b = c.body_begin; b < c.body_begin + c.body_count; ++b) {
        out.local[b] = chain_local[i] + stats.p2p_local[i];
        out.remote[b] = chain_remote[i] + stats.p2p_remote[i];
      }
  }
  return out;
}

namespace {

class Traverser {
 public:
  Traverser(Tree& target, const SourceView& source, const TraversalConfig& cfg, const TraversalOptions& opts,
            InteractionStats& stats)
      : target_(target), source_(source), cfg_(cfg), opts_(opts), stats_(stats) {
    if (opts.kernels) exp_ = &Expansion::of(source.order);
  }

  void run() {
    if (cfg_.mutual)
      mutual_pair(0, 0);
    else
      pair(0, 0);
    stats_.m2l_calls += m2l_calls_;
    stats_.p2p_pairs += p2p_pairs_;
    stats_.visits += visits_;
    stats_.missing += missing_;
  }

 private:
  void log(std::uint32_t a, std::uint32_t b, bool m2l) {
    if (!opts_.log) return;
    std::lock_guard lock(opts_.log->mutex);
    opts_.log->entries.push_back({a, b, m2l});
  }

  void count_m2l(std::uint32_t a) {
    (source_.remote ? stats_.m2l_remote : stats_.m2l_local)[a] += 1;
    ++m2l_calls_;
  }

  void count_p2p(std::uint32_t a, std::uint64_t sources, std::uint64_t targets) {
    (source_.remote ? stats_.p2p_remote : stats_.p2p_local)[a] += sources;
    p2p_pairs_ += sources * targets;
  }

  void pair(std::uint32_t a, std::uint32_t b) {
    ++visits_;
    const Cell& A = target_.cells[a];
    const Cell& B = source_.cells[b];
    if (A.subtree_bodies == 0 || B.subtree_bodies == 0) return;

    if (mac(A, B, cfg_.theta)) {
      if (opts_.kernels) m2l_add(*exp_, source_.multipole(b), B.center - A.center, target_.local(a));
      count_m2l(a);
      log(a, b, true);
      return;
    }
    if (A.leaf() && B.leaf()) {
      if (B.multipole_only()) {
        ++missing_;
        return;
      }
      if (opts_.kernels) p2p(target_.cell_bodies(a), source_.cell_bodies(b));
      count_p2p(a, B.body_count, A.body_count);
      log(a, b, false);
      return;
    }
    const bool split_target = B.leaf() || (!A.leaf() && A.radius >= B.radius);
    if (split_target) {
      if (A.body_count > std::uint32_t(cfg_.nspawn) && A.child_count > 1) {
        tbb::task_group group;
        for (std::uint32_t c = A.child_begin; c < A.child_begin + A.child_count; ++c)
          group.run([this, c, b] { pair(c, b); });
        group.wait();
      } else {
        for (std::uint32_t c = A.child_begin; c < A.child_begin + A.child_count; ++c) pair(c, b);
      }
    } else {
      if (B.multipole_only()) {
        ++missing_;
        return;
      }
      for (std::uint32_t c = B.child_begin; c < B.child_begin + B.child_count; ++c) pair(a, c);
    }
  }

  // Self traversal visiting each unordered cell pair once and applying
  // every interaction in both directions.
  void mutual_pair(std::uint32_t a, std::uint32_t b) {
    ++visits_;
    const Cell& A = target_.cells[a];
    const Cell& B = target_.cells[b];
    if (A.subtree_bodies == 0 || B.subtree_bodies == 0) return;

    if (a == b) {
      if (A.leaf()) {
        if (opts_.kernels) p2p_self(target_.cell_bodies(a));
        count_p2p(a, A.body_count, A.body_count);
        log(a, a, false);
        return;
      }
      for (std::uint32_t i = A.child_begin; i < A.child_begin + A.child_count; ++i)
        for (std::uint32_t j = i; j < A.child_begin + A.child_count; ++j) mutual_pair(i, j);
      return;
    }
    if (mac(A, B, cfg_.theta)) {
      if (opts_.kernels) {
        m2l_add(*exp_, target_.multipole(b), B.center - A.center, target_.local(a));
        m2l_add(*exp_, target_.multipole(a), A.center - B.center, target_.local(b));
      }
      count_m2l(a);
      count_m2l(b);
      log(a, b, true);
      log(b, a, true);
      return;
    }
    if (A.leaf() && B.leaf()) {
      if (opts_.kernels) p2p(target_.cell_bodies(a), target_.cell_bodies(b), true);
      count_p2p(a, B.body_count, A.body_count);
      count_p2p(b, A.body_count, B.body_count);
      log(a, b, false);
      log(b, a, false);
      return;
    }
    if (B.leaf() || (!A.leaf() && A.radius >= B.radius)) {
      for (std::uint32_t c = A.child_begin; c < A.child_begin + A.child_count; ++c) mutual_pair(c, b);
    } else {
      for (std::uint32_t c = B.child_begin; c < B.child_begin + B.child_count; ++c) mutual_pair(a, c);
    }
  }

  Tree& target_;
  const SourceView& source_;
  const TraversalConfig& cfg_;
  const TraversalOptions& opts_;
  InteractionStats& stats_;
  const Expansion* exp_ = nullptr;
  std::atomic<std::uint64_t> m2l_calls_{0};
  std::atomic<std::uint64_t> p2p_pairs_{0};
  std::atomic<std::uint64_t> visits_{0};
  std::atomic<std::uint64_t> missing_{0};
};

}  // namespace

InteractionStats dual_traverse(Tree& target, const SourceView& source, const TraversalConfig& cfg,
                               const TraversalOptions& opts) {
  validate(cfg);
  InteractionStats stats(target.cells.size());
  if (target.cells.empty() || source.cells.empty()) return stats;
  if (cfg.mutual && (source.cells.data() != target.cells.data() || source.remote))
    throw std::invalid_argument("dual_traverse: mutual mode needs the target tree as its own source");
  if (opts.kernels) {
    if (target.order() != source.order || source.order == 0)
      throw std::invalid_argument("dual_traverse: target expansions not allocated at the source order");
  }
  Traverser(target, source, cfg, opts, stats).run();
  return stats;
}

CoverageReport coverage_check(const Tree& target, const SourceView& source, const PairLog& log, std::size_t n) {
  CoverageReport report;
  report.n = n;
  report.counts.assign(n * n, 0);
  auto bump = [&](std::uint64_t t, std::uint64_t s) {
    if (t >= n || s >= n) throw std::out_of_range("coverage_check: body id outside [0, n)");
    ++report.counts[t * n + s];
  };
  for (const auto& e : log.entries) {
    const Cell& tc = target.cells[e.target];
    const Cell& sc = source.cells[e.source];
    for (std::uint32_t i = tc.body_begin; i < tc.body_begin + tc.body_count; ++i)
      for (std::uint32_t j = sc.body_begin; j < sc.body_begin + sc.body_count; ++j)
        bump(target.bodies[i].id, source.bodies[j].id);
  }
  for (std::uint32_t c : report.counts) {
    if (c == 0) ++report.gaps;
    if (c > 1) ++report.multiples;
  }
  return report;
}

}  // namespace asyncfmm
