#include <doctest.h>

#include <algorithm>
#include <deque>
#include <set>
#include <tuple>

#include "asyncfmm/traversal.hpp"
#include "oracles.hpp"

using namespace asyncfmm;

namespace {

Tree prepared(std::vector<Body> bodies, int ncrit, int order) {
  const Box bounds = global_bounds(bodies);
  Tree tree = build(std::move(bodies), bounds, ncrit);
  upward_pass(tree, order);
  return tree;
}

Tree prepared(Distribution kind, std::size_t n, int ncrit, int order, std::uint64_t seed = 1) {
  return prepared(generate(kind, n, seed), ncrit, order);
}

using PairSet = std::set<std::tuple<std::uint32_t, std::uint32_t, bool>>;

// Breadth-first expansion of cell pairs with an explicit work queue.
PairSet explicit_list(const Tree& t, const Tree& s, double theta) {
  PairSet out;
  std::deque<std::pair<std::uint32_t, std::uint32_t>> work{{0, 0}};
  while (!work.empty()) {
    const auto [a, b] = work.front();
    work.pop_front();
    const Cell& A = t.cells[a];
    const Cell& B = s.cells[b];
    const double d = norm(A.center - B.center);
    if (A.radius + B.radius < theta * d) {
      out.insert({a, b, true});
    } else if (A.child_count == 0 && B.child_count == 0) {
      out.insert({a, b, false});
    } else if (B.child_count == 0 || (A.child_count > 0 && A.radius >= B.radius)) {
      for (std::uint32_t c = 0; c < A.child_count; ++c) work.push_back({A.child_begin + c, b});
    } else {
      for (std::uint32_t c = 0; c < B.child_count; ++c) work.push_back({a, B.child_begin + c});
    }
  }
  return out;
}

std::vector<double> potentials_by_id(const Tree& tree) {
  std::vector<double> out(tree.bodies.size());
  for (const Body& b : tree.bodies) out[b.id] = b.potential;
  return out;
}

}  // namespace

TEST_CASE("mac arithmetic") {
  Cell a, b;
  b.center = {0.5, 0, 0};
  CHECK(mac(a, b, 0.4));
  CHECK_FALSE(mac(a, a, 0.4));
  a.radius = b.radius = 0.1;
  b.center = {1, 0, 0};
  CHECK(mac(a, b, 0.4));
  CHECK_FALSE(mac(a, b, 0.2));
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(validate(TraversalConfig{1.5, 10, false}), ConfigError);
  CHECK_THROWS_AS(validate(TraversalConfig{0.0, 10, false}), ConfigError);
  CHECK_THROWS_AS(validate(TraversalConfig{0.5, 0, false}), ConfigError);
  CHECK_NOTHROW(validate(TraversalConfig{0.5, 1, false}));
}

TEST_CASE("trivial traversals") {
  std::vector<Body> near(3), far(2);
  for (std::size_t i = 0; i < near.size(); ++i) near[i].position = {0.01 * double(i), 0, 0}, near[i].charge = 1;
  for (std::size_t i = 0; i < far.size(); ++i) far[i].position = {10, 0.01 * double(i), 0}, far[i].charge = 1;
  Tree t = prepared(near, 16, 4);
  Tree s = prepared(far, 16, 4);
  auto stats = dual_traverse(t, SourceView::of(s), {0.5, 10, false});
  CHECK(stats.m2l_calls == 1);
  CHECK(stats.p2p_pairs == 0);

  Tree t2 = prepared(near, 16, 4);
  stats = dual_traverse(t2, SourceView::of(t2), {0.5, 10, false});
  CHECK(stats.m2l_calls == 0);
  CHECK(stats.p2p_pairs == 9);
}

TEST_CASE("cell pairs match an explicit interaction list") {
  Tree tree = prepared(Distribution::cube, 512, 8, 4, 3);
  PairLog log;
  dual_traverse(tree, SourceView::of(tree), {0.4, 1, false}, {true, &log});
  PairSet got;
  for (const auto& e : log.entries) got.insert({e.target, e.source, e.m2l});
  CHECK(got.size() == log.entries.size());
  CHECK(got == explicit_list(tree, tree, 0.4));
  for (const auto& e : log.entries)
    if (e.m2l) {
      const Cell& A = tree.cells[e.target];
      const Cell& B = tree.cells[e.source];
      CHECK(A.radius + B.radius < 0.4 * norm(A.center - B.center));
      CHECK(norm(A.center - B.center) > 0.0);
    }
}

TEST_CASE("coverage is exactly once") {
  Tree tree = prepared(Distribution::cube, 64, 4, 4, 5);
  PairLog log;
  dual_traverse(tree, SourceView::of(tree), {0.5, 1, false}, {true, &log});
  const auto report = coverage_check(tree, SourceView::of(tree), log, 64);
  CHECK(report.exactly_once());
  CHECK(report.at(3, 3) == 1);

  Tree mutual = prepared(Distribution::plummer, 300, 4, 4, 6);
  PairLog mlog;
  dual_traverse(mutual, SourceView::of(mutual), {0.5, 1, true}, {true, &mlog});
  CHECK(coverage_check(mutual, SourceView::of(mutual), mlog, 300).exactly_once());

  std::vector<Body> one(1);
  Tree a = prepared(one, 4, 4), b = prepared(one, 4, 4);
  PairLog single;
  dual_traverse(a, SourceView::of(b), {0.5, 1, false}, {true, &single});
  const auto r1 = coverage_check(a, SourceView::of(b), single, 1);
  CHECK(r1.exactly_once());

  Tree empty = build({}, Box{{0, 0, 0}, {1, 1, 1}}, 4);
  upward_pass(empty, 4);
  PairLog none;
  dual_traverse(tree, SourceView::of(empty), {0.5, 1, false}, {true, &none});
  const auto r0 = coverage_check(tree, SourceView::of(empty), none, 64);
  CHECK(r0.gaps == 64 * 64);
  CHECK(r0.multiples == 0);
}

TEST_CASE("fmm potentials approach the direct sum") {
  Tree tree = prepared(Distribution::plummer, 2000, 16, 8, 7);
  dual_traverse(tree, SourceView::of(tree), {0.4, 64, false});
  downward_pass(tree);
  std::vector<Body> by_id(tree.bodies.size());
  for (const Body& b : tree.bodies) by_id[b.id] = b;
  const auto direct = direct_sum(by_id);
  CHECK(oracle::rel_l2(potentials_by_id(tree), direct.potential) < 1e-5);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < by_id.size(); ++i) {
    num += norm2(by_id[i].force - direct.force[i]);
    den += norm2(direct.force[i]);
  }
  CHECK(std::sqrt(num / den) < 1e-4);

  Tree mutual = prepared(Distribution::plummer, 2000, 16, 8, 7);
  dual_traverse(mutual, SourceView::of(mutual), {0.4, 64, true});
  downward_pass(mutual);
  CHECK(oracle::rel_l2(potentials_by_id(mutual), direct.potential) < 1e-5);
}

TEST_CASE("results do not depend on nspawn") {
  std::vector<std::vector<double>> runs;
  for (int nspawn : {1, 100, 3000}) {
    Tree tree = prepared(Distribution::cube, 3000, 16, 6, 8);
    dual_traverse(tree, SourceView::of(tree), {0.5, nspawn, false});
    downward_pass(tree);
    runs.push_back(potentials_by_id(tree));
  }
  CHECK(runs[0] == runs[1]);
  CHECK(runs[0] == runs[2]);
}

TEST_CASE("counting mode and list lengths") {
  Tree tree = prepared(Distribution::sphere, 1500, 16, 4, 9);
  const auto full = dual_traverse(tree, SourceView::of(tree), {0.5, 50, false});
  const auto counted = dual_traverse(tree, SourceView::of(tree), {0.5, 50, false}, {false, nullptr});
  CHECK(counted.m2l_local == full.m2l_local);
  CHECK(counted.p2p_local == full.p2p_local);
  CHECK(counted.visits == full.visits);
  CHECK(full.missing == 0);

  const auto lists = body_lists(tree, full);
  std::uint64_t p2p_sum = 0;
  for (std::size_t i = 0; i < tree.cells.size(); ++i)
    if (tree.cells[i].leaf()) p2p_sum += tree.cells[i].body_count * full.p2p_local[i];
  CHECK(p2p_sum == full.p2p_pairs);
  for (std::size_t b = 0; b < tree.bodies.size(); ++b) {
    CHECK(lists.local[b] > 0);
    CHECK(lists.remote[b] == 0);
  }

  const auto remote = dual_traverse(tree, SourceView::of(tree, true), {0.5, 50, false}, {false, nullptr});
  CHECK(remote.m2l_remote == full.m2l_local);
  CHECK(body_lists(tree, remote).remote == lists.local);
}

TEST_CASE("smaller theta never yields fewer pairs") {
  Tree tree = prepared(Distribution::plummer, 1000, 8, 4, 10);
  std::size_t previous = 0;
  for (double theta : {0.9, 0.7, 0.5, 0.3, 0.2, 0.1}) {
    PairLog log;
    dual_traverse(tree, SourceView::of(tree), {theta, 1, false}, {false, &log});
    CHECK(log.entries.size() >= previous);
    previous = log.entries.size();
  }
}
