#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "asyncfmm/let.hpp"
#include "distributed.hpp"
#include "oracles.hpp"

using namespace asyncfmm;

namespace {

Tree unit_tree(std::size_t n, int ncrit, int order, std::uint64_t seed = 1) {
  auto bodies = generate(Distribution::cube, n, seed);
  Tree t = build(bodies, global_bounds(bodies), ncrit);
  upward_pass(t, order);
  return t;
}

}  // namespace

TEST_CASE("far receiver gets the root only") {
  const Tree t = unit_tree(500, 16, 4);
  const double diag = 2 * t.cells[0].radius;
  const double far = 2 * diag / 0.5 + 10;
  const Box remote{{far, 0, 0}, {far + 1, 1, 1}};
  const auto frag = select_export(t, remote, 0.5);
  REQUIRE(frag.cells.size() == 1);
  CHECK(frag.bodies.empty());
  CHECK(frag.cells[0].multipole_only());
  CHECK(oracle::max_diff(frag.M, t.multipole(0)) == 0.0);
}

TEST_CASE("overlapping receiver gets every leaf with its bodies") {
  const Tree t = unit_tree(500, 16, 4);
  const auto frag = select_export(t, Box{{0.2, 0.2, 0.2}, {0.8, 0.8, 0.8}}, 0.5);
  CHECK(frag.cells.size() == t.cells.size());
  CHECK(frag.bodies.size() == t.bodies.size());
  for (const Cell& c : frag.cells) CHECK_FALSE(c.multipole_only());
}

TEST_CASE("empty tree exports nothing") {
  Tree t = build({}, Box{{0, 0, 0}, {1, 1, 1}}, 4);
  upward_pass(t, 4);
  CHECK(select_export(t, Box{{2, 2, 2}, {3, 3, 3}}, 0.5).empty());
}

TEST_CASE("fragment layout mirrors a tree") {
  const Tree t = unit_tree(3000, 16, 5);
  const auto frag = select_export(t, Box{{3, 0, 0}, {4, 1, 1}}, 0.4, 2, 5);
  CHECK(frag.sender == 2);
  CHECK(frag.receiver == 5);
  CHECK(frag.M.size() == frag.cells.size() * coeff_count(5));
  std::size_t shipped_bodies = 0;
  for (std::size_t i = 0; i < frag.cells.size(); ++i) {
    const Cell& c = frag.cells[i];
    if (c.multipole_only()) {
      CHECK(c.child_count == 0);
      CHECK(c.body_count == 0);
      CHECK(c.subtree_bodies > 0);
    } else if (c.leaf()) {
      CHECK(c.body_count == c.subtree_bodies);
      shipped_bodies += c.body_count;
    } else {
      CHECK(c.child_count > 0);
      for (std::uint32_t k = c.child_begin; k < c.child_begin + c.child_count; ++k) CHECK(frag.cells[k].parent == i);
    }
  }
  CHECK(shipped_bodies == frag.bodies.size());
  CHECK(frag.cells.size() < t.cells.size());
  // pure function of its inputs
  const auto again = select_export(t, Box{{3, 0, 0}, {4, 1, 1}}, 0.4, 2, 5);
  CHECK(encode(again, FragmentPhase::cells) == encode(frag, FragmentPhase::cells));
}

TEST_CASE("wire round trip") {
  const Tree t = unit_tree(2000, 16, 6);
  const auto frag = select_export(t, Box{{1.1, 0.5, 0}, {2, 1.5, 1}}, 0.5, 3, 1);
  const auto cells = encode(frag, FragmentPhase::cells);
  const auto bodies = encode(frag, FragmentPhase::bodies);
  CHECK(cells.size() == encoded_size(frag, FragmentPhase::cells));
  CHECK(bodies.size() == encoded_size(frag, FragmentPhase::bodies));
  CHECK(cells[0] == 0x41);
  CHECK(cells[1] == 0x46);

  LetFragment back;
  CHECK(decode(bodies, back) == FragmentPhase::bodies);
  CHECK(decode(cells, back) == FragmentPhase::cells);
  CHECK(back.sender == 3);
  CHECK(back.receiver == 1);
  CHECK(back.order == 6);
  REQUIRE(back.cells.size() == frag.cells.size());
  CHECK(back.M == frag.M);
  for (std::size_t i = 0; i < frag.cells.size(); ++i) {
    CHECK(back.cells[i].key == frag.cells[i].key);
    CHECK(back.cells[i].flags == frag.cells[i].flags);
    CHECK(back.cells[i].center == frag.cells[i].center);
    CHECK(back.cells[i].tight_box == frag.cells[i].tight_box);
    CHECK(back.cells[i].child_begin == frag.cells[i].child_begin);
  }
  for (std::size_t i = 0; i < frag.bodies.size(); ++i) {
    CHECK(back.bodies[i].position == frag.bodies[i].position);
    CHECK(back.bodies[i].id == frag.bodies[i].id);
  }

  auto bad = cells;
  bad[0] ^= 1;
  CHECK_THROWS_AS(decode(bad, back), ProtocolError);
  bad = cells;
  bad.pop_back();
  CHECK_THROWS_AS(decode(bad, back), ProtocolError);
  bad = cells;
  bad[4] = 9;
  CHECK_THROWS_AS(decode(bad, back), ProtocolError);
}

TEST_CASE("graft counts roots and rejects duplicates") {
  const Tree t = unit_tree(100, 16, 4);
  CHECK(graft(t, {}).roots() == 1);
  std::vector<LetFragment> frags(7);
  for (int s = 0; s < 7; ++s) frags[std::size_t(s)].sender = s + 1;
  const LET let = graft(t, frags);
  CHECK(let.roots() == 8);
  CHECK(let.sources().size() == 8);
  CHECK_FALSE(let.sources()[0].remote);
  CHECK(let.sources()[1].remote);
  frags.push_back(frags[2]);
  CHECK_THROWS_AS(graft(t, frags), ProtocolError);
}

TEST_CASE("LET traversal needs no missing data and matches a single rank") {
  for (auto kind : {Distribution::cube, Distribution::sphere, Distribution::plummer}) {
    const auto bodies = generate(kind, 4096, 2);
    const TraversalConfig cfg{0.2, 64, false};
    const auto ref = harness::single_rank(bodies, cfg, 64, 12);
    auto d = harness::distribute(bodies, 8, 64, 12);
    harness::exchange(d, cfg.theta);
    const auto pot = harness::evaluate(d, cfg, bodies.size());
    CHECK(d.missing == 0);
    double worst = 0;
    for (std::size_t i = 0; i < pot.size(); ++i) worst = std::max(worst, std::abs(pot[i] - ref[i]) / std::abs(ref[i]));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("sufficiency across coarse settings and uneven ranks") {
  for (int ranks : {2, 3, 5, 7})
    for (double theta : {0.3, 0.6, 0.9}) {
      const auto bodies = generate(Distribution::plummer, 1500, std::uint64_t(ranks));
      auto d = harness::distribute(bodies, ranks, 8, 3);
      harness::exchange(d, theta);
      harness::evaluate(d, {theta, 16, false}, bodies.size());
      CHECK(d.missing == 0);
    }
}

TEST_CASE("fragment size never grows with distance") {
  const auto bodies = generate(Distribution::cube, 20000, 3);
  auto d = harness::distribute(bodies, 16, 32, 4);
  for (int sender = 0; sender < 16; ++sender) {
    const Box& own = d.partition.map.domains[std::size_t(sender)];
    std::vector<std::pair<double, std::size_t>> by_distance;
    for (int r = 0; r < 16; ++r) {
      if (r == sender) continue;
      const Box& dom = d.partition.map.domains[std::size_t(r)];
      by_distance.push_back({norm(dom.center() - own.center()),
                             select_export(d.trees[std::size_t(sender)], dom, 0.5).cells.size()});
    }
    std::sort(by_distance.begin(), by_distance.end());
    for (std::size_t i = 1; i < by_distance.size(); ++i) CHECK(by_distance[i].second <= by_distance[i - 1].second);
  }
}
