// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "asyncfmm/cli.hpp"
#include "asyncfmm/runtime.hpp"

using namespace asyncfmm;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

constexpr Distribution kDistributions[] = {Distribution::cube, Distribution::sphere, Distribution::plummer};

// ---- 1 ------------------------------------------------------------------

Outcome accuracy_decay() {
  const auto bodies = generate(Distribution::cube, 10'000, 1);
  const auto exact = direct_sum(bodies);
  std::vector<double> errors;
  std::string detail = "error";
  for (int p : {4, 6, 8, 10}) {
    SimConfig c;
    c.order = p;
    c.traversal.theta = 0.4;
    const auto m = simulate(bodies, c);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      num += (m.potential[i] - exact.potential[i]) * (m.potential[i] - exact.potential[i]);
      den += exact.potential[i] * exact.potential[i];
    }
    errors.push_back(std::sqrt(num / den));
    detail += " P=" + std::to_string(p) + ":" + fmt("%.3e", errors.back());
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < errors.size(); ++i) decreasing = decreasing && errors[i] < errors[i - 1];
  const double ratio = errors.back() / errors.front();
  detail += ", P10/P4 " + fmt("%.3e", ratio);
  return {decreasing && ratio <= 1e-2, detail};
}

// ---- 2 ------------------------------------------------------------------

Outcome distributed_equivalence() {
  double worst = 0;
  for (Distribution d : kDistributions) {
    const auto bodies = generate(d, 4096, 2);
    SimConfig c;
    c.order = 12;
    c.ncrit = 64;
    c.traversal = {0.2, 256, false};
    const auto single = simulate(bodies, c);
    c.ranks = 8;
    c.net.latency_ms = 1.0;
    for (Mode mode : {Mode::bulk, Mode::async}) {
      c.mode = mode;
      const auto m = simulate(bodies, c);
      for (std::size_t i = 0; i < bodies.size(); ++i)
        worst = std::max(worst, std::abs(m.potential[i] - single.potential[i]) / std::abs(single.potential[i]));
    }
  }
  return {worst <= 1e-9, "worst per-body relative difference " + fmt("%.3e", worst) + " (theta 0.2, P 12)"};
}

// ---- 3 ------------------------------------------------------------------

// Counts, for every (target id, source id), how often the pair log covers it.
std::vector<int> cover_counts(const Tree& target, const Tree& source, const PairLog& log, std::size_t n) {
  std::vector<int> counts(n * n, 0);
  for (const auto& e : log.entries) {
    const Cell& t = target.cells[e.target];
    const Cell& s = source.cells[e.source];
    for (std::uint32_t i = t.body_begin; i < t.body_begin + t.body_count; ++i)
      for (std::uint32_t j = s.body_begin; j < s.body_begin + s.body_count; ++j)
        ++counts[target.bodies[i].id * n + source.bodies[j].id];
  }
  return counts;
}

Outcome traversal_coverage() {
  Rng rng(2024);
  int passed = 0;
  std::size_t largest = 0;
  for (int k = 0; k < 20; ++k) {
    const auto n = std::size_t(1 + rng.uniform() * 1023);
    const Distribution d = kDistributions[k % 3];
    const int ncrit = 1 + int(rng.uniform() * 32);
    const double theta = 0.1 + 0.8 * rng.uniform();
    const bool mutual = k % 4 == 3;
    auto bodies = generate(d, n, 100 + std::uint64_t(k));
    Tree tree = build(bodies, global_bounds(bodies), ncrit);
    upward_pass(tree, 3);
    PairLog log;
    dual_traverse(tree, SourceView::of(tree), {theta, 1 + int(rng.uniform() * 200), mutual}, {true, &log});
    // mutual pairs are logged in both directions
    const auto counts = cover_counts(tree, tree, log, n);
    const bool ok = std::all_of(counts.begin(), counts.end(), [](int c) { return c == 1; }) &&
                    coverage_check(tree, SourceView::of(tree), log, n).exactly_once();
    passed += ok;
    largest = std::max(largest, n);
  }
  return {passed == 20, std::to_string(passed) + "/20 instances exactly once, largest N " + std::to_string(largest)};
}

// ---- 4 ------------------------------------------------------------------

Outcome partition_balance() {
  double worst = 0;
  std::string detail;
  for (Distribution d : kDistributions) {
    auto bodies = generate(d, 100'000, 3);
    // weights: interaction list lengths from a global count traversal
    Tree tree = build(bodies, global_bounds(bodies), 64);
    upward_pass(tree, 1);
    const auto stats = dual_traverse(tree, SourceView::of(tree), {0.4, 1000, false}, {false, nullptr});
    const auto lists = body_lists(tree, stats);
    std::vector<Body> weighted = tree.bodies;
    for (std::size_t i = 0; i < weighted.size(); ++i) weighted[i].weight = double(lists.local[i]);
    for (int ranks : {16, 33}) {
      std::vector<std::vector<Body>> held(static_cast<std::size_t>(ranks));
      for (std::size_t i = 0; i < weighted.size(); ++i) held[i * std::size_t(ranks) / weighted.size()].push_back(weighted[i]);
      const auto part = orb_multisection(held, global_bounds(bodies), ranks, {});
      const double mean =
          std::accumulate(part.rank_weight.begin(), part.rank_weight.end(), 0.0) / double(ranks);
      const double ratio = *std::max_element(part.rank_weight.begin(), part.rank_weight.end()) / mean;
      worst = std::max(worst, ratio);
      detail += std::string(detail.empty() ? "" : ", ") + std::string(to_string(d)) + "/" + std::to_string(ranks) +
                " " + fmt("%.4f", ratio);
    }
  }
  return {worst <= 1.05, "max/mean weight " + detail};
}

// ---- 5 ------------------------------------------------------------------

Outcome weighting_effectiveness() {
  const auto bodies = generate(Distribution::plummer, 100'000, 4);
  SimConfig c;
  c.ranks = 16;
  c.order = 4;
  c.ncrit = 64;
  c.steps = 3;
  c.weighting = Weighting::interaction;
  const auto inter = simulate(bodies, c);
  c.weighting = Weighting::eq1;
  const auto eq1 = simulate(bodies, c);
  const double r1 = inter.steps[0].traverse_ratio();
  const double r3 = inter.steps[2].traverse_ratio();
  const double e3 = eq1.steps[2].traverse_ratio();
  const bool ok = r3 < r1 && e3 <= r3 * 1.02;
  return {ok, "Traverse max/mean: step1 uniform " + fmt("%.4f", r1) + ", step3 interaction " + fmt("%.4f", r3) +
                  ", step3 eq1 " + fmt("%.4f", e3) + " (alpha " + fmt("%.3g", eq1.steps[2].alpha) + ")"};
}

// ---- 6 ------------------------------------------------------------------

Outcome async_advantage() {
  bool ok = true;
  std::string detail;
  for (Distribution d : kDistributions) {
    const auto bodies = generate(d, 32768, 5);
    SimConfig c;
    c.ranks = 16;
    c.order = 4;
    c.ncrit = 64;
    c.steps = 2;
    auto makespans = [&](double latency) {
      c.net.latency_ms = latency;
      c.mode = Mode::bulk;
      const double bulk = simulate(bodies, c).makespan_ms;
      c.mode = Mode::async;
      const double async = simulate(bodies, c).makespan_ms;
      return std::pair{bulk, async};
    };
    const auto [b1, a1] = makespans(1.0);
    const auto [b5, a5] = makespans(5.0);
    const auto [b0, a0] = makespans(0.0);
    const double gain5 = 1.0 - a5 / b5;
    const double gap0 = std::abs(a0 - b0) / b0;
    ok = ok && a1 <= b1 && gain5 >= 0.05 && gap0 <= 0.01;
    detail += std::string(detail.empty() ? "" : "; ") + std::string(to_string(d)) + ": 1ms " + fmt("%.1f", a1) + "/" +
              fmt("%.1f", b1) + ", 5ms gain " + fmt("%.1f%%", 100 * gain5) + ", zero-net gap " +
              fmt("%.2e", gap0);
  }
  return {ok, "async/bulk ms " + detail};
}

// ---- 7 ------------------------------------------------------------------

Outcome splitter_oracle() {
  Rng rng(77);
  int passed = 0;
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const int nranks = 1 + int(rng.uniform() * 6);
    const double fraction = 0.05 + 0.9 * rng.uniform();
    std::vector<std::vector<double>> coord(static_cast<std::size_t>(nranks)), weight(static_cast<std::size_t>(nranks));
    std::vector<std::pair<double, double>> all;
    for (int r = 0; r < nranks; ++r) {
      const int n = 1 + int(rng.uniform() * 400);
      for (int i = 0; i < n; ++i) {
        const double x = k % 2 ? std::pow(rng.uniform(), 3.0) : rng.uniform();
        const double w = 0.1 + rng.uniform() * (k % 3 == 0 ? 10.0 : 1.0);
        coord[std::size_t(r)].push_back(x);
        weight[std::size_t(r)].push_back(w);
        all.push_back({x, w});
      }
    }
    std::vector<WeightedPoints> pts;
    for (int r = 0; r < nranks; ++r) pts.push_back({coord[std::size_t(r)], weight[std::size_t(r)]});
    const auto split = histogram_split(pts, 0.0, 1.0, fraction);
    // full-sort weighted quantile
    std::sort(all.begin(), all.end());
    const double total = std::accumulate(all.begin(), all.end(), 0.0, [](double s, auto& p) { return s + p.second; });
    double acc = 0, median = all.back().first;
    for (const auto& [x, w] : all) {
      acc += w;
      if (acc >= fraction * total) {
        median = x;
        break;
      }
    }
    const double tol = split.hi - split.lo;
    const double miss = std::abs(split.splitter - median);
    worst = std::max(worst, miss / tol);
    passed += miss <= tol;
  }
  return {passed == 100, std::to_string(passed) + "/100 within one final bin (worst " + fmt("%.2f", worst) + " bins)"};
}

// ---- 8 ------------------------------------------------------------------

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

Outcome kernel_algebra() {
  Rng rng(8);
  constexpr int P = 8;
  const Expansion& exp = Expansion::of(P);
  double m2m_err = 0, l2l_err = 0, m2l_err = 0;

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Body> bodies(30);
    const Vec3 child{0.25, 0.25, 0.25}, parent{0.5, 0.5, 0.5};
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      for (int d = 0; d < 3; ++d) bodies[i].position[std::size_t(d)] = child[std::size_t(d)] + 0.2 * (rng.uniform() - 0.5);
      bodies[i].charge = rng.uniform() - 0.3;
    }
    const auto direct = p2m(P, parent, bodies);
    const auto shifted = m2m(P, p2m(P, child, bodies), child - parent);
    m2m_err = std::max(m2m_err, rel_diff(shifted, direct));

    // L2L of a degree < P polynomial is exact: compare point evaluations
    std::vector<double> L(exp.size());
    for (double& v : L) v = rng.uniform() - 0.5;
    const Vec3 shift{0.1, -0.05, 0.07};
    const auto Lc = l2l(P, L, shift);
    std::vector<double> from_parent, from_child;
    for (int k = 0; k < 5; ++k) {
      const Vec3 y{0.1 * rng.uniform(), 0.1 * rng.uniform(), 0.1 * rng.uniform()};
      std::vector<Body> a(1), b(1);
      a[0].position = y + shift;
      b[0].position = y + shift;
      l2p(exp, L, {0, 0, 0}, a);
      l2p(exp, Lc, shift, b);
      from_parent.push_back(a[0].potential);
      from_child.push_back(b[0].potential);
    }
    l2l_err = std::max(l2l_err, rel_diff(from_child, from_parent));
  }

  // monopole q at distance d along an axis
  for (double d : {1.0, 2.5, 7.0}) {
    for (int axis = 0; axis < 3; ++axis) {
      const double q = 0.75;
      std::vector<double> M(exp.size(), 0.0);
      M[0] = q;
      Vec3 disp{0, 0, 0};
      disp[std::size_t(axis)] = d;
      const auto L = m2l(P, M, disp);
      int e[3] = {0, 0, 0};
      e[axis] = 1;
      const double l0 = L[0], l1 = L[std::size_t(exp.find(e[0], e[1], e[2]))];
      m2l_err = std::max({m2l_err, std::abs(l0 - q / d) / (q / d), std::abs(l1 - q / (d * d)) / (q / (d * d))});
    }
  }
  const bool ok = m2m_err <= 1e-12 && l2l_err <= 1e-12 && m2l_err <= 1e-14;
  return {ok, "M2M " + fmt("%.2e", m2m_err) + ", L2L " + fmt("%.2e", l2l_err) + ", M2L monopole " + fmt("%.2e", m2l_err)};
}

// ---- 9 ------------------------------------------------------------------

Outcome determinism() {
  RunConfig c;
  c.num_bodies = 3000;
  c.order = 6;
  c.ranks = 6;
  c.steps = 3;
  c.mode = Mode::async;
  c.distribution = Distribution::plummer;
  c.latency_ms = 0.7;
  c.samples = 100;
  std::ostringstream a, b;
  cmd_run(c, a);
  cmd_run(c, b);
  const bool same = a.str() == b.str();
  return {same, std::to_string(a.str().size()) + " bytes of CSV, " + (same ? "identical" : "different")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "accuracy decay", 60, accuracy_decay},
      {2, "distributed equivalence", 30, distributed_equivalence},
      {3, "traversal coverage", 60, traversal_coverage},
      {4, "partition balance", 30, partition_balance},
      {5, "weighting effectiveness", 120, weighting_effectiveness},
      {6, "async advantage", 120, async_advantage},
      {7, "splitter oracle", 10, splitter_oracle},
      {8, "kernel algebra", 5, kernel_algebra},
      {9, "determinism", 1e9, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = out.pass && in_time;
    failures += !pass;
    std::printf("%s criterion %d (%s): %s [%.1f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(), secs,
                in_time ? "" : ", over time limit");
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
