#include "asyncfmm/partition.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace asyncfmm {

double body_weight(std::uint64_t local, std::uint64_t remote, const WeightParams& params) {
  return double(local) + params.alpha * double(remote);
}

SplitResult histogram_split(std::span<const WeightedPoints> ranks, double lo, double hi, double target_fraction,
                            int rounds, int bins) {
  if (!(target_fraction > 0.0 && target_fraction < 1.0))
    throw std::invalid_argument("histogram_split: target fraction must lie in (0, 1)");
  if (rounds < 1 || bins < 1) throw std::invalid_argument("histogram_split: rounds and bins must be positive");

  SplitResult out;
  for (const auto& r : ranks)
    for (double w : r.weight) out.total += w;
  if (!(out.total > 0.0)) throw std::domain_error("histogram_split: zero total weight");
  out.lo = lo;
  out.hi = hi;
  out.bin_weight = out.total;
  if (!(hi > lo)) {
    out.splitter = lo;
    return out;
  }

  // Each rank tracks which of its points are still inside the interval, so
  // bin membership stays consistent from round to round.
  std::vector<std::vector<int>> bin_of(ranks.size());
  for (std::size_t r = 0; r < ranks.size(); ++r) bin_of[r].assign(ranks[r].coord.size(), 0);
  int active = 0;

  const double target = target_fraction * out.total;
  std::vector<double> hist(static_cast<std::size_t>(bins));
  for (int round = 0; round < rounds; ++round) {
    std::fill(hist.begin(), hist.end(), 0.0);
    const double width = (out.hi - out.lo) / bins;
    for (std::size_t r = 0; r < ranks.size(); ++r) {
      const auto& pts = ranks[r];
      for (std::size_t i = 0; i < pts.coord.size(); ++i) {
        if (bin_of[r][i] != active) continue;
        const double f = std::floor((pts.coord[i] - out.lo) / width);
        const int b = f < 0.0 ? 0 : f >= bins ? bins - 1 : int(f);
        bin_of[r][i] = b;
        hist[std::size_t(b)] += pts.weight[i];
      }
    }
    int chosen = bins - 1;
    double cumulative = out.below;
    for (int b = 0; b < bins; ++b) {
      if (cumulative + hist[std::size_t(b)] >= target) {
        chosen = b;
        break;
      }
      cumulative += hist[std::size_t(b)];
    }
    if (chosen == bins - 1 && cumulative + hist.back() < target) {
      cumulative = out.below;
      for (int b = 0; b < bins - 1; ++b) cumulative += hist[std::size_t(b)];
    }
    out.below = cumulative;
    out.bin_weight = hist[std::size_t(chosen)];
    const double new_lo = out.lo + chosen * width;
    out.hi = chosen == bins - 1 ? out.hi : out.lo + (chosen + 1) * width;
    out.lo = new_lo;
    // points outside the chosen bin are parked with an impossible bin id
    for (auto& v : bin_of)
      for (int& b : v) b = b == chosen ? 0 : -1;
    active = 0;
  }
  out.splitter = 0.5 * (out.lo + out.hi);
  return out;
}

int PartitionMap::owner(const Vec3& p) const {
  int n = 0;
  while (nodes[std::size_t(n)].dim >= 0) {
    const Node& node = nodes[std::size_t(n)];
    n = p[std::size_t(node.dim)] <= node.coord ? node.left : node.right;
  }
  return nodes[std::size_t(n)].first_rank;
}

int ceil_log2(int k) {
  int levels = 0;
  while ((1 << levels) < k) ++levels;
  return levels;
}

int reduction_rounds(int ranks, int rounds) { return 1 + ceil_log2(ranks) * rounds; }

namespace {

struct Member {
  std::uint32_t rank;
  std::uint32_t index;
};

struct Multisection {
  std::span<const std::vector<Body>> held;
  const PartitionConfig& cfg;
  Partition& out;

  int split(std::vector<Member> members, const Box& box, int first_rank, int k) {
    const int id = int(out.map.nodes.size());
    out.map.nodes.push_back({-1, 0.0, first_rank, k, 0, -1, -1});
    if (k == 1) {
      out.map.domains[std::size_t(first_rank)] = box;
      for (const Member& m : members) {
        out.destination[m.rank][m.index] = first_rank;
        out.rank_weight[std::size_t(first_rank)] += held[m.rank][m.index].weight;
      }
      return id;
    }
    const int left_k = (k + 1) / 2;
    const int dim = box.longest_axis();
    const double lo = box.min[std::size_t(dim)], hi = box.max[std::size_t(dim)];

    std::vector<std::vector<double>> coord(held.size()), weight(held.size());
    double total = 0.0;
    for (const Member& m : members) {
      const Body& b = held[m.rank][m.index];
      coord[m.rank].push_back(b.position[std::size_t(dim)]);
      weight[m.rank].push_back(b.weight);
      total += b.weight;
    }
    double s = 0.5 * (lo + hi);
    if (total > 0.0) {
      std::vector<WeightedPoints> pts;
      for (std::size_t r = 0; r < held.size(); ++r) pts.push_back({coord[r], weight[r]});
      s = histogram_split(pts, lo, hi, double(left_k) / k, cfg.rounds, cfg.bins).splitter;
    }

    std::vector<Member> left, right;
    for (const Member& m : members)
      (held[m.rank][m.index].position[std::size_t(dim)] <= s ? left : right).push_back(m);
    Box lbox = box, rbox = box;
    lbox.max[std::size_t(dim)] = s;
    rbox.min[std::size_t(dim)] = s;
    const int l = split(std::move(left), lbox, first_rank, left_k);
    const int r = split(std::move(right), rbox, first_rank + left_k, k - left_k);
    auto& node = out.map.nodes[std::size_t(id)];
    node.dim = dim;
    node.coord = s;
    node.left_ranks = left_k;
    node.left = l;
    node.right = r;
    return id;
  }
};

}  // namespace

Partition orb_multisection(std::span<const std::vector<Body>> held, const Box& global, int ranks,
                           const PartitionConfig& cfg) {
  if (ranks < 1) throw std::invalid_argument("orb_multisection: ranks must be at least 1");
  Partition out;
  out.map.ranks = ranks;
  out.map.global = global;
  out.map.domains.resize(std::size_t(ranks));
  out.rank_weight.assign(std::size_t(ranks), 0.0);
  out.destination.resize(held.size());
  std::vector<Member> members;
  for (std::size_t r = 0; r < held.size(); ++r) {
    out.destination[r].assign(held[r].size(), 0);
    for (std::size_t i = 0; i < held[r].size(); ++i) members.push_back({std::uint32_t(r), std::uint32_t(i)});
  }
  Multisection{held, cfg, out}.split(std::move(members), global, 0, ranks);
  return out;
}

double adapt_alpha(std::span<const std::pair<double, double>> history) {
  if (history.empty()) throw std::invalid_argument("adapt_alpha: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].second < history[best].second) best = i;
  const double a = history[best].first;

  auto known = [&](double alpha) {
    for (const auto& h : history)
      if (std::abs(h.first - alpha) <= 1e-12 * std::max(1.0, std::abs(alpha))) return true;
    return false;
  };

  constexpr int kSteps = 8;
  if (a == 0.0) {
    for (int s = 0; s < kSteps; ++s) {
      const double probe = std::ldexp(1.0, -s);
      if (!known(probe)) return probe;
    }
    return a;
  }
  double factor = 2.0;
  for (int s = 0; s < kSteps; ++s) {
    if (!known(a * factor)) return a * factor;
    if (!known(a / factor)) return a / factor;
    factor = std::sqrt(factor);
  }
  return a;
}

}  // namespace asyncfmm
