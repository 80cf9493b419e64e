#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "asyncfmm/geometry.hpp"

namespace asyncfmm {

struct WeightParams {
  double alpha = 1.0;
};

//! w_i = l_i + alpha r_i.
double body_weight(std::uint64_t local, std::uint64_t remote, const WeightParams& params);

//! One rank's contribution to a histogram: coordinates along the split axis
//! and the matching weights.
struct WeightedPoints {
  std::span<const double> coord;
  std::span<const double> weight;
};

struct SplitResult {
  double splitter = 0.0;
  double lo = 0.0;  //!< final interval
  double hi = 0.0;
  double below = 0.0;       //!< weight left of the final interval
  double bin_weight = 0.0;  //!< weight inside the final interval
  double total = 0.0;
};

/// Iterative histogram refinement for the coordinate splitting off
/// `target_fraction` of the total weight. Each round bins the current
/// interval into `bins` equal bins (summed over ranks, as an allreduce
/// would) and narrows to the first bin whose cumulative weight reaches the
/// target. Returns the midpoint of the last interval, so the weight at or
/// below the splitter misses the target by at most the final bin weight.
/// Throws std::domain_error when the total weight is zero.
SplitResult histogram_split(std::span<const WeightedPoints> ranks, double lo, double hi, double target_fraction,
                            int rounds = 3, int bins = 64);

struct PartitionMap {
  struct Node {
    int dim = -1;  //!< -1 for a leaf
    double coord = 0.0;
    int first_rank = 0;
    int ranks = 1;
    int left_ranks = 0;
    int left = -1;
    int right = -1;
  };

  int ranks = 1;
  Box global;
  std::vector<Box> domains;
  std::vector<Node> nodes;  //!< splitter tree, root first

  //! Rank whose domain holds p; splitter coordinates belong to the lower side.
  int owner(const Vec3& p) const;
};

struct PartitionConfig {
  int rounds = 3;
  int bins = 64;
};

struct Partition {
  PartitionMap map;
  //! destination[r][i]: new rank of body i currently held by rank r.
  std::vector<std::vector<int>> destination;
  std::vector<double> rank_weight;  //!< weight assigned to each new rank
};

/// Weighted orthogonal recursive multisection of the bodies held by each
/// rank into `ranks` domains. A group of k ranks splits along the longest
/// axis of its domain into ceil(k/2) and floor(k/2) ranks at weight fraction
/// ceil(k/2)/k, using Body::weight.
Partition orb_multisection(std::span<const std::vector<Body>> held, const Box& global, int ranks,
                           const PartitionConfig& cfg = {});

//! Sequential reduction rounds of one multisection: the bounds reduction
//! plus `rounds` histogram reductions per level of the splitter tree.
int reduction_rounds(int ranks, int rounds);

//! ceil(log2(k)) for k >= 1.
int ceil_log2(int k);

/// Next alpha from the (alpha, runtime) history. Probes alternate around the
/// best alpha seen so far with multiplicative steps 2, 2^(1/2), 2^(1/4), ...,
/// trying the larger candidate first; a step is refined once both of its
/// candidates are known to be worse. Returns the best alpha after the
/// finest step is exhausted.
double adapt_alpha(std::span<const std::pair<double, double>> history);

}  // namespace asyncfmm
