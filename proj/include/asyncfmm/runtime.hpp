#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "asyncfmm/let.hpp"
#include "asyncfmm/partition.hpp"
#include "asyncfmm/traversal.hpp"

namespace asyncfmm {

//! Deadlock or a violated phase ordering inside the simulator.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { bulk, async };
enum class Weighting { uniform, interaction, eq1 };

Mode parse_mode(std::string_view name);
std::string_view to_string(Mode mode);
Weighting parse_weighting(std::string_view name);
std::string_view to_string(Weighting weighting);

enum class Phase : int {
  comm_partition,
  build,
  upward,
  comm_let_bodies,
  comm_let_cells,
  traverse,
  downward,
  idle,
};
inline constexpr int kPhaseCount = 8;
std::string_view phase_name(Phase phase);

//! Times are virtual milliseconds, bandwidth is bytes per millisecond.
struct NetModel {
  double latency_ms = 0.01;
  double bandwidth = std::numeric_limits<double>::infinity();
  double reduction_ms = -1.0;  //!< negative: same as latency_ms

  double reduction_latency() const { return reduction_ms < 0.0 ? latency_ms : reduction_ms; }
  double transit(std::size_t bytes) const;
  //! Tree-shaped collective: ceil(log2 ranks) hops.
  double collective(int ranks) const;
  void validate() const;
};

//! Nanoseconds per unit of work.
struct CostModel {
  double p2p_pair_ns = 2.0;
  double m2l_term_ns = 1.0;  //!< per (beta, gamma) term of one M2L
  double m2m_term_ns = 1.0;
  double l2l_term_ns = 1.0;
  double p2m_coeff_ns = 1.0;  //!< per body and coefficient
  double l2p_coeff_ns = 4.0;
  double build_body_ns = 200.0;
  double visit_ns = 10.0;  //!< cell pair examined by a kernel traversal
  double histogram_body_ns = 2.0;
  double pack_byte_ns = 0.1;  //!< packing or unpacking
};

struct WorkUnits {
  int order = 1;
  std::uint64_t p2p_pairs = 0;
  std::uint64_t m2l_calls = 0;
  std::uint64_t m2m_calls = 0;
  std::uint64_t l2l_calls = 0;
  std::uint64_t p2m_bodies = 0;
  std::uint64_t l2p_bodies = 0;
  std::uint64_t build_bodies = 0;
  std::uint64_t visits = 0;
  std::uint64_t histogram_bodies = 0;
  std::uint64_t bytes = 0;

  WorkUnits& operator+=(const WorkUnits& o);
};

//! Virtual milliseconds charged for `work`.
double compute_cost(const WorkUnits& work, const CostModel& cost);

struct SimConfig {
  int ranks = 1;
  int order = 10;
  int ncrit = 64;
  TraversalConfig traversal{0.4, 1000, false};
  int steps = 1;
  double alpha0 = 1.0;
  Mode mode = Mode::bulk;
  Weighting weighting = Weighting::eq1;
  NetModel net;
  CostModel cost;
  PartitionConfig partition;
  std::size_t oracle_samples = 0;  //!< 0 disables the sampled direct-sum error
  std::uint64_t seed = 1;          //!< selects oracle samples
  bool trace = false;
  //! Fault injection: messages for which this returns true are lost.
  std::function<bool(int src, int dst, std::string_view what)> drop_message;

  void validate() const;
};

using PhaseTimes = std::array<double, kPhaseCount>;

struct StepMetrics {
  int step = 0;
  double alpha = 0.0;  //!< alpha behind this step's weights (0 for uniform weights)
  double end_ms = 0.0;
  double makespan_ms = 0.0;  //!< end of this step minus end of the previous one
  std::vector<PhaseTimes> phase;  //!< per rank
  std::vector<WorkUnits> work;    //!< per rank
  std::vector<std::uint64_t> bodies;
  std::vector<std::uint64_t> l_sum;
  std::vector<std::uint64_t> r_sum;
  std::vector<double> weight;  //!< partition weight per rank
  std::optional<double> error;

  double phase_total(int rank) const;
  //! max over ranks / mean over ranks of the Traverse phase.
  double traverse_ratio() const;
};

struct TraceRecord {
  double time_ms;
  std::uint64_t seq;
  std::string kind;
  int rank;
  int peer;
  int step;
  std::string detail;
  std::uint64_t bytes;
};

struct Metrics {
  Mode mode = Mode::bulk;
  int ranks = 1;
  double makespan_ms = 0.0;
  double critical_path_ms = 0.0;  //!< largest per-rank sum of task costs
  std::vector<double> busy_ms;     //!< per-rank sum of task costs
  std::uint64_t network_events = 0;
  std::uint64_t network_bytes = 0;
  std::vector<StepMetrics> steps;
  std::vector<double> potential;  //!< by body id, final step
  std::vector<Vec3> force;
  std::vector<TraceRecord> trace;
};

/// Runs `cfg.steps` FMM steps over `bodies` (ids must be 0..n-1) on
/// `cfg.ranks` simulated ranks. Kernels really execute; only time is
/// simulated. Throws SimulationError on deadlock or phase misordering.
Metrics simulate(const std::vector<Body>& bodies, const SimConfig& cfg);

//! One step under the given network model and schedule.
Metrics run_step(const std::vector<Body>& bodies, SimConfig cfg, const NetModel& net, Mode mode);

//! Per-step, per-rank, per-phase table of virtual milliseconds.
std::string metrics_report(const Metrics& metrics);

//! Trace as a JSON array, one object per simulated event.
std::string trace_json(const Metrics& metrics);

//! Relative L2 potential error over `samples` deterministic targets.
double sampled_error(const std::vector<Body>& bodies, const std::vector<double>& potential, std::size_t samples,
                     std::uint64_t seed);

}  // namespace asyncfmm
