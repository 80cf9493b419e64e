#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "asyncfmm/runtime.hpp"

namespace asyncfmm {

//! A run the desk machine should not attempt without --allowLarge.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kDeskBodyLimit = 2'000'000;
inline constexpr int kMaxRanks = 4096;

/// Parameters of one experiment. Flag and config-file keys use the field
/// names listed in config_keys().
struct RunConfig {
  std::uint64_t num_bodies = 10'000;
  int order = 10;
  double theta = 0.4;
  int ncrit = 64;
  int nspawn = 1000;
  Distribution distribution = Distribution::cube;
  int ranks = 1;
  Mode mode = Mode::bulk;
  double alpha0 = 1.0;
  int steps = 1;
  std::uint64_t seed = 1;
  double latency_ms = 0.01;
  double bandwidth = std::numeric_limits<double>::infinity();
  double reduction_ms = -1.0;  //!< negative: follow latency_ms
  std::string output;
  Weighting weighting = Weighting::eq1;
  bool allow_large = false;
  std::size_t samples = 0;  //!< 0: every body up to 1e4 bodies, else 1000
  std::vector<int> orders;  //!< verify sweep; empty means {order}
  std::vector<int> rank_list{1, 2, 4, 8, 16};
  std::string trace;  //!< JSON trace path for run

  //! Throws ConfigError on out-of-range values.
  void validate() const;
  //! Throws InfeasibleError past the desk limit unless allow_large.
  void check_feasible() const;
  SimConfig sim() const;
  std::size_t oracle_samples() const;

  bool operator==(const RunConfig&) const = default;
};

std::vector<std::string_view> config_keys();

//! Sets one field from its text form; throws ConfigError.
void set_field(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_field(const RunConfig& cfg, std::string_view key);

//! key=value lines; '#' starts a comment.
std::string to_config_text(const RunConfig& cfg);
RunConfig parse_config_text(std::string_view text, RunConfig base = {});

struct Command {
  std::string name;  //!< run, scaling, verify or balance
  RunConfig config;
};

/// Parses `fmmsim <command> [--key value]... [--config file]`. Values from
/// the config file are applied first, flags override them. Throws
/// ConfigError on unknown flags or bad values.
Command parse_command(const std::vector<std::string>& args);

std::string_view csv_header();
//! One row per step, rank and phase.
void write_csv(std::ostream& os, const Metrics& metrics, const RunConfig& cfg);

Metrics cmd_run(const RunConfig& cfg, std::ostream& csv);
void cmd_scaling(const RunConfig& cfg, std::ostream& csv);
//! Error of the sampled potential for each order in the sweep.
std::vector<double> cmd_verify(const RunConfig& cfg, std::ostream& table);
void cmd_balance(const RunConfig& cfg, std::ostream& csv);

//! Whole driver; returns the process exit code (0 ok, 2 usage, 3 infeasible).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace asyncfmm
