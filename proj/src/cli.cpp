#include "asyncfmm/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

namespace asyncfmm {

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double to_double(std::string_view key, std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || std::isnan(v))
    throw ConfigError(std::string(key) + ": '" + s + "' is not a number");
  return v;
}

//! Accepts 1e8-style input as long as the value is a whole number.
std::uint64_t to_count(std::string_view key, std::string_view text) {
  const double v = to_double(key, text);
  if (!(v >= 0.0) || v > 9.0e18 || v != std::floor(v))
    throw ConfigError(std::string(key) + ": '" + std::string(text) + "' is not a non-negative integer");
  return std::uint64_t(v);
}

int to_int(std::string_view key, std::string_view text) {
  const auto v = to_count(key, text);
  if (v > std::uint64_t(std::numeric_limits<int>::max())) throw ConfigError(std::string(key) + ": value too large");
  return int(v);
}

std::vector<int> to_int_list(std::string_view key, std::string_view text) {
  std::vector<int> out;
  std::string item;
  std::istringstream is{std::string(text)};
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(to_int(key, item));
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::string_view key;
  std::string_view help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      {"numBodies", "number of bodies (1e5 notation accepted)",
       [](RunConfig& c, std::string_view v) { c.num_bodies = to_count("numBodies", v); },
       [](const RunConfig& c) { return std::to_string(c.num_bodies); }},
      {"P", "expansion order", [](RunConfig& c, std::string_view v) { c.order = to_int("P", v); },
       [](const RunConfig& c) { return std::to_string(c.order); }},
      {"theta", "multipole acceptance parameter, 0 < theta < 1",
       [](RunConfig& c, std::string_view v) { c.theta = to_double("theta", v); },
       [](const RunConfig& c) { return fmt(c.theta); }},
      {"ncrit", "maximum bodies per leaf", [](RunConfig& c, std::string_view v) { c.ncrit = to_int("ncrit", v); },
       [](const RunConfig& c) { return std::to_string(c.ncrit); }},
      {"nspawn", "minimum bodies per spawned traversal task",
       [](RunConfig& c, std::string_view v) { c.nspawn = to_int("nspawn", v); },
       [](const RunConfig& c) { return std::to_string(c.nspawn); }},
      {"distribution", "cube, sphere or plummer",
       [](RunConfig& c, std::string_view v) { c.distribution = parse_distribution(v); },
       [](const RunConfig& c) { return std::string(to_string(c.distribution)); }},
      {"ranks", "simulated ranks", [](RunConfig& c, std::string_view v) { c.ranks = to_int("ranks", v); },
       [](const RunConfig& c) { return std::to_string(c.ranks); }},
      {"mode", "bulkSync or async", [](RunConfig& c, std::string_view v) { c.mode = parse_mode(v); },
       [](const RunConfig& c) { return std::string(to_string(c.mode)); }},
      {"alpha0", "initial alpha of the eq1 weights",
       [](RunConfig& c, std::string_view v) { c.alpha0 = to_double("alpha0", v); },
       [](const RunConfig& c) { return fmt(c.alpha0); }},
      {"steps", "time steps", [](RunConfig& c, std::string_view v) { c.steps = to_int("steps", v); },
       [](const RunConfig& c) { return std::to_string(c.steps); }},
      {"seed", "body generator seed", [](RunConfig& c, std::string_view v) { c.seed = to_count("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"perMessageLatency", "virtual ms per message",
       [](RunConfig& c, std::string_view v) { c.latency_ms = to_double("perMessageLatency", v); },
       [](const RunConfig& c) { return fmt(c.latency_ms); }},
      {"bandwidth", "bytes per virtual ms (inf allowed)",
       [](RunConfig& c, std::string_view v) { c.bandwidth = to_double("bandwidth", v); },
       [](const RunConfig& c) { return fmt(c.bandwidth); }},
      {"reductionLatency", "virtual ms per reduction hop, or auto to follow perMessageLatency",
       [](RunConfig& c, std::string_view v) {
         c.reduction_ms = v == "auto" ? -1.0 : to_double("reductionLatency", v);
         if (v != "auto" && c.reduction_ms < 0.0) throw ConfigError("reductionLatency must be >= 0");
       },
       [](const RunConfig& c) { return c.reduction_ms < 0.0 ? std::string("auto") : fmt(c.reduction_ms); }},
      {"output", "output path (stdout when empty)", [](RunConfig& c, std::string_view v) { c.output = v; },
       [](const RunConfig& c) { return c.output; }},
      {"weighting", "uniform, interaction or eq1",
       [](RunConfig& c, std::string_view v) { c.weighting = parse_weighting(v); },
       [](const RunConfig& c) { return std::string(to_string(c.weighting)); }},
      {"allowLarge", "lift the desk size limit",
       [](RunConfig& c, std::string_view v) {
         if (v == "true" || v == "1")
           c.allow_large = true;
         else if (v == "false" || v == "0")
           c.allow_large = false;
         else
           throw ConfigError("allowLarge: expected true or false");
       },
       [](const RunConfig& c) { return std::string(c.allow_large ? "true" : "false"); }},
      {"samples", "oracle targets (run: 0 disables; verify: 0 picks automatically)",
       [](RunConfig& c, std::string_view v) { c.samples = to_count("samples", v); },
       [](const RunConfig& c) { return std::to_string(c.samples); }},
      {"orders", "comma-separated expansion orders for verify",
       [](RunConfig& c, std::string_view v) { c.orders = to_int_list("orders", v); },
       [](const RunConfig& c) { return join(c.orders); }},
      {"rankList", "comma-separated rank counts for scaling",
       [](RunConfig& c, std::string_view v) { c.rank_list = to_int_list("rankList", v); },
       [](const RunConfig& c) { return join(c.rank_list); }},
      {"trace", "JSON event trace path for run", [](RunConfig& c, std::string_view v) { c.trace = v; },
       [](const RunConfig& c) { return c.trace; }},
  };
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::ostream* open_output(const RunConfig& cfg, std::ofstream& file, std::ostream& fallback) {
  if (cfg.output.empty()) return &fallback;
  file.open(cfg.output);
  if (!file) throw ConfigError("cannot open output '" + cfg.output + "'");
  return &file;
}

std::vector<Body> bodies_for(const RunConfig& cfg) {
  return generate(cfg.distribution, std::size_t(cfg.num_bodies), cfg.seed);
}

}  // namespace

void RunConfig::validate() const {
  if (num_bodies < 1) throw ConfigError("numBodies must be at least 1");
  if (order < 1 || order > kMaxOrder) throw ConfigError("P must lie in [1, 16]");
  if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("theta must lie in (0, 1), got " + fmt_short(theta));
  if (ncrit < 1) throw ConfigError("ncrit must be at least 1");
  if (nspawn < 1) throw ConfigError("nspawn must be at least 1");
  if (ranks < 1 || ranks > kMaxRanks) throw ConfigError("ranks must lie in [1, 4096]");
  if (!(alpha0 >= 0.0) || !std::isfinite(alpha0)) throw ConfigError("alpha0 must be finite and >= 0");
  if (steps < 1) throw ConfigError("steps must be at least 1");
  for (int p : orders)
    if (p < 1 || p > kMaxOrder) throw ConfigError("orders must lie in [1, 16]");
  for (int r : rank_list)
    if (r < 1 || r > kMaxRanks) throw ConfigError("rankList entries must lie in [1, 4096]");
  sim().net.validate();
}

void RunConfig::check_feasible() const {
  if (num_bodies > kDeskBodyLimit && !allow_large)
    throw InfeasibleError("numBodies " + std::to_string(num_bodies) + " exceeds the desk limit of " +
                          std::to_string(kDeskBodyLimit) +
                          " bodies; every simulated rank really runs its kernels, so pass --allowLarge only "
                          "with memory and hours to spare");
}

SimConfig RunConfig::sim() const {
  SimConfig s;
  s.ranks = ranks;
  s.order = order;
  s.ncrit = ncrit;
  s.traversal = {theta, nspawn, false};
  s.steps = steps;
  s.alpha0 = alpha0;
  s.mode = mode;
  s.weighting = weighting;
  s.net.latency_ms = latency_ms;
  s.net.bandwidth = bandwidth;
  s.net.reduction_ms = reduction_ms;
  s.oracle_samples = samples;
  s.seed = seed;
  s.trace = !trace.empty();
  return s;
}

std::size_t RunConfig::oracle_samples() const {
  if (samples > 0) return samples;
  return num_bodies <= 10'000 ? std::size_t(num_bodies) : 1000;
}

std::vector<std::string_view> config_keys() {
  std::vector<std::string_view> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void set_field(RunConfig& cfg, std::string_view key, std::string_view value) { field(key).set(cfg, value); }

std::string get_field(const RunConfig& cfg, std::string_view key) { return field(key).get(cfg); }

std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(cfg) + "\n";
  return out;
}

RunConfig parse_config_text(std::string_view text, RunConfig base) {
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    set_field(base, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return base;
}

Command parse_command(const std::vector<std::string>& args) {
  CLI::App app{"Simulated distributed FMM: bulk-synchronous versus asynchronous execution", "fmmsim"};
  app.require_subcommand(1);
  std::map<std::string, std::string> given;
  for (const auto& f : fields()) {
    if (f.key == "allowLarge") continue;
    app.add_option("--" + std::string(f.key), given[std::string(f.key)], std::string(f.help));
  }
  bool allow_large = false;
  app.add_flag("--allowLarge", allow_large, "lift the desk size limit");
  std::string config_path;
  app.add_option("--config", config_path, "key=value file; flags override it");
  for (const char* name : {"run", "scaling", "verify", "balance"}) app.add_subcommand(name)->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    throw;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  Command cmd;
  cmd.name = app.get_subcommands().front()->get_name();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read config file '" + config_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    cmd.config = parse_config_text(ss.str(), cmd.config);
  }
  for (const auto& f : fields()) {
    const std::string key(f.key);
    if (key == "allowLarge") continue;
    if (app.get_option("--" + key)->count() > 0) f.set(cmd.config, given[key]);
  }
  if (allow_large) cmd.config.allow_large = true;
  cmd.config.validate();
  return cmd;
}

std::string_view csv_header() { return "step,rank,phase,virtual_ms,l_sum,r_sum,error,mode,alpha,makespan_ms"; }

void write_csv(std::ostream& os, const Metrics& m, const RunConfig&) {
  os << csv_header() << "\n";
  for (const auto& step : m.steps) {
    const std::string error = step.error ? fmt_short(*step.error) : std::string();
    for (int r = 0; r < m.ranks; ++r) {
      for (int p = 0; p < kPhaseCount; ++p) {
        os << step.step << "," << r << "," << phase_name(Phase(p)) << ","
           << fmt_short(step.phase[std::size_t(r)][std::size_t(p)]) << "," << step.l_sum[std::size_t(r)] << ","
           << step.r_sum[std::size_t(r)] << "," << error << "," << to_string(m.mode) << "," << fmt_short(step.alpha)
           << "," << fmt_short(step.makespan_ms) << "\n";
      }
    }
  }
}

Metrics cmd_run(const RunConfig& cfg, std::ostream& csv) {
  cfg.validate();
  cfg.check_feasible();
  const auto bodies = bodies_for(cfg);
  Metrics m = simulate(bodies, cfg.sim());
  write_csv(csv, m, cfg);
  if (!cfg.trace.empty()) {
    std::ofstream out(cfg.trace);
    if (!out) throw ConfigError("cannot open trace file '" + cfg.trace + "'");
    out << trace_json(m) << "\n";
  }
  return m;
}

void cmd_scaling(const RunConfig& cfg, std::ostream& csv) {
  cfg.validate();
  cfg.check_feasible();
  const auto bodies = bodies_for(cfg);
  csv << "ranks,mode,makespan_ms";
  for (int p = 0; p < kPhaseCount; ++p) csv << "," << phase_name(Phase(p));
  csv << "\n";
  for (int ranks : cfg.rank_list) {
    RunConfig c = cfg;
    c.ranks = ranks;
    const Metrics m = simulate(bodies, c.sim());
    // phase columns are rank means summed over steps
    PhaseTimes mean{};
    for (const auto& step : m.steps)
      for (const auto& rank : step.phase)
        for (int p = 0; p < kPhaseCount; ++p) mean[std::size_t(p)] += rank[std::size_t(p)] / ranks;
    csv << ranks << "," << to_string(m.mode) << "," << fmt_short(m.makespan_ms);
    for (double t : mean) csv << "," << fmt_short(t);
    csv << "\n";
  }
}

std::vector<double> cmd_verify(const RunConfig& cfg, std::ostream& table) {
  cfg.validate();
  cfg.check_feasible();
  const auto bodies = bodies_for(cfg);
  const auto orders = cfg.orders.empty() ? std::vector<int>{cfg.order} : cfg.orders;
  const std::size_t samples = cfg.oracle_samples();
  table << "P,theta,samples,error\n";
  std::vector<double> errors;
  for (int p : orders) {
    RunConfig c = cfg;
    c.order = p;
    c.samples = samples;
    const Metrics m = simulate(bodies, c.sim());
    errors.push_back(*m.steps.back().error);
    table << p << "," << fmt_short(cfg.theta) << "," << std::min<std::size_t>(samples, bodies.size()) << ","
          << fmt_short(errors.back()) << "\n";
  }
  return errors;
}

void cmd_balance(const RunConfig& cfg, std::ostream& csv) {
  cfg.validate();
  cfg.check_feasible();
  csv << "distribution,weighting,step,rank,traverse_ms,max_over_mean\n";
  for (Distribution d : {Distribution::cube, Distribution::sphere, Distribution::plummer}) {
    RunConfig c = cfg;
    c.distribution = d;
    const Metrics m = simulate(bodies_for(c), c.sim());
    for (const auto& step : m.steps) {
      const double ratio = step.traverse_ratio();
      for (int r = 0; r < m.ranks; ++r)
        csv << to_string(d) << "," << to_string(cfg.weighting) << "," << step.step << "," << r << ","
            << fmt_short(step.phase[std::size_t(r)][std::size_t(Phase::traverse)]) << "," << fmt_short(ratio)
            << "\n";
    }
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Command cmd;
  try {
    cmd = parse_command(args);
  } catch (const CLI::CallForHelp&) {
    out << "usage: fmmsim {run|scaling|verify|balance} [--key value]... [--config file]\n\nkeys:\n";
    for (const auto& f : fields()) out << "  --" << f.key << "  " << f.help << "\n";
    out << "  --config  key=value file; flags override it\n";
    return 0;
  } catch (const ConfigError& e) {
    err << "fmmsim: " << e.what() << "\n";
    return 2;
  }

  try {
    std::ofstream file;
    std::ostream* dest = open_output(cmd.config, file, out);
    if (cmd.name == "run") {
      const Metrics m = cmd_run(cmd.config, *dest);
      if (dest != &out) out << metrics_report(m);
    } else if (cmd.name == "scaling") {
      cmd_scaling(cmd.config, *dest);
    } else if (cmd.name == "verify") {
      cmd_verify(cmd.config, *dest);
    } else {
      cmd_balance(cmd.config, *dest);
    }
  } catch (const ConfigError& e) {
    err << "fmmsim: " << e.what() << "\n";
    return 2;
  } catch (const InfeasibleError& e) {
    err << "fmmsim: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "fmmsim: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace asyncfmm
