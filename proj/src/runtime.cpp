#include "asyncfmm/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace asyncfmm {

Mode parse_mode(std::string_view name) {
  if (name == "bulk" || name == "bulkSync") return Mode::bulk;
  if (name == "async") return Mode::async;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected bulkSync or async)");
}

std::string_view to_string(Mode mode) { return mode == Mode::bulk ? "bulkSync" : "async"; }

Weighting parse_weighting(std::string_view name) {
  if (name == "uniform") return Weighting::uniform;
  if (name == "interaction") return Weighting::interaction;
  if (name == "eq1") return Weighting::eq1;
  throw ConfigError("unknown weighting '" + std::string(name) + "' (expected uniform, interaction or eq1)");
}

std::string_view to_string(Weighting weighting) {
  switch (weighting) {
    case Weighting::uniform: return "uniform";
    case Weighting::interaction: return "interaction";
    case Weighting::eq1: return "eq1";
  }
  return "?";
}

std::string_view phase_name(Phase phase) {
  static constexpr std::array<std::string_view, kPhaseCount> names{
      "Comm partition", "Build", "Upward", "Comm LET bodies", "Comm LET cells", "Traverse", "Downward", "Idle"};
  return names[std::size_t(phase)];
}

double NetModel::transit(std::size_t bytes) const { return latency_ms + double(bytes) / bandwidth; }

double NetModel::collective(int ranks) const { return ceil_log2(ranks) * reduction_latency(); }

void NetModel::validate() const {
  if (!(latency_ms >= 0.0) || !std::isfinite(latency_ms)) throw ConfigError("perMessageLatency must be finite and >= 0");
  if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be > 0 (inf allowed)");
  if (std::isnan(reduction_ms) || std::isinf(reduction_ms)) throw ConfigError("reductionLatency must be finite");
}

WorkUnits& WorkUnits::operator+=(const WorkUnits& o) {
  p2p_pairs += o.p2p_pairs;
  m2l_calls += o.m2l_calls;
  m2m_calls += o.m2m_calls;
  l2l_calls += o.l2l_calls;
  p2m_bodies += o.p2m_bodies;
  l2p_bodies += o.l2p_bodies;
  build_bodies += o.build_bodies;
  visits += o.visits;
  histogram_bodies += o.histogram_bodies;
  bytes += o.bytes;
  return *this;
}

double compute_cost(const WorkUnits& w, const CostModel& c) {
  const double terms = double(Expansion::of(std::max(1, w.order)).pair_terms().size());
  const double coeffs = double(coeff_count(std::max(1, w.order)));
  const double ns = double(w.p2p_pairs) * c.p2p_pair_ns + double(w.m2l_calls) * terms * c.m2l_term_ns +
                    double(w.m2m_calls) * terms * c.m2m_term_ns + double(w.l2l_calls) * terms * c.l2l_term_ns +
                    double(w.p2m_bodies) * coeffs * c.p2m_coeff_ns + double(w.l2p_bodies) * coeffs * c.l2p_coeff_ns +
                    double(w.build_bodies) * c.build_body_ns + double(w.visits) * c.visit_ns +
                    double(w.histogram_bodies) * c.histogram_body_ns +
                    double(w.bytes) * c.pack_byte_ns;
  return ns * 1e-6;
}

void SimConfig::validate() const {
  if (ranks < 1) throw ConfigError("ranks must be at least 1");
  if (order < 1 || order > kMaxOrder) throw ConfigError("P must lie in [1, 16]");
  if (ncrit < 1) throw ConfigError("ncrit must be at least 1");
  asyncfmm::validate(traversal);
  if (traversal.mutual) throw ConfigError("mutual traversal cannot run across ranks");
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (!(alpha0 >= 0.0) || !std::isfinite(alpha0)) throw ConfigError("alpha0 must be finite and >= 0");
  if (partition.rounds < 1 || partition.bins < 2) throw ConfigError("partition needs rounds >= 1 and bins >= 2");
  net.validate();
}

double StepMetrics::phase_total(int rank) const {
  const auto& p = phase[std::size_t(rank)];
  return std::accumulate(p.begin(), p.end(), 0.0);
}

double StepMetrics::traverse_ratio() const {
  double mx = 0.0, sum = 0.0;
  for (const auto& p : phase) {
    const double t = p[std::size_t(Phase::traverse)];
    mx = std::max(mx, t);
    sum += t;
  }
  if (sum == 0.0) return 1.0;
  return mx / (sum / double(phase.size()));
}

double sampled_error(const std::vector<Body>& bodies, const std::vector<double>& potential, std::size_t samples,
                     std::uint64_t seed) {
  const std::size_t n = bodies.size();
  std::vector<std::size_t> targets;
  if (samples >= n) {
    targets.resize(n);
    std::iota(targets.begin(), targets.end(), std::size_t{0});
  } else {
    Rng rng(seed);
    const std::size_t offset = std::size_t(rng.uniform() * double(n));
    for (std::size_t k = 0; k < samples; ++k) targets.push_back((offset + k * n / samples) % n);
  }
  const auto exact = direct_sum(bodies, targets);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const double d = potential[targets[k]] - exact.potential[k];
    num += d * d;
    den += exact.potential[k] * exact.potential[k];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

namespace {

constexpr std::size_t kMessageHeaderBytes = 32;
constexpr std::size_t kBodyWireBytes = 48;  // position, charge, weight, id

enum class RankPhase { idle, partition, build, upward, exchange, traverse_local, traverse_remote, downward, done };

const char* rank_phase_name(RankPhase p) {
  switch (p) {
    case RankPhase::idle: return "idle";
    case RankPhase::partition: return "partition";
    case RankPhase::build: return "build";
    case RankPhase::upward: return "upward";
    case RankPhase::exchange: return "exchange";
    case RankPhase::traverse_local: return "traverse-local";
    case RankPhase::traverse_remote: return "traverse-remote";
    case RankPhase::downward: return "downward";
    case RankPhase::done: return "done";
  }
  return "?";
}

struct Task {
  Phase phase;
  Phase wait;  //!< phase charged with the idle gap before this task starts
  int step;
  std::string name;
  std::function<double()> run;
  std::function<void()> done;
};

struct RankStep {
  RankPhase phase = RankPhase::idle;
  std::vector<Body> held;  // bodies entering this step's partition, with weights
  bool partition_started = false;
  bool pack_started = false;
  bool packed = false;
  std::vector<std::vector<Body>> inbound;
  int body_msgs = 0;
  std::size_t inbound_bytes = 0;
  bool unpack_started = false;

  Tree tree;
  std::unique_ptr<LET> let;
  bool upward_done = false;
  std::map<int, std::vector<std::uint8_t>> cells_bytes;
  std::map<int, std::vector<std::uint8_t>> bodies_bytes;
  std::vector<std::size_t> pending;  // fragments received before the tree was ready
  int fragments_ready = 0;
  int fragments_traversed = 0;
  bool remote_started = false;
  bool local_traversed = false;
  InteractionStats stats;
  bool downward_done = false;
  double done_ms = 0.0;

  WorkUnits work;
  PhaseTimes phase_ms{};
  std::vector<double> potential;
};

struct RankData {
  std::deque<Task> high;
  std::deque<Task> normal;
  bool busy = false;
  bool pump_pending = false;
  double free_at = 0.0;
  double compute_ms = 0.0;
  std::vector<RankStep> steps;  // index 1..S
};

struct Event {
  std::function<void()> fn;
  std::string kind;
  int rank;
  int peer;
  int step;
  std::string detail;
  std::uint64_t bytes;
};

enum class CollectiveKind { partition, body_barrier, end_barrier };

struct Collective {
  int arrived = 0;
  double latest = 0.0;
};

class Simulator {
 public:
  Simulator(const std::vector<Body>& bodies, const SimConfig& cfg)
      : cfg_(cfg), P_(cfg.ranks), S_(cfg.steps), bodies_(bodies), ranks_(std::size_t(cfg.ranks)) {
    for (std::size_t i = 0; i < bodies.size(); ++i)
      if (bodies[i].id != i) throw ConfigError("simulate: body ids must be 0..n-1 in order");
    for (auto& rk : ranks_) {
      rk.steps.resize(std::size_t(S_ + 1));
      for (auto& st : rk.steps) st.inbound.resize(std::size_t(P_));
    }
    partitions_.resize(std::size_t(S_ + 1));
    partition_done_.assign(std::size_t(S_ + 1), false);
    alpha_.assign(std::size_t(S_ + 1), -1.0);
    end_ms_.assign(std::size_t(S_ + 1), 0.0);
    // initial ownership: contiguous blocks of the input
    const std::size_t n = bodies.size();
    for (int r = 0; r < P_; ++r) {
      auto& held = rank_step(r, 1).held;
      for (std::size_t i = n * std::size_t(r) / std::size_t(P_); i < n * std::size_t(r + 1) / std::size_t(P_); ++i) {
        held.push_back(bodies[i]);
        held.back().weight = 1.0;
        held.back().potential = 0.0;
        held.back().force = {};
      }
    }
  }

  Metrics run() {
    metrics_.mode = cfg_.mode;
    metrics_.ranks = P_;
    alpha_[1] = 0.0;
    for (int r = 0; r < P_; ++r) start_partition(r, 1);
    while (!events_.empty()) {
      auto it = events_.begin();
      now_ = it->first.first;
      Event ev = std::move(it->second);
      const std::uint64_t seq = it->first.second;
      events_.erase(it);
      if (cfg_.trace && !ev.kind.empty())
        metrics_.trace.push_back({now_, seq, ev.kind, ev.rank, ev.peer, ev.step, ev.detail, ev.bytes});
      ev.fn();
    }
    for (int r = 0; r < P_; ++r)
      if (rank_step(r, S_).phase != RankPhase::done) throw SimulationError("simulation deadlocked\n" + dump());
    return finish();
  }

 private:
  // ---- plumbing -------------------------------------------------------

  RankStep& rank_step(int r, int s) { return ranks_[std::size_t(r)].steps[std::size_t(s)]; }

  void schedule(double t, std::function<void()> fn, std::string kind = {}, int rank = -1, int peer = -1, int step = 0,
                std::string detail = {}, std::uint64_t bytes = 0) {
    events_.emplace(std::make_pair(t, seq_++),
                    Event{std::move(fn), std::move(kind), rank, peer, step, std::move(detail), bytes});
  }

  bool async() const { return cfg_.mode == Mode::async; }

  void advance(int r, int s, RankPhase to) {
    RankStep& st = rank_step(r, s);
    const RankPhase from = st.phase;
    bool ok = false;
    switch (to) {
      case RankPhase::partition: ok = from == RankPhase::idle; break;
      case RankPhase::build: ok = from == RankPhase::partition; break;
      case RankPhase::upward: ok = from == RankPhase::build; break;
      case RankPhase::exchange: ok = from == RankPhase::upward; break;
      case RankPhase::traverse_local: ok = from == RankPhase::exchange; break;
      case RankPhase::traverse_remote: ok = from == RankPhase::traverse_local && P_ > 1; break;
      case RankPhase::downward:
        ok = from == RankPhase::traverse_remote || (from == RankPhase::traverse_local && P_ == 1);
        break;
      case RankPhase::done: ok = from == RankPhase::downward; break;
      case RankPhase::idle: break;
    }
    if (s > 1 && to == RankPhase::build && rank_step(r, s - 1).phase != RankPhase::done) ok = false;
    if (!ok)
      throw SimulationError("rank " + std::to_string(r) + " step " + std::to_string(s) + ": illegal transition " +
                            rank_phase_name(from) + " -> " + rank_phase_name(to));
    st.phase = to;
  }

  std::string dump() {
    std::ostringstream os;
    for (int r = 0; r < P_; ++r) {
      os << "rank " << r << ":";
      for (int s = 1; s <= S_; ++s) {
        const RankStep& st = rank_step(r, s);
        os << " [step " << s << " " << rank_phase_name(st.phase) << " bodies " << st.body_msgs << "/" << P_ - 1
           << " fragments " << st.fragments_ready << "/" << P_ - 1 << " traversed " << st.fragments_traversed
           << "]";
      }
      const auto& rk = ranks_[std::size_t(r)];
      os << " queued " << rk.high.size() << "+" << rk.normal.size() << (rk.busy ? " busy" : " idle") << "\n";
    }
    return os.str();
  }

  void submit(int r, Task task, bool high, bool front = false) {
    auto& rk = ranks_[std::size_t(r)];
    auto& q = high ? rk.high : rk.normal;
    if (front)
      q.push_front(std::move(task));
    else
      q.push_back(std::move(task));
    request_pump(r);
  }

  void request_pump(int r) {
    auto& rk = ranks_[std::size_t(r)];
    if (rk.pump_pending || rk.busy) return;
    rk.pump_pending = true;
    schedule(now_, [this, r] { pump(r); });
  }

  void charge(int r, int s, Phase phase, double ms) { rank_step(r, s).phase_ms[std::size_t(phase)] += ms; }

  void pump(int r) {
    auto& rk = ranks_[std::size_t(r)];
    rk.pump_pending = false;
    if (rk.busy) return;
    auto& q = !rk.high.empty() ? rk.high : rk.normal;
    if (q.empty()) return;
    Task task = std::move(q.front());
    q.pop_front();
    if (now_ > rk.free_at) charge(r, task.step, task.wait, now_ - rk.free_at);
    const double cost = task.run();
    charge(r, task.step, task.phase, cost);
    rk.compute_ms += cost;
    rk.busy = true;
    auto done = std::move(task.done);
    schedule(
        now_ + cost,
        [this, r, done = std::move(done)] {
          auto& me = ranks_[std::size_t(r)];
          me.busy = false;
          me.free_at = now_;
          if (done) done();
          request_pump(r);
        },
        cfg_.trace ? "task_end" : "", r, -1, task.step, task.name);
    if (cfg_.trace) metrics_.trace.push_back({now_, 0, "task_start", r, -1, task.step, task.name, 0});
  }

  double cost_of(int r, int s, const WorkUnits& w) {
    WorkUnits x = w;
    x.order = cfg_.order;
    rank_step(r, s).work += x;
    return compute_cost(x, cfg_.cost);
  }

  void send(int src, int dst, int s, const std::string& what, std::size_t bytes, std::function<void()> deliver) {
    if (cfg_.drop_message && cfg_.drop_message(src, dst, what)) return;
    ++metrics_.network_events;
    metrics_.network_bytes += bytes;
    schedule(now_ + cfg_.net.transit(bytes), std::move(deliver), "recv", dst, src, s, what, bytes);
    if (cfg_.trace) metrics_.trace.push_back({now_, 0, "send", src, dst, s, what, bytes});
  }

  void contribute(CollectiveKind kind, int s, int round) {
    auto key = std::make_tuple(int(kind), s, round);
    Collective& c = collectives_[key];
    ++c.arrived;
    c.latest = std::max(c.latest, now_);
    if (c.arrived < P_) return;
    if (P_ > 1) ++metrics_.network_events;
    const char* label = kind == CollectiveKind::partition      ? "partition_reduction"
                        : kind == CollectiveKind::body_barrier ? "body_barrier"
                                                               : "step_barrier";
    schedule(
        c.latest + cfg_.net.collective(P_), [this, kind, s, round] { released(kind, s, round); }, "collective", -1,
        -1, s, label + std::string(" ") + std::to_string(round));
  }

  void released(CollectiveKind kind, int s, int round) {
    switch (kind) {
      case CollectiveKind::partition: partition_round_released(s, round); break;
      case CollectiveKind::body_barrier:
        for (int r = 0; r < P_; ++r) start_build(r, s);
        break;
      case CollectiveKind::end_barrier:
        end_ms_[std::size_t(s)] = now_;
        for (int r = 0; r < P_; ++r) {
          auto& rk = ranks_[std::size_t(r)];
          if (now_ > rk.free_at) charge(r, s, Phase::idle, now_ - rk.free_at);
          rk.free_at = now_;
        }
        for (int r = 0; r < P_; ++r) {
          prepare_next(r, s, rank_step(r, s).stats);
          start_partition(r, s + 1);
        }
        break;
    }
  }

  // ---- weights and alpha ----------------------------------------------

  double alpha_for(int s) {
    if (alpha_[std::size_t(s)] >= 0.0) return alpha_[std::size_t(s)];
    double a = 0.0;
    switch (cfg_.weighting) {
      case Weighting::uniform: a = 0.0; break;
      case Weighting::interaction: a = 1.0; break;
      case Weighting::eq1: {
        // Bulk ranks pick step s weights after the step s-1 barrier; async
        // ranks pick them while step s-1 is still running.
        const int last = async() ? s - 2 : s - 1;
        std::vector<std::pair<double, double>> history;
        for (int k = 2; k <= last; ++k) history.push_back({alpha_[std::size_t(k)], makespan(k)});
        a = history.empty() ? cfg_.alpha0 : adapt_alpha(history);
        break;
      }
    }
    alpha_[std::size_t(s)] = a;
    return a;
  }

  double makespan(int k) const { return end_ms_[std::size_t(k)] - end_ms_[std::size_t(k - 1)]; }

  //! Fills the held bodies of step s+1 from the step-s tree and interaction tallies.
  void prepare_next(int r, int s, const InteractionStats& stats) {
    RankStep& cur = rank_step(r, s);
    RankStep& next = rank_step(r, s + 1);
    const double a = alpha_for(s + 1);
    const auto lists = body_lists(cur.tree, stats);
    next.held.clear();
    for (std::size_t i = 0; i < cur.tree.bodies.size(); ++i) {
      Body b = cur.tree.bodies[i];
      b.potential = 0.0;
      b.force = {};
      b.weight = cfg_.weighting == Weighting::uniform ? 1.0 : body_weight(lists.local[i], lists.remote[i], {a});
      next.held.push_back(b);
    }
  }

  // ---- partition ------------------------------------------------------

  void start_partition(int r, int s) {
    RankStep& st = rank_step(r, s);
    if (st.partition_started) return;
    st.partition_started = true;
    advance(r, s, RankPhase::partition);
    const std::size_t n = st.held.size();
    submit(r,
           {Phase::comm_partition, Phase::comm_partition, s, "bounds",
            [this, r, s, n] {
              WorkUnits w;
              w.histogram_bodies = P_ > 1 ? n : 0;
              return cost_of(r, s, w);
            },
            [this, s] { contribute(CollectiveKind::partition, s, 0); }},
           async());
  }

  void partition_round_released(int s, int round) {
    const int total = reduction_rounds(P_, cfg_.partition.rounds);
    if (round == 0) {
      std::vector<std::vector<Body>> held(static_cast<std::size_t>(P_));
      std::vector<Body> all;
      for (int r = 0; r < P_; ++r) {
        held[std::size_t(r)] = rank_step(r, s).held;
        all.insert(all.end(), held[std::size_t(r)].begin(), held[std::size_t(r)].end());
      }
      partitions_[std::size_t(s)] = orb_multisection(held, global_bounds(all), P_, cfg_.partition);
    }
    if (round + 1 < total) {
      for (int r = 0; r < P_; ++r) {
        const std::size_t n = rank_step(r, s).held.size();
        submit(r,
               {Phase::comm_partition, Phase::comm_partition, s, "histogram",
                [this, r, s, n] {
                  WorkUnits w;
                  w.histogram_bodies = n;
                  return cost_of(r, s, w);
                },
                [this, s, round] { contribute(CollectiveKind::partition, s, round + 1); }},
               async());
      }
      return;
    }
    partition_done_[std::size_t(s)] = true;
    for (int r = 0; r < P_; ++r) try_pack(r, s);
  }

  void try_pack(int r, int s) {
    RankStep& st = rank_step(r, s);
    if (st.pack_started || !partition_done_[std::size_t(s)]) return;
    if (s > 1 && !rank_step(r, s - 1).downward_done) return;
    st.pack_started = true;
    auto outgoing = std::make_shared<std::vector<std::vector<Body>>>(std::size_t(P_));
    submit(r,
           {Phase::comm_partition, Phase::comm_partition, s, "pack bodies",
            [this, r, s, outgoing] {
              RankStep& me = rank_step(r, s);
              const auto& dest = partitions_[std::size_t(s)].destination[std::size_t(r)];
              for (std::size_t i = 0; i < me.held.size(); ++i) (*outgoing)[std::size_t(dest[i])].push_back(me.held[i]);
              me.inbound[std::size_t(r)] = std::move((*outgoing)[std::size_t(r)]);
              WorkUnits w;
              for (int q = 0; q < P_; ++q)
                if (q != r) w.bytes += kMessageHeaderBytes + (*outgoing)[std::size_t(q)].size() * kBodyWireBytes;
              return cost_of(r, s, w);
            },
            [this, r, s, outgoing] {
              rank_step(r, s).packed = true;
              for (int k = 1; k < P_; ++k) {
                const int q = (r + k) % P_;
                auto payload = std::make_shared<std::vector<Body>>(std::move((*outgoing)[std::size_t(q)]));
                const std::size_t bytes = kMessageHeaderBytes + payload->size() * kBodyWireBytes;
                send(r, q, s, "bodies", bytes, [this, r, q, s, payload, bytes] {
                  RankStep& dst = rank_step(q, s);
                  dst.inbound[std::size_t(r)] = std::move(*payload);
                  dst.inbound_bytes += bytes;
                  ++dst.body_msgs;
                  try_unpack(q, s);
                });
              }
              try_unpack(r, s);
            }},
           async());
  }

  void try_unpack(int r, int s) {
    RankStep& st = rank_step(r, s);
    if (st.unpack_started || !st.packed || st.body_msgs < P_ - 1) return;
    st.unpack_started = true;
    const std::size_t bytes = st.inbound_bytes;
    submit(r,
           {Phase::comm_partition, Phase::comm_partition, s, "unpack bodies",
            [this, r, s, bytes] {
              WorkUnits w;
              w.bytes = bytes;
              return cost_of(r, s, w);
            },
            [this, r, s] {
              if (async())
                start_build(r, s);
              else
                contribute(CollectiveKind::body_barrier, s, 0);
            }},
           async());
  }

  // ---- local tree -----------------------------------------------------

  void start_build(int r, int s) {
    advance(r, s, RankPhase::build);
    submit(r,
           {Phase::build, Phase::comm_partition, s, "build",
            [this, r, s] {
              RankStep& st = rank_step(r, s);
              std::vector<Body> owned;
              for (auto& part : st.inbound) {
                owned.insert(owned.end(), part.begin(), part.end());
                part.clear();
                part.shrink_to_fit();
              }
              const Box bounds =
                  owned.empty() ? partitions_[std::size_t(s)].map.domains[std::size_t(r)] : global_bounds(owned);
              WorkUnits w;
              w.build_bodies = owned.size();
              st.tree = build(std::move(owned), bounds, cfg_.ncrit);
              st.let = std::make_unique<LET>(st.tree);
              st.stats = InteractionStats(st.tree.cells.size());
              return cost_of(r, s, w);
            },
            [this, r, s] { start_upward(r, s); }},
           false);
  }

  void start_upward(int r, int s) {
    advance(r, s, RankPhase::upward);
    submit(r,
           {Phase::upward, Phase::build, s, "upward",
            [this, r, s] {
              RankStep& st = rank_step(r, s);
              upward_pass(st.tree, cfg_.order);
              WorkUnits w;
              w.p2m_bodies = st.tree.bodies.size();
              w.m2m_calls = st.tree.cells.size() - 1;
              return cost_of(r, s, w);
            },
            [this, r, s] { after_upward(r, s); }},
           false);
  }

  void after_upward(int r, int s) {
    RankStep& st = rank_step(r, s);
    st.upward_done = true;
    advance(r, s, RankPhase::exchange);
    for (int k = 1; k < P_; ++k) export_to(r, (r + k) % P_, s);
    submit_traversal(r, s, -1);
    for (std::size_t f : st.pending) dispatch_fragment(r, s, f);
    st.pending.clear();
  }

  void export_to(int r, int q, int s) {
    auto frag = std::make_shared<LetFragment>();
    auto cells = std::make_shared<std::vector<std::uint8_t>>();
    submit(r,
           {Phase::comm_let_cells, Phase::comm_let_cells, s, "pack cells",
            [this, r, q, s, frag, cells] {
              RankStep& st = rank_step(r, s);
              *frag = select_export(st.tree, partitions_[std::size_t(s)].map.domains[std::size_t(q)],
                                    cfg_.traversal.theta, r, q);
              *cells = encode(*frag, FragmentPhase::cells);
              WorkUnits w;
              w.bytes = cells->size();
              return cost_of(r, s, w);
            },
            [this, r, q, s, cells] {
              send(r, q, s, "let_cells", cells->size(),
                   [this, r, q, s, cells] { on_let_part(q, s, r, FragmentPhase::cells, std::move(*cells)); });
            }},
           false);
    auto bodies = std::make_shared<std::vector<std::uint8_t>>();
    submit(r,
           {Phase::comm_let_bodies, Phase::comm_let_bodies, s, "pack bodies",
            [this, r, s, frag, bodies] {
              *bodies = encode(*frag, FragmentPhase::bodies);
              frag->cells.clear();
              frag->M.clear();
              frag->bodies.clear();
              WorkUnits w;
              w.bytes = bodies->size();
              return cost_of(r, s, w);
            },
            [this, r, q, s, bodies] {
              send(r, q, s, "let_bodies", bodies->size(),
                   [this, r, q, s, bodies] { on_let_part(q, s, r, FragmentPhase::bodies, std::move(*bodies)); });
            }},
           false);
  }

  // ---- LET arrival ----------------------------------------------------

  void on_let_part(int r, int s, int sender, FragmentPhase phase, std::vector<std::uint8_t> bytes) {
    RankStep& st = rank_step(r, s);
    auto& slot = phase == FragmentPhase::cells ? st.cells_bytes : st.bodies_bytes;
    if (slot.count(sender)) throw ProtocolError("duplicate LET part from rank " + std::to_string(sender));
    slot[sender] = std::move(bytes);
    if (!st.cells_bytes.count(sender) || !st.bodies_bytes.count(sender)) return;

    auto frag = std::make_shared<LetFragment>();
    const std::size_t cell_bytes = st.cells_bytes[sender].size();
    const std::size_t body_bytes = st.bodies_bytes[sender].size();
    submit(r,
           {Phase::comm_let_cells, Phase::comm_let_cells, s, "unpack cells",
            [this, r, s, sender, frag, cell_bytes] {
              RankStep& me = rank_step(r, s);
              decode(me.cells_bytes[sender], *frag);
              me.cells_bytes[sender].clear();
              WorkUnits w;
              w.bytes = cell_bytes;
              return cost_of(r, s, w);
            },
            nullptr},
           async());
    submit(r,
           {Phase::comm_let_bodies, Phase::comm_let_bodies, s, "unpack bodies",
            [this, r, s, sender, frag, body_bytes] {
              RankStep& me = rank_step(r, s);
              decode(me.bodies_bytes[sender], *frag);
              me.bodies_bytes[sender].clear();
              WorkUnits w;
              w.bytes = body_bytes;
              return cost_of(r, s, w);
            },
            [this, r, s, frag] { fragment_ready(r, s, std::move(*frag)); }},
           async());
  }

  void fragment_ready(int r, int s, LetFragment frag) {
    RankStep& st = rank_step(r, s);
    if (!st.let) throw SimulationError("fragment unpacked before the local tree exists");
    st.let->graft(std::move(frag));
    ++st.fragments_ready;
    const std::size_t index = st.let->fragments().size() - 1;
    if (!st.upward_done)
      st.pending.push_back(index);
    else
      dispatch_fragment(r, s, index);
  }

  void dispatch_fragment(int r, int s, std::size_t index) {
    if (async()) {
      submit_traversal(r, s, int(index));
    } else {
      maybe_remote_bulk(r, s);
    }
  }

  void maybe_remote_bulk(int r, int s) {
    RankStep& st = rank_step(r, s);
    if (st.remote_started || !st.local_traversed || st.fragments_ready < P_ - 1 || P_ == 1) return;
    st.remote_started = true;
    submit_traversal(r, s, -2);
  }

  // ---- traversal ------------------------------------------------------

  //! Splits a traversal's cost into the independent target subtrees at the
  //! nspawn frontier, plus the part above it.
  std::vector<double> slices(const Tree& tree, const InteractionStats& st, double total) const {
    const std::size_t nc = tree.cells.size();
    std::vector<int> slice(nc, 0);
    int count = 1;
    const auto nspawn = std::uint32_t(cfg_.traversal.nspawn);
    const double terms = double(Expansion::of(cfg_.order).pair_terms().size());
    std::vector<double> cost(1, 0.0);
    for (std::size_t i = 0; i < nc; ++i) {
      const Cell& c = tree.cells[i];
      if (c.parent == kNoParent) {
        slice[i] = c.body_count <= nspawn ? (cost.push_back(0.0), count++) : 0;
      } else if (slice[c.parent] != 0) {
        slice[i] = slice[c.parent];
      } else if (c.body_count <= nspawn) {
        cost.push_back(0.0);
        slice[i] = count++;
      }
      const double m2l = double(st.m2l_local[i] + st.m2l_remote[i]) * terms * cfg_.cost.m2l_term_ns;
      const double p2p =
          double(st.p2p_local[i] + st.p2p_remote[i]) * double(c.body_count) * cfg_.cost.p2p_pair_ns;
      cost[std::size_t(slice[i])] += m2l + p2p;
    }
    const double kernel = std::accumulate(cost.begin(), cost.end(), 0.0);
    std::vector<double> out;
    if (kernel <= 0.0) return {total};
    double used = 0.0;
    for (double c : cost) {
      if (c <= 0.0) continue;
      out.push_back(total * c / kernel);
      used += out.back();
    }
    out.back() += total - used;
    return out;
  }

  //! source: -1 local tree, -2 every grafted fragment, otherwise a fragment index.
  void submit_traversal(int r, int s, int source) {
    auto chunks = std::make_shared<std::deque<double>>();
    const std::string name = source == -1 ? "traverse local" : source == -2 ? "traverse remote" : "traverse fragment";
    submit(r,
           {Phase::traverse, Phase::comm_let_cells, s, name,
            [this, r, s, source, chunks] {
              RankStep& st = rank_step(r, s);
              if (source == -1) {
                advance(r, s, RankPhase::traverse_local);
              } else if (!st.remote_started || source == -2) {
                if (st.phase == RankPhase::traverse_local) advance(r, s, RankPhase::traverse_remote);
                st.remote_started = true;
              }
              InteractionStats stats(st.tree.cells.size());
              auto run_one = [&](const SourceView& view) { stats.merge(dual_traverse(st.tree, view, cfg_.traversal)); };
              if (source == -1) {
                run_one(SourceView::of(st.tree));
              } else if (source == -2) {
                std::vector<std::size_t> order(st.let->fragments().size());
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                  return st.let->fragments()[a].sender < st.let->fragments()[b].sender;
                });
                for (std::size_t f : order) run_one(st.let->fragments()[f].view());
              } else {
                run_one(st.let->fragments()[std::size_t(source)].view());
              }
              if (stats.missing) throw SimulationError("traversal needed data missing from a LET fragment");
              st.stats.merge(stats);
              WorkUnits w;
              w.p2p_pairs = stats.p2p_pairs;
              w.m2l_calls = stats.m2l_calls;
              w.visits = stats.visits;
              const double total = cost_of(r, s, w);
              for (double c : slices(st.tree, stats, total)) chunks->push_back(c);
              const double first = chunks->front();
              chunks->pop_front();
              return first;
            },
            [this, r, s, source, chunks] { continue_traversal(r, s, source, chunks); }},
           false);
  }

  void continue_traversal(int r, int s, int source, std::shared_ptr<std::deque<double>> chunks) {
    if (chunks->empty()) {
      traversal_finished(r, s, source);
      return;
    }
    const double next = chunks->front();
    chunks->pop_front();
    submit(r,
           {Phase::traverse, Phase::traverse, s, "traverse slice", [next] { return next; },
            [this, r, s, source, chunks] { continue_traversal(r, s, source, chunks); }},
           false, true);
  }

  void traversal_finished(int r, int s, int source) {
    RankStep& st = rank_step(r, s);
    if (source == -1)
      st.local_traversed = true;
    else
      st.fragments_traversed += source == -2 ? P_ - 1 : 1;
    if (!async()) maybe_remote_bulk(r, s);
    if (!st.local_traversed || st.fragments_traversed != P_ - 1) return;
    // Interaction lists are complete, so the next partition can start while
    // this rank still has its downward pass and other ranks are traversing.
    if (async() && s < S_) {
      prepare_next(r, s, st.stats);
      start_partition(r, s + 1);
    }
    start_downward(r, s);
  }

  // ---- downward and step end ------------------------------------------

  void start_downward(int r, int s) {
    advance(r, s, RankPhase::downward);
    submit(r,
           {Phase::downward, Phase::traverse, s, "downward",
            [this, r, s] {
              RankStep& st = rank_step(r, s);
              downward_pass(st.tree);
              WorkUnits w;
              w.l2l_calls = st.tree.cells.size() - 1;
              w.l2p_bodies = st.tree.bodies.size();
              return cost_of(r, s, w);
            },
            [this, r, s] { step_done(r, s); }},
           false);
  }

  void step_done(int r, int s) {
    RankStep& st = rank_step(r, s);
    advance(r, s, RankPhase::done);
    st.downward_done = true;
    st.done_ms = now_;
    if (s == S_) {
      bool all = true;
      for (int q = 0; q < P_; ++q) all = all && rank_step(q, s).downward_done;
      if (all) end_ms_[std::size_t(s)] = now_;
      return;
    }
    if (!async()) {
      contribute(CollectiveKind::end_barrier, s, 0);
      return;
    }
    bool all = true;
    for (int q = 0; q < P_; ++q) all = all && rank_step(q, s).downward_done;
    if (all) end_ms_[std::size_t(s)] = now_;
    try_pack(r, s + 1);
  }

  Metrics finish() {
    const double end = end_ms_[std::size_t(S_)];
    for (int r = 0; r < P_; ++r) {
      auto& rk = ranks_[std::size_t(r)];
      if (end > rk.free_at) charge(r, S_, Phase::idle, end - rk.free_at);
      metrics_.critical_path_ms = std::max(metrics_.critical_path_ms, rk.compute_ms);
      metrics_.busy_ms.push_back(rk.compute_ms);
    }
    metrics_.makespan_ms = end;
    if (end + 1e-9 * std::max(1.0, end) < metrics_.critical_path_ms)
      throw SimulationError("makespan below the per-rank compute bound");

    const std::size_t n = bodies_.size();
    for (int s = 1; s <= S_; ++s) {
      StepMetrics m;
      m.step = s;
      m.alpha = alpha_[std::size_t(s)] < 0.0 ? 0.0 : alpha_[std::size_t(s)];
      m.end_ms = end_ms_[std::size_t(s)];
      m.makespan_ms = makespan(s);
      m.weight = partitions_[std::size_t(s)].rank_weight;
      std::vector<double> potential(n, 0.0);
      std::vector<Vec3> force(n);
      for (int r = 0; r < P_; ++r) {
        RankStep& st = rank_step(r, s);
        m.phase.push_back(st.phase_ms);
        m.work.push_back(st.work);
        m.bodies.push_back(st.tree.bodies.size());
        const auto lists = body_lists(st.tree, st.stats);
        m.l_sum.push_back(std::accumulate(lists.local.begin(), lists.local.end(), std::uint64_t{0}));
        m.r_sum.push_back(std::accumulate(lists.remote.begin(), lists.remote.end(), std::uint64_t{0}));
        for (const Body& b : st.tree.bodies) {
          potential[b.id] = b.potential;
          force[b.id] = b.force;
        }
      }
      if (cfg_.oracle_samples > 0) m.error = sampled_error(bodies_, potential, cfg_.oracle_samples, cfg_.seed);
      if (s == S_) {
        metrics_.potential = std::move(potential);
        metrics_.force = std::move(force);
      }
      metrics_.steps.push_back(std::move(m));
    }
    return std::move(metrics_);
  }

  const SimConfig& cfg_;
  const int P_;
  const int S_;
  const std::vector<Body>& bodies_;
  std::vector<RankData> ranks_;
  std::vector<Partition> partitions_;
  std::vector<bool> partition_done_;
  std::vector<double> alpha_;
  std::vector<double> end_ms_;
  std::map<std::tuple<int, int, int>, Collective> collectives_;
  std::map<std::pair<double, std::uint64_t>, Event> events_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
  Metrics metrics_;
};

}  // namespace

Metrics simulate(const std::vector<Body>& bodies, const SimConfig& cfg) {
  cfg.validate();
  if (bodies.empty()) throw ConfigError("simulate: no bodies");
  return Simulator(bodies, cfg).run();
}

Metrics run_step(const std::vector<Body>& bodies, SimConfig cfg, const NetModel& net, Mode mode) {
  cfg.net = net;
  cfg.mode = mode;
  cfg.steps = 1;
  return simulate(bodies, cfg);
}

std::string metrics_report(const Metrics& m) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "mode " << to_string(m.mode) << ", " << m.ranks << " ranks, makespan " << m.makespan_ms << " ms, "
     << m.network_events << " network events\n";
  for (const auto& step : m.steps) {
    os << "step " << step.step << "  makespan " << step.makespan_ms << " ms  alpha " << step.alpha
       << "  traverse max/mean " << step.traverse_ratio();
    if (step.error) os << "  error " << std::scientific << *step.error << std::fixed;
    os << "\n  rank";
    for (int p = 0; p < kPhaseCount; ++p) os << " | " << phase_name(Phase(p));
    os << " | total\n";
    for (int r = 0; r < m.ranks; ++r) {
      os << "  " << r;
      for (int p = 0; p < kPhaseCount; ++p) os << " | " << step.phase[std::size_t(r)][std::size_t(p)];
      os << " | " << step.phase_total(r) << "\n";
    }
  }
  return os.str();
}

std::string trace_json(const Metrics& m) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : m.trace)
    out.push_back({{"time_ms", t.time_ms},
                   {"seq", t.seq},
                   {"kind", t.kind},
                   {"rank", t.rank},
                   {"peer", t.peer},
                   {"step", t.step},
                   {"detail", t.detail},
                   {"bytes", t.bytes}});
  return out.dump(1);
}

}  // namespace asyncfmm
