#include "tpred/netsim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <numeric>
#include <ostream>
#include <thread>

#include "tpred/csv.hpp"
#include "tpred/synth.hpp"

namespace tpred {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(std::string("invalid simulation config: ") + what);
}

bool finite_positive(double x) { return std::isfinite(x) && x > 0; }

// Stream ids keep every random component independent of the others and of p.
constexpr std::uint64_t kType1Stream = 100;
constexpr std::uint64_t kPredictionStream = 200;
constexpr std::uint64_t kType2Stream = 300;

}  // namespace

double SppSource::stationary_rate() const {
  return (rate_light * mean_light_duration + rate_heavy * mean_heavy_duration) /
         (mean_light_duration + mean_heavy_duration);
}

void SppSource::validate() const {
  require(finite_positive(rate_light) && finite_positive(rate_heavy), "SPP rates must be positive");
  require(finite_positive(mean_light_duration) && finite_positive(mean_heavy_duration),
          "SPP durations must be positive");
  require(finite_positive(burst_size_bits), "burst size must be positive");
}

void PpSource::validate() const {
  require(finite_positive(rate), "PP rate must be positive");
  require(finite_positive(chunk_size_bits), "chunk size must be positive");
}

void SimConfig::validate() const {
  spp.validate();
  pp.validate();
  require(finite_positive(service_rate_bps), "service rate must be positive");
  require(finite_positive(time_step_s), "time step must be positive");
  require(finite_positive(sim_duration_s), "duration must be positive");
  require(n_type1 >= 0 && n_type2 >= 0, "user counts must be non-negative");
  require(std::isfinite(prediction_prob) && prediction_prob >= 0 && prediction_prob <= 1,
          "prediction probability must lie in [0, 1]");
  require(std::isfinite(prediction_lead_s) && prediction_lead_s >= 0, "prediction lead must be non-negative");
  require(std::isfinite(prefetch_horizon_s) && prefetch_horizon_s >= 0, "prefetch horizon must be non-negative");
  require(time_step_s <= prediction_lead_s, "time step exceeds the prediction lead");
  require(service_rate_bps * time_step_s < 1e18, "service rate too large for integer bit accounting");
  require(sim_duration_s / time_step_s < 1e12, "too many steps");
}

double SimConfig::offered_load_bps() const {
  return n_type1 * spp.stationary_rate() * spp.burst_size_bits + n_type2 * pp.rate * pp.chunk_size_bits;
}

SppTrace generate_spp_trace(const SppSource& source, double duration, std::mt19937_64& rng) {
  source.validate();
  if (!(duration > 0)) throw std::invalid_argument("duration must be positive");
  const double p_heavy = source.mean_heavy_duration / (source.mean_light_duration + source.mean_heavy_duration);
  std::bernoulli_distribution start_heavy(p_heavy);
  const int initial = start_heavy(rng) ? 1 : 0;
  const auto spans = synth::modulation_timeline({source.mean_light_duration, source.mean_heavy_duration},
                                                duration, rng, initial);
  SppTrace trace;
  trace.duration = duration;
  trace.arrivals = synth::modulated_arrivals(spans, {source.rate_light, source.rate_heavy}, rng);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].state != 1) continue;
    trace.heavy_time += spans[i].end - spans[i].start;
    if (i > 0) trace.heavy_starts.push_back(spans[i].start);
  }
  return trace;
}

SppTrace generate_spp_trace(const SppSource& source, double duration, std::uint64_t seed) {
  auto rng = synth::make_engine(seed, kType1Stream);
  return generate_spp_trace(source, duration, rng);
}

std::vector<double> generate_pp_trace(const PpSource& source, double duration, std::mt19937_64& rng) {
  source.validate();
  if (!(duration > 0)) throw std::invalid_argument("duration must be positive");
  std::exponential_distribution<double> gap(source.rate);
  std::vector<double> times;
  for (double t = gap(rng); t < duration; t += gap(rng)) times.push_back(t);
  return times;
}

std::vector<double> generate_pp_trace(const PpSource& source, double duration, std::uint64_t seed) {
  auto rng = synth::make_engine(seed, kType2Stream);
  return generate_pp_trace(source, duration, rng);
}

DelayStats delay_stats(std::span<const double> delays) {
  DelayStats s;
  s.n_chunks = static_cast<Index>(delays.size());
  if (delays.empty()) return s;
  const double n = static_cast<double>(delays.size());
  s.mean_delay = std::accumulate(delays.begin(), delays.end(), 0.0) / n;
  double ss = 0.0;
  for (double d : delays) ss += (d - s.mean_delay) * (d - s.mean_delay);
  s.sd_delay = std::sqrt(ss / n);
  s.max_delay = *std::max_element(delays.begin(), delays.end());
  return s;
}

std::vector<std::int64_t> water_fill(std::span<const std::int64_t> demands, std::int64_t capacity,
                                     std::size_t offset) {
  const std::size_t k = demands.size();
  std::vector<std::int64_t> alloc(k, 0);
  if (k == 0 || capacity <= 0) return alloc;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < k; ++i)
    if (demands[i] > 0) active.push_back(i);
  std::sort(active.begin(), active.end(), [&](std::size_t a, std::size_t b) {
    return demands[a] < demands[b] || (demands[a] == demands[b] && a < b);
  });
  std::int64_t left = capacity;
  std::size_t pos = 0;
  // Users whose demand fits under the running fair share are satisfied outright.
  while (pos < active.size()) {
    const auto remaining = static_cast<std::int64_t>(active.size() - pos);
    const std::int64_t share = left / remaining;
    if (demands[active[pos]] > share) break;
    alloc[active[pos]] = demands[active[pos]];
    left -= demands[active[pos]];
    ++pos;
  }
  if (pos == active.size()) return alloc;
  std::vector<std::size_t> rest(active.begin() + static_cast<std::ptrdiff_t>(pos), active.end());
  const auto remaining = static_cast<std::int64_t>(rest.size());
  const std::int64_t share = left / remaining;
  std::int64_t extra = left - share * remaining;
  for (std::size_t i : rest) alloc[i] = share;
  std::sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
    return (a + k - offset % k) % k < (b + k - offset % k) % k;
  });
  // Every remaining demand exceeds share, so one extra bit never overshoots.
  for (std::size_t i = 0; extra > 0; ++i, --extra) ++alloc[rest[i]];
  return alloc;
}

std::vector<std::int64_t> guarded_fill(std::span<const std::int64_t> demands, std::int64_t capacity,
                                       std::span<const std::int64_t> floors, std::size_t offset) {
  const std::size_t k = demands.size();
  auto alloc = water_fill(demands, capacity, offset);
  std::vector<bool> pinned(k, false);
  while (true) {
    bool changed = false;
    for (std::size_t i = 0; i < k; ++i)
      if (!pinned[i] && alloc[i] < std::min(floors[i], demands[i])) pinned[i] = changed = true;
    if (!changed) break;
    std::vector<std::int64_t> rest(demands.begin(), demands.end());
    std::int64_t cap = capacity;
    for (std::size_t i = 0; i < k; ++i)
      if (pinned[i]) {
        rest[i] = 0;
        cap -= std::min(floors[i], demands[i]);
      }
    if (cap < 0) throw Error("guaranteed shares exceed capacity");
    alloc = water_fill(rest, cap, offset);
    for (std::size_t i = 0; i < k; ++i)
      if (pinned[i]) alloc[i] = std::min(floors[i], demands[i]);
  }
  // Pinned users may still want more once everyone else is satisfied.
  std::int64_t left = capacity;
  std::vector<std::int64_t> residual(k);
  for (std::size_t i = 0; i < k; ++i) {
    left -= alloc[i];
    residual[i] = demands[i] - alloc[i];
  }
  if (left > 0) {
    const auto extra = water_fill(residual, left, offset);
    for (std::size_t i = 0; i < k; ++i) alloc[i] += extra[i];
  }
  return alloc;
}

namespace {

struct Chunk {
  double due;
  std::int64_t remaining;
};

// Type-2 user: FIFO chunk stream.
struct StreamUser {
  std::vector<Chunk> chunks;  // ascending due time
  std::size_t head = 0;       // first unfinished chunk
  std::size_t due_end = 0;    // chunks [0, due_end) are due
  std::int64_t delivered = 0;

  std::int64_t pending(std::size_t end) const {
    std::int64_t bits = 0;
    for (std::size_t c = head; c < end; ++c) bits += chunks[c].remaining;
    return bits;
  }
  std::int64_t pending_due() const { return pending(due_end); }

  // First chunk due at or after t.
  std::size_t first_due_at(double t) const {
    return static_cast<std::size_t>(
        std::lower_bound(chunks.begin(), chunks.end(), t, [](const Chunk& c, double v) { return c.due < v; }) -
        chunks.begin());
  }

  void admit(double t1) {
    while (due_end < chunks.size() && chunks[due_end].due < t1) ++due_end;
    due_end = std::max(due_end, head);
  }

  // Serves `bits` in FIFO order; calls done(index) for every chunk that finishes.
  template <class F>
  void serve(std::int64_t bits, F&& done) {
    delivered += bits;
    while (bits > 0 && head < chunks.size()) {
      auto& c = chunks[head];
      const std::int64_t take = std::min(bits, c.remaining);
      c.remaining -= take;
      bits -= take;
      if (c.remaining > 0) break;
      done(head);
      ++head;
    }
  }
};

struct Queues {
  std::vector<std::int64_t> backlog;  // type-1, bits
  std::vector<std::size_t> next_job;
  std::vector<StreamUser> streams;
};

}  // namespace

SimResult run_simulation(const SimConfig& config) {
  config.validate();
  const double dt = config.time_step_s;
  const auto steps = static_cast<Index>(std::ceil(config.sim_duration_s / dt - 1e-9));
  const auto capacity = static_cast<std::int64_t>(std::floor(config.service_rate_bps * dt));
  const auto burst_bits = static_cast<std::int64_t>(std::llround(config.spp.burst_size_bits));
  const auto chunk_bits = static_cast<std::int64_t>(std::llround(config.pp.chunk_size_bits));
  const auto n1 = static_cast<std::size_t>(config.n_type1);
  const auto n2 = static_cast<std::size_t>(config.n_type2);

  SimResult result;
  SimLog& log = result.log;
  log.capacity_per_step = capacity;
  log.steps = steps;
  log.duration = static_cast<double>(steps) * dt;

  // Traces and prediction draws depend only on the seed, never on p.
  std::vector<std::vector<double>> jobs(n1);
  std::vector<std::pair<double, double>> windows;
  for (std::size_t u = 0; u < n1; ++u) {
    auto rng = synth::make_engine(config.seed, kType1Stream + u);
    auto trace = generate_spp_trace(config.spp, log.duration, rng);
    jobs[u] = std::move(trace.arrivals);
    log.type1_arrivals += static_cast<Index>(jobs[u].size());
    auto pred_rng = synth::make_engine(config.seed, kPredictionStream + u);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (double t : trace.heavy_starts) {
      ++log.transitions;
      if (coin(pred_rng) < config.prediction_prob) {
        ++log.predicted_transitions;
        windows.emplace_back(std::max(0.0, t - config.prediction_lead_s), t);
      }
    }
  }
  // Equal lengths (up to clipping at zero) keep the ends sorted along with the starts.
  std::sort(windows.begin(), windows.end());

  Queues live;
  live.backlog.assign(n1, 0);
  live.next_job.assign(n1, 0);
  live.streams.resize(n2);
  for (std::size_t j = 0; j < n2; ++j) {
    auto rng = synth::make_engine(config.seed, kType2Stream + j);
    for (double t : generate_pp_trace(config.pp, log.duration, rng))
      live.streams[j].chunks.push_back({t, chunk_bits});
    log.type2_bits_arrived += chunk_bits * static_cast<std::int64_t>(live.streams[j].chunks.size());
  }
  // The prediction-free schedule runs alongside so that prefetching can never leave a type-2
  // user with fewer delivered bits than plain round robin would have.
  Queues reference = live;
  const bool guarded = !windows.empty();

  const auto admit = [&](Queues& q, double t1, bool count) {
    for (std::size_t u = 0; u < n1; ++u)
      while (q.next_job[u] < jobs[u].size() && jobs[u][q.next_job[u]] < t1) {
        q.backlog[u] += burst_bits;
        if (count) log.type1_bits_arrived += burst_bits;
        ++q.next_job[u];
      }
    for (auto& s : q.streams) s.admit(t1);
  };

  std::vector<std::int64_t> demand(n1 + n2), floors(n1 + n2, 0);
  std::vector<double> delays;
  std::size_t win_lo = 0, win_hi = 0;
  const Index steps_per_second = std::max<Index>(1, static_cast<Index>(std::llround(1.0 / dt)));
  const auto ignore = [](std::size_t) {};

  for (Index k = 0; k < steps; ++k) {
    const double t0 = static_cast<double>(k) * dt;
    const double t1 = t0 + dt;
    const auto offset = static_cast<std::size_t>(k);
    admit(live, t1, true);

    if (guarded) {
      admit(reference, t1, false);
      for (std::size_t u = 0; u < n1; ++u) demand[u] = reference.backlog[u];
      for (std::size_t j = 0; j < n2; ++j) demand[n1 + j] = reference.streams[j].pending_due();
      const auto ref = water_fill(demand, capacity, offset);
      for (std::size_t u = 0; u < n1; ++u) reference.backlog[u] -= ref[u];
      for (std::size_t j = 0; j < n2; ++j) reference.streams[j].serve(ref[n1 + j], ignore);
    }

    // Active windows form the contiguous range [win_lo, win_hi). While one is open, chunks due
    // before the horizon past the latest predicted transition join the type-2 queues.
    while (win_hi < windows.size() && windows[win_hi].first <= t0) ++win_hi;
    while (win_lo < win_hi && windows[win_lo].second <= t0) ++win_lo;
    const bool prefetching = win_lo < win_hi;
    const double limit = prefetching ? windows[win_hi - 1].second + config.prefetch_horizon_s : 0.0;

    for (std::size_t u = 0; u < n1; ++u) demand[u] = live.backlog[u];
    for (std::size_t j = 0; j < n2; ++j) {
      const auto& s = live.streams[j];
      demand[n1 + j] = s.pending(prefetching ? std::max(s.due_end, s.first_due_at(limit)) : s.due_end);
      if (guarded) floors[n1 + j] = std::max<std::int64_t>(0, reference.streams[j].delivered - s.delivered);
    }
    const auto alloc = guarded ? guarded_fill(demand, capacity, floors, offset) : water_fill(demand, capacity, offset);

    std::int64_t step_total = 0, wanted = 0;
    for (std::size_t i = 0; i < demand.size(); ++i) {
      step_total += alloc[i];
      wanted += demand[i];
    }
    if (step_total != std::min(wanted, capacity)) ++log.work_conservation_violations;
    for (std::size_t u = 0; u < n1; ++u) live.backlog[u] -= alloc[u];
    for (std::size_t j = 0; j < n2; ++j) {
      auto& s = live.streams[j];
      s.serve(alloc[n1 + j], [&](std::size_t c) {
        const double due = s.chunks[c].due;
        const double delay = std::max(0.0, t1 - due);
        log.chunks.push_back({static_cast<int>(j), static_cast<Index>(c), due, t1, delay, t1 <= due});
        delays.push_back(delay);
      });
    }
    log.bits_served += step_total;
    log.max_step_served = std::max(log.max_step_served, step_total);

    if ((k + 1) % steps_per_second == 0) {
      std::int64_t queued = std::accumulate(live.backlog.begin(), live.backlog.end(), std::int64_t{0});
      for (const auto& s : live.streams) queued += s.pending_due();
      log.backlog_bits.push_back(static_cast<double>(queued));
    }
  }

  log.final_backlog_bits = std::accumulate(live.backlog.begin(), live.backlog.end(), std::int64_t{0});
  for (const auto& s : live.streams) {
    log.final_backlog_bits += s.pending(s.chunks.size());
    log.unfinished_chunks += static_cast<Index>(s.chunks.size() - s.head);
  }
  result.stats = delay_stats(delays);
  return result;
}

UtilizationReport utilization_check(const SimConfig& config, const SimLog& log) {
  UtilizationReport r;
  const double T = log.duration;
  r.analytic_offered_load_bps = config.offered_load_bps();
  if (T > 0) {
    r.offered_load_bps = static_cast<double>(log.type1_bits_arrived + log.type2_bits_arrived) / T;
    r.served_throughput_bps = static_cast<double>(log.bits_served) / T;
    if (config.n_type1 > 0) r.empirical_spp_rate = static_cast<double>(log.type1_arrivals) / (T * config.n_type1);
  }
  r.max_step_throughput_bps = static_cast<double>(log.max_step_served) / config.time_step_s;
  r.bits_conserved =
      log.type1_bits_arrived + log.type2_bits_arrived == log.bits_served + log.final_backlog_bits;
  r.work_conserving = log.work_conservation_violations == 0 && log.max_step_served <= log.capacity_per_step;
  const auto n = static_cast<Index>(log.backlog_bits.size());
  if (n >= 2) {
    const double mean_x = static_cast<double>(n + 1) / 2.0;
    const double mean_y = std::accumulate(log.backlog_bits.begin(), log.backlog_bits.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double dx = static_cast<double>(i + 1) - mean_x;
      sxy += dx * (log.backlog_bits[static_cast<std::size_t>(i)] - mean_y);
      sxx += dx * dx;
    }
    r.backlog_slope_bits_per_s = sxy / sxx;
  }
  return r;
}

std::vector<SweepRow> simulate_sweep(const SimConfig& base, std::span<const double> probs,
                                     std::span<const std::uint64_t> seeds, int jobs) {
  std::vector<SweepRow> rows;
  for (double p : probs)
    for (auto s : seeds) rows.push_back({p, s, {}});
  std::vector<std::exception_ptr> errors(rows.size());
  const auto run = [&](std::size_t i) {
    try {
      SimConfig c = base;
      c.prediction_prob = rows[i].p;
      c.seed = rows[i].seed;
      rows[i].stats = run_simulation(c).stats;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(rows.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) run(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

void write_delay_csv(std::ostream& out, std::span<const SweepRow> rows) {
  csv::Writer w(out);
  w.header({"p", "seed", "mean_delay_s", "sd_delay_s", "max_delay_s", "n_chunks"});
  for (const auto& r : rows)
    w.cell(r.p)
        .cell(static_cast<unsigned long>(r.seed))
        .cell(r.stats.mean_delay)
        .cell(r.stats.sd_delay)
        .cell(r.stats.max_delay)
        .cell(r.stats.n_chunks)
        .end_row();
}

void write_chunk_log_csv(std::ostream& out, std::span<const ChunkRecord> chunks) {
  csv::Writer w(out);
  w.header({"user", "chunk", "due_s", "completion_s", "delay_s"});
  for (const auto& c : chunks) w.cell(c.user).cell(c.chunk).cell(c.due).cell(c.completion).cell(c.delay).end_row();
}

}  // namespace tpred
