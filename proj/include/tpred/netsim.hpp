#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "tpred/common.hpp"

namespace tpred {

/// Two-state switched Poisson source (light/heavy).
struct SppSource {
  double rate_light = 0.2;  // arrivals per second
  double rate_heavy = 20.0;
  double mean_light_duration = 10.0;  // seconds
  double mean_heavy_duration = 1.0;
  double burst_size_bits = 3e6;

  double stationary_rate() const;
  void validate() const;
};

struct PpSource {
  double rate = 2.0;  // arrivals per second
  double chunk_size_bits = 2e6;

  void validate() const;
};

struct SimConfig {
  double service_rate_bps = 45e6;
  int n_type1 = 5;
  int n_type2 = 3;
  SppSource spp;
  PpSource pp;
  double sim_duration_s = 3600.0;
  double time_step_s = 0.01;
  double prediction_prob = 0.0;
  double prediction_lead_s = 2.0;
  double prefetch_horizon_s = 10.0;
  std::uint64_t seed = 1;

  /// Throws Error on non-finite or out-of-range values.
  void validate() const;
  double offered_load_bps() const;
};

struct SppTrace {
  std::vector<double> arrivals;
  std::vector<double> heavy_starts;  // light -> heavy transition times
  double heavy_time = 0.0;           // total time spent heavy
  double duration = 0.0;
};

/// Starts from the stationary state distribution.
SppTrace generate_spp_trace(const SppSource& source, double duration, std::uint64_t seed);
SppTrace generate_spp_trace(const SppSource& source, double duration, std::mt19937_64& rng);

std::vector<double> generate_pp_trace(const PpSource& source, double duration, std::uint64_t seed);
std::vector<double> generate_pp_trace(const PpSource& source, double duration, std::mt19937_64& rng);

struct DelayStats {
  double mean_delay = 0.0;
  double sd_delay = 0.0;  // population SD
  double max_delay = 0.0;
  Index n_chunks = 0;
};

DelayStats delay_stats(std::span<const double> delays);

struct ChunkRecord {
  int user = 0;
  Index chunk = 0;  // position in the user's stream
  double due = 0.0;
  double completion = 0.0;  // end of the step that carried the last bit
  double delay = 0.0;
  bool prefetched = false;  // finished before it was due
};

struct SimLog {
  std::vector<ChunkRecord> chunks;  // completed type-2 chunks, in completion order
  std::vector<double> backlog_bits;  // total queued bits sampled once per simulated second
  std::int64_t capacity_per_step = 0;
  Index steps = 0;
  double duration = 0.0;
  std::int64_t type1_bits_arrived = 0;
  std::int64_t type2_bits_arrived = 0;
  std::int64_t bits_served = 0;
  std::int64_t final_backlog_bits = 0;
  std::int64_t max_step_served = 0;
  Index work_conservation_violations = 0;
  Index type1_arrivals = 0;
  Index transitions = 0;
  Index predicted_transitions = 0;
  Index unfinished_chunks = 0;
};

struct SimResult {
  DelayStats stats;
  SimLog log;
};

SimResult run_simulation(const SimConfig& config);

struct UtilizationReport {
  double offered_load_bps = 0.0;
  double analytic_offered_load_bps = 0.0;
  double served_throughput_bps = 0.0;
  double empirical_spp_rate = 0.0;  // per type-1 user
  double max_step_throughput_bps = 0.0;
  double backlog_slope_bits_per_s = 0.0;  // least-squares slope of the backlog samples
  bool bits_conserved = false;
  bool work_conserving = false;
};

UtilizationReport utilization_check(const SimConfig& config, const SimLog& log);

struct SweepRow {
  double p = 0.0;
  std::uint64_t seed = 0;
  DelayStats stats;
};

/// Runs every (p, seed) pair; rows ordered by p, then seed.
std::vector<SweepRow> simulate_sweep(const SimConfig& base, std::span<const double> probs,
                                     std::span<const std::uint64_t> seeds, int jobs = 1);

void write_delay_csv(std::ostream& out, std::span<const SweepRow> rows);
void write_chunk_log_csv(std::ostream& out, std::span<const ChunkRecord> chunks);

/// Integer max-min fair split of `capacity` over `demands`; leftover single bits go to users in
/// cyclic order starting at `offset`. Returns the allocation.
std::vector<std::int64_t> water_fill(std::span<const std::int64_t> demands, std::int64_t capacity,
                                     std::size_t offset = 0);

/// water_fill with per-user guaranteed minimums (clipped to demand); the guarantees must fit in
/// `capacity`. Work-conserving.
std::vector<std::int64_t> guarded_fill(std::span<const std::int64_t> demands, std::int64_t capacity,
                                       std::span<const std::int64_t> floors, std::size_t offset = 0);

}  // namespace tpred
