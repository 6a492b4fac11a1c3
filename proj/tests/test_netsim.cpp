#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "tpred/netsim.hpp"

using namespace tpred;

namespace {

double mean_gap(const std::vector<double>& t) {
  return (t.back() - t.front()) / static_cast<double>(t.size() - 1);
}

// Max-min fairness: a user left short never holds more than one bit less than anybody else.
void check_fair(std::span<const std::int64_t> demands, std::int64_t capacity, const std::vector<std::int64_t>& alloc) {
  const std::int64_t want = std::accumulate(demands.begin(), demands.end(), std::int64_t{0});
  CHECK(std::accumulate(alloc.begin(), alloc.end(), std::int64_t{0}) == std::min(want, capacity));
  for (std::size_t i = 0; i < demands.size(); ++i) {
    CHECK(alloc[i] >= 0);
    CHECK(alloc[i] <= demands[i]);
    if (alloc[i] < demands[i])
      for (std::size_t j = 0; j < demands.size(); ++j) CHECK(alloc[j] <= alloc[i] + 1);
  }
}

SimConfig short_config(double p, std::uint64_t seed, double duration = 900.0) {
  SimConfig c;
  c.sim_duration_s = duration;
  c.prediction_prob = p;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("default scenario") {
  const SimConfig c;
  CHECK(c.spp.stationary_rate() == doctest::Approx(2.0));
  CHECK(c.offered_load_bps() == doctest::Approx(42e6));
  CHECK(c.offered_load_bps() < c.service_rate_bps);
}

TEST_CASE("SPP arrivals") {
  const SppSource s;
  const auto tr = generate_spp_trace(s, 1e5, 3);
  CHECK(static_cast<double>(tr.arrivals.size()) / 1e5 == doctest::Approx(2.0).epsilon(0.02));
  CHECK(std::is_sorted(tr.arrivals.begin(), tr.arrivals.end()));
  CHECK(tr.heavy_time / 1e5 == doctest::Approx(1.0 / 11.0).epsilon(0.05));

  const auto again = generate_spp_trace(s, 1e5, 3);
  CHECK(again.arrivals == tr.arrivals);
  CHECK(again.heavy_starts == tr.heavy_starts);

  SppSource flat = s;
  flat.rate_heavy = flat.rate_light = 1.5;
  CHECK(mean_gap(generate_spp_trace(flat, 1e5, 4).arrivals) == doctest::Approx(1.0 / 1.5).epsilon(0.02));
}

TEST_CASE("PP arrivals") {
  const PpSource p;
  const auto t = generate_pp_trace(p, 1e5, 5);
  CHECK(static_cast<double>(t.size()) == doctest::Approx(2e5).epsilon(0.02));
  CHECK(mean_gap(t) == doctest::Approx(0.5).epsilon(0.02));
  CHECK(generate_pp_trace(p, 1e5, 5) == t);
}

TEST_CASE("delay statistics use the population SD") {
  const auto s = delay_stats(std::vector<double>{1, 3});
  CHECK(s.mean_delay == 2.0);
  CHECK(s.sd_delay == 1.0);
  CHECK(s.max_delay == 3.0);
  CHECK(s.n_chunks == 2);
  CHECK(delay_stats(std::vector<double>{}).n_chunks == 0);
}

TEST_CASE("water filling is max-min fair") {
  const std::vector<std::int64_t> d = {5, 100, 100};
  const auto a = water_fill(d, 50);
  CHECK(a[0] == 5);
  CHECK(a[1] + a[2] == 45);
  check_fair(d, 50, a);
  CHECK(water_fill(d, 1000) == d);

  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::int64_t> dem(0, 500);
  std::uniform_int_distribution<std::int64_t> cap(0, 2000);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::int64_t> demands(1 + trial % 9);
    for (auto& x : demands) x = dem(rng);
    const auto c = cap(rng);
    check_fair(demands, c, water_fill(demands, c, static_cast<std::size_t>(trial)));
  }
}

TEST_CASE("leftover bits rotate with the offset") {
  const std::vector<std::int64_t> d = {10, 10, 10};
  CHECK(water_fill(d, 4, 0) == std::vector<std::int64_t>{2, 1, 1});
  CHECK(water_fill(d, 4, 1) == std::vector<std::int64_t>{1, 2, 1});
  CHECK(water_fill(d, 4, 2) == std::vector<std::int64_t>{1, 1, 2});
}

TEST_CASE("guarded fill honours floors and stays work conserving") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> dem(0, 400);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t users = 1 + static_cast<std::size_t>(trial % 6);
    std::vector<std::int64_t> demands(users), floors(users);
    for (auto& x : demands) x = dem(rng);
    std::int64_t floor_sum = 0;
    for (std::size_t i = 0; i < users; ++i) {
      floors[i] = std::uniform_int_distribution<std::int64_t>(0, 150)(rng);
      floor_sum += std::min(floors[i], demands[i]);
    }
    const std::int64_t capacity = floor_sum + dem(rng);
    const auto a = guarded_fill(demands, capacity, floors, static_cast<std::size_t>(trial));
    const std::int64_t want = std::accumulate(demands.begin(), demands.end(), std::int64_t{0});
    CHECK(std::accumulate(a.begin(), a.end(), std::int64_t{0}) == std::min(want, capacity));
    for (std::size_t i = 0; i < users; ++i) {
      CHECK(a[i] <= demands[i]);
      CHECK(a[i] >= std::min(floors[i], demands[i]));
    }
  }
  const std::vector<std::int64_t> zero(3, 0);
  const std::vector<std::int64_t> d = {10, 10, 10};
  CHECK(guarded_fill(d, 7, zero) == water_fill(d, 7));
}

TEST_CASE("configuration errors") {
  SimConfig c;
  c.time_step_s = 3.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("time step exceeds the prediction lead"), Error);
  SimConfig nan;
  nan.service_rate_bps = std::nan("");
  CHECK_THROWS_AS(nan.validate(), Error);
  SimConfig p;
  p.prediction_prob = 1.5;
  CHECK_THROWS_AS(p.validate(), Error);
  CHECK_THROWS_AS(run_simulation(c), Error);
}

TEST_CASE("without prediction nothing is early") {
  const auto r = run_simulation(short_config(0.0, 2));
  REQUIRE(!r.log.chunks.empty());
  for (const auto& ch : r.log.chunks) {
    CHECK_FALSE(ch.prefetched);
    CHECK(ch.completion >= ch.due);
    CHECK(ch.delay == doctest::Approx(ch.completion - ch.due));
  }
  CHECK(r.log.predicted_transitions == 0);
}

TEST_CASE("ample capacity leaves only step granularity") {
  SimConfig c = short_config(0.0, 3, 300.0);
  c.service_rate_bps = 1e13;
  const auto r = run_simulation(c);
  CHECK(r.stats.mean_delay > 0.0);
  CHECK(r.stats.mean_delay <= c.time_step_s);
  CHECK(r.stats.max_delay <= c.time_step_s + 1e-12);
}

TEST_CASE("conservation and capacity bound") {
  const SimConfig c = short_config(0.5, 4, 3000.0);
  const auto r = run_simulation(c);
  const auto u = utilization_check(c, r.log);
  CHECK(u.bits_conserved);
  CHECK(u.work_conserving);
  CHECK(r.log.work_conservation_violations == 0);
  CHECK(u.max_step_throughput_bps <= c.service_rate_bps);
  CHECK(r.log.type1_bits_arrived + r.log.type2_bits_arrived == r.log.bits_served + r.log.final_backlog_bits);
}

TEST_CASE("stable scenario keeps the backlog bounded") {
  const SimConfig c = short_config(0.0, 5, 3e4);
  const auto r = run_simulation(c);
  const auto u = utilization_check(c, r.log);
  // A drift of 1% of the spare capacity would show as 30 kb/s.
  CHECK(std::abs(u.backlog_slope_bits_per_s) < 0.01 * (c.service_rate_bps - c.offered_load_bps()));
  CHECK(u.offered_load_bps == doctest::Approx(42e6).epsilon(0.03));
}

TEST_CASE("prediction never delays a chunk") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto base = run_simulation(short_config(0.0, seed));
    std::map<std::pair<int, Index>, double> ref;
    for (const auto& ch : base.log.chunks) ref[{ch.user, ch.chunk}] = ch.delay;
    for (double p : {0.5, 1.0}) {
      const auto r = run_simulation(short_config(p, seed));
      CHECK(r.log.predicted_transitions > 0);
      Index compared = 0, worse = 0;
      for (const auto& ch : r.log.chunks) {
        CHECK(ch.delay >= 0.0);
        const auto it = ref.find({ch.user, ch.chunk});
        if (it == ref.end()) continue;
        ++compared;
        worse += ch.delay > it->second + 1e-9;
      }
      CHECK(compared > 0);
      CHECK(worse == 0);
    }
  }
}

TEST_CASE("runs are deterministic and sweeps independent of jobs") {
  const auto a = run_simulation(short_config(0.75, 9, 600.0));
  const auto b = run_simulation(short_config(0.75, 9, 600.0));
  REQUIRE(a.log.chunks.size() == b.log.chunks.size());
  for (std::size_t i = 0; i < a.log.chunks.size(); ++i) CHECK(a.log.chunks[i].completion == b.log.chunks[i].completion);

  const std::vector<double> probs = {0.0, 1.0};
  const std::vector<std::uint64_t> seeds = {1, 2};
  SimConfig base = short_config(0.0, 1, 300.0);
  const auto s1 = simulate_sweep(base, probs, seeds, 1);
  const auto s3 = simulate_sweep(base, probs, seeds, 3);
  REQUIRE(s1.size() == 4);
  CHECK(s1[1].p == 0.0);
  CHECK(s1[1].seed == 2);
  std::ostringstream o1, o3;
  write_delay_csv(o1, s1);
  write_delay_csv(o3, s3);
  CHECK(o1.str() == o3.str());
  CHECK(o1.str().rfind("p,seed,mean_delay_s,sd_delay_s,max_delay_s,n_chunks\n", 0) == 0);
}

TEST_CASE("chunk log CSV") {
  std::ostringstream o;
  write_chunk_log_csv(o, std::vector<ChunkRecord>{{1, 4, 2.5, 2.75, 0.25, false}});
  CHECK(o.str() == "user,chunk,due_s,completion_s,delay_s\n1,4,2.5,2.75,0.25\n");
}
