#include "tpred/synth.hpp"

#include <algorithm>
#include <cmath>

namespace tpred::synth {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x7f4a7c15u};
  return std::mt19937_64(seq);
}

std::vector<StateSpan> modulation_timeline(const std::vector<double>& mean_sojourns, double duration,
                                           std::mt19937_64& rng, int initial_state) {
  if (mean_sojourns.empty()) throw std::invalid_argument("modulation needs at least one state");
  if (!(duration > 0)) throw std::invalid_argument("duration must be positive");
  for (double s : mean_sojourns)
    if (!(s > 0)) throw std::invalid_argument("sojourn means must be positive");

  const int k = static_cast<int>(mean_sojourns.size());
  std::vector<StateSpan> spans;
  double t = 0.0;
  int state = initial_state;
  while (t < duration) {
    std::exponential_distribution<double> hold(1.0 / mean_sojourns[static_cast<std::size_t>(state)]);
    const double end = std::min(duration, t + hold(rng));
    spans.push_back({t, end, state});
    t = end;
    if (k > 1) {
      std::uniform_int_distribution<int> pick(0, k - 2);
      const int next = pick(rng);
      state = next >= state ? next + 1 : next;
    }
  }
  return spans;
}

std::vector<double> modulated_arrivals(const std::vector<StateSpan>& timeline,
                                       const std::vector<double>& rates, std::mt19937_64& rng) {
  std::vector<double> times;
  for (const auto& span : timeline) {
    const double rate = rates.at(static_cast<std::size_t>(span.state));
    if (!(rate > 0)) continue;
    std::exponential_distribution<double> gap(rate);
    // Memorylessness lets each sojourn restart its own Poisson clock.
    double t = span.start + gap(rng);
    while (t < span.end) {
      times.push_back(t);
      t += gap(rng);
    }
  }
  return times;
}

std::vector<PacketRecord> generate_trace(const TrafficProfile& profile, double duration,
                                         std::uint64_t seed, std::vector<StateSpan>* timeline) {
  if (profile.states.empty()) throw std::invalid_argument("profile has no states");
  std::vector<double> sojourns, ul_rates, dl_rates;
  for (const auto& s : profile.states) {
    sojourns.push_back(s.mean_sojourn_s);
    ul_rates.push_back(s.ul_rate);
    dl_rates.push_back(s.dl_rate);
  }
  auto state_rng = make_engine(seed, 0);
  auto ul_rng = make_engine(seed, 1);
  auto dl_rng = make_engine(seed, 2);
  auto mark_rng = make_engine(seed, 3);

  const auto spans = modulation_timeline(sojourns, duration, state_rng);
  const auto ul = modulated_arrivals(spans, ul_rates, ul_rng);
  const auto dl = modulated_arrivals(spans, dl_rates, dl_rng);

  std::vector<PacketRecord> records;
  records.reserve(ul.size() + dl.size());
  std::size_t span_idx = 0;
  const auto state_at = [&](double t) -> const TrafficState& {
    while (span_idx + 1 < spans.size() && spans[span_idx].end <= t) ++span_idx;
    return profile.states[static_cast<std::size_t>(spans[span_idx].state)];
  };
  const auto mark = [&](double t, Direction dir) {
    const auto& st = state_at(t);
    const double mean = dir == Direction::uplink ? st.ul_size_mean : st.dl_size_mean;
    std::uniform_real_distribution<double> size(0.5 * mean, 1.5 * mean);
    std::bernoulli_distribution tcp(st.tcp_prob);
    PacketRecord r;
    r.timestamp = t;
    r.direction = dir;
    r.size = std::max<std::int64_t>(1, std::llround(size(mark_rng)));
    r.protocol = tcp(mark_rng) ? Protocol::tcp : Protocol::udp;
    records.push_back(r);
  };
  // Merge the two sorted streams so state lookup stays monotone.
  std::size_t i = 0, j = 0;
  while (i < ul.size() || j < dl.size()) {
    if (j >= dl.size() || (i < ul.size() && ul[i] <= dl[j])) mark(ul[i++], Direction::uplink);
    else mark(dl[j++], Direction::downlink);
  }
  if (timeline) *timeline = spans;
  return records;
}

TrafficProfile bursty_user_profile() {
  TrafficProfile p;
  p.name = "bursty_user";
  //            ul/s  dl/s  sojourn  ul_B   dl_B   tcp
  p.states = {{0.05, 0.4, 60.0, 80.0, 200.0, 0.3},
              {0.4, 3.0, 40.0, 120.0, 900.0, 0.6},
              {2.5, 18.0, 30.0, 150.0, 1300.0, 0.8}};
  return p;
}

std::vector<TrafficProfile> app_profiles() {
  std::vector<TrafficProfile> apps(4);
  apps[0].name = "surfing";
  apps[0].states = {{0.2, 1.0, 20.0, 120.0, 900.0, 0.95}, {3.0, 12.0, 8.0, 200.0, 1300.0, 0.95}};
  apps[1].name = "video_call";
  apps[1].states = {{22.0, 24.0, 60.0, 900.0, 1000.0, 0.05}, {14.0, 16.0, 20.0, 700.0, 800.0, 0.05}};
  apps[2].name = "voice_call";
  apps[2].states = {{25.0, 25.0, 60.0, 110.0, 110.0, 0.05}, {5.0, 6.0, 10.0, 90.0, 90.0, 0.1}};
  apps[3].name = "video_streaming";
  apps[3].states = {{1.5, 30.0, 15.0, 90.0, 1400.0, 0.85}, {0.3, 3.0, 10.0, 80.0, 1200.0, 0.85}};
  return apps;
}

}  // namespace tpred::synth
