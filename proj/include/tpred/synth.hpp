#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tpred/ingest.hpp"

namespace tpred::synth {

/// One modulating state of a Markov-modulated packet source.
struct TrafficState {
  double ul_rate = 1.0;         // uplink packets per second
  double dl_rate = 1.0;         // downlink packets per second
  double mean_sojourn_s = 10.0;  // exponential holding time
  double ul_size_mean = 100.0;  // bytes
  double dl_size_mean = 1000.0;
  double tcp_prob = 0.5;
};

/// On leaving a state the next one is drawn uniformly from the others.
struct TrafficProfile {
  std::string name;
  std::vector<TrafficState> states;
};

struct StateSpan {
  double start = 0.0;
  double end = 0.0;
  int state = 0;
};

/// Alternating-state modulation timeline covering [0, duration).
std::vector<StateSpan> modulation_timeline(const std::vector<double>& mean_sojourns, double duration,
                                           std::mt19937_64& rng, int initial_state = 0);

/// Poisson arrivals at a piecewise-constant rate following `timeline`.
std::vector<double> modulated_arrivals(const std::vector<StateSpan>& timeline,
                                       const std::vector<double>& rates, std::mt19937_64& rng);

/// Packet-level trace; `timeline` receives the state path when non-null.
std::vector<PacketRecord> generate_trace(const TrafficProfile& profile, double duration,
                                         std::uint64_t seed, std::vector<StateSpan>* timeline = nullptr);

/// Single user alternating idle, light and heavy activity; UL and DL follow the same state.
TrafficProfile bursty_user_profile();

/// Profiles for surfing, video_call, voice_call, video_streaming in default_app_classes() order.
std::vector<TrafficProfile> app_profiles();

/// Independent engine for stream `stream` derived from a user seed.
std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream);

}  // namespace tpred::synth
