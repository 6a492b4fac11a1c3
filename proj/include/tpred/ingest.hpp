#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpred/common.hpp"

namespace tpred {

enum class Direction { uplink, downlink };
enum class Protocol { tcp, udp, other };

struct PacketRecord {
  double timestamp = 0.0;  // seconds since trace start
  Direction direction = Direction::uplink;
  std::int64_t size = 1;  // bytes
  Protocol protocol = Protocol::other;
};

/// Number of per-interval features (f1..f6).
inline constexpr Index kNumFeatures = 6;

/// Row indices of the feature matrix.
enum Feature : Index {
  kUplinkPackets = 0,    // f1
  kDownlinkPackets = 1,  // f2
  kUplinkBytes = 2,      // f3
  kDownlinkBytes = 3,    // f4
  kPacketRatio = 4,      // f5
  kTcpFraction = 5,      // f6
};

struct IntervalFeatures {
  Index index = 0;
  double f1 = 0, f2 = 0, f3 = 0, f4 = 0, f5 = 0, f6 = 0;
};

/// Binary feature selector. Bit i keeps row i of a feature matrix.
class FeatureMask {
 public:
  FeatureMask() = default;
  explicit FeatureMask(std::vector<bool> bits, std::string name = {});

  /// The six named sets FS-1..FS-6 over f1..f6.
  static FeatureMask named(int set_number);
  static FeatureMask all(Index size = kNumFeatures);
  /// Accepts "FS-k" or a bit string such as "110000" / "1,1,0,0,0,0".
  static FeatureMask parse(std::string_view text);

  Index size() const { return static_cast<Index>(bits_.size()); }
  Index count() const;
  bool test(Index i) const { return bits_.at(static_cast<std::size_t>(i)); }
  std::vector<Index> selected() const;
  const std::vector<bool>& bits() const { return bits_; }
  /// "FS-k" when the bits match a named set, otherwise the bit string.
  std::string label() const;
  std::string bit_string() const;

  friend bool operator==(const FeatureMask& a, const FeatureMask& b) { return a.bits_ == b.bits_; }

 private:
  std::vector<bool> bits_;
  std::string name_;
};

/// Default application classes, in label order.
const std::vector<std::string>& default_app_classes();

/// Gapless interval series. Column k of `features` is interval first_index + k.
struct LabeledSeries {
  double tau = 0.0;
  Index first_index = 0;
  MatrixXd features;              // kNumFeatures x T
  std::vector<int> burst_labels;  // empty or length T
  std::vector<int> app_labels;    // empty or length T, indices into app_classes
  std::vector<std::string> app_classes = default_app_classes();

  Index size() const { return features.cols(); }
  IntervalFeatures interval(Index k) const;
  /// Copy of columns [begin, begin + count) with labels.
  LabeledSeries slice(Index begin, Index count) const;
};

struct WindowPair {
  Index anchor = 0;      // column of the first target interval
  MatrixXd observations;  // F x m, most recent last
  MatrixXd targets;       // F x (n + 1)
};

struct SeriesSplit {
  LabeledSeries train, valid, test;
};

enum class TraceFormat { csv };

std::vector<PacketRecord> parse_packet_log(const std::filesystem::path& path,
                                           TraceFormat format = TraceFormat::csv);
std::vector<PacketRecord> parse_packet_csv(std::istream& in);
void write_packet_csv(std::ostream& out, std::span<const PacketRecord> records);

LabeledSeries featurize(std::span<const PacketRecord> records, double tau);

MatrixXd apply_mask(const MatrixXd& features, const FeatureMask& mask);
MatrixXd apply_mask(const LabeledSeries& series, const FeatureMask& mask);

LabeledSeries label_bursts(LabeledSeries series, double threshold);

std::vector<WindowPair> make_windows(const MatrixXd& masked, Index m, Index n);

SeriesSplit split_series(const LabeledSeries& series, double train_frac, double valid_frac);

void write_series_csv(std::ostream& out, const LabeledSeries& series);
/// Reads `index,f1..f6[,burst][,app]`; the interval length is not stored in the file.
LabeledSeries read_series_csv(std::istream& in, double tau);
LabeledSeries read_series_csv(const std::filesystem::path& path, double tau);

}  // namespace tpred
