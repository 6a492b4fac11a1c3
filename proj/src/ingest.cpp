#include "tpred/ingest.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tpred/csv.hpp"

namespace tpred {

namespace {

constexpr std::array<std::array<bool, 6>, 6> kNamedSets = {{
    {1, 1, 1, 1, 1, 0},
    {1, 0, 0, 0, 1, 0},
    {1, 0, 0, 0, 0, 0},
    {1, 1, 0, 0, 1, 0},
    {1, 1, 0, 0, 0, 0},
    {1, 1, 0, 0, 0, 1},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

FeatureMask::FeatureMask(std::vector<bool> bits, std::string name)
    : bits_(std::move(bits)), name_(std::move(name)) {
  if (bits_.empty() || std::none_of(bits_.begin(), bits_.end(), [](bool b) { return b; }))
    throw std::invalid_argument("feature mask must select at least one feature");
}

FeatureMask FeatureMask::named(int set_number) {
  if (set_number < 1 || set_number > 6)
    throw std::invalid_argument("feature set must be FS-1..FS-6");
  const auto& row = kNamedSets[static_cast<std::size_t>(set_number - 1)];
  return FeatureMask(std::vector<bool>(row.begin(), row.end()), "FS-" + std::to_string(set_number));
}

FeatureMask FeatureMask::all(Index size) {
  return FeatureMask(std::vector<bool>(static_cast<std::size_t>(size), true));
}

FeatureMask FeatureMask::parse(std::string_view text) {
  text = csv::trim(text);
  const std::string low = lower(text);
  if (low.rfind("fs-", 0) == 0 || low.rfind("fs", 0) == 0) {
    const auto digits = low.substr(low[2] == '-' ? 3 : 2);
    long long k = 0;
    if (!csv::parse_int(digits, k)) throw std::invalid_argument("bad feature set: " + std::string(text));
    return named(static_cast<int>(k));
  }
  std::vector<bool> bits;
  for (char c : text) {
    if (c == '1') bits.push_back(true);
    else if (c == '0') bits.push_back(false);
    else if (c == ',' || c == ' ' || c == '[' || c == ']') continue;
    else throw std::invalid_argument("bad feature mask: " + std::string(text));
  }
  return FeatureMask(std::move(bits));
}

Index FeatureMask::count() const {
  return static_cast<Index>(std::count(bits_.begin(), bits_.end(), true));
}

std::vector<Index> FeatureMask::selected() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i]) out.push_back(static_cast<Index>(i));
  return out;
}

std::string FeatureMask::bit_string() const {
  std::string s;
  for (bool b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

std::string FeatureMask::label() const {
  if (!name_.empty()) return name_;
  if (bits_.size() == 6) {
    for (std::size_t k = 0; k < kNamedSets.size(); ++k)
      if (std::equal(bits_.begin(), bits_.end(), kNamedSets[k].begin()))
        return "FS-" + std::to_string(k + 1);
  }
  return bit_string();
}

const std::vector<std::string>& default_app_classes() {
  static const std::vector<std::string> classes = {"surfing", "video_call", "voice_call",
                                                   "video_streaming"};
  return classes;
}

IntervalFeatures LabeledSeries::interval(Index k) const {
  const auto col = features.col(k);
  return {first_index + k, col(0), col(1), col(2), col(3), col(4), col(5)};
}

LabeledSeries LabeledSeries::slice(Index begin, Index count) const {
  if (begin < 0 || count < 0 || begin + count > size()) throw std::out_of_range("series slice");
  LabeledSeries out;
  out.tau = tau;
  out.first_index = first_index + begin;
  out.features = features.middleCols(begin, count);
  out.app_classes = app_classes;
  if (!burst_labels.empty())
    out.burst_labels.assign(burst_labels.begin() + begin, burst_labels.begin() + begin + count);
  if (!app_labels.empty())
    out.app_labels.assign(app_labels.begin() + begin, app_labels.begin() + begin + count);
  return out;
}

std::vector<PacketRecord> parse_packet_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<PacketRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (!have_header) {
      if (cells.size() != 4 || cells[0] != "timestamp_s" || cells[1] != "direction" ||
          cells[2] != "size_bytes" || cells[3] != "protocol")
        throw ParseError(line_no, "expected header timestamp_s,direction,size_bytes,protocol");
      have_header = true;
      continue;
    }
    if (cells.size() != 4) throw ParseError(line_no, "expected 4 columns");
    PacketRecord r;
    if (!csv::parse_double(cells[0], r.timestamp) || !std::isfinite(r.timestamp) || r.timestamp < 0)
      throw ParseError(line_no, "bad timestamp '" + std::string(cells[0]) + "'");
    const std::string dir = lower(cells[1]);
    if (dir == "ul") r.direction = Direction::uplink;
    else if (dir == "dl") r.direction = Direction::downlink;
    else throw ParseError(line_no, "bad direction '" + std::string(cells[1]) + "'");
    long long size = 0;
    if (!csv::parse_int(cells[2], size) || size < 1)
      throw ParseError(line_no, "bad size '" + std::string(cells[2]) + "'");
    r.size = size;
    const std::string proto = lower(cells[3]);
    r.protocol = proto == "tcp" ? Protocol::tcp : proto == "udp" ? Protocol::udp : Protocol::other;
    records.push_back(r);
  }
  if (records.empty()) throw Error("empty trace");
  std::stable_sort(records.begin(), records.end(),
                   [](const PacketRecord& a, const PacketRecord& b) { return a.timestamp < b.timestamp; });
  return records;
}

std::vector<PacketRecord> parse_packet_log(const std::filesystem::path& path, TraceFormat format) {
  if (format != TraceFormat::csv) throw std::invalid_argument("unsupported trace format");
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace " + path.string());
  return parse_packet_csv(in);
}

void write_packet_csv(std::ostream& out, std::span<const PacketRecord> records) {
  csv::Writer w(out);
  w.header({"timestamp_s", "direction", "size_bytes", "protocol"});
  for (const auto& r : records) {
    w.cell(r.timestamp)
        .cell(r.direction == Direction::uplink ? "UL" : "DL")
        .cell(static_cast<long long>(r.size))
        .cell(r.protocol == Protocol::tcp ? "tcp" : r.protocol == Protocol::udp ? "udp" : "other");
    w.end_row();
  }
}

LabeledSeries featurize(std::span<const PacketRecord> records, double tau) {
  if (!(tau > 0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be positive");
  if (records.empty()) throw Error("empty trace");
  if (!std::is_sorted(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return a.timestamp < b.timestamp;
      }))
    throw std::invalid_argument("records must be sorted by timestamp");

  const auto bucket = [tau](double t) { return static_cast<Index>(std::floor(t / tau)); };
  const Index count = bucket(records.back().timestamp) + 1;

  LabeledSeries series;
  series.tau = tau;
  series.features = MatrixXd::Zero(kNumFeatures, count);
  VectorXd tcp = VectorXd::Zero(count);
  for (const auto& r : records) {
    const Index k = bucket(r.timestamp);
    if (r.direction == Direction::uplink) {
      series.features(kUplinkPackets, k) += 1;
      series.features(kUplinkBytes, k) += static_cast<double>(r.size);
    } else {
      series.features(kDownlinkPackets, k) += 1;
      series.features(kDownlinkBytes, k) += static_cast<double>(r.size);
    }
    if (r.protocol == Protocol::tcp) tcp(k) += 1;
  }
  for (Index k = 0; k < count; ++k) {
    auto col = series.features.col(k);
    const double ul = col(kUplinkPackets), dl = col(kDownlinkPackets);
    col(kPacketRatio) = dl > 0 ? ul / dl : ul;
    col(kTcpFraction) = (ul + dl) > 0 ? tcp(k) / (ul + dl) : 0.0;
  }
  return series;
}

MatrixXd apply_mask(const MatrixXd& features, const FeatureMask& mask) {
  if (mask.count() == 0) throw std::invalid_argument("feature mask selects nothing");
  if (mask.size() != features.rows())
    throw std::invalid_argument("feature mask length does not match feature rows");
  const auto rows = mask.selected();
  return features(rows, Eigen::all);
}

MatrixXd apply_mask(const LabeledSeries& series, const FeatureMask& mask) {
  return apply_mask(series.features, mask);
}

LabeledSeries label_bursts(LabeledSeries series, double threshold) {
  if (!(threshold > 0)) throw std::invalid_argument("burst threshold must be positive");
  series.burst_labels.resize(static_cast<std::size_t>(series.size()));
  for (Index k = 0; k < series.size(); ++k)
    series.burst_labels[static_cast<std::size_t>(k)] = series.features(kUplinkPackets, k) > threshold ? 1 : 0;
  return series;
}

std::vector<WindowPair> make_windows(const MatrixXd& masked, Index m, Index n) {
  if (m < 1 || n < 0) throw std::invalid_argument("window needs m >= 1 and n >= 0");
  const Index length = masked.cols();
  if (length < m + n + 1) throw Error("insufficient history");
  std::vector<WindowPair> out;
  out.reserve(static_cast<std::size_t>(length - m - n));
  for (Index t = m; t + n < length; ++t)
    out.push_back({t, masked.middleCols(t - m, m), masked.middleCols(t, n + 1)});
  return out;
}

SeriesSplit split_series(const LabeledSeries& series, double train_frac, double valid_frac) {
  if (!(train_frac > 0) || !(valid_frac > 0) || !(train_frac + valid_frac < 1))
    throw std::invalid_argument("split fractions must be positive and sum below 1");
  const Index total = series.size();
  const auto part = [total](double frac) {
    return static_cast<Index>(std::floor(frac * static_cast<double>(total) + 1e-9));
  };
  const Index n_train = part(train_frac);
  const Index n_valid = part(valid_frac);
  const Index n_test = total - n_train - n_valid;
  if (n_train < 1 || n_valid < 1 || n_test < 1) throw Error("split leaves an empty partition");
  return {series.slice(0, n_train), series.slice(n_train, n_valid),
          series.slice(n_train + n_valid, n_test)};
}

void write_series_csv(std::ostream& out, const LabeledSeries& series) {
  const bool bursts = !series.burst_labels.empty();
  const bool apps = !series.app_labels.empty();
  csv::Writer w(out);
  w.cell("index");
  for (int f = 1; f <= 6; ++f) w.cell("f" + std::to_string(f));
  if (bursts) w.cell("burst");
  if (apps) w.cell("app");
  w.end_row();
  for (Index k = 0; k < series.size(); ++k) {
    w.cell(series.first_index + k);
    for (Index f = 0; f < kNumFeatures; ++f) w.cell(series.features(f, k));
    if (bursts) w.cell(series.burst_labels[static_cast<std::size_t>(k)]);
    if (apps) w.cell(std::string_view(series.app_classes.at(
                  static_cast<std::size_t>(series.app_labels[static_cast<std::size_t>(k)]))));
    w.end_row();
  }
}

LabeledSeries read_series_csv(std::istream& in, double tau) {
  std::string line;
  std::size_t line_no = 0;
  int burst_col = -1, app_col = -1;
  std::size_t columns = 0;
  std::vector<Index> indices;
  std::vector<std::array<double, 6>> rows;
  LabeledSeries series;
  series.tau = tau;
  std::vector<int> bursts, apps;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (columns == 0) {
      if (cells.size() < 7 || cells[0] != "index") throw ParseError(line_no, "expected series header");
      for (std::size_t c = 7; c < cells.size(); ++c) {
        if (cells[c] == "burst") burst_col = static_cast<int>(c);
        else if (cells[c] == "app") app_col = static_cast<int>(c);
        else throw ParseError(line_no, "unknown column '" + std::string(cells[c]) + "'");
      }
      columns = cells.size();
      continue;
    }
    if (cells.size() != columns) throw ParseError(line_no, "column count mismatch");
    long long idx = 0;
    if (!csv::parse_int(cells[0], idx)) throw ParseError(line_no, "bad index");
    if (!indices.empty() && idx != indices.back() + 1) throw ParseError(line_no, "index gap");
    indices.push_back(idx);
    std::array<double, 6> row{};
    for (std::size_t f = 0; f < 6; ++f)
      if (!csv::parse_double(cells[f + 1], row[f])) throw ParseError(line_no, "bad feature value");
    rows.push_back(row);
    if (burst_col >= 0) {
      long long b = 0;
      if (!csv::parse_int(cells[static_cast<std::size_t>(burst_col)], b) || (b != 0 && b != 1))
        throw ParseError(line_no, "bad burst label");
      bursts.push_back(static_cast<int>(b));
    }
    if (app_col >= 0) {
      const std::string name(cells[static_cast<std::size_t>(app_col)]);
      auto it = std::find(series.app_classes.begin(), series.app_classes.end(), name);
      if (it == series.app_classes.end()) {
        series.app_classes.push_back(name);
        it = series.app_classes.end() - 1;
      }
      apps.push_back(static_cast<int>(it - series.app_classes.begin()));
    }
  }
  if (rows.empty()) throw Error("empty series");
  series.first_index = indices.front();
  series.features.resize(kNumFeatures, static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t f = 0; f < 6; ++f)
      series.features(static_cast<Index>(f), static_cast<Index>(k)) = rows[k][f];
  series.burst_labels = std::move(bursts);
  series.app_labels = std::move(apps);
  return series;
}

LabeledSeries read_series_csv(const std::filesystem::path& path, double tau) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open series " + path.string());
  return read_series_csv(in, tau);
}

}  // namespace tpred
