#pragma once

#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace tpred::csv {

/// Shortest round-trip decimal form; byte-stable across runs.
std::string format(double value);

std::string_view trim(std::string_view text);
std::vector<std::string_view> split(std::string_view line, char sep = ',');

/// Strict numeric parsing; returns false on trailing garbage.
bool parse_double(std::string_view text, double& out);
bool parse_int(std::string_view text, long long& out);

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  Writer& header(std::initializer_list<std::string_view> columns);
  Writer& cell(std::string_view text);
  Writer& cell(double value);
  Writer& cell(long long value);
  Writer& cell(int value) { return cell(static_cast<long long>(value)); }
  Writer& cell(long value) { return cell(static_cast<long long>(value)); }
  Writer& cell(unsigned long value) { return cell(std::string_view(std::to_string(value))); }
  void end_row();

 private:
  std::ostream& out_;
  bool first_ = true;
};

}  // namespace tpred::csv
