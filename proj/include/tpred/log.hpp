#pragma once

#include <iostream>
#include <string_view>

namespace tpred::log {

enum class Level { quiet = 0, warning = 1, info = 2 };

inline Level& level() {
  static Level current = Level::warning;
  return current;
}

inline void warning(std::string_view msg) {
  if (level() >= Level::warning) std::cerr << "warning: " << msg << '\n';
}

inline void info(std::string_view msg) {
  if (level() >= Level::info) std::cerr << msg << '\n';
}

}  // namespace tpred::log
