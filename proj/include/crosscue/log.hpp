#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace crosscue {

// Verbosity from CROSSCUE_LOG: quiet | info (default) | debug.
inline int log_level() {
  static const int level = [] {
    const char* env = std::getenv("CROSSCUE_LOG");
    if (!env) return 1;
    std::string_view v(env);
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
  }();
  return level;
}

inline void log_info(std::string_view msg) {
  if (log_level() >= 1) std::cerr << "[crosscue] " << msg << '\n';
}

inline void log_debug(std::string_view msg) {
  if (log_level() >= 2) std::cerr << "[crosscue:debug] " << msg << '\n';
}

}  // namespace crosscue
