#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace lvr {

namespace detail {
inline std::atomic<bool>& warnings_enabled() {
  static std::atomic<bool> enabled{true};
  return enabled;
}
inline std::atomic<std::size_t>& warning_count() {
  static std::atomic<std::size_t> count{0};
  return count;
}
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline void set_warnings_enabled(bool enabled) { detail::warnings_enabled() = enabled; }

// Number of warnings emitted so far, including suppressed ones.
inline std::size_t warning_count() { return detail::warning_count(); }

inline void warn(std::string_view message) {
  ++detail::warning_count();
  if (!detail::warnings_enabled()) return;
  std::lock_guard<std::mutex> lock(detail::log_mutex());
  std::clog << "warning: " << message << '\n';
}

}  // namespace lvr
