#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace eranet {

using WarningSink = std::function<void(const std::string&)>;

namespace detail {
struct WarningState {
  std::mutex mu;
  std::set<std::string> seen;
  WarningSink sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
};
inline WarningState& warning_state() {
  static WarningState s;
  return s;
}
}  // namespace detail

/// Replaces the warning destination; returns the previous one.
inline WarningSink set_warning_sink(WarningSink sink) {
  auto& s = detail::warning_state();
  std::lock_guard lock(s.mu);
  std::swap(s.sink, sink);
  s.seen.clear();
  return sink;
}

/// Emits each distinct message once per sink.
inline void warn_once(const std::string& msg) {
  auto& s = detail::warning_state();
  std::lock_guard lock(s.mu);
  if (!s.seen.insert(msg).second) return;
  if (s.sink) s.sink(msg);
}

}  // namespace eranet
