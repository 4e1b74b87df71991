#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace mat {

using WarningHandler = std::function<void(const std::string&)>;

// Process-wide sink for non-fatal warning events. Tests swap it to capture.
inline WarningHandler& warning_handler() {
  static WarningHandler h = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return h;
}

inline void warn(const std::string& message) {
  if (auto& h = warning_handler()) h(message);
}

// RAII replacement of the warning sink.
class ScopedWarningHandler {
 public:
  explicit ScopedWarningHandler(WarningHandler h) : saved_(std::exchange(warning_handler(), std::move(h))) {}
  ~ScopedWarningHandler() { warning_handler() = std::move(saved_); }
  ScopedWarningHandler(const ScopedWarningHandler&) = delete;
  ScopedWarningHandler& operator=(const ScopedWarningHandler&) = delete;

 private:
  WarningHandler saved_;
};

}  // namespace mat
