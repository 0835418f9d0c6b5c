#pragma once

#include <sstream>
#include <string>

namespace jojo {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();
void log_line(LogLevel level, const std::string& message);

template <typename... Args>
void log(LogLevel level, const Args&... args) {
  if (level < log_level()) return;
  std::ostringstream ss;
  (ss << ... << args);
  log_line(level, ss.str());
}

template <typename... Args>
void log_debug(const Args&... args) { log(LogLevel::Debug, args...); }
template <typename... Args>
void log_info(const Args&... args) { log(LogLevel::Info, args...); }
template <typename... Args>
void log_warn(const Args&... args) { log(LogLevel::Warn, args...); }

}  // namespace jojo
