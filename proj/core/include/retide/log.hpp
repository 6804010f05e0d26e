#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace retide {

// stderr logging, verbosity from RETIDE_LOG (error|warn|info|debug).
enum class LogLevel : int { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline LogLevel log_level() {
  static const LogLevel lvl = [] {
    const char* e = std::getenv("RETIDE_LOG");
    if (!e) return LogLevel::Warn;
    if (!std::strcmp(e, "error")) return LogLevel::Error;
    if (!std::strcmp(e, "info")) return LogLevel::Info;
    if (!std::strcmp(e, "debug")) return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return lvl;
}

inline void log_write(LogLevel lvl, const char* tag, const char* fmt, ...) {
  if (int(lvl) > int(log_level())) return;
  std::fprintf(stderr, "[retide %s] ", tag);
  va_list ap;
  va_start(ap, fmt);
  std::vfprintf(stderr, fmt, ap);
  va_end(ap);
  std::fputc('\n', stderr);
}

} // namespace retide

#define RETIDE_LOG_ERROR(...) ::retide::log_write(::retide::LogLevel::Error, "error", __VA_ARGS__)
#define RETIDE_LOG_WARN(...) ::retide::log_write(::retide::LogLevel::Warn, "warn", __VA_ARGS__)
#define RETIDE_LOG_INFO(...) ::retide::log_write(::retide::LogLevel::Info, "info", __VA_ARGS__)
#define RETIDE_LOG_DEBUG(...) ::retide::log_write(::retide::LogLevel::Debug, "debug", __VA_ARGS__)
