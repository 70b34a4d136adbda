#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace wl {

// ---------------------------------------------------------------------------
// Error types.  Each maps to a failure mode of a specific operation; the CLI
// translates them into exit codes.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
  using Error::Error;
};
struct NoValidNormalization : Error {
  using Error::Error;
};
struct EmptyExcitedSet : Error {
  using Error::Error;
};
struct OrderMismatch : Error {
  using Error::Error;
};
struct OutOfDomain : Error {
  using Error::Error;
};
struct TruncationOverflow : Error {
  using Error::Error;
};
struct BlowUp : Error {
  using Error::Error;
};
struct SmallDivisor : Error {
  using Error::Error;
};
struct NoConvergence : Error {
  std::vector<double> residual_history;
  NoConvergence(const std::string& msg, std::vector<double> hist)
      : Error(msg), residual_history(std::move(hist)) {}
};
struct SplittingDivergence : Error {
  using Error::Error;
};
struct RateCertificationFailed : Error {
  using Error::Error;
};
struct ResonanceDetected : Error {
  int order;
  ResonanceDetected(const std::string& msg, int i) : Error(msg), order(i) {}
};
struct SeriesDiverging : Error {
  using Error::Error;
};
struct ContractionFailure : Error {
  using Error::Error;
};
struct BallEscape : Error {
  using Error::Error;
};
struct SingularFactor : Error {
  using Error::Error;
};
struct NotInvertible : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Logging.  Level picked up from WL_LOG={error,info,debug}; default info.
// ---------------------------------------------------------------------------

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  static LogLevel lvl = [] {
    const char* env = std::getenv("WL_LOG");
    if (!env) return LogLevel::info;
    if (std::strcmp(env, "error") == 0) return LogLevel::error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::info;
  }();
  return lvl;
}

inline void log_msg(LogLevel lvl, const char* fmt, ...) {
  if (lvl > log_level()) return;
  const char* tag = lvl == LogLevel::error ? "error" : lvl == LogLevel::info ? "info" : "debug";
  std::fprintf(stderr, "[wl:%s] ", tag);
  va_list args;
  va_start(args, fmt);
  std::vfprintf(stderr, fmt, args);
  va_end(args);
  std::fprintf(stderr, "\n");
}

#define WL_INFO(...) ::wl::log_msg(::wl::LogLevel::info, __VA_ARGS__)
#define WL_DEBUG(...) ::wl::log_msg(::wl::LogLevel::debug, __VA_ARGS__)
#define WL_ERROR(...) ::wl::log_msg(::wl::LogLevel::error, __VA_ARGS__)

// ---------------------------------------------------------------------------
// Hex-float encoding: lossless decimal-free round trip for doubles in JSON.
// ---------------------------------------------------------------------------

inline std::string hexfloat(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", x);
  return buf;
}

inline double parse_hexfloat(const std::string& s) {
  return std::strtod(s.c_str(), nullptr);
}

// FNV-1a digest of a byte string; used to stamp certificates with their inputs.
inline std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline double sup_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// Worker-pool cap shared by the parallel sections (set from --threads).
inline int& worker_threads() {
  static int n = 1;
  return n;
}

}  // namespace wl

#include <thread>

namespace wl {

/// Deterministic parallel loop: every index writes its own slots, so the
/// result is schedule-independent.  Runs inline when the pool is capped at 1.
template <class F>
void parallel_for(int n, F&& f) {
  int tcount = std::min(worker_threads(), n);
  if (tcount <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(tcount);
  for (int w = 0; w < tcount; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += tcount) f(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace wl
