#pragma once

#include <chrono>
#include <cstdarg>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace bdsl {

// Error taxonomy shared by the library and the CLI.  UsageError maps to exit
// code 1 (bad flags, invalid configuration), DataError to exit code 2
// (malformed or inconsistent input files).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row-major matrices throughout: one row per time step / sample, so row slices
// are contiguous and feature rows can be written to disk directly.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Mat<float>;
using MatD = Mat<double>;

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Level is read once from the BDSL_SPOTER_LOG environment variable
// (error|warn|info|debug, default info) and cached for the process lifetime.
LogLevel log_level();
void log_line(LogLevel level, const std::string& msg);

std::string strformat(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

inline void log_error(const std::string& msg) { log_line(LogLevel::kError, msg); }
inline void log_warn(const std::string& msg) { log_line(LogLevel::kWarn, msg); }
inline void log_info(const std::string& msg) { log_line(LogLevel::kInfo, msg); }
inline void log_debug(const std::string& msg) { log_line(LogLevel::kDebug, msg); }

// Worker-count resolution shared by every parallel site: values below 1 mean
// "use all hardware threads".
int resolved_workers(int workers);

// Runs fn(i) for i in [0, n).  Work items are claimed from a shared atomic
// counter, so threads never partition the index space statically; callers must
// write results into index-addressed slots to stay deterministic.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  double millis() const { return seconds() * 1000.0; }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace bdsl
