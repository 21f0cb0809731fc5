#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <string_view>
#include <system_error>
#include <exception>
#include <thread>
#include <vector>

namespace rwc {

/// Shell-style glob match (`*`, `?`, `[...]`). `*` also crosses '.' so
/// "*.weight" selects "layer1.0.conv1.weight".
inline bool glob_match(const std::string& pattern, const std::string& name) {
  return ::fnmatch(pattern.c_str(), name.c_str(), 0) == 0;
}

/// 17 significant digits, locale-independent; enough to round-trip any double.
inline std::string format_g17(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value,
                                 std::chars_format::general, 17);
  if (ec != std::errc{}) return "nan";
  return std::string(buf.data(), end);
}

inline bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

template <typename Int>
bool parse_int(std::string_view text, Int& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

/// Worker count for internal parallelism: RWC_THREADS if set to a positive
/// integer, otherwise the number of logical processors.
inline unsigned thread_count() {
  if (const char* env = std::getenv("RWC_THREADS")) {
    unsigned n = 0;
    if (parse_int(std::string_view(env), n) && n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Incremental arithmetic mean. Equal inputs give back exactly that value,
/// and the result is kept within [min, max] of the inputs.
class RunningMean {
 public:
  void add(double x) {
    ++n_;
    mean_ += (x - mean_) / static_cast<double>(n_);
    lo_ = n_ == 1 ? x : std::min(lo_, x);
    hi_ = n_ == 1 ? x : std::max(hi_, x);
  }
  double value() const { return n_ == 0 ? 0.0 : std::clamp(mean_, lo_, hi_); }
  std::size_t count() const { return n_; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double lo_ = 0.0;
  double hi_ = 0.0;
};

/// Runs body(i) for i in [0, n) on up to `workers` threads. If any calls
/// throw, the exception from the lowest index is rethrown, so failures are
/// reported the same way regardless of the worker count.
template <typename Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
  if (n == 0) return;
  const std::size_t nthreads = std::min<std::size_t>(workers == 0 ? 1 : workers, n);
  std::vector<std::exception_ptr> errors(n);
  auto run_range = [&](std::size_t worker) {
    for (std::size_t i = worker; i < n; i += nthreads) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (nthreads == 1) {
    run_range(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(nthreads);
    for (std::size_t w = 0; w < nthreads; ++w) pool.emplace_back(run_range, w);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace rwc
