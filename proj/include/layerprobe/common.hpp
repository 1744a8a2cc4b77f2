#pragma once

// Shared error type, seed derivation and a small deterministic worker pool.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace layerprobe {

inline constexpr std::string_view kVersion = "0.1.0";

enum class ErrorCategory {
  missing_input,  // a referenced file or artifact does not exist
  validation,     // input exists but violates a format or invariant
  computation,    // numerical failure during training / projection
  invalid_argument,
};

inline std::string_view to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::missing_input: return "missing-input";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::computation: return "computation";
    case ErrorCategory::invalid_argument: return "invalid-argument";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) { throw Error(c, msg); }

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a; stable across platforms and runs (unlike std::hash).
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Every random stream in the toolkit is seeded as derive_seed(global, tag, ...).
/// The tag names the consumer ("split", "fold", "ffn-init", ...) and the
/// trailing integers index the job, so streams never collide and never depend
/// on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return mix64(seed ^ mix64(stable_hash(tag)));
}

template <typename... Ints>
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t first, Ints... rest) {
  std::uint64_t s = mix64(derive_seed(seed, tag) ^ mix64(first + 0x632be59bd9b4e019ULL));
  ((s = mix64(s ^ mix64(static_cast<std::uint64_t>(rest) + 0x632be59bd9b4e019ULL))), ...);
  return s;
}

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Each index writes its
/// own output slot, so results do not depend on the thread count.
template <typename Body>
void parallel_for(std::size_t n, std::size_t jobs, Body&& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr first_error;
  std::size_t first_error_index = n;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += jobs) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(mu);
          // keep the error of the lowest index so failures are reproducible
          if (i < first_error_index) {
            first_error_index = i;
            first_error = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace layerprobe
