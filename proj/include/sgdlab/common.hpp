#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace sgdlab {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or arguments supplied by a caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A formula evaluated outside the region where it is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Quadrature or root finding failed to converge.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DivergedError : public Error {
 public:
  explicit DivergedError(std::int64_t step)
      : Error("diverged at step " + std::to_string(step)), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed-splitting rule: the stream for trajectory `index` under base `seed`
// is seeded with splitmix64(splitmix64(seed) ^ splitmix64(index + 1)).
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 1));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index = 0) {
  return Rng(split_seed(seed, index));
}

inline double sqr(double x) { return x * x; }

inline int sign_of(double x) { return (x > 0) - (x < 0); }

}  // namespace sgdlab
