#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "indigo/tensor.hpp"

namespace indigo {

// Deterministic splitmix64 generator. Gaussian draws use Box-Muller on two
// uniform draws; the pair is consumed in fixed order and the second value is
// cached, so a sequence of N gaussian calls always consumes ceil(N/2) pairs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Independent substream; mixing the index through one splitmix round keeps
  // nearby indices decorrelated.
  static Rng stream(std::uint64_t base, std::uint64_t index) {
    Rng r(base + 0x9E3779B97F4A7C15ULL * (index + 1));
    return Rng(r.next_u64());
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on the open interval (0,1); never returns 0, safe under log().
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform in [0, n). Modulo bias is ~n/2^64, irrelevant at our sizes.
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  template <typename S>
  Tensor<S> gaussian_tensor(const Shape& shape) {
    Tensor<S> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t.flat(i) = static_cast<S>(gaussian());
    return t;
  }

  template <typename S>
  Tensor<S> uniform_tensor(const Shape& shape, double lo, double hi) {
    Tensor<S> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i)
      t.flat(i) = static_cast<S>(lo + (hi - lo) * uniform());
    return t;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace indigo
