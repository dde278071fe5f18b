#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

namespace mjplab {

/// Philox4x32-10 counter-based generator.
///
/// A stream is identified by a 64-bit key; values are the cipher of an
/// incrementing 128-bit counter. `split(id)` derives an independent child
/// stream, so per-item streams can be addressed directly (e.g. by batch index)
/// without consuming the parent. All sampling routines are implemented here so
/// sequences are identical across standard libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Normal(0, stddev) resampled until within +-2 stddev.
  double truncated_normal(double stddev);
  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Child stream keyed by (this stream, id). Does not advance this stream.
  Rng split(std::uint64_t id) const;

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);
  /// k distinct indices from [0, n), in increasing order, uniformly chosen.
  std::vector<std::size_t> choose(std::size_t n, std::size_t k);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t key() const { return key_; }

 private:
  void refill();

  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int available_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// splitmix64 finalizer, used for key derivation.
std::uint64_t mix64(std::uint64_t x);

}  // namespace mjplab
