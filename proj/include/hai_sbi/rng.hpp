#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, counter), so simulations do not depend on loop order or on how
// work is split across threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace hai_sbi::rng {

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

// Philox4x32 with 10 rounds (Salmon et al., Random123).
inline Block philox4x32_10(Block ctr, Key key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

inline Key key_from_seed(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

// Maps 53 random bits onto the open interval (0, 1).
inline double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Tags separating the independent draws made for one (step, index) cell.
enum class Event : std::uint32_t {
  initial_state = 1,
  discharge = 2,
  admission_state = 3,
  infection = 4,
  observation = 5,
};

// One uniform draw keyed by (seed, step, index, event).
inline double cell_uniform(std::uint64_t seed, std::uint32_t step, std::uint32_t index,
                           Event event) {
  const Block out =
      philox4x32_10({step, index, static_cast<std::uint32_t>(event), 0x5EEDu}, key_from_seed(seed));
  return to_unit((std::uint64_t{out[0]} << 32) | out[1]);
}

// Derives an independent child seed, e.g. one per replicate simulation.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  const Block out = philox4x32_10({static_cast<std::uint32_t>(index),
                                   static_cast<std::uint32_t>(index >> 32), 0xD371u, 0xC0DEu},
                                  key_from_seed(seed));
  return (std::uint64_t{out[0]} << 32) | out[1];
}

// Sequential stream over a Philox counter. Satisfies
// UniformRandomBitGenerator so it can drive std::shuffle.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : key_(key_from_seed(seed)), stream_id_(stream_id) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
    if (lane_ == 2) {
      refill();
    }
    return buffer_[lane_++];
  }

  double uniform() { return to_unit((*this)()); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Geometric number of failures before the first success, p in (0, 1].
  std::uint64_t geometric(double p) {
    if (p >= 1.0) {
      return 0;
    }
    return static_cast<std::uint64_t>(std::floor(std::log(uniform()) / std::log1p(-p)));
  }

 private:
  void refill() {
    const Block out = philox4x32_10({static_cast<std::uint32_t>(counter_),
                                     static_cast<std::uint32_t>(counter_ >> 32),
                                     static_cast<std::uint32_t>(stream_id_),
                                     static_cast<std::uint32_t>(stream_id_ >> 32)},
                                    key_);
    ++counter_;
    buffer_[0] = (std::uint64_t{out[0]} << 32) | out[1];
    buffer_[1] = (std::uint64_t{out[2]} << 32) | out[3];
    lane_ = 0;
  }

  Key key_;
  std::uint64_t stream_id_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int lane_ = 2;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace hai_sbi::rng
