#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace ergohjb {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Stateless: every
/// (key, counter) pair maps to four independent 32-bit words.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

  static Key key_from_seed(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

  /// Uniform in the open interval (0, 1).
  static double to_unit(std::uint32_t v) { return (static_cast<double>(v) + 0.5) * 0x1p-32; }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;
};

/// Per-path stream: counter = (block lo, block hi, path lo, path hi | stream tag).
class PathStream {
 public:
  PathStream(std::uint64_t seed, std::uint64_t path, std::uint32_t tag = 0)
      : key_(Philox4x32::key_from_seed(seed)), path_(path), tag_(tag) {}

  Philox4x32::Counter block(std::uint64_t index) const {
    return Philox4x32::generate({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                                 static_cast<std::uint32_t>(path_),
                                 static_cast<std::uint32_t>(path_ >> 32) ^ (tag_ << 24)},
                                key_);
  }

  /// Two standard normals and two uniforms from one block (Box-Muller on the first pair).
  struct Draw {
    double normal[2];
    double uniform[2];
  };

  Draw draw(std::uint64_t index) const {
    const auto w = block(index);
    const double u1 = Philox4x32::to_unit(w[0]);
    const double u2 = Philox4x32::to_unit(w[1]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    return {{r * std::cos(th), r * std::sin(th)}, {Philox4x32::to_unit(w[2]), Philox4x32::to_unit(w[3])}};
  }

 private:
  Philox4x32::Key key_;
  std::uint64_t path_;
  std::uint32_t tag_;
};

}  // namespace ergohjb
