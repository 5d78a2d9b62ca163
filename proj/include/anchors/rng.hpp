#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace anchors {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// xoshiro256++ seeded through splitmix64. The standard <random> engines are
// portable but the distributions are not; this generator plus the draw
// helpers below give bit-identical streams on every platform, which the
// reproducibility contract needs.
//
// derive() is a pure function of (root key, stream id), so work units can be
// given independent streams whose output does not depend on thread count or
// call order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n). Multiply-high mapping; bias is below 2^-64 * n.
  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller.
  double next_gaussian() {
    double u1 = next_real();
    double u2 = next_real();
    while (u1 <= 0.0) u1 = next_real();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  bool next_bernoulli(double p) { return next_real() < p; }

  // Independent child stream identified by (this stream's key, stream id).
  Rng derive(std::uint64_t stream) const {
    std::uint64_t sm = key_ ^ (stream + 0x9e3779b97f4a7c15ULL);
    return Rng(detail::splitmix64(sm));
  }

  std::uint64_t key() const { return key_; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t key_;
  std::uint64_t state_[4];
};

}  // namespace anchors
