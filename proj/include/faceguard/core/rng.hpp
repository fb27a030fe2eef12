// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace faceguard {

// xoshiro256++ with an explicit 4-word state so checkpoints can capture and
// restore the exact stream position. Gaussian draws use Box-Muller without a
// cached spare, keeping the serialized state to the four words.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
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

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbounded index in [0, n). Modulo after a 64-bit draw; the bias is
  // below 2^-32 for any n that fits training workloads.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  // Standard normal via Box-Muller. Two uniforms per draw; no spare kept.
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class Seq>
  void shuffle(Seq& seq) {
    for (std::size_t i = seq.size(); i > 1; --i) {
      const std::size_t j = index(i);
      std::swap(seq[i - 1], seq[j]);
    }
  }

  const std::array<std::uint64_t, 4>& state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

  // Short digest of the stream position, logged per training iteration.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto word : state_) {
      h ^= word;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  std::array<std::uint64_t, 4> state_{};
};

// Derives an independent stream for a named purpose from a master seed, so
// e.g. data shuffling and latent sampling do not interleave.
inline Rng derive_rng(std::uint64_t master_seed, std::uint64_t stream_id) {
  std::uint64_t x = master_seed;
  const std::uint64_t a = Rng::splitmix64(x);
  x = a ^ (stream_id * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull);
  return Rng(Rng::splitmix64(x));
}

}  // namespace faceguard
