#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace tbi {

constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a; used to turn subcommand / measurement labels into stream tags.
constexpr std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

/// xoshiro256** engine. Cheap to seed, which matters because every shot gets
/// its own stream. Satisfies UniformRandomBitGenerator, so the <random>
/// distributions work on it directly.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4]{};
};

/// Identifies a family of independent streams: one per (master seed, tag)
/// pair, indexed by shot or trial number. Results depend only on the index,
/// never on which worker ran it.
struct StreamKey {
  std::uint64_t master_seed = 0;
  std::uint64_t tag = 0;

  StreamKey child(std::string_view label) const {
    return {master_seed, hash_combine(tag, hash_label(label))};
  }
  StreamKey child(std::uint64_t index) const { return {master_seed, hash_combine(tag, index)}; }

  Rng stream(std::uint64_t index) const {
    return Rng(hash_combine(hash_combine(master_seed, tag), index));
  }
};

}  // namespace tbi
