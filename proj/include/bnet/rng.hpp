#pragma once

#include <cmath>
#include <cstdint>

namespace bnet {

// SplitMix64 mixing step. Used both as the generator and to derive
// independent streams from (seed, tag) pairs, so that results do not depend
// on the standard library's generator or distribution implementations.
constexpr uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr uint64_t hash_mix(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0,1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). Multiply-shift; bias is O(n / 2^64).
    uint32_t next_below(uint32_t n) {
        return static_cast<uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller, cosine branch only. Stateless apart
    // from the underlying counter, which keeps checkpointing trivial.
    double normal() {
        double u1 = 1.0 - next_double();  // (0,1], keeps log finite
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Derived child stream; deterministic function of current state and tag.
    Rng child(uint64_t tag) const { return Rng(hash_mix(state_, tag)); }

  private:
    uint64_t state_;
};

}  // namespace bnet
