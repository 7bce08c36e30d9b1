#pragma once

#include <cmath>
#include <cstdint>

#include "rgplan/tensor.hpp"

namespace rgplan {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derives independent sub-streams, e.g. one per Monte-Carlo run or per plan
// seed, so parallel evaluation order cannot affect the draws.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed ^ 0x5851f42d4c957f2dull) + index);
}

// xoshiro256++ with an explicit Box-Muller normal transform. Everything is
// written out so draws are identical across platforms and library versions.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x = splitmix64(x);
            w = x;
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal; consumes exactly two uniforms per call so the draw
    // order is a pure function of the call sequence.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    void fill_normal(Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal();
    }

    Tensor normal_tensor(std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        fill_normal(t);
        return t;
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

}  // namespace rgplan
