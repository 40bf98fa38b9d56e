// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_RNG_HPP
#define CPSAMPLE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

#include "cpsample/tensor.hpp"

namespace cpsample {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream id for (seed, a, b): samplers assign one stream per work item so
// results do not depend on batching or thread schedule.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ (a + 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ (b + 0x9e3779b97f4a7c15ULL));
    return h;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

    static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        return Rng(mix_seed(seed, a, b));
    }

    std::uint64_t next_u64() { return eng_(); }

    // uniform on (0, 1]
    double uniform_pos() {
        return (double((eng_() >> 11)) + 1.0) * (1.0 / 9007199254740992.0);
    }

    // uniform on [0, 1)
    double uniform() { return double(eng_() >> 11) * (1.0 / 9007199254740992.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t index(std::size_t n) {
        CPS_REQUIRE(n > 0, "rng: index(0)");
        return std::size_t(uniform() * double(n)) % n;
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        CPS_REQUIRE(hi >= lo, "rng: bad int range");
        return lo + int(index(std::size_t(hi - lo + 1)));
    }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    // Box-Muller, cosine branch only; two uniforms per draw keeps the stream
    // layout independent of call history.
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    void fill_normal(Tensor& t) {
        for (double& v : t.data) v = normal();
    }

    Tensor normal_tensor(std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        fill_normal(t);
        return t;
    }

    // Fisher-Yates subset: k distinct indices out of n, order discarded.
    std::vector<std::size_t> subset(std::size_t n, std::size_t k) {
        CPS_REQUIRE(k <= n, "rng: subset k > n");
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + index(n - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace cpsample

#endif
