// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_STATS_HPP
#define CPSAMPLE_STATS_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "cpsample/tensor.hpp"

namespace cpsample {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Upper tail 1 - Phi(z), avoids cancellation for large z.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // unbiased
    std::size_t n = 0;
};

inline MeanVar mean_var(const std::vector<double>& xs) {
    MeanVar mv;
    mv.n = xs.size();
    CPS_REQUIRE(mv.n >= 2, "mean_var: need at least 2 values, got ", mv.n);
    for (double x : xs) mv.mean += x;
    mv.mean /= double(mv.n);
    for (double x : xs) mv.var += (x - mv.mean) * (x - mv.mean);
    mv.var /= double(mv.n - 1);
    return mv;
}

// Kolmogorov-Smirnov distance of a sample against Uniform(0,1).
inline double ks_uniform_stat(std::vector<double> xs) {
    CPS_REQUIRE(!xs.empty(), "ks_uniform_stat: empty sample");
    std::sort(xs.begin(), xs.end());
    const double n = double(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double lo = std::abs(xs[i] - double(i) / n);
        const double hi = std::abs(double(i + 1) / n - xs[i]);
        d = std::max(d, std::max(lo, hi));
    }
    return d;
}

// Fixed 50-bin histogram over [0,1]; values outside clamp to the end bins.
inline std::vector<std::size_t> histogram50(const std::vector<double>& xs) {
    std::vector<std::size_t> bins(50, 0);
    for (double x : xs) {
        int b = int(std::floor(x * 50.0));
        if (b < 0) b = 0;
        if (b > 49) b = 49;
        ++bins[std::size_t(b)];
    }
    return bins;
}

}  // namespace cpsample

#endif
