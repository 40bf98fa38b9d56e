// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_MIA_HPP
#define CPSAMPLE_MIA_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "cpsample/parallel.hpp"
#include "cpsample/rng.hpp"
#include "cpsample/schedule.hpp"
#include "cpsample/stats.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

// Batched predictor: given x_t rows and their timesteps, return eps-hat rows.
// Must be row-independent so membership scores don't depend on batching.
using EpsFn = std::function<Tensor(const Tensor&, const std::vector<int>&)>;

// Per-item denoising error ||eps - eps_hat(x_t, t)||^2 at a fixed t, one
// fresh eps per item. Noise for item i comes from its own stream keyed
// (seed, i), so scores don't depend on evaluation order or batch size.
inline std::vector<double> mia_error(const EpsFn& eps_fn, const Tensor& xs, int t,
                                     const NoiseSchedule& sched, std::uint64_t seed,
                                     int threads = 1) {
    CPS_REQUIRE(xs.ndim() == 2 && xs.shape[0] > 0, "mia_error: empty data");
    sched.validate_t(t);
    CPS_REQUIRE(t >= 1, "mia_error: t must be at least 1, got ", t);
    const std::size_t n = xs.shape[0], d = xs.shape[1];
    const double a = std::sqrt(sched.alpha_bar[std::size_t(t)]);
    const double b = std::sqrt(1.0 - sched.alpha_bar[std::size_t(t)]);
    std::vector<double> errs(n, 0.0);
    parallel_chunks(n, threads, [&](std::size_t lo, std::size_t hi) {
        const std::size_t m = hi - lo;
        Tensor eps({m, d});
        for (std::size_t i = 0; i < m; ++i) {
            Rng rng = Rng::stream(seed, lo + i);
            for (std::size_t j = 0; j < d; ++j) eps.at(i, j) = rng.normal();
        }
        Tensor x_t({m, d});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j)
                x_t.at(i, j) = a * xs.at(lo + i, j) + b * eps.at(i, j);
        const Tensor eps_hat = eps_fn(x_t, std::vector<int>(m, t));
        CPS_REQUIRE(eps_hat.same_shape(x_t), "mia_error: predictor shape mismatch");
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = eps.at(i, j) - eps_hat.at(i, j);
                s += diff * diff;
            }
            errs[lo + i] = s;
        }
    });
    return errs;
}

struct MiaReport {
    std::size_t n = 0, m = 0;  // train / test counts
    double mean_train = 0.0, mean_test = 0.0;
    double var_train = 0.0, var_test = 0.0;
    int t = 0;
    double z = 0.0;
    double p_value = 1.0;
};

// One-sided Z test of H0 "mean train reconstruction error <= mean test
// error". Large z / small p = members reconstruct better, i.e. the model
// leaks membership.
inline MiaReport mia_z_test(const std::vector<double>& train_errors,
                            const std::vector<double>& test_errors, int t = 0) {
    CPS_REQUIRE(train_errors.size() >= 30 && test_errors.size() >= 30,
                "mia_z_test: need at least 30 scores per side for the normal approximation");
    MiaReport r;
    r.t = t;
    const MeanVar a = mean_var(train_errors);
    const MeanVar b = mean_var(test_errors);
    r.mean_train = a.mean;
    r.var_train = a.var;
    r.n = a.n;
    r.mean_test = b.mean;
    r.var_test = b.var;
    r.m = b.n;
    const double se = std::sqrt(b.var / double(b.n) + a.var / double(a.n));
    CPS_REQUIRE(se > 0.0, "mia_z_test: zero variance on both sides");
    r.z = (b.mean - a.mean) / se;
    r.p_value = normal_sf(r.z);
    return r;
}

}  // namespace cpsample

#endif
