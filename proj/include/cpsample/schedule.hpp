// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_SCHEDULE_HPP
#define CPSAMPLE_SCHEDULE_HPP

#include <cmath>
#include <vector>

#include "cpsample/tensor.hpp"

namespace cpsample {

// Variance schedule, indexed 1..T. Index 0 is the clean-data convention:
// alpha_bar[0] = 1, sigma[0] = sigma[1] = 0.
struct NoiseSchedule {
    int steps = 0;  // T
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;
    // True iff alpha_bar[T] < 0.01, i.e. x_T is near standard normal. Left as
    // a quality flag rather than a hard error: short schedules legitimately
    // miss it.
    bool well_mixed = false;

    void validate_t(int t) const {
        CPS_REQUIRE(t >= 1 && t <= steps, "schedule: t=", t, " outside [1, ", steps, "]");
    }
};

inline NoiseSchedule linear_schedule(int steps, double beta_min, double beta_max) {
    CPS_REQUIRE(steps >= 2, "linear_schedule: need at least 2 steps, got ", steps);
    CPS_REQUIRE(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max,
                "linear_schedule: require 0 < beta_min <= beta_max < 1, got ", beta_min, ", ",
                beta_max);
    NoiseSchedule s;
    s.steps = steps;
    s.beta.assign(std::size_t(steps) + 1, 0.0);
    s.alpha.assign(std::size_t(steps) + 1, 1.0);
    s.alpha_bar.assign(std::size_t(steps) + 1, 1.0);
    s.sigma.assign(std::size_t(steps) + 1, 0.0);
    for (int t = 1; t <= steps; ++t) {
        s.beta[t] = beta_min + (beta_max - beta_min) * double(t - 1) / double(steps - 1);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        CPS_REQUIRE(s.alpha_bar[t] > 0.0 && s.alpha_bar[t] < s.alpha_bar[t - 1],
                    "linear_schedule: alpha_bar not strictly decreasing at t=", t);
    }
    // sigma[1] = 0 so the final reverse step is deterministic.
    for (int t = 2; t <= steps; ++t)
        s.sigma[t] =
            std::sqrt(s.beta[t] * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]));
    s.well_mixed = s.alpha_bar[steps] < 0.01;
    return s;
}

}  // namespace cpsample

#endif
