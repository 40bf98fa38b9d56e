// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_DIFFUSION_HPP
#define CPSAMPLE_DIFFUSION_HPP

#include <vector>

#include "cpsample/rng.hpp"
#include "cpsample/schedule.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise; works on a
// single vector or a batch of rows (x0 and eps must match shapes).
inline Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps,
                             const NoiseSchedule& sched) {
    sched.validate_t(t);
    CPS_REQUIRE(x0.same_shape(eps), "forward_sample: x0 ", x0.shape_str(), " vs eps ",
                eps.shape_str());
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a * out.data[i] + b * eps.data[i];
    require_finite(out, "forward_sample");
    return out;
}

// One ancestral reverse step:
//   x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z.
// z must be zero at t=1 (sigma_1 = 0).
template <typename Den>
Tensor ddpm_step(const Den& denoiser, const Tensor& x_t, int t, const Tensor& z,
                 const NoiseSchedule& sched) {
    sched.validate_t(t);
    CPS_REQUIRE(x_t.same_shape(z), "ddpm_step: x_t ", x_t.shape_str(), " vs z ", z.shape_str());
    if (t == 1) CPS_REQUIRE(sqnorm(z) == 0.0, "ddpm_step: z must be zero at t=1");
    const Tensor xm = as_matrix(x_t);
    const Tensor eps_hat = denoiser.eps(xm, std::vector<int>(xm.shape[0], t));
    CPS_REQUIRE(eps_hat.same_shape(xm), "ddpm_step: denoiser output shape mismatch");
    const double c = (1.0 - sched.alpha[t]) / std::sqrt(1.0 - sched.alpha_bar[t]);
    const double inv_sqrt_a = 1.0 / std::sqrt(sched.alpha[t]);
    Tensor out = x_t;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = inv_sqrt_a * (out.data[i] - c * eps_hat.data[i]) +
                      sched.sigma[t] * z.data[i];
    require_finite(out, "ddpm_step");
    return out;
}

// Deterministic skip step: predict x0, then re-noise to t_prev.
// alpha_bar[0] = 1 by convention, so t_prev = 0 returns the x0 prediction.
inline Tensor ddim_step(const Tensor& eps_hat, const Tensor& x_t, int t, int t_prev,
                        const NoiseSchedule& sched) {
    sched.validate_t(t);
    CPS_REQUIRE(t_prev >= 0 && t_prev < t, "ddim_step: need 0 <= t_prev < t, got ", t_prev,
                " and ", t);
    CPS_REQUIRE(eps_hat.same_shape(x_t), "ddim_step: eps_hat ", eps_hat.shape_str(), " vs x_t ",
                x_t.shape_str());
    const double ab_t = sched.alpha_bar[t];
    const double ab_p = sched.alpha_bar[t_prev];
    const double s_t = std::sqrt(1.0 - ab_t);
    const double s_p = std::sqrt(1.0 - ab_p);
    const double r = std::sqrt(ab_p) / std::sqrt(ab_t);
    Tensor out = x_t;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double x0_hat = (out.data[i] - s_t * eps_hat.data[i]);
        out.data[i] = r * x0_hat + s_p * eps_hat.data[i];
    }
    require_finite(out, "ddim_step");
    return out;
}

// Draw for one noising batch: per-item t, fresh eps, corrupted inputs.
struct NoisingDraw {
    std::vector<int> ts;
    Tensor eps;
    Tensor x_t;
};

// include_clean: sample t from {0..T} (t=0 leaves the row untouched);
// otherwise t from {1..T}.
inline NoisingDraw draw_noising(const Tensor& batch, const NoiseSchedule& sched, Rng& rng,
                                bool include_clean = false) {
    CPS_REQUIRE(batch.ndim() == 2 && batch.shape[0] > 0, "draw_noising: non-empty batch required");
    NoisingDraw d;
    const std::size_t n = batch.shape[0];
    d.ts.resize(n);
    d.eps = Tensor(batch.shape);
    d.x_t = Tensor(batch.shape);
    for (std::size_t i = 0; i < n; ++i)
        d.ts[i] = include_clean ? rng.uniform_int(0, sched.steps) : rng.uniform_int(1, sched.steps);
    rng.fill_normal(d.eps);
    const std::size_t dcols = batch.shape[1];
    for (std::size_t i = 0; i < n; ++i) {
        const int t = d.ts[i];
        const double a = t == 0 ? 1.0 : std::sqrt(sched.alpha_bar[t]);
        const double b = t == 0 ? 0.0 : std::sqrt(1.0 - sched.alpha_bar[t]);
        for (std::size_t j = 0; j < dcols; ++j)
            d.x_t.data[i * dcols + j] = a * batch.data[i * dcols + j] + b * d.eps.data[i * dcols + j];
    }
    return d;
}

// Mean over the batch of per-item squared eps-prediction error, with uniform
// weighting across noise levels.
template <typename Den>
Tensor score_matching_loss(const Den& denoiser, const Tensor& batch, const NoiseSchedule& sched,
                           Rng& rng) {
    const NoisingDraw d = draw_noising(batch, sched, rng, /*include_clean=*/false);
    const Tensor eps_hat = denoiser.eps(d.x_t, d.ts);
    CPS_REQUIRE(eps_hat.same_shape(batch), "score_matching_loss: denoiser output shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < eps_hat.numel(); ++i) {
        const double r = d.eps.data[i] - eps_hat.data[i];
        acc += r * r;
    }
    Tensor loss = Tensor::scalar(acc / double(batch.shape[0]));
    require_finite(loss, "score_matching_loss");
    return loss;
}

// Timestep ladder for strided deterministic sampling: T, T-stride, ..., down
// to 0. Returned as visited pairs (t, t_prev).
inline std::vector<std::pair<int, int>> ddim_ladder(int steps, int stride) {
    CPS_REQUIRE(stride >= 1, "ddim_ladder: stride must be >= 1");
    std::vector<std::pair<int, int>> out;
    int t = steps;
    while (t > 0) {
        const int prev = t - stride > 0 ? t - stride : 0;
        out.emplace_back(t, prev);
        t = prev;
    }
    return out;
}

}  // namespace cpsample

#endif
