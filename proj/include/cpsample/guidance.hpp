// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_GUIDANCE_HPP
#define CPSAMPLE_GUIDANCE_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "cpsample/diffusion.hpp"
#include "cpsample/models.hpp"
#include "cpsample/parallel.hpp"
#include "cpsample/rng.hpp"

namespace cpsample {

// Settings for the protected sampler. alpha is the confidence dead-zone
// bound: a step is guided only when p1 leaves [alpha, 1-alpha]. alpha = 0.5
// guides every step (the dead zone collapses to the single point 1/2).
struct GuidanceConfig {
    double alpha = 0.25;
    double scale = 1.0;
    double tau = 1e-3;
    int stride = 10;
    bool record_trace = false;

    void validate() const {
        CPS_REQUIRE(alpha > 0.0 && alpha <= 0.5, "guidance: alpha in (0, 0.5] required, got ",
                    alpha);
        CPS_REQUIRE(scale >= 0.0, "guidance: scale must be non-negative");
        CPS_REQUIRE(tau > 0.0, "guidance: tau must be positive");
        CPS_REQUIRE(stride >= 1, "guidance: stride must be >= 1");
    }
};

struct GuardedEps {
    Tensor eps_hat;                  // [n x d]
    std::vector<std::uint8_t> triggered;  // per row: a guidance branch fired
    std::vector<double> p1;          // per row: classifier probability of label 1
};

// Guarded noise prediction on a batch of rows sharing one timestep.
// When p1 > 1-alpha the y=0 branch fires; when p1 < alpha the y=1 branch:
//   eps_hat = eps_theta - scale * sqrt(1-abar_t) * grad_x log(tau + p_y(x,t))
// with the gradient taken through tau, i.e. grad p_y / (tau + p_y).
// Branches are disjoint for any alpha <= 0.5. scale = 0 returns eps_theta
// bitwise unchanged.
template <typename Den>
GuardedEps cp_epsilon_hat_batch(const Den& denoiser, const ClassifierModel& classifier,
                                const Tensor& x_t, int t, const NoiseSchedule& sched,
                                const GuidanceConfig& cfg) {
    cfg.validate();
    CPS_REQUIRE(x_t.ndim() == 2, "cp_epsilon_hat: [n x d] batch required");
    CPS_REQUIRE(t >= 0 && t <= sched.steps, "cp_epsilon_hat: t=", t, " outside [0, ", sched.steps,
                "]");
    const std::size_t n = x_t.shape[0], d = x_t.shape[1];
    const std::vector<int> ts(n, t);

    GuardedEps out;
    out.eps_hat = denoiser.eps(x_t, ts);
    CPS_REQUIRE(out.eps_hat.same_shape(x_t), "cp_epsilon_hat: denoiser shape mismatch");
    out.triggered.assign(n, 0);
    out.p1.assign(n, 0.0);

    const LogitGrad lg = classifier_logit_and_xgrad(classifier, x_t, ts);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
        const auto [p0, p1] = ClassifierModel::prob_pair(lg.logits.data[i]);
        out.p1[i] = p1;
        if (p0 < cfg.alpha || p1 < cfg.alpha) {
            out.triggered[i] = 1;
            any = true;
        }
    }
    if (!any || cfg.scale == 0.0) return out;

    const double root = std::sqrt(1.0 - sched.alpha_bar[t]);
    for (std::size_t i = 0; i < n; ++i) {
        if (!out.triggered[i]) continue;
        const auto [p0, p1] = ClassifierModel::prob_pair(lg.logits.data[i]);
        // d/dx log(tau + p_y) = (d p_y/dx) / (tau + p_y); dp1/dx = p1 p0 dlogit/dx
        const double coef = p0 < cfg.alpha ? -(p1 * p0) / (cfg.tau + p0)   // raise p0
                                           : (p1 * p0) / (cfg.tau + p1);  // raise p1
        const double mult = -cfg.scale * root * coef;
        for (std::size_t j = 0; j < d; ++j)
            out.eps_hat.data[i * d + j] += mult * lg.grad.data[i * d + j];
    }
    require_finite(out.eps_hat, "cp_epsilon_hat");
    return out;
}

// Single-sample form.
template <typename Den>
GuardedEps cp_epsilon_hat(const Den& denoiser, const ClassifierModel& classifier,
                          const Tensor& x_t, int t, const NoiseSchedule& sched,
                          const GuidanceConfig& cfg) {
    GuardedEps r = cp_epsilon_hat_batch(denoiser, classifier, as_matrix(x_t), t, sched, cfg);
    if (x_t.ndim() == 1) {
        Tensor flat({x_t.shape[0]});
        flat.data = r.eps_hat.data;
        r.eps_hat = std::move(flat);
    }
    return r;
}

// Always-on label steering (no threshold, no tau):
//   eps_hat = eps_theta - scale * sqrt(1-abar_t) * grad_x log p(y=target | x, t)
// Errors out if the target probability is exactly zero.
template <typename Den>
Tensor classifier_guided_eps(const Den& denoiser, const ClassifierModel& classifier,
                             const Tensor& x_t, int t, int target_y, double scale,
                             const NoiseSchedule& sched) {
    CPS_REQUIRE(target_y == 0 || target_y == 1, "classifier_guided_eps: target label 0/1");
    sched.validate_t(t);
    const Tensor xm = as_matrix(x_t);
    const std::size_t n = xm.shape[0], d = xm.shape[1];
    const std::vector<int> ts(n, t);
    Tensor eps_hat = denoiser.eps(xm, ts);
    if (scale != 0.0) {
        const LogitGrad lg = classifier_logit_and_xgrad(classifier, xm, ts);
        const double root = std::sqrt(1.0 - sched.alpha_bar[t]);
        for (std::size_t i = 0; i < n; ++i) {
            const auto [p0, p1] = ClassifierModel::prob_pair(lg.logits.data[i]);
            const double py = target_y == 1 ? p1 : p0;
            CPS_REQUIRE(py > 0.0, "classifier_guided_eps: p(y=", target_y,
                        ") is exactly zero; log gradient undefined");
            // grad log p_y = grad p_y / p_y
            const double coef = target_y == 1 ? p0 : -p1;
            const double mult = -scale * root * coef;
            for (std::size_t j = 0; j < d; ++j)
                eps_hat.data[i * d + j] += mult * lg.grad.data[i * d + j];
        }
    }
    require_finite(eps_hat, "classifier_guided_eps");
    if (x_t.ndim() == 1) {
        Tensor flat({x_t.shape[0]});
        flat.data = eps_hat.data;
        return flat;
    }
    return eps_hat;
}

struct SampleRun {
    Tensor samples;  // [n x d]
    std::vector<std::pair<int, int>> ladder;       // visited (t, t_prev)
    std::vector<std::size_t> trigger_counts;       // per ladder step
    // Trace rows (sample, step, t, p1, triggered); filled when record_trace.
    struct TraceRow {
        std::uint32_t sample;
        std::uint32_t step;
        int t;
        double p1;
        std::uint8_t triggered;
    };
    std::vector<TraceRow> trace;
    std::uint64_t seed = 0;
};

inline Tensor draw_initial_noise(std::size_t n, std::size_t d, std::uint64_t seed) {
    Tensor x({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::stream(seed, i);
        for (std::size_t j = 0; j < d; ++j) x.data[i * d + j] = rng.normal();
    }
    return x;
}

namespace detail {

// Shared strided reverse-process driver. step_fn(x_chunk, t) -> guarded eps
// for the chunk; rows are independent, so chunking never changes results.
template <typename StepFn>
SampleRun run_reverse(std::size_t n, std::size_t d, const NoiseSchedule& sched, int stride,
                      std::uint64_t seed, bool record_trace, int threads, StepFn&& step_fn) {
    SampleRun run;
    run.seed = seed;
    run.ladder = ddim_ladder(sched.steps, stride);
    run.trigger_counts.assign(run.ladder.size(), 0);
    run.samples = draw_initial_noise(n, d, seed);
    if (record_trace) run.trace.reserve(n * run.ladder.size());

    const std::size_t chunk = 256;
    std::vector<std::vector<SampleRun::TraceRow>> chunk_traces;
    std::vector<std::vector<std::size_t>> chunk_triggers;
    const std::size_t n_chunks = (n + chunk - 1) / chunk;
    chunk_traces.resize(n_chunks);
    chunk_triggers.assign(n_chunks, std::vector<std::size_t>(run.ladder.size(), 0));

    parallel_chunks(n_chunks, threads, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t c = c0; c < c1; ++c) {
            const std::size_t lo = c * chunk;
            const std::size_t hi = lo + chunk < n ? lo + chunk : n;
            Tensor x({hi - lo, d});
            for (std::size_t i = lo; i < hi; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    x.data[(i - lo) * d + j] = run.samples.data[i * d + j];
            for (std::size_t s = 0; s < run.ladder.size(); ++s) {
                const auto [t, t_prev] = run.ladder[s];
                GuardedEps ge;
                try {
                    ge = step_fn(x, t);
                } catch (const Error& e) {
                    fail("samples [", lo, ", ", hi, ") step ", s, " (t=", t, "): ", e.what());
                }
                for (std::size_t i = 0; i < x.shape[0]; ++i) {
                    if (ge.triggered.size() > i && ge.triggered[i]) ++chunk_triggers[c][s];
                    if (record_trace)
                        chunk_traces[c].push_back({std::uint32_t(lo + i), std::uint32_t(s), t,
                                                   ge.p1.size() > i ? ge.p1[i] : 0.0,
                                                   ge.triggered.size() > i ? ge.triggered[i]
                                                                            : std::uint8_t(0)});
                }
                x = ddim_step(ge.eps_hat, x, t, t_prev, sched);
            }
            for (std::size_t i = lo; i < hi; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    run.samples.data[i * d + j] = x.data[(i - lo) * d + j];
        }
    });

    for (std::size_t c = 0; c < n_chunks; ++c) {
        for (std::size_t s = 0; s < run.ladder.size(); ++s)
            run.trigger_counts[s] += chunk_triggers[c][s];
        for (auto& row : chunk_traces[c]) run.trace.push_back(row);
    }
    return run;
}

}  // namespace detail

// n deterministic reverse trajectories from per-sample noise streams, with
// the confidence-guarded noise prediction at every visited step.
template <typename Den>
SampleRun cpsample_generate(const Den& denoiser, const ClassifierModel& classifier,
                            const NoiseSchedule& sched, const GuidanceConfig& cfg, std::size_t n,
                            std::uint64_t seed, int threads = 1) {
    cfg.validate();
    CPS_REQUIRE(n > 0, "cpsample_generate: n must be positive");
    const std::size_t d = denoiser.data_dim();
    return detail::run_reverse(n, d, sched, cfg.stride, seed, cfg.record_trace, threads,
                               [&](const Tensor& x, int t) {
                                   return cp_epsilon_hat_batch(denoiser, classifier, x, t, sched,
                                                               cfg);
                               });
}

// Unguided counterpart on the identical noise streams and ladder.
template <typename Den>
SampleRun ddim_generate(const Den& denoiser, const NoiseSchedule& sched, int stride, std::size_t n,
                        std::uint64_t seed, int threads = 1) {
    CPS_REQUIRE(n > 0, "ddim_generate: n must be positive");
    const std::size_t d = denoiser.data_dim();
    return detail::run_reverse(n, d, sched, stride, seed, /*record_trace=*/false, threads,
                               [&](const Tensor& x, int t) {
                                   GuardedEps ge;
                                   ge.eps_hat =
                                       denoiser.eps(x, std::vector<int>(x.shape[0], t));
                                   return ge;
                               });
}

// Full-length ancestral sampler (available as a baseline; not the default).
template <typename Den>
Tensor ddpm_generate(const Den& denoiser, const NoiseSchedule& sched, std::size_t n,
                     std::uint64_t seed) {
    CPS_REQUIRE(n > 0, "ddpm_generate: n must be positive");
    const std::size_t d = denoiser.data_dim();
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::stream(seed, i);
        Tensor x({std::size_t(1), d});
        for (std::size_t j = 0; j < d; ++j) x.data[j] = rng.normal();
        for (int t = sched.steps; t >= 1; --t) {
            Tensor z({std::size_t(1), d});
            if (t > 1) rng.fill_normal(z);
            x = ddpm_step(denoiser, x, t, z, sched);
        }
        for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = x.data[j];
    }
    return out;
}

struct RejectionResult {
    Tensor accepted;                   // [n x d]
    std::vector<std::size_t> tries;    // attempts consumed per slot
    std::vector<std::uint8_t> ok;      // per slot: accepted within budget
    std::size_t total_tries = 0;
    double acceptance_rate = 0.0;
    std::size_t filled = 0;
};

// Thrown when a slot exhausts its attempt budget; carries everything
// accepted so far so callers can keep the partial set.
struct RejectionExhausted : Error {
    RejectionResult partial;
    RejectionExhausted(const std::string& msg, RejectionResult p)
        : Error(msg), partial(std::move(p)) {}
};

// Distance of a row to the closest row of a reference set, L2.
inline double min_l2_dist(const Tensor& row, const Tensor& set) {
    double best = std::numeric_limits<double>::infinity();
    const std::size_t d = row.numel();
    for (std::size_t i = 0; i < set.shape[0]; ++i) {
        double s = 0.0;
        const double* p = set.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = row.data[j] - p[j];
            s += diff * diff;
        }
        if (s < best) best = s;
    }
    return std::sqrt(best);
}

inline double min_metric_dist(const Tensor& row, const Tensor& set, const MetricFn& metric) {
    if (!metric) return min_l2_dist(row, set);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < set.shape[0]; ++i) best = std::min(best, metric(row, set.row(i)));
    return best;
}

// Baseline memorization filter: draw unguided samples, reject any landing
// within delta of a training point (L2 unless a metric is given). Attempt
// streams are keyed by (seed, slot, attempt), so results don't depend on
// the thread schedule.
template <typename Den>
RejectionResult rejection_sample(const Den& denoiser, const NoiseSchedule& sched, int stride,
                                 const Tensor& train, double delta, const MetricFn& metric,
                                 std::size_t max_tries, std::size_t n, std::uint64_t seed,
                                 int threads = 1) {
    CPS_REQUIRE(n > 0 && max_tries > 0, "rejection_sample: n and max_tries must be positive");
    CPS_REQUIRE(delta > 0.0, "rejection_sample: delta must be positive");
    const std::size_t d = denoiser.data_dim();
    CPS_REQUIRE(train.ndim() == 2 && train.shape[1] == d, "rejection_sample: train set is ",
                train.shape_str(), ", expected [m x ", d, "]");

    RejectionResult res;
    res.accepted = Tensor({n, d});
    res.tries.assign(n, 0);
    res.ok.assign(n, 0);
    const auto ladder = ddim_ladder(sched.steps, stride);

    parallel_chunks(n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t slot = lo; slot < hi; ++slot) {
            for (std::size_t attempt = 0; attempt < max_tries; ++attempt) {
                Rng rng = Rng::stream(seed, slot, attempt);
                Tensor x({std::size_t(1), d});
                for (std::size_t j = 0; j < d; ++j) x.data[j] = rng.normal();
                for (const auto& [t, t_prev] : ladder) {
                    const Tensor eps = denoiser.eps(x, {t});
                    x = ddim_step(eps, x, t, t_prev, sched);
                }
                ++res.tries[slot];
                Tensor row({d});
                row.data = x.data;
                if (min_metric_dist(row, train, metric) >= delta) {
                    res.accepted.set_row(slot, row);
                    res.ok[slot] = 1;
                    break;
                }
            }
        }
    });

    for (std::size_t slot = 0; slot < n; ++slot) {
        res.total_tries += res.tries[slot];
        if (res.ok[slot]) ++res.filled;
    }
    res.acceptance_rate = res.total_tries ? double(res.filled) / double(res.total_tries) : 0.0;
    if (res.filled < n) {
        const std::string msg =
            str_cat("rejection_sample: ", n - res.filled, " of ", n, " slots exhausted ",
                    max_tries, " attempts (acceptance rate ", res.acceptance_rate,
                    "); partial results attached");
        throw RejectionExhausted(msg, std::move(res));
    }
    return res;
}

}  // namespace cpsample

#endif
