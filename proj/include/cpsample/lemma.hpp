// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_LEMMA_HPP
#define CPSAMPLE_LEMMA_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "cpsample/models.hpp"
#include "cpsample/parallel.hpp"
#include "cpsample/rng.hpp"
#include "cpsample/schedule.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

struct LipschitzEstimate {
    double l_hat = 0.0;
    std::size_t n_points = 0;
    bool lower_bound_only = true;  // max over finitely many probes
};

// Max gradient norm of x -> p(y=1|x,t) over the centers plus n_probe points
// drawn uniformly from balls of the given radius around them (probe j sits
// in the ball of center j mod n_centers). A sampled max can only undershoot
// the true local constant, hence the lower-bound flag.
inline LipschitzEstimate estimate_local_lipschitz(const ClassifierModel& cls,
                                                  const Tensor& centers, int t, double radius,
                                                  std::size_t n_probe, std::uint64_t seed,
                                                  int threads = 1) {
    CPS_REQUIRE(centers.ndim() == 2 && centers.shape[0] > 0,
                "estimate_local_lipschitz: empty centers");
    CPS_REQUIRE(radius > 0.0, "estimate_local_lipschitz: radius must be positive");
    CPS_REQUIRE(n_probe >= 100, "estimate_local_lipschitz: need at least 100 probes");
    const std::size_t nc = centers.shape[0], d = centers.shape[1];
    const std::size_t total = nc + n_probe;

    Tensor pts({total, d});
    for (std::size_t i = 0; i < nc; ++i) pts.set_row(i, centers.row(i));
    for (std::size_t j = 0; j < n_probe; ++j) {
        Rng rng = Rng::stream(seed, j);
        Tensor dir({d});
        double nrm = 0.0;
        do {
            rng.fill_normal(dir);
            nrm = l2norm(dir);
        } while (nrm == 0.0);
        // uniform in the ball: unit direction scaled by radius * u^(1/d)
        const double r = radius * std::pow(rng.uniform_pos(), 1.0 / double(d));
        const std::size_t c = j % nc;
        for (std::size_t k = 0; k < d; ++k)
            pts.at(nc + j, k) = centers.at(c, k) + dir.data[k] * (r / nrm);
    }

    std::vector<double> grad_norms(total, 0.0);
    parallel_chunks(total, threads, [&](std::size_t lo, std::size_t hi) {
        Tensor block({hi - lo, d});
        for (std::size_t i = lo; i < hi; ++i) block.set_row(i - lo, pts.row(i));
        const LogitGrad lg =
            classifier_logit_and_xgrad(cls, block, std::vector<int>(hi - lo, t));
        for (std::size_t i = lo; i < hi; ++i) {
            const auto [p0, p1] = ClassifierModel::prob_pair(lg.logits.at(i - lo));
            // d/dx sigmoid(logit) = p1 * p0 * d(logit)/dx
            grad_norms[i] = p1 * p0 * l2norm(lg.grad.row(i - lo));
        }
    });
    LipschitzEstimate est;
    est.n_points = total;
    for (double g : grad_norms) est.l_hat = std::max(est.l_hat, g);
    return est;
}

struct Assumption2Result {
    double kappa = 0.0;
    double gamma_hat = 0.0;      // fraction of draws with p(y_i|x_t,t) <= 1-kappa
    double min_confidence = 1.0; // worst-case p(y_i|x_t,t) seen
    std::size_t n_checks = 0;
    std::vector<int> t_grid;
};

// Confidence of the label-memorizing classifier on noised training points:
// for each training point, each grid t, and n_noise fresh noise draws,
// checks p(y_i | x_t, t) > 1 - kappa. t = 0 is checked once per point
// (noise is a no-op there). Grid spans [0, t_max] with at most 8 values.
inline Assumption2Result measure_assumption2(const ClassifierModel& cls, const Tensor& train,
                                             const LabelSet& labels, const NoiseSchedule& sched,
                                             double kappa, std::size_t n_noise, int t_max,
                                             std::uint64_t seed, int threads = 1) {
    CPS_REQUIRE(train.ndim() == 2 && train.shape[0] > 0, "measure_assumption2: empty train set");
    CPS_REQUIRE(labels.bits.size() == train.shape[0], "measure_assumption2: label count ",
                labels.bits.size(), " != point count ", train.shape[0]);
    CPS_REQUIRE(kappa > 0.0 && kappa < 0.5, "measure_assumption2: kappa in (0, 0.5)");
    CPS_REQUIRE(n_noise >= 10, "measure_assumption2: need at least 10 noise draws per (point,t)");
    if (t_max < 0) t_max = sched.steps / 8;
    sched.validate_t(t_max);

    Assumption2Result res;
    res.kappa = kappa;
    res.t_grid.push_back(0);
    for (int i = 1; i <= 7; ++i) {
        const int t = int(std::lround(double(i) * double(t_max) / 7.0));
        if (t >= 1 && (res.t_grid.empty() || t != res.t_grid.back())) res.t_grid.push_back(t);
    }

    const std::size_t n = train.shape[0], d = train.shape[1];
    std::size_t violations = 0;
    for (int t : res.t_grid) {
        const std::size_t reps = (t == 0) ? 1 : n_noise;
        const std::size_t rows = n * reps;
        Tensor x_t({rows, d});
        const double a = std::sqrt(sched.alpha_bar[std::size_t(t)]);
        const double b = std::sqrt(1.0 - sched.alpha_bar[std::size_t(t)]);
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = Rng::stream(seed, i, std::uint64_t(t));
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < d; ++j)
                    x_t.at(i * reps + r, j) =
                        (t == 0) ? train.at(i, j) : a * train.at(i, j) + b * rng.normal();
        }
        std::vector<double> conf(rows, 0.0);
        parallel_chunks(rows, threads, [&](std::size_t lo, std::size_t hi) {
            Tensor block({hi - lo, d});
            for (std::size_t i = lo; i < hi; ++i) block.set_row(i - lo, x_t.row(i));
            const Tensor logits = cls.logits(block, std::vector<int>(hi - lo, t));
            for (std::size_t i = lo; i < hi; ++i) {
                const auto [p0, p1] = ClassifierModel::prob_pair(logits.at(i - lo));
                conf[i] = labels.bits[i / reps] ? p1 : p0;
            }
        });
        for (double c : conf) {
            res.min_confidence = std::min(res.min_confidence, c);
            if (c <= 1.0 - kappa) ++violations;
        }
        res.n_checks += rows;
    }
    res.gamma_hat = double(violations) / double(res.n_checks);
    return res;
}

struct Assumption3Result {
    double lambda = 0.0;
    double nu_hat = 0.0;  // fraction of samples with p(y=1|x,0) outside (lambda, 1-lambda)
    std::size_t n_samples = 0;
};

// Final-sample uncertainty: fraction of generated samples whose t=0
// classifier probability escapes the open band (lambda, 1-lambda).
inline Assumption3Result measure_assumption3(const ClassifierModel& cls, const Tensor& samples,
                                             double lambda, int threads = 1) {
    CPS_REQUIRE(samples.ndim() == 2 && samples.shape[0] > 0, "measure_assumption3: empty samples");
    CPS_REQUIRE(lambda >= 0.0 && lambda <= 0.5, "measure_assumption3: lambda in [0, 0.5]");
    const std::size_t n = samples.shape[0], d = samples.shape[1];
    std::vector<double> p1s(n, 0.0);
    parallel_chunks(n, threads, [&](std::size_t lo, std::size_t hi) {
        Tensor block({hi - lo, d});
        for (std::size_t i = lo; i < hi; ++i) block.set_row(i - lo, samples.row(i));
        const Tensor logits = cls.logits(block, std::vector<int>(hi - lo, 0));
        for (std::size_t i = lo; i < hi; ++i)
            p1s[i] = ClassifierModel::prob_pair(logits.at(i - lo)).second;
    });
    Assumption3Result res;
    res.lambda = lambda;
    res.n_samples = n;
    std::size_t outside = 0;
    for (double p : p1s)
        if (!(p > lambda && p < 1.0 - lambda)) ++outside;
    res.nu_hat = double(outside) / double(n);
    return res;
}

struct AssumptionMeasurements {
    Assumption2Result a2;
    Assumption3Result a3;
};

// Both assumption measurements in one call; lambda = kappa + l_hat * delta
// ties the sample-side band to the classifier's confidence margin.
inline AssumptionMeasurements measure_assumptions(const ClassifierModel& cls, const Tensor& train,
                                                  const LabelSet& labels,
                                                  const NoiseSchedule& sched, double kappa,
                                                  std::size_t n_noise, const Tensor& samples,
                                                  double l_hat, double delta, int t_max,
                                                  std::uint64_t seed, int threads = 1) {
    AssumptionMeasurements m;
    m.a2 = measure_assumption2(cls, train, labels, sched, kappa, n_noise, t_max, seed, threads);
    const double lambda = std::min(0.5, kappa + l_hat * delta);
    m.a3 = measure_assumption3(cls, samples, lambda, threads);
    return m;
}

struct LemmaReport {
    double l_hat = 0.0;
    double kappa_hat = 0.0;
    double gamma_hat = 0.0;
    double lambda = 0.0;
    double nu_hat = 0.0;
    double delta = 0.0;
    double delta_max = 0.0;  // (0.5 - kappa_hat) / l_hat; past it the bound is vacuous
    double bound = 0.0;      // (1 - nu_hat) * (1 - gamma_hat)
    double empirical_outside_rate = 0.0;
    std::size_t n_samples = 0, n_train = 0;
    bool vacuous = false;
    bool pass = false;
    bool l_hat_is_lower_bound = true;  // probe-based estimate can undershoot the true constant
};

// Confronts the guarantee "samples escape every delta-ball around training
// points with probability >= (1-nu)(1-gamma)" with the measured escape rate.
// Default metric is L2; pass a custom one to override.
inline LemmaReport verify_lemma(double l_hat, double kappa_hat, double gamma_hat, double nu_hat,
                                double delta, const Tensor& samples, const Tensor& train,
                                const MetricFn& metric = {}, int threads = 1) {
    CPS_REQUIRE(samples.ndim() == 2 && train.ndim() == 2 && samples.shape[0] > 0 &&
                    train.shape[0] > 0,
                "verify_lemma: empty samples or train set");
    CPS_REQUIRE(samples.shape[1] == train.shape[1], "verify_lemma: dimension mismatch");
    CPS_REQUIRE(delta > 0.0, "verify_lemma: delta must be positive");
    CPS_REQUIRE(l_hat >= 0.0 && kappa_hat >= 0.0 && kappa_hat < 1.0, "verify_lemma: bad inputs");
    CPS_REQUIRE(gamma_hat >= 0.0 && gamma_hat <= 1.0 && nu_hat >= 0.0 && nu_hat <= 1.0,
                "verify_lemma: rates must lie in [0,1]");

    LemmaReport rep;
    rep.l_hat = l_hat;
    rep.kappa_hat = kappa_hat;
    rep.gamma_hat = gamma_hat;
    rep.nu_hat = nu_hat;
    rep.delta = delta;
    rep.lambda = std::min(0.5, kappa_hat + l_hat * delta);
    rep.n_samples = samples.shape[0];
    rep.n_train = train.shape[0];
    rep.delta_max = (kappa_hat >= 0.5) ? 0.0
                    : (l_hat > 0.0)    ? (0.5 - kappa_hat) / l_hat
                                       : std::numeric_limits<double>::infinity();
    rep.vacuous = !(delta < rep.delta_max);
    rep.bound = (1.0 - nu_hat) * (1.0 - gamma_hat);

    const std::size_t n = samples.shape[0], d = samples.shape[1];
    std::vector<std::uint8_t> outside(n, 0);
    parallel_chunks(n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double best = std::numeric_limits<double>::infinity();
            if (metric) {
                const Tensor s = samples.row(i);
                for (std::size_t j = 0; j < train.shape[0]; ++j)
                    best = std::min(best, metric(s, train.row(j)));
            } else {
                const double* sp = samples.data.data() + i * d;
                for (std::size_t j = 0; j < train.shape[0]; ++j) {
                    const double* tp = train.data.data() + j * d;
                    double acc = 0.0;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = sp[k] - tp[k];
                        acc += diff * diff;
                    }
                    best = std::min(best, acc);
                }
                best = std::sqrt(best);
            }
            outside[i] = best >= delta ? 1 : 0;
        }
    });
    std::size_t cnt = 0;
    for (auto o : outside) cnt += o;
    rep.empirical_outside_rate = double(cnt) / double(n);
    rep.pass = rep.empirical_outside_rate >= rep.bound;
    return rep;
}

}  // namespace cpsample

#endif
