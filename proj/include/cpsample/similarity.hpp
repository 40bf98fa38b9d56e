// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_SIMILARITY_HPP
#define CPSAMPLE_SIMILARITY_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "cpsample/parallel.hpp"
#include "cpsample/stats.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

// Row-wise feature map [n x d] -> [n x k]. Permuting input rows permutes
// output rows identically (the map is applied per row).
using FeatureFn = std::function<Tensor(const Tensor&)>;

inline FeatureFn identity_features() {
    return [](const Tensor& x) { return x; };
}

inline double cosine_similarity(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.numel() == b.numel(), "cosine_similarity: length mismatch: ", a.numel(), " vs ",
                b.numel());
    const double na = l2norm(a), nb = l2norm(b);
    CPS_REQUIRE(na > 0.0 && nb > 0.0, "cosine_similarity: zero-norm input");
    return dot(a, b) / (na * nb);
}

struct Neighbor {
    std::size_t index = 0;
    double similarity = 0.0;
};

// Brute-force scan; ties resolve to the lowest index.
inline Neighbor nearest_neighbor_row(const Tensor& q, const Tensor& set_features,
                                     const std::vector<double>& set_norms) {
    const std::size_t k = q.numel();
    const double qn = l2norm(q);
    CPS_REQUIRE(qn > 0.0, "nearest_neighbor: zero-norm query");
    Neighbor best{0, -2.0};
    for (std::size_t i = 0; i < set_features.shape[0]; ++i) {
        CPS_REQUIRE(set_norms[i] > 0.0, "nearest_neighbor: zero-norm dataset row ", i);
        double s = 0.0;
        const double* p = set_features.data.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) s += q.data[j] * p[j];
        s /= qn * set_norms[i];
        if (s > best.similarity) best = {i, s};
    }
    return best;
}

inline Neighbor nearest_neighbor(const Tensor& x, const Tensor& dataset,
                                 const FeatureFn& features) {
    CPS_REQUIRE(dataset.ndim() == 2 && dataset.shape[0] > 0, "nearest_neighbor: empty dataset");
    const Tensor fx = features(as_matrix(x));
    const Tensor fd = features(dataset);
    std::vector<double> norms(fd.shape[0]);
    for (std::size_t i = 0; i < fd.shape[0]; ++i) norms[i] = l2norm(fd.row(i));
    return nearest_neighbor_row(fx.row(0), fd, norms);
}

struct SimilarityReport {
    std::vector<std::size_t> nearest_index;
    std::vector<double> score;
    double threshold = 0.0;
    double fraction_above = 0.0;
    std::vector<std::size_t> histogram;  // 50 bins over [0,1]
    // Filled when this set is compared against a baseline set.
    bool has_p_value = false;
    double p_value = 1.0;
};

// Nearest-neighbor similarity of every sample against the training set in
// feature space, plus the exceedance fraction at the given threshold.
inline SimilarityReport similarity_report(const Tensor& samples, const Tensor& train,
                                          const FeatureFn& features, double threshold,
                                          int threads = 1) {
    CPS_REQUIRE(samples.ndim() == 2 && samples.shape[0] > 0, "similarity_report: empty samples");
    CPS_REQUIRE(train.ndim() == 2 && train.shape[0] > 0, "similarity_report: empty train set");
    CPS_REQUIRE(threshold > -1.0 && threshold < 1.0, "similarity_report: threshold in (-1,1)");
    const Tensor fs = features(samples);
    const Tensor ft = features(train);
    CPS_REQUIRE(fs.shape[1] == ft.shape[1], "similarity_report: feature dims differ");
    std::vector<double> norms(ft.shape[0]);
    for (std::size_t i = 0; i < ft.shape[0]; ++i) norms[i] = l2norm(ft.row(i));

    SimilarityReport rep;
    rep.threshold = threshold;
    const std::size_t n = fs.shape[0];
    rep.nearest_index.assign(n, 0);
    rep.score.assign(n, 0.0);
    parallel_chunks(n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const Neighbor nb = nearest_neighbor_row(fs.row(i), ft, norms);
            rep.nearest_index[i] = nb.index;
            rep.score[i] = nb.similarity;
        }
    });
    std::size_t above = 0;
    for (double s : rep.score)
        if (s > threshold) ++above;
    rep.fraction_above = double(above) / double(n);
    rep.histogram = histogram50(rep.score);
    return rep;
}

struct ExceedanceTest {
    double frac_base = 0.0, frac_cp = 0.0;
    std::size_t n_base = 0, n_cp = 0;
    double z = 0.0;
    double p_value = 1.0;
    bool degenerate = false;  // pooled fraction 0 or 1: no evidence either way
};

// One-sided two-proportion z test that the protected sampler's exceedance
// fraction is lower than the baseline's. Small p = strong evidence of a
// reduction; equal fractions give p = 0.5.
inline ExceedanceTest exceedance_test(double frac_base, std::size_t n_base, double frac_cp,
                                      std::size_t n_cp) {
    CPS_REQUIRE(n_base > 0 && n_cp > 0, "exceedance_test: empty sample");
    CPS_REQUIRE(frac_base >= 0.0 && frac_base <= 1.0 && frac_cp >= 0.0 && frac_cp <= 1.0,
                "exceedance_test: fractions must lie in [0,1]");
    ExceedanceTest r;
    r.frac_base = frac_base;
    r.frac_cp = frac_cp;
    r.n_base = n_base;
    r.n_cp = n_cp;
    const double x1 = double(std::llround(frac_base * double(n_base)));
    const double x2 = double(std::llround(frac_cp * double(n_cp)));
    const double pool = (x1 + x2) / double(n_base + n_cp);
    if (pool <= 0.0 || pool >= 1.0) {
        r.degenerate = true;
        r.z = 0.0;
        r.p_value = 1.0;
        return r;
    }
    const double se =
        std::sqrt(pool * (1.0 - pool) * (1.0 / double(n_base) + 1.0 / double(n_cp)));
    r.z = (frac_base - frac_cp) / se;
    r.p_value = normal_sf(r.z);
    return r;
}

}  // namespace cpsample

#endif
