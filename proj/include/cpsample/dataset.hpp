// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_DATASET_HPP
#define CPSAMPLE_DATASET_HPP

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cpsample/config.hpp"
#include "cpsample/rng.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

struct DatasetSplit {
    Tensor train;
    Tensor test;
};

namespace detail {

// Eight Gaussian blobs on a ring of radius 4, sd 0.3 each.
inline void gauss_mixture_point(Rng& rng, double* out) {
    constexpr double kRadius = 4.0;
    constexpr double kSd = 0.3;
    const int mode = int(rng.index(8));
    const double ang = 2.0 * 3.14159265358979323846 * double(mode) / 8.0;
    out[0] = kRadius * std::cos(ang) + kSd * rng.normal();
    out[1] = kRadius * std::sin(ang) + kSd * rng.normal();
}

// 8x8 grayscale shapes in [-1, 1]: a filled rectangle or a cross, random
// placement and polarity-free intensity, plus per-pixel jitter.
inline void tiny_shape_point(Rng& rng, double* out) {
    constexpr int W = 8;
    for (int i = 0; i < W * W; ++i) out[i] = -1.0;
    const double intensity = 0.6 + 0.4 * rng.uniform();
    if (rng.bernoulli()) {
        const int w = 2 + int(rng.index(4));  // 2..5
        const int h = 2 + int(rng.index(4));
        const int x0 = int(rng.index(std::size_t(W - w + 1)));
        const int y0 = int(rng.index(std::size_t(W - h + 1)));
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) out[y * W + x] = intensity;
    } else {
        const int cx = 2 + int(rng.index(4));  // 2..5
        const int cy = 2 + int(rng.index(4));
        const int arm = 1 + int(rng.index(2));  // 1..2
        for (int x = cx - arm; x <= cx + arm; ++x)
            if (x >= 0 && x < W) out[cy * W + x] = intensity;
        for (int y = cy - arm; y <= cy + arm; ++y)
            if (y >= 0 && y < W) out[y * W + cx] = intensity;
    }
    for (int i = 0; i < W * W; ++i) {
        out[i] += 0.1 * (2.0 * rng.uniform() - 1.0);
        if (out[i] > 1.0) out[i] = 1.0;
        if (out[i] < -1.0) out[i] = -1.0;
    }
}

}  // namespace detail

// Train and test splits drawn from one generator stream; exact duplicates
// are redrawn so the splits never intersect (and rows are pairwise
// distinct, which the similarity audits rely on).
inline DatasetSplit generate_dataset(const DatasetConfig& spec) {
    CPS_REQUIRE(spec.n_train >= 2, "generate_dataset: n_train must be at least 2");
    CPS_REQUIRE(spec.n_test >= 1, "generate_dataset: n_test must be at least 1");
    std::size_t dim = 0;
    if (spec.kind == "gauss-mixture-2d")
        dim = 2;
    else if (spec.kind == "tiny-shapes-8x8")
        dim = 64;
    else
        fail("generate_dataset: unknown kind '", spec.kind, "'");

    const std::size_t total = spec.n_train + spec.n_test;
    Tensor all({total, dim});
    Rng rng = Rng::stream(spec.seed, 0x64617461);
    std::set<std::vector<double>> seen;
    std::vector<double> row(dim);
    for (std::size_t i = 0; i < total; ++i) {
        for (int guard = 0;; ++guard) {
            CPS_REQUIRE(guard < 1024, "generate_dataset: cannot find a fresh point after 1024 ",
                        "draws; dataset too large for this generator");
            if (dim == 2)
                detail::gauss_mixture_point(rng, row.data());
            else
                detail::tiny_shape_point(rng, row.data());
            if (seen.insert(row).second) break;
        }
        for (std::size_t j = 0; j < dim; ++j) all.at(i, j) = row[j];
    }

    DatasetSplit split;
    split.train = Tensor({spec.n_train, dim});
    split.test = Tensor({spec.n_test, dim});
    for (std::size_t i = 0; i < spec.n_train; ++i) split.train.set_row(i, all.row(i));
    for (std::size_t i = 0; i < spec.n_test; ++i)
        split.test.set_row(i, all.row(spec.n_train + i));
    return split;
}

// Max pairwise L2 distance; used to scale default ball radii.
inline double dataset_diameter(const Tensor& data) {
    CPS_REQUIRE(data.ndim() == 2 && data.shape[0] >= 2, "dataset_diameter: need >= 2 rows");
    const std::size_t n = data.shape[0], d = data.shape[1];
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = data.at(i, k) - data.at(j, k);
                s += diff * diff;
            }
            if (s > best) best = s;
        }
    return std::sqrt(best);
}

}  // namespace cpsample

#endif
