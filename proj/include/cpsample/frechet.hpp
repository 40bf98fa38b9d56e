// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_FRECHET_HPP
#define CPSAMPLE_FRECHET_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "cpsample/models.hpp"
#include "cpsample/parallel.hpp"
#include "cpsample/similarity.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

struct EigenSym {
    Tensor values;   // [k], ascending not guaranteed
    Tensor vectors;  // [k x k], column j pairs with values[j]
};

// Cyclic Jacobi rotations for a symmetric matrix. Plenty for the matrix
// sizes seen here (feature dims up to a few hundred).
inline EigenSym jacobi_eigh(const Tensor& sym, int max_sweeps = 100) {
    CPS_REQUIRE(sym.ndim() == 2 && sym.shape[0] == sym.shape[1], "jacobi_eigh: need square matrix");
    const std::size_t k = sym.shape[0];
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            CPS_REQUIRE(std::abs(sym.at(i, j) - sym.at(j, i)) <= 1e-10,
                        "jacobi_eigh: matrix not symmetric at (", i, ",", j, ")");

    Tensor a = sym;
    // exact symmetry so rotations stay consistent
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            const double m = 0.5 * (a.at(i, j) + a.at(j, i));
            a.at(i, j) = a.at(j, i) = m;
        }
    Tensor v = Tensor::zeros({k, k});
    for (std::size_t i = 0; i < k; ++i) v.at(i, i) = 1.0;

    double scale = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) scale = std::max(scale, std::abs(a.at(i, j)));
    if (scale == 0.0) {
        EigenSym out;
        out.values = Tensor::zeros({k});
        out.vectors = v;
        return out;
    }

    const double stop = 1e-14 * scale;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t q = p + 1; q < k; ++q) off = std::max(off, std::abs(a.at(p, q)));
        if (off <= stop) {
            EigenSym out;
            out.values = Tensor({k});
            for (std::size_t i = 0; i < k; ++i) out.values.at(i) = a.at(i, i);
            out.vectors = v;
            return out;
        }
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t q = p + 1; q < k; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) <= stop) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < k; ++i) {
                    const double aip = a.at(i, p), aiq = a.at(i, q);
                    a.at(i, p) = c * aip - s * aiq;
                    a.at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < k; ++i) {
                    const double api = a.at(p, i), aqi = a.at(q, i);
                    a.at(p, i) = c * api - s * aqi;
                    a.at(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < k; ++i) {
                    const double vip = v.at(i, p), viq = v.at(i, q);
                    v.at(i, p) = c * vip - s * viq;
                    v.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    fail("jacobi_eigh: no convergence after ", max_sweeps, " sweeps");
}

struct SymSqrt {
    Tensor root;             // symmetric PSD square root
    double clamped = 0.0;    // largest negative eigenvalue magnitude clamped to 0
};

inline SymSqrt sym_sqrt_psd(const Tensor& sym) {
    const EigenSym eig = jacobi_eigh(sym);
    const std::size_t k = sym.shape[0];
    SymSqrt out;
    Tensor w({k});
    for (std::size_t i = 0; i < k; ++i) {
        double lam = eig.values.at(i);
        if (lam < 0.0) {
            out.clamped = std::max(out.clamped, -lam);
            lam = 0.0;
        }
        w.at(i) = std::sqrt(lam);
    }
    // root = V diag(sqrt(w)) V^T
    Tensor vw({k, k});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) vw.at(i, j) = eig.vectors.at(i, j) * w.at(j);
    out.root = matmul_nt(vw, eig.vectors);
    // kill roundoff asymmetry
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            const double m = 0.5 * (out.root.at(i, j) + out.root.at(j, i));
            out.root.at(i, j) = out.root.at(j, i) = m;
        }
    return out;
}

struct GaussianMoments {
    Tensor mean;  // [k]
    Tensor cov;   // [k x k], symmetric
    std::size_t n = 0;
    bool regularized = false;  // diagonal 1e-6 added (too few rows for full rank)
};

inline GaussianMoments fit_gaussian(const Tensor& features) {
    CPS_REQUIRE(features.ndim() == 2, "fit_gaussian: need [n x k] features");
    const std::size_t n = features.shape[0], k = features.shape[1];
    CPS_REQUIRE(n >= 2, "fit_gaussian: need at least 2 rows, got ", n);
    GaussianMoments g;
    g.n = n;
    g.mean = Tensor::zeros({k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) g.mean.at(j) += features.at(i, j);
    for (std::size_t j = 0; j < k; ++j) g.mean.at(j) /= double(n);
    g.cov = Tensor::zeros({k, k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double dp = features.at(i, p) - g.mean.at(p);
            for (std::size_t q = p; q < k; ++q)
                g.cov.at(p, q) += dp * (features.at(i, q) - g.mean.at(q));
        }
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t q = p; q < k; ++q) {
            g.cov.at(p, q) /= double(n - 1);
            g.cov.at(q, p) = g.cov.at(p, q);
        }
    if (n < k + 1) {
        g.regularized = true;
        for (std::size_t p = 0; p < k; ++p) g.cov.at(p, p) += 1e-6;
    }
    return g;
}

// Squared 2-Wasserstein distance between the fitted Gaussians:
// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
// The symmetric-form inner square root keeps everything inside plain
// symmetric eigendecompositions. Negative result roundoff clamps to 0;
// clamp_out (if given) receives the largest eigenvalue clamp applied.
inline double frechet_distance(const GaussianMoments& a, const GaussianMoments& b,
                               double* clamp_out = nullptr) {
    CPS_REQUIRE(a.mean.numel() == b.mean.numel(), "frechet_distance: dimension mismatch");
    const std::size_t k = a.mean.numel();
    CPS_REQUIRE(a.cov.ndim() == 2 && a.cov.shape[0] == k && a.cov.shape[1] == k &&
                    b.cov.same_shape(a.cov),
                "frechet_distance: covariance shape mismatch");

    const SymSqrt ra = sym_sqrt_psd(a.cov);
    const Tensor inner = matmul(matmul(ra.root, b.cov), ra.root);
    const SymSqrt cross = sym_sqrt_psd(inner);
    double clamp = std::max(ra.clamped, cross.clamped);

    double mean_term = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double diff = a.mean.at(i) - b.mean.at(i);
        mean_term += diff * diff;
    }
    double tr = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        tr += a.cov.at(i, i) + b.cov.at(i, i) - 2.0 * cross.root.at(i, i);
    if (clamp_out) *clamp_out = clamp;
    return std::max(0.0, mean_term + tr);
}

enum class FeatureMode { Identity, ClassifierTrunk };

inline const char* feature_mode_name(FeatureMode m) {
    return m == FeatureMode::Identity ? "identity" : "classifier-trunk";
}

// Rowwise feature embedding: raw coordinates, or the classifier's trunk
// activations at t=0 for image-like data.
inline Tensor extract_features(const ClassifierModel* cls, const Tensor& xs, FeatureMode mode,
                               int threads = 1) {
    CPS_REQUIRE(xs.ndim() == 2, "extract_features: need [n x d] input");
    if (mode == FeatureMode::Identity) return xs;
    CPS_REQUIRE(cls != nullptr, "extract_features: classifier-trunk mode needs a classifier");
    const std::size_t n = xs.shape[0], d = xs.shape[1], k = cls->feature_dim();
    CPS_REQUIRE(d == cls->data_dim(), "extract_features: input dim ", d,
                " != classifier data dim ", cls->data_dim());
    Tensor out({n, k});
    parallel_chunks(n, threads, [&](std::size_t lo, std::size_t hi) {
        Tensor block({hi - lo, d});
        for (std::size_t i = lo; i < hi; ++i) block.set_row(i - lo, xs.row(i));
        const Tensor f = cls->features(block, std::vector<int>(hi - lo, 0));
        for (std::size_t i = lo; i < hi; ++i) out.set_row(i, f.row(i - lo));
    });
    return out;
}

inline FeatureFn make_feature_fn(FeatureMode mode, const ClassifierModel* cls = nullptr,
                                 int threads = 1) {
    if (mode == FeatureMode::Identity) return identity_features();
    CPS_REQUIRE(cls != nullptr, "make_feature_fn: classifier-trunk mode needs a classifier");
    return [cls, threads](const Tensor& x) {
        return extract_features(cls, x, FeatureMode::ClassifierTrunk, threads);
    };
}

}  // namespace cpsample

#endif
