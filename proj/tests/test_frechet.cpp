// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#include "catch2/catch_amalgamated.hpp"

#include <algorithm>

#include "cpsample/cpsample.hpp"

using namespace cpsample;
using Catch::Approx;

namespace {

Tensor random_symmetric(std::size_t k, Rng& rng) {
    const Tensor b = rng.normal_tensor({k, k});
    Tensor s({k, k});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) s.at(i, j) = 0.5 * (b.at(i, j) + b.at(j, i));
    return s;
}

Tensor reconstruct(const EigenSym& e) {
    const std::size_t k = e.values.numel();
    Tensor vd({k, k});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) vd.at(i, j) = e.vectors.at(i, j) * e.values.at(j);
    return matmul_nt(vd, e.vectors);
}

GaussianMoments moments1d(double mu, double sigma) {
    GaussianMoments g;
    g.mean = Tensor({std::size_t(1)});
    g.mean.at(0) = mu;
    g.cov = Tensor({std::size_t(1), std::size_t(1)});
    g.cov.at(0, 0) = sigma * sigma;
    g.n = 2;
    return g;
}

}  // namespace

TEST_CASE("jacobi eigendecomposition reproduces known spectra") {
    // diagonal input converges in zero sweeps, bitwise
    Tensor d = Tensor::zeros({std::size_t(3), std::size_t(3)});
    d.at(0, 0) = 5.0;
    d.at(1, 1) = -2.0;
    d.at(2, 2) = 0.25;
    const EigenSym ed = jacobi_eigh(d);
    REQUIRE(ed.values.at(0) == 5.0);
    REQUIRE(ed.values.at(1) == -2.0);
    REQUIRE(ed.values.at(2) == 0.25);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) REQUIRE(ed.vectors.at(i, j) == (i == j ? 1.0 : 0.0));

    // [[2,1],[1,2]] has eigenvalues 1 and 3
    Tensor m({std::size_t(2), std::size_t(2)});
    m.at(0, 0) = m.at(1, 1) = 2.0;
    m.at(0, 1) = m.at(1, 0) = 1.0;
    const EigenSym em = jacobi_eigh(m);
    std::vector<double> w = {em.values.at(0), em.values.at(1)};
    std::sort(w.begin(), w.end());
    REQUIRE(w[0] == Approx(1.0).margin(1e-12));
    REQUIRE(w[1] == Approx(3.0).margin(1e-12));

    // random symmetric: reconstruction, orthonormal vectors, trace preserved
    Rng rng(90);
    const Tensor s = random_symmetric(8, rng);
    const EigenSym es = jacobi_eigh(s);
    const Tensor back = reconstruct(es);
    double trace = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
        trace += s.at(i, i);
        wsum += es.values.at(i);
        for (std::size_t j = 0; j < 8; ++j)
            REQUIRE(back.at(i, j) == Approx(s.at(i, j)).margin(1e-10));
    }
    REQUIRE(wsum == Approx(trace).margin(1e-10));
    const Tensor vtv = matmul_tn(es.vectors, es.vectors);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            REQUIRE(vtv.at(i, j) == Approx(i == j ? 1.0 : 0.0).margin(1e-12));

    Tensor asym({std::size_t(2), std::size_t(2)});
    asym.at(0, 1) = 1.0;
    REQUIRE_THROWS_AS(jacobi_eigh(asym), Error);
    REQUIRE_THROWS_AS(jacobi_eigh(Tensor({std::size_t(2), std::size_t(3)})), Error);

    // all-zero matrix short-circuits
    const EigenSym ez = jacobi_eigh(Tensor::zeros({std::size_t(4), std::size_t(4)}));
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(ez.values.at(i) == 0.0);
}

TEST_CASE("psd square root squares back to the input") {
    Rng rng(91);
    const Tensor c = rng.normal_tensor({std::size_t(6), std::size_t(6)});
    const Tensor psd = matmul_tn(c, c);  // C^T C is PSD
    const SymSqrt s = sym_sqrt_psd(psd);
    REQUIRE(s.clamped == 0.0);
    const Tensor sq = matmul(s.root, s.root);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            REQUIRE(sq.at(i, j) == Approx(psd.at(i, j)).margin(1e-9));
            REQUIRE(s.root.at(i, j) == s.root.at(j, i));
        }

    // tiny negative eigenvalue gets clamped and reported
    Tensor neg = Tensor::zeros({std::size_t(2), std::size_t(2)});
    neg.at(0, 0) = 1.0;
    neg.at(1, 1) = -1e-8;
    const SymSqrt sn = sym_sqrt_psd(neg);
    REQUIRE(sn.clamped == Approx(1e-8));
    REQUIRE(sn.root.at(0, 0) == Approx(1.0));
    REQUIRE(sn.root.at(1, 1) == 0.0);
}

TEST_CASE("gaussian fit matches hand-computed moments") {
    Tensor x({std::size_t(3), std::size_t(2)});
    x.at(0, 0) = 1.0;
    x.at(0, 1) = 2.0;
    x.at(1, 0) = 3.0;
    x.at(1, 1) = 4.0;
    x.at(2, 0) = 5.0;
    x.at(2, 1) = 12.0;
    const GaussianMoments g = fit_gaussian(x);
    REQUIRE(g.mean.at(0) == Approx(3.0));
    REQUIRE(g.mean.at(1) == Approx(6.0));
    REQUIRE(g.cov.at(0, 0) == Approx(4.0));
    REQUIRE(g.cov.at(0, 1) == Approx(10.0));
    REQUIRE(g.cov.at(1, 0) == Approx(10.0));
    REQUIRE(g.cov.at(1, 1) == Approx(28.0));
    REQUIRE(g.n == 3);
    REQUIRE_FALSE(g.regularized);

    // fewer rows than dim + 1 triggers the diagonal nudge
    Rng rng(92);
    const Tensor thin = rng.normal_tensor({std::size_t(3), std::size_t(3)});
    const GaussianMoments gt = fit_gaussian(thin);
    REQUIRE(gt.regularized);
    const Tensor fat = rng.normal_tensor({std::size_t(4), std::size_t(3)});
    REQUIRE_FALSE(fit_gaussian(fat).regularized);

    REQUIRE_THROWS_AS(fit_gaussian(Tensor({std::size_t(1), std::size_t(2)})), Error);
    REQUIRE_THROWS_AS(fit_gaussian(Tensor({std::size_t(4)})), Error);
}

TEST_CASE("frechet distance matches the univariate closed form") {
    // 1-D: (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2
    const double cases[][4] = {
        {0.0, 1.0, 0.0, 1.0}, {0.0, 1.0, 2.0, 1.0}, {1.0, 0.5, -1.0, 2.0}, {3.0, 2.0, 3.0, 0.1}};
    for (const auto& c : cases) {
        const double want = (c[0] - c[2]) * (c[0] - c[2]) + (c[1] - c[3]) * (c[1] - c[3]);
        const double got = frechet_distance(moments1d(c[0], c[1]), moments1d(c[2], c[3]));
        REQUIRE(got == Approx(want).margin(1e-12));
    }

    // diagonal 2-D covariances reduce to per-axis standard deviations
    GaussianMoments a, b;
    a.mean = Tensor::zeros({std::size_t(2)});
    a.cov = Tensor::zeros({std::size_t(2), std::size_t(2)});
    a.cov.at(0, 0) = 4.0;
    a.cov.at(1, 1) = 9.0;
    b.mean = Tensor({std::size_t(2)});
    b.mean.at(0) = b.mean.at(1) = 1.0;
    b.cov = Tensor::zeros({std::size_t(2), std::size_t(2)});
    b.cov.at(0, 0) = 1.0;
    b.cov.at(1, 1) = 16.0;
    // 1 + 1 + (2-1)^2 + (3-4)^2 = 4
    REQUIRE(frechet_distance(a, b) == Approx(4.0).margin(1e-10));

    REQUIRE(frechet_distance(a, a) == Approx(0.0).margin(1e-12));
    double clamp = -1.0;
    REQUIRE(frechet_distance(a, b, &clamp) == Approx(4.0).margin(1e-10));
    REQUIRE(clamp >= 0.0);

    GaussianMoments wrong = moments1d(0.0, 1.0);
    REQUIRE_THROWS_AS(frechet_distance(a, wrong), Error);
}

TEST_CASE("frechet distance is symmetric and rotation invariant") {
    Rng rng(93);
    const Tensor xa = rng.normal_tensor({std::size_t(300), std::size_t(3)});
    Tensor xb = rng.normal_tensor({std::size_t(250), std::size_t(3)});
    for (std::size_t i = 0; i < xb.shape[0]; ++i) {
        xb.at(i, 0) = 0.4 * xb.at(i, 0) + 1.0;
        xb.at(i, 2) = 2.0 * xb.at(i, 2) - 0.5;
    }
    const GaussianMoments ga = fit_gaussian(xa), gb = fit_gaussian(xb);
    const double dab = frechet_distance(ga, gb);
    REQUIRE(dab > 0.1);
    REQUIRE(frechet_distance(gb, ga) == Approx(dab).epsilon(1e-9));

    // orthogonal basis change leaves the distance alone
    const Tensor q = jacobi_eigh(random_symmetric(3, rng)).vectors;
    const GaussianMoments gar = fit_gaussian(matmul(xa, q));
    const GaussianMoments gbr = fit_gaussian(matmul(xb, q));
    REQUIRE(frechet_distance(gar, gbr) == Approx(dab).epsilon(1e-6));

    // two draws of the same law land close to zero
    const Tensor y = rng.normal_tensor({std::size_t(4000), std::size_t(2)});
    const Tensor z = rng.normal_tensor({std::size_t(4000), std::size_t(2)});
    REQUIRE(frechet_distance(fit_gaussian(y), fit_gaussian(z)) < 0.02);
}

TEST_CASE("feature extraction switches between raw and trunk embeddings") {
    Rng rng(94);
    const ClassifierModel cls = make_classifier(3, 12, 2, 8, 25, rng);
    const Tensor xs = rng.normal_tensor({std::size_t(17), std::size_t(3)});

    const Tensor id = extract_features(nullptr, xs, FeatureMode::Identity);
    REQUIRE(id.data == xs.data);

    const Tensor tr = extract_features(&cls, xs, FeatureMode::ClassifierTrunk);
    REQUIRE(tr.shape[0] == 17);
    REQUIRE(tr.shape[1] == cls.feature_dim());
    const Tensor direct = cls.features(xs, std::vector<int>(17, 0));
    REQUIRE(tr.data == direct.data);

    // chunked runs stay bitwise identical
    const Tensor tr4 = extract_features(&cls, xs, FeatureMode::ClassifierTrunk, 4);
    REQUIRE(tr4.data == tr.data);

    const FeatureFn fn = make_feature_fn(FeatureMode::ClassifierTrunk, &cls);
    REQUIRE(fn(xs).data == tr.data);
    REQUIRE(make_feature_fn(FeatureMode::Identity)(xs).data == xs.data);

    REQUIRE_THROWS_AS(extract_features(nullptr, xs, FeatureMode::ClassifierTrunk), Error);
    REQUIRE_THROWS_AS(extract_features(&cls, rng.normal_tensor({std::size_t(2), std::size_t(5)}),
                                       FeatureMode::ClassifierTrunk),
                      Error);

    REQUIRE(std::string(feature_mode_name(FeatureMode::Identity)) == "identity");
    REQUIRE(std::string(feature_mode_name(FeatureMode::ClassifierTrunk)) == "classifier-trunk");
}
