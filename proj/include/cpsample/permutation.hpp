// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_PERMUTATION_HPP
#define CPSAMPLE_PERMUTATION_HPP

#include <cstdint>
#include <vector>

#include "cpsample/parallel.hpp"
#include "cpsample/rng.hpp"
#include "cpsample/similarity.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

// Highest cosine similarity over all pairs (a_i, b_j) in feature space.
inline double max_pair_similarity(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.ndim() == 2 && b.ndim() == 2 && a.shape[0] > 0 && b.shape[0] > 0,
                "max_pair_similarity: empty set");
    CPS_REQUIRE(a.shape[1] == b.shape[1], "max_pair_similarity: dims differ");
    std::vector<double> nb(b.shape[0]);
    for (std::size_t i = 0; i < b.shape[0]; ++i) nb[i] = l2norm(b.row(i));
    double best = -2.0;
    for (std::size_t i = 0; i < a.shape[0]; ++i) {
        const Neighbor r = nearest_neighbor_row(a.row(i), b, nb);
        if (r.similarity > best) best = r.similarity;
    }
    return best;
}

struct PermutationReport {
    double a0 = 0.0;             // observed max-pair similarity
    std::vector<double> a_null;  // replicate statistics
    double p_hat = 0.0;          // fraction of replicates a0 exceeds
    double level = 0.05;
    bool reject = false;         // evidence the generator copies its training subset
};

inline Tensor gather_subset(const Tensor& src, const std::vector<std::size_t>& idx) {
    Tensor out({idx.size(), src.shape[1]});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        CPS_REQUIRE(idx[i] < src.shape[0], "gather_subset: index ", idx[i], " out of range");
        out.set_row(i, src.row(idx[i]));
    }
    return out;
}

// Tests whether generated samples sit closer to the k-point training subset
// `finetune` than to random k-subsets of the wider pool `train_full` it was
// drawn from. Observed statistic: max pair similarity between k random
// samples and the subset. Each replicate redraws both a fresh k-subset of
// the pool and fresh samples. p_hat near 1 means the observed statistic
// beats almost every replicate; reject when p_hat > 1 - level.
inline PermutationReport permutation_test(const Tensor& samples, const Tensor& finetune,
                                          const Tensor& train_full, std::size_t replicates,
                                          const FeatureFn& features, double level,
                                          std::uint64_t seed, int threads = 1) {
    CPS_REQUIRE(samples.ndim() == 2 && finetune.ndim() == 2 && train_full.ndim() == 2,
                "permutation_test: need matrices");
    const std::size_t k = finetune.shape[0];
    CPS_REQUIRE(k > 0, "permutation_test: empty finetune set");
    CPS_REQUIRE(train_full.shape[0] >= 2 * k, "permutation_test: pool must hold at least 2x the ",
                "finetune set (", train_full.shape[0], " < ", 2 * k, ")");
    CPS_REQUIRE(samples.shape[0] >= k, "permutation_test: need at least ", k, " samples, have ",
                samples.shape[0]);
    CPS_REQUIRE(replicates >= 100, "permutation_test: need at least 100 replicates");
    CPS_REQUIRE(level > 0.0 && level < 1.0, "permutation_test: level in (0,1)");

    const Tensor fp = features(samples);
    const Tensor fs = features(finetune);
    const Tensor ff = features(train_full);
    CPS_REQUIRE(fp.shape[1] == fs.shape[1] && fp.shape[1] == ff.shape[1],
                "permutation_test: feature dims differ");

    PermutationReport res;
    res.level = level;
    {
        Rng rng = Rng::stream(seed, 0);
        res.a0 = max_pair_similarity(gather_subset(fp, rng.subset(fp.shape[0], k)), fs);
    }
    res.a_null.assign(replicates, 0.0);
    parallel_chunks(replicates, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            Rng rng = Rng::stream(seed, i + 1);
            const Tensor si = gather_subset(ff, rng.subset(ff.shape[0], k));
            const Tensor pi = gather_subset(fp, rng.subset(fp.shape[0], k));
            res.a_null[i] = max_pair_similarity(pi, si);
        }
    });
    std::size_t wins = 0;
    for (double a : res.a_null)
        if (res.a0 > a) ++wins;
    res.p_hat = double(wins) / double(replicates);
    res.reject = res.p_hat > 1.0 - level;
    return res;
}

}  // namespace cpsample

#endif
