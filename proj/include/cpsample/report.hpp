// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_REPORT_HPP
#define CPSAMPLE_REPORT_HPP

#include <string>
#include <vector>

#include "json.hpp"

#include "cpsample/archive.hpp"
#include "cpsample/guidance.hpp"
#include "cpsample/lemma.hpp"
#include "cpsample/mia.hpp"
#include "cpsample/permutation.hpp"
#include "cpsample/similarity.hpp"
#include "cpsample/tensor.hpp"
#include "cpsample/version.hpp"

namespace cpsample {

using ojson = nlohmann::ordered_json;

// Every report file is { "<name>_report": body, "config_hash": h, "build_id": b }.
inline void write_report_json(const std::string& path, const std::string& root_key, ojson body,
                              const std::string& cfg_hash) {
    ojson root;
    root[root_key] = std::move(body);
    root["config_hash"] = cfg_hash;
    root["build_id"] = build_id();
    write_file_bytes(path, root.dump(2) + "\n");
}

inline ojson similarity_json(const SimilarityReport& r, const std::string& feature_mode,
                             std::size_t n_train, const ExceedanceTest* vs_base = nullptr) {
    ojson j;
    j["threshold"] = r.threshold;
    j["fraction_above"] = r.fraction_above;
    j["n_samples"] = r.score.size();
    j["n_train"] = n_train;
    j["feature_mode"] = feature_mode;
    if (r.has_p_value) j["p_value"] = r.p_value;
    if (vs_base) {
        ojson ex;
        ex["frac_base"] = vs_base->frac_base;
        ex["n_base"] = vs_base->n_base;
        ex["frac_cp"] = vs_base->frac_cp;
        ex["n_cp"] = vs_base->n_cp;
        ex["z"] = vs_base->z;
        ex["p_value"] = vs_base->p_value;
        ex["degenerate"] = vs_base->degenerate;
        j["exceedance_test"] = std::move(ex);
    }
    j["nearest_index"] = r.nearest_index;
    j["score"] = r.score;
    j["histogram"] = r.histogram;
    return j;
}

inline ojson mia_json(const MiaReport& r) {
    ojson j;
    j["n"] = r.n;
    j["m"] = r.m;
    j["t"] = r.t;
    j["mean_train"] = r.mean_train;
    j["mean_test"] = r.mean_test;
    j["var_train"] = r.var_train;
    j["var_test"] = r.var_test;
    j["z"] = r.z;
    j["p_value"] = r.p_value;
    return j;
}

inline ojson permutation_json(const PermutationReport& r) {
    ojson j;
    j["a0"] = r.a0;
    j["p_hat"] = r.p_hat;
    j["level"] = r.level;
    j["reject"] = r.reject;
    j["replicates"] = r.a_null.size();
    j["a_null"] = r.a_null;
    return j;
}

inline ojson lemma_json(const LemmaReport& r) {
    ojson j;
    j["l_hat"] = r.l_hat;
    j["l_hat_is_lower_bound"] = r.l_hat_is_lower_bound;
    j["kappa_hat"] = r.kappa_hat;
    j["gamma_hat"] = r.gamma_hat;
    j["lambda"] = r.lambda;
    j["nu_hat"] = r.nu_hat;
    j["delta"] = r.delta;
    j["delta_max"] = r.delta_max;
    j["bound"] = r.bound;
    j["empirical_outside_rate"] = r.empirical_outside_rate;
    j["n_samples"] = r.n_samples;
    j["n_train"] = r.n_train;
    j["vacuous"] = r.vacuous;
    j["pass"] = r.pass;
    return j;
}

inline ojson frechet_json(double distance, const std::string& feature_mode,
                          std::size_t n_samples) {
    ojson j;
    j["frechet_distance"] = distance;
    j["feature_mode"] = feature_mode;
    j["n_samples"] = n_samples;
    return j;
}

// 50 uniform bins over [0,1]; out-of-range scores land in the end bins.
inline void write_histogram_csv(const std::string& path, const std::vector<std::size_t>& bins) {
    CPS_REQUIRE(bins.size() == 50, "write_histogram_csv: expected 50 bins, got ", bins.size());
    std::string out = "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < bins.size(); ++i)
        out += str_cat(double(i) / 50.0, ",", double(i + 1) / 50.0, ",", bins[i], "\n");
    write_file_bytes(path, out);
}

inline void write_trace_csv(const std::string& path, const SampleRun& run) {
    std::string out = "sample_id,step,t,p1,triggered\n";
    for (const auto& row : run.trace)
        out += str_cat(row.sample, ",", row.step, ",", row.t, ",", row.p1, ",",
                       int(row.triggered), "\n");
    write_file_bytes(path, out);
}

}  // namespace cpsample

#endif
