// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_PIPELINE_HPP
#define CPSAMPLE_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cpsample/checkpoint.hpp"
#include "cpsample/config.hpp"
#include "cpsample/dataset.hpp"
#include "cpsample/frechet.hpp"
#include "cpsample/guidance.hpp"
#include "cpsample/lemma.hpp"
#include "cpsample/mia.hpp"
#include "cpsample/permutation.hpp"
#include "cpsample/report.hpp"
#include "cpsample/similarity.hpp"
#include "cpsample/training.hpp"

namespace cpsample {

struct RunPaths {
    std::string dir;
    std::string config_snapshot;
    std::string dataset;
    std::string denoiser;
    std::string classifier;
    std::string samples_base;
    std::string samples_cp;
    std::string samples_rej;
    std::string trace_cp;
    std::string similarity_base;
    std::string similarity_base_hist;
    std::string similarity_cp;
    std::string similarity_cp_hist;
    std::string mia_base;
    std::string mia_cp;
    std::string permutation;
    std::string lemma;
    std::string frechet_base;
    std::string frechet_cp;
    std::string summary;
};

inline RunPaths make_paths(const std::string& dir) {
    RunPaths p;
    p.dir = dir;
    const auto in = [&dir](const char* f) { return dir + "/" + f; };
    p.config_snapshot = in("config.snapshot.ini");
    p.dataset = in("dataset.cpta");
    p.denoiser = in("denoiser.cpta");
    p.classifier = in("classifier.cpta");
    p.samples_base = in("samples_base.cpta");
    p.samples_cp = in("samples_cp.cpta");
    p.samples_rej = in("samples_rej.cpta");
    p.trace_cp = in("trace_cp.csv");
    p.similarity_base = in("similarity_base.json");
    p.similarity_base_hist = in("similarity_base_hist.csv");
    p.similarity_cp = in("similarity_cp.json");
    p.similarity_cp_hist = in("similarity_cp_hist.csv");
    p.mia_base = in("mia_base.json");
    p.mia_cp = in("mia_cp.json");
    p.permutation = in("permutation.json");
    p.lemma = in("lemma.json");
    p.frechet_base = in("frechet_base.json");
    p.frechet_cp = in("frechet_cp.json");
    p.summary = in("summary.json");
    return p;
}

struct PipelineOptions {
    bool force = false;        // recompute checkpointed stages even if files exist
    int threads = 1;
    std::uint64_t seed = 0;    // nonzero: derive every per-section seed from this
    std::ostream* log = nullptr;
};

// Master seed fan-out: one --seed value pins the whole run.
inline ExperimentConfig apply_master_seed(ExperimentConfig cfg, std::uint64_t seed) {
    if (seed == 0) return cfg;
    cfg.dataset.seed = mix_seed(seed, 1);
    cfg.denoiser.seed = mix_seed(seed, 2);
    cfg.classifier.seed = mix_seed(seed, 3);
    cfg.classifier.label_seed = mix_seed(seed, 4);
    cfg.sample.seed = mix_seed(seed, 5);
    cfg.audit.seed = mix_seed(seed, 6);
    return cfg;
}

// All state a run accumulates. Stages fill it lazily; every ensure_* is
// idempotent within one context.
struct PipelineContext {
    ExperimentConfig cfg;  // effective config (seed override already applied)
    PipelineOptions opts;
    RunPaths paths;
    std::string cfg_hash;
    NoiseSchedule sched;

    DatasetSplit data;
    DenoiserModel den_raw, den_ema;
    ClassifierCheckpoint cls;
    Tensor samples_base, samples_cp, samples_rej;

    // geometry of the protected region
    double diameter = 0.0;
    double lipschitz_radius = 0.0;
    double l_hat = 0.0;
    double delta = 0.0;

    // summary fragments carried across resume (stored in file metadata)
    ojson den_info, cls_info, base_info, cp_info, rej_info;

    struct {
        bool dataset = false, denoiser = false, classifier = false, geometry = false;
        bool base = false, cp = false, rej = false;
    } done;
};

namespace detail {

inline bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec) && !ec;
}

template <typename... Args>
void plog(PipelineContext& cx, const Args&... args) {
    if (cx.opts.log) *cx.opts.log << str_cat(args...) << "\n";
}

template <typename F>
void run_stage(const char* name, F&& f) {
    const char* what = nullptr;
    std::string msg;
    try {
        f();
        return;
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        msg = e.what();
        what = msg.c_str();
    }
    fail("stage ", name, ": ", what);
}

inline nlohmann::json parse_meta(const TensorArchive& ar, const std::string& path) {
    try {
        return nlohmann::json::parse(ar.metadata);
    } catch (const nlohmann::json::exception& e) {
        fail("'", path, "': bad metadata: ", e.what());
    }
}

template <typename T>
void check_meta(const nlohmann::json& meta, const std::string& path, const char* key,
                const T& want) {
    CPS_REQUIRE(meta.contains(key), "'", path, "': metadata lacks '", key,
                "'; rerun with --force");
    const T got = meta.at(key).get<T>();
    CPS_REQUIRE(got == want, "'", path, "': ", key, " = ", got, " but config wants ", want,
                "; rerun with --force");
}

}  // namespace detail

inline PipelineContext make_pipeline_context(const ExperimentConfig& config,
                                             const PipelineOptions& opts) {
    PipelineContext cx;
    cx.cfg = apply_master_seed(config, opts.seed);
    cx.cfg.validate();
    cx.opts = opts;
    if (cx.opts.threads < 1) cx.opts.threads = 1;
    cx.paths = make_paths(cx.cfg.out_dir);
    cx.cfg_hash = config_hash(cx.cfg);
    cx.sched = cx.cfg.make_schedule();

    std::error_code ec;
    std::filesystem::create_directories(cx.paths.dir, ec);
    if (ec) fail("cannot create output dir '", cx.paths.dir, "': ", ec.message());
    write_file_bytes(cx.paths.config_snapshot, serialize_config(cx.cfg));
    return cx;
}

inline const DenoiserModel& active_denoiser(const PipelineContext& cx) {
    return cx.cfg.denoiser.use_ema ? cx.den_ema : cx.den_raw;
}

inline const ClassifierModel& active_classifier(const PipelineContext& cx) {
    return cx.cfg.classifier.use_ema ? cx.cls.ema : cx.cls.raw;
}

inline void ensure_dataset(PipelineContext& cx) {
    if (cx.done.dataset) return;
    detail::run_stage("gen-data", [&] {
        const auto& dc = cx.cfg.dataset;
        if (!cx.opts.force && detail::file_exists(cx.paths.dataset)) {
            const TensorArchive ar = read_archive(cx.paths.dataset);
            const auto meta = detail::parse_meta(ar, cx.paths.dataset);
            detail::check_meta<std::string>(meta, cx.paths.dataset, "generator", dc.kind);
            detail::check_meta<std::uint64_t>(meta, cx.paths.dataset, "seed", dc.seed);
            cx.data.train = ar.get("train");
            cx.data.test = ar.get("test");
            CPS_REQUIRE(cx.data.train.shape[0] == dc.n_train &&
                            cx.data.test.shape[0] == dc.n_test,
                        "'", cx.paths.dataset, "': split sizes ", cx.data.train.shape[0], "/",
                        cx.data.test.shape[0], " but config wants ", dc.n_train, "/", dc.n_test,
                        "; rerun with --force");
            detail::plog(cx, "[gen-data] reusing ", cx.paths.dataset);
            return;
        }
        cx.data = generate_dataset(dc);
        TensorArchive ar;
        ar.put("train", cx.data.train);
        ar.put("test", cx.data.test);
        ojson meta;
        meta["kind"] = "dataset";
        meta["generator"] = dc.kind;
        meta["seed"] = dc.seed;
        ar.metadata = meta.dump();
        write_archive(cx.paths.dataset, ar);
        detail::plog(cx, "[gen-data] ", dc.kind, " train=", dc.n_train, " test=", dc.n_test,
                     " -> ", cx.paths.dataset);
    });
    cx.done.dataset = true;
}

inline void ensure_denoiser(PipelineContext& cx) {
    if (cx.done.denoiser) return;
    ensure_dataset(cx);
    detail::run_stage("train-denoiser", [&] {
        const auto& dn = cx.cfg.denoiser;
        if (!cx.opts.force && detail::file_exists(cx.paths.denoiser)) {
            std::string extra;
            auto pair = load_denoiser(cx.paths.denoiser, &extra);
            cx.den_raw = std::move(pair.first);
            cx.den_ema = std::move(pair.second);
            CPS_REQUIRE(cx.den_raw.steps == cx.sched.steps && cx.den_raw.embed_dim == dn.embed_dim,
                        "'", cx.paths.denoiser, "': steps/embed ", cx.den_raw.steps, "/",
                        cx.den_raw.embed_dim, " but config wants ", cx.sched.steps, "/",
                        dn.embed_dim, "; rerun with --force");
            CPS_REQUIRE(cx.den_raw.data_dim() == cx.data.train.shape[1], "'", cx.paths.denoiser,
                        "': data dim mismatch; rerun with --force");
            cx.den_info = extra.empty() ? ojson::object() : ojson::parse(extra);
            detail::check_meta<std::uint64_t>(cx.den_info, cx.paths.denoiser, "seed", dn.seed);
            detail::plog(cx, "[train-denoiser] reusing ", cx.paths.denoiser);
            return;
        }
        auto res = train_denoiser(cx.data.train, cx.sched, std::size_t(dn.width),
                                  std::size_t(dn.depth), dn.embed_dim, cx.cfg.denoiser_train(),
                                  dn.seed);
        cx.den_raw = std::move(res.raw);
        cx.den_ema = std::move(res.ema);
        cx.den_info = ojson::object();
        cx.den_info["seed"] = dn.seed;
        cx.den_info["steps_run"] = res.steps_run;
        cx.den_info["final_loss"] = res.loss_trace.empty() ? 0.0 : res.loss_trace.back();
        save_denoiser(cx.paths.denoiser, cx.den_raw, cx.den_ema, cx.den_info.dump());
        detail::plog(cx, "[train-denoiser] ", res.steps_run, " steps, final loss ",
                     cx.den_info["final_loss"].get<double>(), " -> ", cx.paths.denoiser);
    });
    cx.done.denoiser = true;
}

inline void ensure_classifier(PipelineContext& cx) {
    if (cx.done.classifier) return;
    ensure_dataset(cx);
    detail::run_stage("train-classifier", [&] {
        const auto& cc = cx.cfg.classifier;
        if (!cx.opts.force && detail::file_exists(cx.paths.classifier)) {
            std::string extra;
            cx.cls = load_classifier(cx.paths.classifier, &extra);
            CPS_REQUIRE(cx.cls.raw.steps == cx.sched.steps && cx.cls.raw.embed_dim == cc.embed_dim,
                        "'", cx.paths.classifier, "': steps/embed mismatch; rerun with --force");
            CPS_REQUIRE(cx.cls.labels.bits.size() == cx.data.train.shape[0] &&
                            cx.cls.labels.seed == cc.label_seed,
                        "'", cx.paths.classifier, "': labels do not match the training set; ",
                        "rerun with --force");
            cx.cls_info = extra.empty() ? ojson::object() : ojson::parse(extra);
            detail::check_meta<std::uint64_t>(cx.cls_info, cx.paths.classifier, "seed", cc.seed);
            detail::plog(cx, "[train-classifier] reusing ", cx.paths.classifier);
            return;
        }
        const LabelSet labels = assign_random_labels(cx.data.train.shape[0], cc.label_seed);
        auto res = train_classifier(cx.data.train, labels, cx.sched, std::size_t(cc.width),
                                    std::size_t(cc.depth), cc.embed_dim,
                                    cx.cfg.classifier_train(), cc.seed);
        cx.cls.raw = std::move(res.raw);
        cx.cls.ema = std::move(res.ema);
        cx.cls.labels = labels;
        cx.cls_info = ojson::object();
        cx.cls_info["seed"] = cc.seed;
        cx.cls_info["steps_run"] = res.steps_run;
        cx.cls_info["clean_ce"] = res.final_metric;
        cx.cls_info["target_reached"] = res.target_reached;
        save_classifier(cx.paths.classifier, cx.cls.raw, cx.cls.ema, cx.cls.labels,
                        cx.cls_info.dump());
        detail::plog(cx, "[train-classifier] ", res.steps_run, " steps, clean CE ",
                     res.final_metric, res.target_reached ? " (target reached)" : "", " -> ",
                     cx.paths.classifier);
    });
    cx.done.classifier = true;
}

// Resolves the protected-ball geometry: dataset diameter, probe radius,
// local Lipschitz estimate at t=0, and the radius delta. Auto delta stays
// inside the non-vacuous range (0.5 - kappa) / l_hat with 10% headroom.
inline void ensure_geometry(PipelineContext& cx) {
    if (cx.done.geometry) return;
    ensure_classifier(cx);
    detail::run_stage("geometry", [&] {
        const auto& au = cx.cfg.audit;
        cx.diameter = dataset_diameter(cx.data.train);
        cx.lipschitz_radius = au.lipschitz_radius > 0.0 ? au.lipschitz_radius
                              : au.delta > 0.0          ? au.delta
                                                        : 0.05 * cx.diameter;
        const LipschitzEstimate est = estimate_local_lipschitz(
            active_classifier(cx), cx.data.train, /*t=*/0, cx.lipschitz_radius,
            au.lipschitz_probes, mix_seed(au.seed, 5), cx.opts.threads);
        cx.l_hat = est.l_hat;
        if (au.delta > 0.0) {
            cx.delta = au.delta;
        } else {
            cx.delta = 0.05 * cx.diameter;
            if (cx.l_hat > 0.0)
                cx.delta = std::min(cx.delta, 0.9 * (0.5 - au.kappa) / cx.l_hat);
        }
        detail::plog(cx, "[geometry] diameter ", cx.diameter, ", l_hat ", cx.l_hat, ", delta ",
                     cx.delta);
    });
    cx.done.geometry = true;
}

inline void ensure_samples_base(PipelineContext& cx) {
    if (cx.done.base) return;
    ensure_denoiser(cx);
    detail::run_stage("sample-base", [&] {
        const auto& sc = cx.cfg.sample;
        if (!cx.opts.force && detail::file_exists(cx.paths.samples_base)) {
            const TensorArchive ar = read_archive(cx.paths.samples_base);
            const auto meta = detail::parse_meta(ar, cx.paths.samples_base);
            detail::check_meta<std::string>(meta, cx.paths.samples_base, "sampler", "ddim");
            detail::check_meta<std::uint64_t>(meta, cx.paths.samples_base, "seed", sc.seed);
            detail::check_meta<std::size_t>(meta, cx.paths.samples_base, "n", sc.n);
            detail::check_meta<int>(meta, cx.paths.samples_base, "stride", sc.stride);
            cx.samples_base = ar.get("samples");
            cx.base_info = ojson::parse(ar.metadata);
            detail::plog(cx, "[sample-base] reusing ", cx.paths.samples_base);
            return;
        }
        const SampleRun run = ddim_generate(active_denoiser(cx), cx.sched, sc.stride, sc.n,
                                            sc.seed, cx.opts.threads);
        cx.samples_base = run.samples;
        TensorArchive ar;
        ar.put("samples", cx.samples_base);
        ojson meta;
        meta["kind"] = "samples";
        meta["sampler"] = "ddim";
        meta["seed"] = sc.seed;
        meta["n"] = sc.n;
        meta["stride"] = sc.stride;
        ar.metadata = meta.dump();
        write_archive(cx.paths.samples_base, ar);
        cx.base_info = std::move(meta);
        detail::plog(cx, "[sample-base] ", sc.n, " samples -> ", cx.paths.samples_base);
    });
    cx.done.base = true;
}

inline void ensure_samples_cp(PipelineContext& cx) {
    if (cx.done.cp) return;
    ensure_denoiser(cx);
    ensure_classifier(cx);
    detail::run_stage("sample-cp", [&] {
        const auto& sc = cx.cfg.sample;
        const auto& gd = cx.cfg.guidance;
        if (!cx.opts.force && detail::file_exists(cx.paths.samples_cp)) {
            const TensorArchive ar = read_archive(cx.paths.samples_cp);
            const auto meta = detail::parse_meta(ar, cx.paths.samples_cp);
            detail::check_meta<std::string>(meta, cx.paths.samples_cp, "sampler", "cpsample");
            detail::check_meta<std::uint64_t>(meta, cx.paths.samples_cp, "seed", sc.seed);
            detail::check_meta<std::size_t>(meta, cx.paths.samples_cp, "n", sc.n);
            detail::check_meta<int>(meta, cx.paths.samples_cp, "stride", sc.stride);
            detail::check_meta<double>(meta, cx.paths.samples_cp, "alpha", gd.alpha);
            detail::check_meta<double>(meta, cx.paths.samples_cp, "scale", gd.scale);
            detail::check_meta<double>(meta, cx.paths.samples_cp, "tau", gd.tau);
            cx.samples_cp = ar.get("samples");
            cx.cp_info = ojson::parse(ar.metadata);
            detail::plog(cx, "[sample-cp] reusing ", cx.paths.samples_cp);
            return;
        }
        const SampleRun run = cpsample_generate(active_denoiser(cx), active_classifier(cx),
                                                cx.sched, cx.cfg.guidance_config(), sc.n, sc.seed,
                                                cx.opts.threads);
        cx.samples_cp = run.samples;
        std::size_t triggered = 0;
        for (std::size_t c : run.trigger_counts) triggered += c;
        const double trig_frac =
            run.ladder.empty() ? 0.0
                               : double(triggered) / (double(sc.n) * double(run.ladder.size()));
        TensorArchive ar;
        ar.put("samples", cx.samples_cp);
        Tensor tc({run.trigger_counts.size()});
        for (std::size_t i = 0; i < tc.numel(); ++i) tc.at(i) = double(run.trigger_counts[i]);
        ar.put("trigger_counts", std::move(tc));
        ojson meta;
        meta["kind"] = "samples";
        meta["sampler"] = "cpsample";
        meta["seed"] = sc.seed;
        meta["n"] = sc.n;
        meta["stride"] = sc.stride;
        meta["alpha"] = gd.alpha;
        meta["scale"] = gd.scale;
        meta["tau"] = gd.tau;
        meta["trigger_fraction"] = trig_frac;
        ar.metadata = meta.dump();
        write_archive(cx.paths.samples_cp, ar);
        if (sc.trace) write_trace_csv(cx.paths.trace_cp, run);
        cx.cp_info = std::move(meta);
        detail::plog(cx, "[sample-cp] ", sc.n, " samples, trigger fraction ", trig_frac, " -> ",
                     cx.paths.samples_cp);
    });
    cx.done.cp = true;
}

inline void ensure_samples_rejection(PipelineContext& cx) {
    if (cx.done.rej) return;
    ensure_denoiser(cx);
    ensure_geometry(cx);
    detail::run_stage("sample-rejection", [&] {
        const auto& sc = cx.cfg.sample;
        const std::size_t want = cx.cfg.rejection_n();
        if (!cx.opts.force && detail::file_exists(cx.paths.samples_rej)) {
            const TensorArchive ar = read_archive(cx.paths.samples_rej);
            const auto meta = detail::parse_meta(ar, cx.paths.samples_rej);
            detail::check_meta<std::string>(meta, cx.paths.samples_rej, "sampler", "rejection");
            detail::check_meta<std::uint64_t>(meta, cx.paths.samples_rej, "seed", sc.seed);
            detail::check_meta<std::size_t>(meta, cx.paths.samples_rej, "requested", want);
            detail::check_meta<std::size_t>(meta, cx.paths.samples_rej, "max_tries",
                                            cx.cfg.rejection.max_tries);
            detail::check_meta<double>(meta, cx.paths.samples_rej, "delta", cx.delta);
            cx.samples_rej = ar.get("samples");
            cx.rej_info = ojson::parse(ar.metadata);
            detail::plog(cx, "[sample-rejection] reusing ", cx.paths.samples_rej);
            return;
        }
        RejectionResult res;
        bool clean = true;
        try {
            res = rejection_sample(active_denoiser(cx), cx.sched, sc.stride, cx.data.train,
                                   cx.delta, MetricFn{}, cx.cfg.rejection.max_tries, want,
                                   mix_seed(sc.seed, 0x72656a), cx.opts.threads);
        } catch (const RejectionExhausted& e) {
            clean = false;
            res = e.partial;
            detail::plog(cx, "[sample-rejection] ", e.what());
        }
        // keep only the filled slots; order preserved
        Tensor kept({res.filled, res.accepted.shape[1]});
        std::size_t k = 0;
        for (std::size_t i = 0; i < res.ok.size(); ++i)
            if (res.ok[i]) kept.set_row(k++, res.accepted.row(i));
        cx.samples_rej = std::move(kept);
        TensorArchive ar;
        ar.put("samples", cx.samples_rej);
        ojson meta;
        meta["kind"] = "samples";
        meta["sampler"] = "rejection";
        meta["seed"] = sc.seed;
        meta["requested"] = want;
        meta["filled"] = res.filled;
        meta["max_tries"] = cx.cfg.rejection.max_tries;
        meta["stride"] = sc.stride;
        meta["delta"] = cx.delta;
        meta["total_tries"] = res.total_tries;
        meta["acceptance_rate"] = res.acceptance_rate;
        meta["clean"] = clean;
        ar.metadata = meta.dump();
        write_archive(cx.paths.samples_rej, ar);
        cx.rej_info = std::move(meta);
        detail::plog(cx, "[sample-rejection] ", res.filled, "/", want, " accepted in ",
                     res.total_tries, " tries -> ", cx.paths.samples_rej);
    });
    cx.done.rej = true;
}

inline FeatureMode audit_feature_mode(const PipelineContext& cx) {
    return cx.cfg.audit.feature_mode == "identity" ? FeatureMode::Identity
                                                   : FeatureMode::ClassifierTrunk;
}

inline FeatureFn audit_features(PipelineContext& cx) {
    const FeatureMode mode = audit_feature_mode(cx);
    if (mode == FeatureMode::ClassifierTrunk) ensure_classifier(cx);
    return make_feature_fn(mode, &active_classifier(cx), cx.opts.threads);
}

// Nearest-neighbor similarity of both samplers against the training set,
// plus the two-proportion test that guidance lowered the exceedance rate.
inline ojson audit_similarity(PipelineContext& cx) {
    ensure_samples_base(cx);
    ensure_samples_cp(cx);
    ojson frag;
    detail::run_stage("audit-sim", [&] {
        const FeatureFn feat = audit_features(cx);
        const double thr = cx.cfg.audit.threshold;
        const SimilarityReport base =
            similarity_report(cx.samples_base, cx.data.train, feat, thr, cx.opts.threads);
        SimilarityReport cp =
            similarity_report(cx.samples_cp, cx.data.train, feat, thr, cx.opts.threads);
        const ExceedanceTest ex = exceedance_test(base.fraction_above, base.score.size(),
                                                  cp.fraction_above, cp.score.size());
        cp.has_p_value = true;
        cp.p_value = ex.p_value;

        const std::string mode = cx.cfg.audit.feature_mode;
        const std::size_t n_train = cx.data.train.shape[0];
        write_report_json(cx.paths.similarity_base, "similarity_report",
                          similarity_json(base, mode, n_train), cx.cfg_hash);
        write_report_json(cx.paths.similarity_cp, "similarity_report",
                          similarity_json(cp, mode, n_train, &ex), cx.cfg_hash);
        write_histogram_csv(cx.paths.similarity_base_hist, base.histogram);
        write_histogram_csv(cx.paths.similarity_cp_hist, cp.histogram);

        frag["threshold"] = thr;
        frag["frac_base"] = base.fraction_above;
        frag["frac_cp"] = cp.fraction_above;
        if (cp.fraction_above > 0.0)
            frag["reduction"] = base.fraction_above / cp.fraction_above;
        frag["p_value"] = ex.p_value;
        frag["degenerate"] = ex.degenerate;
        detail::plog(cx, "[audit-sim] exceedance base ", base.fraction_above, " vs cp ",
                     cp.fraction_above, " (p ", ex.p_value, ")");
    });
    return frag;
}

// Membership z-test on both predictors at one diffusion time. The same
// noise streams serve both predictors, so the comparison is paired.
inline ojson audit_mia(PipelineContext& cx) {
    ensure_denoiser(cx);
    ensure_classifier(cx);
    ojson frag;
    detail::run_stage("audit-mia", [&] {
        const int t = cx.cfg.mia_t();
        const DenoiserModel& den = active_denoiser(cx);
        const ClassifierModel& cls = active_classifier(cx);
        GuidanceConfig gcfg = cx.cfg.guidance_config();
        gcfg.record_trace = false;

        const EpsFn base_fn = [&den](const Tensor& x, const std::vector<int>& ts) {
            return den.eps(x, ts);
        };
        const EpsFn cp_fn = [&](const Tensor& x, const std::vector<int>& ts) {
            for (int s : ts)
                CPS_REQUIRE(s == ts.front(), "mia predictor: mixed timesteps in one batch");
            return cp_epsilon_hat_batch(den, cls, x, ts.front(), cx.sched, gcfg).eps_hat;
        };

        const std::uint64_t seed_train = mix_seed(cx.cfg.audit.seed, 2);
        const std::uint64_t seed_test = mix_seed(cx.cfg.audit.seed, 3);
        const auto errs = [&](const EpsFn& fn, const Tensor& xs, std::uint64_t seed) {
            return mia_error(fn, xs, t, cx.sched, seed, cx.opts.threads);
        };
        const MiaReport base = mia_z_test(errs(base_fn, cx.data.train, seed_train),
                                          errs(base_fn, cx.data.test, seed_test), t);
        const MiaReport cp = mia_z_test(errs(cp_fn, cx.data.train, seed_train),
                                        errs(cp_fn, cx.data.test, seed_test), t);
        write_report_json(cx.paths.mia_base, "mia_report", mia_json(base), cx.cfg_hash);
        write_report_json(cx.paths.mia_cp, "mia_report", mia_json(cp), cx.cfg_hash);
        frag["t"] = t;
        frag["z_base"] = base.z;
        frag["p_base"] = base.p_value;
        frag["z_cp"] = cp.z;
        frag["p_cp"] = cp.p_value;
        detail::plog(cx, "[audit-mia] t=", t, " base p ", base.p_value, ", cp p ", cp.p_value);
    });
    return frag;
}

// Are protected samples closer to the training set than to random same-size
// subsets of the wider train+test pool?
inline ojson audit_permutation(PipelineContext& cx) {
    ensure_samples_cp(cx);
    ojson frag;
    detail::run_stage("audit-perm", [&] {
        CPS_REQUIRE(cx.data.test.shape[0] >= cx.data.train.shape[0],
                    "needs n_test >= n_train so the pool holds two disjoint train-sized sets ",
                    "(have ", cx.data.test.shape[0], " test vs ", cx.data.train.shape[0],
                    " train)");
        const Tensor pool = concat_rows(cx.data.train, cx.data.test);
        const PermutationReport rep = permutation_test(
            cx.samples_cp, cx.data.train, pool, cx.cfg.audit.perm_replicates, audit_features(cx),
            cx.cfg.audit.perm_level, mix_seed(cx.cfg.audit.seed, 4), cx.opts.threads);
        write_report_json(cx.paths.permutation, "permutation_report", permutation_json(rep),
                          cx.cfg_hash);
        frag["a0"] = rep.a0;
        frag["p_hat"] = rep.p_hat;
        frag["level"] = rep.level;
        frag["reject"] = rep.reject;
        detail::plog(cx, "[audit-perm] a0 ", rep.a0, ", p_hat ", rep.p_hat,
                     rep.reject ? " (reject)" : "");
    });
    return frag;
}

// Measures the assumption rates on the trained classifier, then confronts
// the (1-nu)(1-gamma) escape bound with the protected samples.
inline ojson audit_lemma(PipelineContext& cx) {
    ensure_geometry(cx);
    ensure_samples_cp(cx);
    ojson frag;
    detail::run_stage("verify-lemma", [&] {
        const auto& au = cx.cfg.audit;
        const AssumptionMeasurements m = measure_assumptions(
            active_classifier(cx), cx.data.train, cx.cls.labels, cx.sched, au.kappa, au.n_noise,
            cx.samples_cp, cx.l_hat, cx.delta, au.assumption_t_max, mix_seed(au.seed, 6),
            cx.opts.threads);
        const LemmaReport rep =
            verify_lemma(cx.l_hat, au.kappa, m.a2.gamma_hat, m.a3.nu_hat, cx.delta,
                         cx.samples_cp, cx.data.train, MetricFn{}, cx.opts.threads);
        write_report_json(cx.paths.lemma, "lemma_report", lemma_json(rep), cx.cfg_hash);
        frag["l_hat"] = rep.l_hat;
        frag["gamma_hat"] = rep.gamma_hat;
        frag["nu_hat"] = rep.nu_hat;
        frag["delta"] = rep.delta;
        frag["bound"] = rep.bound;
        frag["empirical_outside_rate"] = rep.empirical_outside_rate;
        frag["vacuous"] = rep.vacuous;
        frag["pass"] = rep.pass;
        detail::plog(cx, "[verify-lemma] bound ", rep.bound, ", empirical ",
                     rep.empirical_outside_rate, rep.pass ? " (pass)" : " (FAIL)");
    });
    return frag;
}

// Distribution quality of both samplers against the held-out test set.
inline ojson audit_frechet(PipelineContext& cx) {
    ensure_samples_base(cx);
    ensure_samples_cp(cx);
    ojson frag;
    detail::run_stage("eval-frechet", [&] {
        const FeatureMode mode = audit_feature_mode(cx);
        if (mode == FeatureMode::ClassifierTrunk) ensure_classifier(cx);
        const ClassifierModel* cls =
            mode == FeatureMode::ClassifierTrunk ? &active_classifier(cx) : nullptr;
        const Tensor f_test = extract_features(cls, cx.data.test, mode, cx.opts.threads);
        const Tensor f_base = extract_features(cls, cx.samples_base, mode, cx.opts.threads);
        const Tensor f_cp = extract_features(cls, cx.samples_cp, mode, cx.opts.threads);
        const GaussianMoments g_test = fit_gaussian(f_test);
        const double d_base = frechet_distance(fit_gaussian(f_base), g_test);
        const double d_cp = frechet_distance(fit_gaussian(f_cp), g_test);
        const char* mode_name = feature_mode_name(mode);
        write_report_json(cx.paths.frechet_base, "frechet_report",
                          frechet_json(d_base, mode_name, f_base.shape[0]), cx.cfg_hash);
        write_report_json(cx.paths.frechet_cp, "frechet_report",
                          frechet_json(d_cp, mode_name, f_cp.shape[0]), cx.cfg_hash);
        frag["base"] = d_base;
        frag["cp"] = d_cp;
        if (d_base > 0.0) frag["ratio"] = d_cp / d_base;
        detail::plog(cx, "[eval-frechet] base ", d_base, ", cp ", d_cp);
    });
    return frag;
}

struct CheckOutcome {
    ojson rows = ojson::array();
    bool pass = true;
};

// Pass/fail gates over the audit fragments, driven by the [check] section.
inline CheckOutcome evaluate_checks(const PipelineContext& cx, const ojson& sim, const ojson& mia,
                                    const ojson& lemma, const ojson& frechet) {
    const CheckSection& ck = cx.cfg.check;
    CheckOutcome out;
    const auto add = [&out](const char* name, bool ok, std::string detail) {
        ojson row;
        row["name"] = name;
        row["pass"] = ok;
        row["detail"] = std::move(detail);
        out.rows.push_back(std::move(row));
        if (!ok) out.pass = false;
    };

    const double fb = sim.at("frac_base").get<double>();
    const double fc = sim.at("frac_cp").get<double>();
    add("base_exceedance", fb >= ck.min_base_exceedance,
        str_cat("base exceedance ", fb, ", need >= ", ck.min_base_exceedance));
    add("exceedance_reduction", fb >= ck.min_reduction * fc,
        str_cat("base ", fb, " vs cp ", fc, ", need >= ", ck.min_reduction, "x"));
    const double exp_p = sim.at("p_value").get<double>();
    const bool degen = sim.at("degenerate").get<bool>();
    add("exceedance_p", !degen && exp_p <= ck.max_exceedance_p,
        str_cat("p ", exp_p, degen ? " (degenerate)" : "", ", need <= ", ck.max_exceedance_p));

    const double pb = mia.at("p_base").get<double>();
    const double pc = mia.at("p_cp").get<double>();
    if (ck.require_mia_leak)
        add("mia_base_leaks", pb < ck.min_mia_p,
            str_cat("base p ", pb, ", need < ", ck.min_mia_p, " (unprotected model must leak)"));
    if (ck.require_mia_protected)
        add("mia_cp_protected", pc >= ck.min_mia_p,
            str_cat("cp p ", pc, ", need >= ", ck.min_mia_p));

    const double db = frechet.at("base").get<double>();
    const double dc = frechet.at("cp").get<double>();
    add("frechet_ratio", dc <= ck.max_frechet_ratio * db,
        str_cat("cp ", dc, " vs base ", db, ", need <= ", ck.max_frechet_ratio, "x"));

    if (ck.require_lemma_pass)
        add("lemma_pass", lemma.at("pass").get<bool>(),
            str_cat("bound ", lemma.at("bound").get<double>(), ", empirical ",
                    lemma.at("empirical_outside_rate").get<double>()));
    if (ck.require_rejection_clean) {
        const bool clean = cx.rej_info.value("clean", false);
        add("rejection_clean", clean,
            str_cat(cx.rej_info.value("filled", std::size_t(0)), "/",
                    cx.rej_info.value("requested", std::size_t(0)), " slots filled"));
    }
    return out;
}

struct PipelineResult {
    ojson summary;
    bool checked = false;
    bool check_pass = true;
};

// Every stage in dependency order, all report files, one summary.json.
// Stages with a file on disk are reused unless opts.force; audits are cheap
// and always recomputed, so reports match the artifacts byte for byte.
inline PipelineResult run_pipeline(const ExperimentConfig& config, const PipelineOptions& opts,
                                   bool with_checks) {
    PipelineContext cx = make_pipeline_context(config, opts);
    ensure_dataset(cx);
    ensure_denoiser(cx);
    ensure_classifier(cx);
    ensure_geometry(cx);
    ensure_samples_base(cx);
    ensure_samples_cp(cx);
    ensure_samples_rejection(cx);

    const ojson sim = audit_similarity(cx);
    const ojson mia = audit_mia(cx);
    const ojson perm = audit_permutation(cx);
    const ojson lemma = audit_lemma(cx);
    const ojson frechet = audit_frechet(cx);

    ojson s;
    s["dataset"] = {{"kind", cx.cfg.dataset.kind},
                    {"n_train", cx.cfg.dataset.n_train},
                    {"n_test", cx.cfg.dataset.n_test},
                    {"dim", cx.data.train.shape[1]}};
    s["geometry"] = {{"diameter", cx.diameter},
                     {"lipschitz_radius", cx.lipschitz_radius},
                     {"l_hat", cx.l_hat},
                     {"delta", cx.delta}};
    s["training"] = {{"denoiser", cx.den_info}, {"classifier", cx.cls_info}};
    ojson sampling;
    sampling["n"] = cx.cfg.sample.n;
    sampling["stride"] = cx.cfg.sample.stride;
    sampling["trigger_fraction"] = cx.cp_info.value("trigger_fraction", 0.0);
    sampling["rejection"] = {{"requested", cx.rej_info.value("requested", std::size_t(0))},
                             {"filled", cx.rej_info.value("filled", std::size_t(0))},
                             {"total_tries", cx.rej_info.value("total_tries", std::size_t(0))},
                             {"acceptance_rate", cx.rej_info.value("acceptance_rate", 0.0)},
                             {"clean", cx.rej_info.value("clean", false)}};
    s["sampling"] = std::move(sampling);
    s["audits"] = {{"similarity", sim},
                   {"mia", mia},
                   {"permutation", perm},
                   {"lemma", lemma},
                   {"frechet", frechet}};

    PipelineResult res;
    if (with_checks) {
        const CheckOutcome ck = evaluate_checks(cx, sim, mia, lemma, frechet);
        s["checks"] = ck.rows;
        s["checks_pass"] = ck.pass;
        res.checked = true;
        res.check_pass = ck.pass;
        detail::plog(cx, "[check] ", ck.pass ? "all checks passed" : "CHECKS FAILED");
    }
    write_report_json(cx.paths.summary, "summary", s, cx.cfg_hash);
    res.summary = std::move(s);
    detail::plog(cx, "[summary] -> ", cx.paths.summary);
    return res;
}

}  // namespace cpsample

#endif
