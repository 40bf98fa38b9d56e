// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Subcommands map onto pipeline stages; every stage
// reuses on-disk artifacts unless --force. Exit codes: 0 success, 2 bad
// config or usage, 3 stage failure, 4 run-all --check gate failed.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "cpsample/cpsample.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_override;
    std::uint64_t seed = 0;
    bool force = false;
    int threads = 1;
};

CLI::App* add_command(CLI::App& app, const char* name, const char* desc, CommonArgs& a) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("-c,--config", a.config_path, "experiment config (INI)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("-o,--out", a.out_override, "override the [output] dir from the config");
    sub->add_option("-s,--seed", a.seed,
                    "master seed; nonzero derives every per-section seed from it");
    sub->add_flag("-f,--force", a.force, "recompute stages even when output files exist");
    sub->add_option("-t,--threads", a.threads, "worker threads")->check(CLI::PositiveNumber);
    return sub;
}

int dispatch(const std::string& cmd, const CommonArgs& a, bool check) {
    cpsample::ExperimentConfig cfg = cpsample::parse_config_file(a.config_path);
    if (!a.out_override.empty()) cfg.out_dir = a.out_override;
    cpsample::PipelineOptions opts;
    opts.force = a.force;
    opts.threads = a.threads;
    opts.seed = a.seed;
    opts.log = &std::cout;

    if (cmd == "run-all") {
        const cpsample::PipelineResult r = cpsample::run_pipeline(cfg, opts, check);
        return (r.checked && !r.check_pass) ? 4 : 0;
    }

    cpsample::PipelineContext cx = cpsample::make_pipeline_context(cfg, opts);
    if (cmd == "gen-data") {
        cpsample::ensure_dataset(cx);
    } else if (cmd == "train-denoiser") {
        cpsample::ensure_denoiser(cx);
    } else if (cmd == "train-classifier") {
        cpsample::ensure_classifier(cx);
    } else if (cmd == "sample") {
        cpsample::ensure_samples_base(cx);
        cpsample::ensure_samples_cp(cx);
        cpsample::ensure_samples_rejection(cx);
    } else if (cmd == "audit-sim") {
        cpsample::audit_similarity(cx);
    } else if (cmd == "audit-mia") {
        cpsample::audit_mia(cx);
    } else if (cmd == "audit-perm") {
        cpsample::audit_permutation(cx);
    } else if (cmd == "verify-lemma") {
        cpsample::audit_lemma(cx);
    } else if (cmd == "eval-frechet") {
        cpsample::audit_frechet(cx);
    } else {
        std::cerr << "error: unknown command '" << cmd << "'\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cpsample: classifier-protected diffusion sampling with audit suite"};
    app.set_version_flag("--version", cpsample::build_id());
    app.require_subcommand(1);

    CommonArgs args;
    add_command(app, "gen-data", "generate the train/test dataset", args);
    add_command(app, "train-denoiser", "train the noise-prediction network", args);
    add_command(app, "train-classifier", "train the protection label classifier", args);
    add_command(app, "sample", "draw baseline, protected, and rejection samples", args);
    add_command(app, "audit-sim", "nearest-neighbor similarity audit", args);
    add_command(app, "audit-mia", "membership-inference audit", args);
    add_command(app, "audit-perm", "permutation copying test", args);
    add_command(app, "verify-lemma", "measure assumptions and verify the escape bound", args);
    add_command(app, "eval-frechet", "sample quality against the held-out set", args);
    CLI::App* run_all =
        add_command(app, "run-all", "full pipeline, every report, one summary", args);
    bool check = false;
    run_all->add_flag("--check", check, "evaluate the [check] gates; exit 4 on failure");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        return dispatch(app.get_subcommands().front()->get_name(), args, check);
    } catch (const cpsample::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const cpsample::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
