// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_CONFIG_HPP
#define CPSAMPLE_CONFIG_HPP

#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cpsample/archive.hpp"
#include "cpsample/guidance.hpp"
#include "cpsample/schedule.hpp"
#include "cpsample/tensor.hpp"
#include "cpsample/training.hpp"

namespace cpsample {

// Configuration problems get their own type so the CLI can map them to a
// dedicated exit code.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct DatasetConfig {
    std::string kind;  // gauss-mixture-2d | tiny-shapes-8x8
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::uint64_t seed = 1;
};

struct ScheduleConfig {
    int steps = 0;
    double beta_min = 1e-4;
    double beta_max = 0.02;
};

struct DenoiserConfig {
    int width = 0;
    int depth = 0;
    int embed_dim = 32;
    double lr = 2e-4;
    int batch = 64;
    int steps = 0;
    double ema = 0.999;
    bool use_ema = true;  // sample with the EMA shadow
    std::uint64_t seed = 2;
};

struct ClassifierConfig {
    int width = 0;
    int depth = 0;
    int embed_dim = 32;
    double lr = 2e-4;
    int batch = 64;
    int steps = 0;
    double target_ce = 0.05;
    double ema = 0.999;
    bool use_ema = true;  // guide and audit with the EMA shadow
    std::uint64_t label_seed = 7;
    std::uint64_t seed = 5;
};

struct GuidanceSection {
    double alpha = 0.0;
    double scale = 0.0;
    double tau = 1e-3;
};

struct SampleConfig {
    std::size_t n = 0;
    int stride = 10;
    std::uint64_t seed = 3;
    bool trace = false;
};

struct RejectionConfig {
    std::size_t n = 0;  // 0: same as [sample] n
    std::size_t max_tries = 64;
};

struct AuditSection {
    double threshold = 0.0;       // exceedance similarity threshold
    double delta = 0.0;           // ball radius; 0 = auto from diameter and lipschitz
    double kappa = 0.1;
    std::size_t n_noise = 10;
    int mia_t = 0;                // 0: T/4
    std::size_t perm_replicates = 200;
    double perm_level = 0.05;
    double lipschitz_radius = 0.0;  // 0: auto (delta if set, else from diameter)
    std::size_t lipschitz_probes = 1024;
    int assumption_t_max = -1;    // -1: T/8
    std::string feature_mode = "identity";  // identity | classifier-trunk
    std::uint64_t seed = 4;
};

struct CheckSection {
    double min_base_exceedance = 0.03;
    double min_reduction = 5.0;
    double max_exceedance_p = 0.01;
    double min_mia_p = 0.01;
    double max_frechet_ratio = 2.0;
    bool require_mia_leak = true;
    bool require_mia_protected = true;
    bool require_lemma_pass = true;
    bool require_rejection_clean = true;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ScheduleConfig schedule;
    DenoiserConfig denoiser;
    ClassifierConfig classifier;
    GuidanceSection guidance;
    SampleConfig sample;
    RejectionConfig rejection;
    AuditSection audit;
    CheckSection check;
    std::string out_dir = "out";

    NoiseSchedule make_schedule() const {
        return linear_schedule(schedule.steps, schedule.beta_min, schedule.beta_max);
    }
    TrainConfig denoiser_train() const {
        TrainConfig c;
        c.lr = denoiser.lr;
        c.batch = denoiser.batch;
        c.steps = denoiser.steps;
        c.ema_rate = denoiser.ema;
        return c;
    }
    TrainConfig classifier_train() const {
        TrainConfig c;
        c.lr = classifier.lr;
        c.batch = classifier.batch;
        c.steps = classifier.steps;
        c.ema_rate = classifier.ema;
        c.target_ce = classifier.target_ce;
        return c;
    }
    GuidanceConfig guidance_config() const {
        GuidanceConfig g;
        g.alpha = guidance.alpha;
        g.scale = guidance.scale;
        g.tau = guidance.tau;
        g.stride = sample.stride;
        g.record_trace = sample.trace;
        return g;
    }
    int mia_t() const { return audit.mia_t > 0 ? audit.mia_t : std::max(1, schedule.steps / 4); }
    std::size_t rejection_n() const { return rejection.n > 0 ? rejection.n : sample.n; }

    void validate() const {
        const auto bad = [](const std::string& msg) { throw ConfigError("config: " + msg); };
        if (dataset.kind != "gauss-mixture-2d" && dataset.kind != "tiny-shapes-8x8")
            bad("[dataset] kind must be gauss-mixture-2d or tiny-shapes-8x8, got '" +
                dataset.kind + "'");
        if (dataset.n_train < 2) bad("[dataset] n_train must be at least 2");
        if (dataset.n_test < 1) bad("[dataset] n_test must be at least 1");
        if (schedule.steps < 2) bad("[schedule] steps must be at least 2");
        if (!(schedule.beta_min > 0.0 && schedule.beta_min <= schedule.beta_max &&
              schedule.beta_max < 1.0))
            bad("[schedule] need 0 < beta_min <= beta_max < 1");
        if (denoiser.width < 1 || denoiser.depth < 1) bad("[denoiser] width and depth >= 1");
        if (denoiser.embed_dim < 2 || denoiser.embed_dim % 2 != 0)
            bad("[denoiser] embed_dim must be even and >= 2");
        if (denoiser.lr <= 0.0) bad("[denoiser] lr must be positive");
        if (denoiser.batch < 1) bad("[denoiser] batch must be >= 1");
        if (denoiser.steps < 0) bad("[denoiser] steps must be >= 0");
        if (!(denoiser.ema >= 0.0 && denoiser.ema < 1.0)) bad("[denoiser] ema in [0,1)");
        if (classifier.width < 1 || classifier.depth < 1) bad("[classifier] width and depth >= 1");
        if (classifier.embed_dim < 2 || classifier.embed_dim % 2 != 0)
            bad("[classifier] embed_dim must be even and >= 2");
        if (classifier.lr <= 0.0) bad("[classifier] lr must be positive");
        if (classifier.batch < 1) bad("[classifier] batch must be >= 1");
        if (classifier.steps < 0) bad("[classifier] steps must be >= 0");
        if (!(classifier.ema >= 0.0 && classifier.ema < 1.0)) bad("[classifier] ema in [0,1)");
        if (classifier.target_ce <= 0.0) bad("[classifier] target_ce must be positive");
        if (!(guidance.alpha > 0.0 && guidance.alpha <= 0.5))
            bad("[guidance] alpha must lie in (0, 0.5]");
        if (guidance.scale < 0.0) bad("[guidance] scale must be non-negative");
        if (guidance.tau <= 0.0) bad("[guidance] tau must be positive");
        if (sample.n < 1) bad("[sample] n must be >= 1");
        if (sample.stride < 1) bad("[sample] stride must be >= 1");
        if (rejection.max_tries < 1) bad("[rejection] max_tries must be >= 1");
        if (!(audit.threshold > -1.0 && audit.threshold < 1.0))
            bad("[audit] threshold must lie in (-1, 1)");
        if (audit.delta < 0.0) bad("[audit] delta must be >= 0 (0 = auto)");
        if (!(audit.kappa > 0.0 && audit.kappa < 0.5)) bad("[audit] kappa in (0, 0.5)");
        if (audit.n_noise < 10) bad("[audit] n_noise must be >= 10");
        if (audit.mia_t < 0 || audit.mia_t > schedule.steps)
            bad("[audit] mia_t outside [0, steps]");
        if (audit.perm_replicates < 100) bad("[audit] perm_replicates must be >= 100");
        if (!(audit.perm_level > 0.0 && audit.perm_level < 1.0)) bad("[audit] perm_level in (0,1)");
        if (audit.lipschitz_radius < 0.0) bad("[audit] lipschitz_radius must be >= 0 (0 = auto)");
        if (audit.lipschitz_probes < 100) bad("[audit] lipschitz_probes must be >= 100");
        if (audit.assumption_t_max > schedule.steps)
            bad("[audit] assumption_t_max exceeds schedule steps");
        if (audit.feature_mode != "identity" && audit.feature_mode != "classifier-trunk")
            bad("[audit] feature_mode must be identity or classifier-trunk");
        // values below 1 only tolerate noise growth; 0 disables the gate
        if (check.min_reduction < 0.0) bad("[check] min_reduction must be >= 0");
        if (out_dir.empty()) bad("[output] dir must not be empty");
    }
};

namespace detail {

struct RawConfig {
    // section -> key -> (value, line); consumption tracked for unknown-key errors
    struct Val {
        std::string text;
        int line = 0;
        mutable bool used = false;
    };
    std::map<std::string, std::map<std::string, Val>> sections;

    const Val* lookup(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        if (s == sections.end()) return nullptr;
        auto k = s->second.find(key);
        if (k == s->second.end()) return nullptr;
        k->second.used = true;
        return &k->second;
    }
};

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

inline RawConfig parse_raw(const std::string& text) {
    RawConfig raw;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        const std::string line = trim(text.substr(pos, nl == std::string::npos ? nl : nl - pos));
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw ConfigError(str_cat("config: malformed section header at line ", line_no));
            section = trim(line.substr(1, line.size() - 2));
            raw.sections[section];  // empty sections allowed
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(
                str_cat("config: expected key = value at line ", line_no, ": '", line, "'"));
        if (section.empty())
            throw ConfigError(str_cat("config: key outside any [section] at line ", line_no));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(str_cat("config: empty key at line ", line_no));
        auto& sec = raw.sections[section];
        if (sec.count(key))
            throw ConfigError(
                str_cat("config: duplicate key [", section, "] ", key, " at line ", line_no));
        sec[key] = {value, line_no, false};
    }
    return raw;
}

struct Reader {
    const RawConfig& raw;

    std::string str(const std::string& sec, const std::string& key, const char* dflt) const {
        const auto* v = raw.lookup(sec, key);
        if (!v) {
            if (dflt) return dflt;
            throw ConfigError(str_cat("config: missing required field [", sec, "] ", key));
        }
        return v->text;
    }
    double num(const std::string& sec, const std::string& key, const double* dflt) const {
        const auto* v = raw.lookup(sec, key);
        if (!v) {
            if (dflt) return *dflt;
            throw ConfigError(str_cat("config: missing required field [", sec, "] ", key));
        }
        try {
            std::size_t used = 0;
            const double d = std::stod(v->text, &used);
            if (used != v->text.size()) throw std::invalid_argument("trailing");
            return d;
        } catch (const std::exception&) {
            throw ConfigError(str_cat("config: [", sec, "] ", key, " = '", v->text,
                                      "' is not a number (line ", v->line, ")"));
        }
    }
    double num_req(const std::string& sec, const std::string& key) const {
        return num(sec, key, nullptr);
    }
    double num_or(const std::string& sec, const std::string& key, double dflt) const {
        return num(sec, key, &dflt);
    }
    long long integer(const std::string& sec, const std::string& key, const long long* dflt) const {
        const auto* v = raw.lookup(sec, key);
        if (!v) {
            if (dflt) return *dflt;
            throw ConfigError(str_cat("config: missing required field [", sec, "] ", key));
        }
        try {
            std::size_t used = 0;
            const long long d = std::stoll(v->text, &used);
            if (used != v->text.size()) throw std::invalid_argument("trailing");
            return d;
        } catch (const std::exception&) {
            throw ConfigError(str_cat("config: [", sec, "] ", key, " = '", v->text,
                                      "' is not an integer (line ", v->line, ")"));
        }
    }
    long long int_req(const std::string& sec, const std::string& key) const {
        return integer(sec, key, nullptr);
    }
    long long int_or(const std::string& sec, const std::string& key, long long dflt) const {
        return integer(sec, key, &dflt);
    }
    std::uint64_t u64_or(const std::string& sec, const std::string& key,
                         std::uint64_t dflt) const {
        const auto* v = raw.lookup(sec, key);
        if (!v) return dflt;
        try {
            std::size_t used = 0;
            const std::uint64_t d = std::stoull(v->text, &used);
            if (used != v->text.size()) throw std::invalid_argument("trailing");
            return d;
        } catch (const std::exception&) {
            throw ConfigError(str_cat("config: [", sec, "] ", key, " = '", v->text,
                                      "' is not an unsigned integer (line ", v->line, ")"));
        }
    }
    bool bool_or(const std::string& sec, const std::string& key, bool dflt) const {
        const auto* v = raw.lookup(sec, key);
        if (!v) return dflt;
        if (v->text == "true" || v->text == "1") return true;
        if (v->text == "false" || v->text == "0") return false;
        throw ConfigError(str_cat("config: [", sec, "] ", key, " = '", v->text,
                                  "' is not a bool (line ", v->line, ")"));
    }
};

inline const std::set<std::string>& known_sections() {
    static const std::set<std::string> s = {"dataset",  "schedule",  "denoiser",
                                            "classifier", "guidance", "sample",
                                            "rejection", "audit",    "check",
                                            "output"};
    return s;
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
    const detail::RawConfig raw = detail::parse_raw(text);
    for (const auto& [sec, kv] : raw.sections) {
        (void)kv;
        if (!detail::known_sections().count(sec))
            throw ConfigError(str_cat("config: unknown section [", sec, "]"));
    }
    detail::Reader r{raw};
    ExperimentConfig c;
    c.dataset.kind = r.str("dataset", "kind", nullptr);
    c.dataset.n_train = std::size_t(r.int_req("dataset", "n_train"));
    c.dataset.n_test = std::size_t(r.int_req("dataset", "n_test"));
    c.dataset.seed = r.u64_or("dataset", "seed", 1);

    c.schedule.steps = int(r.int_req("schedule", "steps"));
    c.schedule.beta_min = r.num_or("schedule", "beta_min", 1e-4);
    c.schedule.beta_max = r.num_or("schedule", "beta_max", 0.02);

    c.denoiser.width = int(r.int_req("denoiser", "width"));
    c.denoiser.depth = int(r.int_req("denoiser", "depth"));
    c.denoiser.embed_dim = int(r.int_or("denoiser", "embed_dim", 32));
    c.denoiser.lr = r.num_or("denoiser", "lr", 2e-4);
    c.denoiser.batch = int(r.int_or("denoiser", "batch", 64));
    c.denoiser.steps = int(r.int_req("denoiser", "steps"));
    c.denoiser.ema = r.num_or("denoiser", "ema", 0.999);
    c.denoiser.use_ema = r.bool_or("denoiser", "use_ema", true);
    c.denoiser.seed = r.u64_or("denoiser", "seed", 2);

    c.classifier.width = int(r.int_req("classifier", "width"));
    c.classifier.depth = int(r.int_req("classifier", "depth"));
    c.classifier.embed_dim = int(r.int_or("classifier", "embed_dim", 32));
    c.classifier.lr = r.num_or("classifier", "lr", 2e-4);
    c.classifier.batch = int(r.int_or("classifier", "batch", 64));
    c.classifier.steps = int(r.int_req("classifier", "steps"));
    c.classifier.target_ce = r.num_or("classifier", "target_ce", 0.05);
    c.classifier.ema = r.num_or("classifier", "ema", 0.999);
    c.classifier.use_ema = r.bool_or("classifier", "use_ema", true);
    c.classifier.label_seed = r.u64_or("classifier", "label_seed", 7);
    c.classifier.seed = r.u64_or("classifier", "seed", 5);

    c.guidance.alpha = r.num_req("guidance", "alpha");
    c.guidance.scale = r.num_req("guidance", "scale");
    c.guidance.tau = r.num_or("guidance", "tau", 1e-3);

    c.sample.n = std::size_t(r.int_req("sample", "n"));
    c.sample.stride = int(r.int_or("sample", "stride", 10));
    c.sample.seed = r.u64_or("sample", "seed", 3);
    c.sample.trace = r.bool_or("sample", "trace", false);

    c.rejection.n = std::size_t(r.int_or("rejection", "n", 0));
    c.rejection.max_tries = std::size_t(r.int_or("rejection", "max_tries", 64));

    c.audit.threshold = r.num_req("audit", "threshold");
    c.audit.delta = r.num_or("audit", "delta", 0.0);
    c.audit.kappa = r.num_or("audit", "kappa", 0.1);
    c.audit.n_noise = std::size_t(r.int_or("audit", "n_noise", 10));
    c.audit.mia_t = int(r.int_or("audit", "mia_t", 0));
    c.audit.perm_replicates = std::size_t(r.int_or("audit", "perm_replicates", 200));
    c.audit.perm_level = r.num_or("audit", "perm_level", 0.05);
    c.audit.lipschitz_radius = r.num_or("audit", "lipschitz_radius", 0.0);
    c.audit.lipschitz_probes = std::size_t(r.int_or("audit", "lipschitz_probes", 1024));
    c.audit.assumption_t_max = int(r.int_or("audit", "assumption_t_max", -1));
    c.audit.feature_mode = r.str("audit", "feature_mode", "identity");
    c.audit.seed = r.u64_or("audit", "seed", 4);

    c.check.min_base_exceedance = r.num_or("check", "min_base_exceedance", 0.03);
    c.check.min_reduction = r.num_or("check", "min_reduction", 5.0);
    c.check.max_exceedance_p = r.num_or("check", "max_exceedance_p", 0.01);
    c.check.min_mia_p = r.num_or("check", "min_mia_p", 0.01);
    c.check.max_frechet_ratio = r.num_or("check", "max_frechet_ratio", 2.0);
    c.check.require_mia_leak = r.bool_or("check", "require_mia_leak", true);
    c.check.require_mia_protected = r.bool_or("check", "require_mia_protected", true);
    c.check.require_lemma_pass = r.bool_or("check", "require_lemma_pass", true);
    c.check.require_rejection_clean = r.bool_or("check", "require_rejection_clean", true);

    c.out_dir = r.str("output", "dir", "out");

    for (const auto& [sec, kv] : raw.sections)
        for (const auto& [key, val] : kv)
            if (!val.used)
                throw ConfigError(
                    str_cat("config: unknown key [", sec, "] ", key, " (line ", val.line, ")"));
    c.validate();
    return c;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::string text;
    try {
        text = read_file_bytes(path);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    try {
        return parse_config_text(text);
    } catch (const ConfigError& e) {
        throw ConfigError(str_cat(path, ": ", e.what()));
    }
}

inline std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os.precision(17);
    const auto b = [](bool v) { return v ? "true" : "false"; };
    os << "[dataset]\n"
       << "kind = " << c.dataset.kind << "\n"
       << "n_train = " << c.dataset.n_train << "\n"
       << "n_test = " << c.dataset.n_test << "\n"
       << "seed = " << c.dataset.seed << "\n\n";
    os << "[schedule]\n"
       << "steps = " << c.schedule.steps << "\n"
       << "beta_min = " << c.schedule.beta_min << "\n"
       << "beta_max = " << c.schedule.beta_max << "\n\n";
    os << "[denoiser]\n"
       << "width = " << c.denoiser.width << "\n"
       << "depth = " << c.denoiser.depth << "\n"
       << "embed_dim = " << c.denoiser.embed_dim << "\n"
       << "lr = " << c.denoiser.lr << "\n"
       << "batch = " << c.denoiser.batch << "\n"
       << "steps = " << c.denoiser.steps << "\n"
       << "ema = " << c.denoiser.ema << "\n"
       << "use_ema = " << b(c.denoiser.use_ema) << "\n"
       << "seed = " << c.denoiser.seed << "\n\n";
    os << "[classifier]\n"
       << "width = " << c.classifier.width << "\n"
       << "depth = " << c.classifier.depth << "\n"
       << "embed_dim = " << c.classifier.embed_dim << "\n"
       << "lr = " << c.classifier.lr << "\n"
       << "batch = " << c.classifier.batch << "\n"
       << "steps = " << c.classifier.steps << "\n"
       << "target_ce = " << c.classifier.target_ce << "\n"
       << "ema = " << c.classifier.ema << "\n"
       << "use_ema = " << b(c.classifier.use_ema) << "\n"
       << "label_seed = " << c.classifier.label_seed << "\n"
       << "seed = " << c.classifier.seed << "\n\n";
    os << "[guidance]\n"
       << "alpha = " << c.guidance.alpha << "\n"
       << "scale = " << c.guidance.scale << "\n"
       << "tau = " << c.guidance.tau << "\n\n";
    os << "[sample]\n"
       << "n = " << c.sample.n << "\n"
       << "stride = " << c.sample.stride << "\n"
       << "seed = " << c.sample.seed << "\n"
       << "trace = " << b(c.sample.trace) << "\n\n";
    os << "[rejection]\n"
       << "n = " << c.rejection.n << "\n"
       << "max_tries = " << c.rejection.max_tries << "\n\n";
    os << "[audit]\n"
       << "threshold = " << c.audit.threshold << "\n"
       << "delta = " << c.audit.delta << "\n"
       << "kappa = " << c.audit.kappa << "\n"
       << "n_noise = " << c.audit.n_noise << "\n"
       << "mia_t = " << c.audit.mia_t << "\n"
       << "perm_replicates = " << c.audit.perm_replicates << "\n"
       << "perm_level = " << c.audit.perm_level << "\n"
       << "lipschitz_radius = " << c.audit.lipschitz_radius << "\n"
       << "lipschitz_probes = " << c.audit.lipschitz_probes << "\n"
       << "assumption_t_max = " << c.audit.assumption_t_max << "\n"
       << "feature_mode = " << c.audit.feature_mode << "\n"
       << "seed = " << c.audit.seed << "\n\n";
    os << "[check]\n"
       << "min_base_exceedance = " << c.check.min_base_exceedance << "\n"
       << "min_reduction = " << c.check.min_reduction << "\n"
       << "max_exceedance_p = " << c.check.max_exceedance_p << "\n"
       << "min_mia_p = " << c.check.min_mia_p << "\n"
       << "max_frechet_ratio = " << c.check.max_frechet_ratio << "\n"
       << "require_mia_leak = " << b(c.check.require_mia_leak) << "\n"
       << "require_mia_protected = " << b(c.check.require_mia_protected) << "\n"
       << "require_lemma_pass = " << b(c.check.require_lemma_pass) << "\n"
       << "require_rejection_clean = " << b(c.check.require_rejection_clean) << "\n\n";
    os << "[output]\n"
       << "dir = " << c.out_dir << "\n";
    return os.str();
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Identifies the experiment; the output location is deliberately excluded.
inline std::string config_hash(const ExperimentConfig& c) {
    ExperimentConfig keyed = c;
    keyed.out_dir = "out";
    const std::uint64_t h = fnv1a64(serialize_config(keyed));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cpsample

#endif
