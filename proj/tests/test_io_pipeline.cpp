// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#include "catch2/catch_amalgamated.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <string>

#include "cpsample/cpsample.hpp"

using namespace cpsample;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// minimal config: required keys only, everything else defaulted
const char* kMinimalConfig = R"(
[dataset]
kind = gauss-mixture-2d
n_train = 32
n_test = 32

[schedule]
steps = 20

[denoiser]
width = 16
depth = 1
steps = 40

[classifier]
width = 16
depth = 1
steps = 40

[guidance]
alpha = 0.25
scale = 2.0

[sample]
n = 32

[audit]
threshold = 0.5
)";

}  // namespace

TEST_CASE("tensor archive round trips bitwise including odd values") {
    TensorArchive ar;
    Rng rng(100);
    Tensor a = rng.normal_tensor({std::size_t(3), std::size_t(4)});
    Tensor odd({std::size_t(5)});
    odd.data = {0.0, -0.0, std::numeric_limits<double>::infinity(),
                -std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::quiet_NaN()};
    Tensor cube = rng.normal_tensor({std::size_t(2), std::size_t(3), std::size_t(2)});
    ar.put("weights", a);
    ar.put("specials", odd);
    ar.put("cube", cube);
    ar.metadata = std::string("meta\0with nul", 13);

    const std::string bytes = encode_archive(ar);
    const TensorArchive back = decode_archive(bytes);
    REQUIRE(back.entries.size() == 3);
    REQUIRE(back.metadata == ar.metadata);
    REQUIRE(back.get("weights").data == a.data);
    REQUIRE(back.get("weights").shape == a.shape);
    REQUIRE(back.get("cube").shape == cube.shape);
    const Tensor& sp = back.get("specials");
    REQUIRE(sp.data[0] == 0.0);
    REQUIRE(std::signbit(sp.data[1]));
    REQUIRE(std::isinf(sp.data[2]));
    REQUIRE(std::isnan(sp.data[4]));

    REQUIRE(back.find("nothing") == nullptr);
    REQUIRE_THROWS_AS(back.get("nothing"), Error);
    TensorArchive dup;
    dup.put("x", a);
    REQUIRE_THROWS_AS(dup.put("x", a), Error);
    REQUIRE_THROWS_AS(dup.put("", a), Error);
    REQUIRE_THROWS_AS(dup.put("y", a, 3), Error);
}

TEST_CASE("f32 storage widens back to the nearest float") {
    TensorArchive ar;
    Tensor t({std::size_t(3)});
    t.data = {0.1, -2.5, 1e-10};
    ar.put("half", t, 1);
    const TensorArchive back = decode_archive(encode_archive(ar));
    for (std::size_t i = 0; i < 3; ++i)
        REQUIRE(back.get("half").data[i] == double(float(t.data[i])));
    REQUIRE(back.entries[0].dtype == 1);
}

TEST_CASE("archive decoding rejects every corruption") {
    TensorArchive ar;
    ar.put("aa", Tensor::zeros({std::size_t(2)}));
    ar.put("ab", Tensor::zeros({std::size_t(2)}));
    ar.metadata = "m";
    const std::string good = encode_archive(ar);
    REQUIRE_NOTHROW(decode_archive(good));

    // every truncation point fails cleanly
    for (std::size_t cut = 0; cut < good.size(); ++cut)
        REQUIRE_THROWS_AS(decode_archive(good.substr(0, cut)), Error);
    REQUIRE_THROWS_AS(decode_archive(good + "x"), Error);

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    REQUIRE_THROWS_AS(decode_archive(bad_magic), Error);

    std::string bad_version = good;
    bad_version[4] = 2;
    REQUIRE_THROWS_WITH(decode_archive(bad_version), ContainsSubstring("version"));

    std::string dup_name = good;
    const std::size_t nb = dup_name.find("ab");
    REQUIRE(nb != std::string::npos);
    dup_name[nb + 1] = 'a';
    REQUIRE_THROWS_WITH(decode_archive(dup_name), ContainsSubstring("duplicate"));

    std::string bad_dtype = good;
    bad_dtype[bad_dtype.find("aa") + 2] = 7;
    REQUIRE_THROWS_WITH(decode_archive(bad_dtype), ContainsSubstring("dtype"));

    // empty archive with metadata only is fine
    TensorArchive empty;
    empty.metadata = "only text";
    const TensorArchive eback = decode_archive(encode_archive(empty));
    REQUIRE(eback.entries.empty());
    REQUIRE(eback.metadata == "only text");
}

TEST_CASE("archive files round trip and errors carry the path") {
    const std::string path = tmp_path("cps_test_archive.cpta");
    TensorArchive ar;
    Rng rng(101);
    ar.put("t", rng.normal_tensor({std::size_t(4), std::size_t(2)}));
    ar.metadata = "{}";
    write_archive(path, ar);
    const TensorArchive back = read_archive(path);
    REQUIRE(back.get("t").data == ar.get("t").data);

    write_file_bytes(path, "CPTAgarbage");
    REQUIRE_THROWS_WITH(read_archive(path), ContainsSubstring("cps_test_archive"));
    REQUIRE_THROWS_AS(read_archive(tmp_path("cps_does_not_exist.cpta")), Error);
    std::filesystem::remove(path);
}

TEST_CASE("config parsing fills defaults and round trips through serialization") {
    const ExperimentConfig c = parse_config_text(kMinimalConfig);
    REQUIRE(c.dataset.kind == "gauss-mixture-2d");
    REQUIRE(c.dataset.n_train == 32);
    REQUIRE(c.schedule.steps == 20);
    REQUIRE(c.schedule.beta_min == 1e-4);
    REQUIRE(c.denoiser.ema == 0.999);
    REQUIRE(c.denoiser.use_ema);
    REQUIRE(c.classifier.label_seed == 7);
    REQUIRE(c.guidance.tau == 1e-3);
    REQUIRE(c.sample.stride == 10);
    REQUIRE(c.rejection.max_tries == 64);
    REQUIRE(c.audit.perm_replicates == 200);
    REQUIRE(c.audit.feature_mode == "identity");
    REQUIRE(c.check.min_reduction == 5.0);
    REQUIRE(c.out_dir == "out");
    REQUIRE(c.mia_t() == 5);            // steps / 4
    REQUIRE(c.rejection_n() == 32);     // falls back to [sample] n

    // serialize -> parse -> serialize is a fixpoint
    const std::string s1 = serialize_config(c);
    const ExperimentConfig c2 = parse_config_text(s1);
    REQUIRE(serialize_config(c2) == s1);

    // the hash identifies the experiment, not its output location
    ExperimentConfig moved = c;
    moved.out_dir = "elsewhere";
    REQUIRE(config_hash(moved) == config_hash(c));
    ExperimentConfig reseeded = c;
    reseeded.dataset.seed = 99;
    REQUIRE(config_hash(reseeded) != config_hash(c));
}

TEST_CASE("config parser pinpoints structural mistakes") {
    REQUIRE_THROWS_AS(parse_config_text("kind = x\n"), ConfigError);  // key outside section
    REQUIRE_THROWS_AS(parse_config_text("[dataset\nkind = x\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("[dataset]\njust words\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("[dataset]\n= 3\n"), ConfigError);
    REQUIRE_THROWS_WITH(parse_config_text("[dataset]\nkind = a\nkind = b\n"),
                        ContainsSubstring("duplicate key"));
    REQUIRE_THROWS_WITH(parse_config_text("[nonsense]\n"), ContainsSubstring("unknown section"));

    std::string cfg = kMinimalConfig;
    // reopening a section is fine, repeating one of its keys is not
    REQUIRE_NOTHROW(parse_config_text(cfg + "\n[audit]\n"));
    REQUIRE_THROWS_WITH(parse_config_text(cfg + "\n[audit]\nthreshold = 0.4\n"),
                        ContainsSubstring("duplicate"));
    REQUIRE_THROWS_WITH(parse_config_text(cfg + "typo_key = 1\n"),
                        ContainsSubstring("unknown key"));

    // missing required field names the section and key
    std::string nokind = cfg;
    const std::size_t kpos = nokind.find("kind = gauss-mixture-2d");
    nokind.erase(kpos, nokind.find('\n', kpos) - kpos);
    REQUIRE_THROWS_WITH(parse_config_text(nokind), ContainsSubstring("[dataset] kind"));

    REQUIRE_THROWS_WITH(parse_config_text(cfg + "mia_t = soon\n"),
                        ContainsSubstring("not an integer"));
    REQUIRE_THROWS_WITH(parse_config_text(cfg + "perm_level = high\n"),
                        ContainsSubstring("not a number"));
    REQUIRE_THROWS_WITH(parse_config_text(cfg + "\n[sample]\ntrace = maybe\n"),
                        ContainsSubstring("not a bool"));

    // comments and blank lines pass through
    REQUIRE_NOTHROW(parse_config_text(std::string("# top\n; alt\n") + kMinimalConfig));

    // semantic validation failures
    auto tweak = [&](const std::string& from, const std::string& to) {
        std::string t = cfg;
        t.replace(t.find(from), from.size(), to);
        return t;
    };
    REQUIRE_THROWS_WITH(parse_config_text(tweak("alpha = 0.25", "alpha = 0.7")),
                        ContainsSubstring("alpha"));
    REQUIRE_THROWS_WITH(parse_config_text(tweak("steps = 20", "steps = 1")),
                        ContainsSubstring("steps"));
    REQUIRE_THROWS_WITH(parse_config_text(tweak("kind = gauss-mixture-2d", "kind = cifar")),
                        ContainsSubstring("kind"));

    REQUIRE_THROWS_AS(parse_config_file(tmp_path("cps_missing.ini")), ConfigError);
}

TEST_CASE("dataset generation is deterministic with pairwise-distinct rows") {
    DatasetConfig spec;
    spec.kind = "gauss-mixture-2d";
    spec.n_train = 48;
    spec.n_test = 16;
    spec.seed = 11;
    const DatasetSplit a = generate_dataset(spec);
    const DatasetSplit b = generate_dataset(spec);
    REQUIRE(a.train.data == b.train.data);
    REQUIRE(a.test.data == b.test.data);
    REQUIRE(a.train.shape[0] == 48);
    REQUIRE(a.test.shape[0] == 16);
    REQUIRE(a.train.shape[1] == 2);

    spec.seed = 12;
    const DatasetSplit c = generate_dataset(spec);
    REQUIRE(c.train.data != a.train.data);

    // no duplicates anywhere across both splits
    std::set<std::vector<double>> rows;
    for (std::size_t i = 0; i < 48; ++i)
        rows.insert({a.train.at(i, 0), a.train.at(i, 1)});
    for (std::size_t i = 0; i < 16; ++i) rows.insert({a.test.at(i, 0), a.test.at(i, 1)});
    REQUIRE(rows.size() == 64);

    // points sit near the mode ring of radius 4
    for (std::size_t i = 0; i < 48; ++i) {
        const double r = std::hypot(a.train.at(i, 0), a.train.at(i, 1));
        REQUIRE(r > 2.0);
        REQUIRE(r < 6.0);
    }

    DatasetConfig img = spec;
    img.kind = "tiny-shapes-8x8";
    img.n_train = 8;
    img.n_test = 4;
    const DatasetSplit s = generate_dataset(img);
    REQUIRE(s.train.shape[1] == 64);
    for (double v : s.train.data) {
        REQUIRE(v >= -1.0);
        REQUIRE(v <= 1.0);
    }

    // diameter of a hand-made triangle
    Tensor tri({std::size_t(3), std::size_t(2)});
    tri.at(1, 0) = 3.0;
    tri.at(2, 1) = 4.0;
    REQUIRE(dataset_diameter(tri) == Approx(5.0));
    REQUIRE_THROWS_AS(dataset_diameter(Tensor({std::size_t(1), std::size_t(2)})), Error);
}

TEST_CASE("model checkpoints restore parameters bitwise") {
    Rng rng(102);
    const NoiseSchedule sched = linear_schedule(15, 1e-3, 0.02);
    const std::string dpath = tmp_path("cps_test_den.cpta");
    const std::string cpath = tmp_path("cps_test_cls.cpta");

    DenoiserModel den = make_denoiser(3, 12, 2, 8, sched.steps, rng);
    DenoiserModel ema = make_denoiser(3, 12, 2, 8, sched.steps, rng);
    save_denoiser(dpath, den, ema, R"({"note":7})");
    std::string extra;
    const auto [draw, dema] = load_denoiser(dpath, &extra);
    REQUIRE(extra == R"({"note":7})");
    REQUIRE(draw.embed_dim == 8);
    REQUIRE(draw.steps == 15);
    REQUIRE(draw.net.w.size() == den.net.w.size());
    for (std::size_t l = 0; l < den.net.w.size(); ++l) {
        REQUIRE(draw.net.w[l].data == den.net.w[l].data);
        REQUIRE(dema.net.w[l].data == ema.net.w[l].data);
        REQUIRE(draw.net.b[l].data == den.net.b[l].data);
    }

    ClassifierModel cls = make_classifier(3, 10, 1, 8, sched.steps, rng);
    ClassifierModel cls_ema = make_classifier(3, 10, 1, 8, sched.steps, rng);
    const LabelSet labels = assign_random_labels(20, 5);
    save_classifier(cpath, cls, cls_ema, labels);
    const ClassifierCheckpoint ck = load_classifier(cpath);
    REQUIRE(ck.raw.head_w.data == cls.head_w.data);
    REQUIRE(ck.ema.head_b.data == cls_ema.head_b.data);
    REQUIRE(ck.raw.trunk.w[0].data == cls.trunk.w[0].data);
    REQUIRE(ck.labels.bits == labels.bits);
    REQUIRE(ck.labels.seed == labels.seed);

    // kind checks catch crossed files
    REQUIRE_THROWS_WITH(load_classifier(dpath), ContainsSubstring("not a classifier"));
    REQUIRE_THROWS_WITH(load_denoiser(cpath), ContainsSubstring("not a denoiser"));

    // tampered label bits are rejected
    TensorArchive tam = read_archive(cpath);
    for (auto& e : tam.entries)
        if (e.name == "labels") e.tensor.data[0] = 0.5;
    write_archive(cpath, tam);
    REQUIRE_THROWS_WITH(load_classifier(cpath), ContainsSubstring("0/1"));

    std::filesystem::remove(dpath);
    std::filesystem::remove(cpath);
}

TEST_CASE("report files carry the root key, config hash, and build id") {
    const std::string path = tmp_path("cps_test_report.json");
    ojson body;
    body["value"] = 3.5;
    write_report_json(path, "demo_report", body, "cafe0123");
    const auto parsed = nlohmann::json::parse(read_file_bytes(path));
    REQUIRE(parsed.at("demo_report").at("value") == 3.5);
    REQUIRE(parsed.at("config_hash") == "cafe0123");
    REQUIRE(parsed.contains("build_id"));

    const std::string hpath = tmp_path("cps_test_hist.csv");
    std::vector<std::size_t> bins(50, 0);
    bins[0] = 3;
    bins[49] = 1;
    write_histogram_csv(hpath, bins);
    const std::string csv = read_file_bytes(hpath);
    REQUIRE(csv.substr(0, 20) == "bin_lo,bin_hi,count\n");
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 51);
    REQUIRE_THROWS_AS(write_histogram_csv(hpath, std::vector<std::size_t>(10, 0)), Error);

    std::filesystem::remove(path);
    std::filesystem::remove(hpath);
}

TEST_CASE("master seed fan-out pins every stage seed") {
    const ExperimentConfig base = parse_config_text(kMinimalConfig);
    const ExperimentConfig pinned = apply_master_seed(base, 77);
    REQUIRE(pinned.dataset.seed == mix_seed(77, 1));
    REQUIRE(pinned.denoiser.seed == mix_seed(77, 2));
    REQUIRE(pinned.classifier.seed == mix_seed(77, 3));
    REQUIRE(pinned.classifier.label_seed == mix_seed(77, 4));
    REQUIRE(pinned.sample.seed == mix_seed(77, 5));
    REQUIRE(pinned.audit.seed == mix_seed(77, 6));
    const ExperimentConfig same = apply_master_seed(base, 0);
    REQUIRE(serialize_config(same) == serialize_config(base));
}

TEST_CASE("pipeline runs, resumes from artifacts, and detects stale files") {
    const std::string dir = tmp_path("cps_test_pipeline");
    std::filesystem::remove_all(dir);

    ExperimentConfig cfg = parse_config_text(kMinimalConfig);
    cfg.out_dir = dir;
    cfg.sample.trace = true;
    cfg.sample.stride = 5;
    cfg.denoiser.batch = 16;
    cfg.classifier.batch = 16;
    cfg.audit.perm_replicates = 100;
    cfg.rejection.max_tries = 8;

    PipelineOptions opts;
    opts.threads = 2;
    const PipelineResult first = run_pipeline(cfg, opts, true);
    REQUIRE(first.checked);
    REQUIRE(first.summary.contains("checks"));
    REQUIRE(first.summary.at("audits").contains("similarity"));
    REQUIRE(first.summary.at("audits").contains("permutation"));
    REQUIRE(first.summary.at("dataset").at("dim") == 2);

    const RunPaths paths = make_paths(dir);
    for (const std::string* p :
         {&paths.config_snapshot, &paths.dataset, &paths.denoiser, &paths.classifier,
          &paths.samples_base, &paths.samples_cp, &paths.samples_rej, &paths.trace_cp,
          &paths.similarity_base, &paths.similarity_base_hist, &paths.similarity_cp,
          &paths.similarity_cp_hist, &paths.mia_base, &paths.mia_cp, &paths.permutation,
          &paths.lemma, &paths.frechet_base, &paths.frechet_cp, &paths.summary})
        REQUIRE(std::filesystem::exists(*p));

    // summary.json mirrors the in-memory result and names the config
    const auto on_disk = nlohmann::json::parse(read_file_bytes(paths.summary));
    REQUIRE(on_disk.at("config_hash") == config_hash(cfg));
    REQUIRE(on_disk.at("summary").at("checks_pass") == first.check_pass);

    // resumed run reuses artifacts yet reports identical numbers
    const PipelineResult second = run_pipeline(cfg, opts, true);
    REQUIRE(second.summary == first.summary);

    // forced recompute regenerates everything to the same values
    PipelineOptions forced = opts;
    forced.force = true;
    const PipelineResult third = run_pipeline(cfg, forced, true);
    REQUIRE(third.summary == first.summary);

    // artifacts from a different experiment refuse to be reused silently
    ExperimentConfig stale = cfg;
    stale.dataset.seed = 999;
    REQUIRE_THROWS_WITH(run_pipeline(stale, opts, false), ContainsSubstring("rerun with --force"));
    const PipelineResult fresh = run_pipeline(stale, forced, false);
    REQUIRE_FALSE(fresh.checked);
    REQUIRE(fresh.summary != first.summary);

    std::filesystem::remove_all(dir);
}
