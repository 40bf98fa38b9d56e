// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_CHECKPOINT_HPP
#define CPSAMPLE_CHECKPOINT_HPP

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cpsample/archive.hpp"
#include "cpsample/models.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

namespace detail {

inline void put_mlp(TensorArchive& ar, const std::string& prefix, const MlpParams& p) {
    for (std::size_t l = 0; l < p.w.size(); ++l) ar.put(prefix + "w" + std::to_string(l), p.w[l]);
    for (std::size_t l = 0; l < p.b.size(); ++l) ar.put(prefix + "b" + std::to_string(l), p.b[l]);
}

inline MlpParams get_mlp(const TensorArchive& ar, const std::string& prefix) {
    std::vector<Tensor> ws, bs;
    for (std::size_t l = 0;; ++l) {
        const Tensor* w = ar.find(prefix + "w" + std::to_string(l));
        if (!w) break;
        ws.push_back(*w);
        bs.push_back(ar.get(prefix + "b" + std::to_string(l)));
    }
    CPS_REQUIRE(!ws.empty(), "checkpoint: no layers under '", prefix, "'");
    MlpParams p;
    p.spec.in = ws.front().shape[0];
    p.spec.out = ws.back().shape[1];
    for (std::size_t l = 0; l + 1 < ws.size(); ++l) p.spec.hidden.push_back(ws[l].shape[1]);
    for (std::size_t l = 0; l < ws.size(); ++l) {
        CPS_REQUIRE(ws[l].ndim() == 2 && bs[l].ndim() == 1 && bs[l].shape[0] == ws[l].shape[1],
                    "checkpoint: inconsistent layer ", l, " under '", prefix, "'");
        if (l > 0)
            CPS_REQUIRE(ws[l].shape[0] == ws[l - 1].shape[1],
                        "checkpoint: layer width mismatch at ", l, " under '", prefix, "'");
    }
    p.w = std::move(ws);
    p.b = std::move(bs);
    return p;
}

}  // namespace detail

inline void save_denoiser(const std::string& path, const DenoiserModel& raw,
                          const DenoiserModel& ema, const std::string& extra_metadata = "") {
    TensorArchive ar;
    detail::put_mlp(ar, "denoiser.", raw.net);
    detail::put_mlp(ar, "ema.", ema.net);
    nlohmann::ordered_json meta;
    meta["kind"] = "denoiser";
    meta["embed_dim"] = raw.embed_dim;
    meta["steps"] = raw.steps;
    if (!extra_metadata.empty()) meta["extra"] = nlohmann::ordered_json::parse(extra_metadata);
    ar.metadata = meta.dump();
    write_archive(path, ar);
}

// Returns (raw, ema); extra_out (if given) receives the saved extra metadata.
inline std::pair<DenoiserModel, DenoiserModel> load_denoiser(const std::string& path,
                                                             std::string* extra_out = nullptr) {
    const TensorArchive ar = read_archive(path);
    // ordered parse so extra metadata round trips byte for byte
    nlohmann::ordered_json meta;
    try {
        meta = nlohmann::ordered_json::parse(ar.metadata);
    } catch (const nlohmann::json::exception& e) {
        fail("load_denoiser: bad metadata in '", path, "': ", e.what());
    }
    CPS_REQUIRE(meta.value("kind", "") == "denoiser", "load_denoiser: '", path,
                "' is not a denoiser checkpoint");
    if (extra_out) *extra_out = meta.contains("extra") ? meta["extra"].dump() : "";
    DenoiserModel raw, ema;
    raw.net = detail::get_mlp(ar, "denoiser.");
    ema.net = detail::get_mlp(ar, "ema.");
    raw.embed_dim = ema.embed_dim = meta.at("embed_dim").get<int>();
    raw.steps = ema.steps = meta.at("steps").get<int>();
    return {std::move(raw), std::move(ema)};
}

inline void save_classifier(const std::string& path, const ClassifierModel& raw,
                            const ClassifierModel& ema, const LabelSet& labels,
                            const std::string& extra_metadata = "") {
    TensorArchive ar;
    detail::put_mlp(ar, "classifier.t.", raw.trunk);
    ar.put("classifier.h.w", raw.head_w);
    ar.put("classifier.h.b", raw.head_b);
    detail::put_mlp(ar, "ema.t.", ema.trunk);
    ar.put("ema.h.w", ema.head_w);
    ar.put("ema.h.b", ema.head_b);
    Tensor lab({labels.bits.size()});
    for (std::size_t i = 0; i < labels.bits.size(); ++i) lab.at(i) = double(labels.bits[i]);
    ar.put("labels", std::move(lab));
    nlohmann::ordered_json meta;
    meta["kind"] = "classifier";
    meta["embed_dim"] = raw.embed_dim;
    meta["steps"] = raw.steps;
    meta["label_seed"] = labels.seed;
    if (!extra_metadata.empty()) meta["extra"] = nlohmann::ordered_json::parse(extra_metadata);
    ar.metadata = meta.dump();
    write_archive(path, ar);
}

struct ClassifierCheckpoint {
    ClassifierModel raw;
    ClassifierModel ema;
    LabelSet labels;
};

inline ClassifierCheckpoint load_classifier(const std::string& path,
                                            std::string* extra_out = nullptr) {
    const TensorArchive ar = read_archive(path);
    nlohmann::ordered_json meta;
    try {
        meta = nlohmann::ordered_json::parse(ar.metadata);
    } catch (const nlohmann::json::exception& e) {
        fail("load_classifier: bad metadata in '", path, "': ", e.what());
    }
    CPS_REQUIRE(meta.value("kind", "") == "classifier", "load_classifier: '", path,
                "' is not a classifier checkpoint");
    if (extra_out) *extra_out = meta.contains("extra") ? meta["extra"].dump() : "";
    ClassifierCheckpoint ck;
    ck.raw.trunk = detail::get_mlp(ar, "classifier.t.");
    ck.raw.head_w = ar.get("classifier.h.w");
    ck.raw.head_b = ar.get("classifier.h.b");
    ck.ema.trunk = detail::get_mlp(ar, "ema.t.");
    ck.ema.head_w = ar.get("ema.h.w");
    ck.ema.head_b = ar.get("ema.h.b");
    ck.raw.embed_dim = ck.ema.embed_dim = meta.at("embed_dim").get<int>();
    ck.raw.steps = ck.ema.steps = meta.at("steps").get<int>();
    const Tensor& lab = ar.get("labels");
    ck.labels.seed = meta.at("label_seed").get<std::uint64_t>();
    ck.labels.bits.resize(lab.numel());
    for (std::size_t i = 0; i < lab.numel(); ++i) {
        CPS_REQUIRE(lab.data[i] == 0.0 || lab.data[i] == 1.0,
                    "load_classifier: labels tensor must be 0/1");
        ck.labels.bits[i] = std::uint8_t(lab.data[i]);
    }
    return ck;
}

}  // namespace cpsample

#endif
