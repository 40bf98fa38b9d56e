// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_TRAINING_HPP
#define CPSAMPLE_TRAINING_HPP

#include <string>
#include <utility>
#include <vector>

#include "cpsample/diffusion.hpp"
#include "cpsample/models.hpp"
#include "cpsample/rng.hpp"

namespace cpsample {

struct TrainConfig {
    double lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch = 64;
    std::size_t steps = 0;
    double ema_rate = 0.999;
    double target_ce = 0.05;     // classifier early-stop target at t=0
    std::size_t eval_every = 100;  // classifier early-stop check interval

    void validate() const {
        CPS_REQUIRE(lr > 0.0, "train config: lr must be positive");
        CPS_REQUIRE(batch > 0, "train config: batch must be positive");
        CPS_REQUIRE(ema_rate >= 0.0 && ema_rate < 1.0, "train config: ema_rate in [0,1) required");
        CPS_REQUIRE(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
                    "train config: adam betas in [0,1) required");
    }
};

class Adam {
  public:
    Adam(std::vector<Tensor*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
        for (Tensor* p : params_) {
            m_.emplace_back(p->shape);
            v_.emplace_back(p->shape);
        }
    }

    void step(const std::vector<const Tensor*>& grads) {
        CPS_REQUIRE(grads.size() == params_.size(), "adam: gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, double(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = *params_[k];
            const Tensor& g = *grads[k];
            CPS_REQUIRE(g.same_shape(p), "adam: gradient shape mismatch");
            for (std::size_t i = 0; i < p.numel(); ++i) {
                m_[k].data[i] = cfg_.adam_beta1 * m_[k].data[i] + (1.0 - cfg_.adam_beta1) * g.data[i];
                v_[k].data[i] =
                    cfg_.adam_beta2 * v_[k].data[i] + (1.0 - cfg_.adam_beta2) * g.data[i] * g.data[i];
                const double mh = m_[k].data[i] / bc1;
                const double vh = v_[k].data[i] / bc2;
                p.data[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
            }
        }
    }

  private:
    std::vector<Tensor*> params_;
    TrainConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

// shadow <- rate * shadow + (1 - rate) * current. rate = 0 tracks exactly.
inline void ema_update(const std::vector<const Tensor*>& current, std::vector<Tensor*>& shadow,
                       double rate) {
    CPS_REQUIRE(current.size() == shadow.size(), "ema_update: tensor count mismatch");
    CPS_REQUIRE(rate >= 0.0 && rate < 1.0, "ema_update: rate in [0,1) required");
    for (std::size_t k = 0; k < current.size(); ++k) {
        Tensor& s = *shadow[k];
        const Tensor& c = *current[k];
        CPS_REQUIRE(s.same_shape(c), "ema_update: shape mismatch");
        for (std::size_t i = 0; i < s.numel(); ++i)
            s.data[i] = rate * s.data[i] + (1.0 - rate) * c.data[i];
    }
}

template <typename ModelT>
struct TrainResult {
    ModelT raw;
    ModelT ema;
    std::vector<double> loss_trace;
    std::size_t steps_run = 0;
    bool target_reached = false;  // classifier only
    double final_metric = 0.0;    // classifier: last measured clean CE
};

inline Tensor gather_rows(const Tensor& data, const std::vector<std::size_t>& idx) {
    Tensor out({idx.size(), data.shape[1]});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < data.shape[1]; ++j) out.at(i, j) = data.at(idx[i], j);
    return out;
}

// Deterministic single-stream training loop for the noise-prediction net.
// Aborts with a diagnostic if the loss leaves the finite range.
inline TrainResult<DenoiserModel> train_denoiser(const Tensor& data, const NoiseSchedule& sched,
                                                 std::size_t width, std::size_t depth,
                                                 int embed_dim, const TrainConfig& cfg,
                                                 std::uint64_t seed) {
    cfg.validate();
    CPS_REQUIRE(data.ndim() == 2 && data.shape[0] > 0, "train_denoiser: non-empty [n x d] data");
    const std::size_t n = data.shape[0], d = data.shape[1];
    const std::size_t batch = cfg.batch < n ? cfg.batch : n;

    Rng init_rng = Rng::stream(seed, 0x696e6974);
    TrainResult<DenoiserModel> res;
    res.raw = make_denoiser(d, width, depth, embed_dim, sched.steps, init_rng);
    res.ema = res.raw;

    Adam opt(res.raw.net.all_tensors(), cfg);
    Rng rng = Rng::stream(seed, 0x747261696e);
    res.loss_trace.reserve(cfg.steps);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> idx(batch);
        for (std::size_t i = 0; i < batch; ++i) idx[i] = rng.index(n);
        const Tensor xb = gather_rows(data, idx);
        const NoisingDraw nd = draw_noising(xb, sched, rng, /*include_clean=*/false);

        Graph g;
        const Tensor emb = embedding_rows(nd.ts, sched.steps, embed_dim);
        NodeId input = g.concat(g.constant(nd.x_t), g.constant(emb), 1);
        NodeId eps_hat = mlp_graph(g, res.raw.net, input, /*params_as_leaves=*/true);
        NodeId diff = g.add(eps_hat, g.negate(g.constant(nd.eps)));
        g.set_output(g.scale(g.squared_norm(diff), 1.0 / double(batch)));

        Bindings bind;
        bind_mlp(bind, res.raw.net);
        std::set<std::string> wrt;
        for (std::size_t l = 0; l < res.raw.net.n_layers(); ++l) {
            wrt.insert("w" + std::to_string(l));
            wrt.insert("b" + std::to_string(l));
        }
        std::map<std::string, Tensor> grads;
        double loss;
        try {
            grads = g.backward(bind, wrt);
            loss = g.value(g.output()).item();
        } catch (const Error& e) {
            fail(str_cat("train_denoiser: diverged at step ", step, ": ", e.what()));
        }
        res.loss_trace.push_back(loss);

        std::vector<const Tensor*> gptrs;
        for (std::size_t l = 0; l < res.raw.net.n_layers(); ++l)
            gptrs.push_back(&grads.at("w" + std::to_string(l)));
        for (std::size_t l = 0; l < res.raw.net.n_layers(); ++l)
            gptrs.push_back(&grads.at("b" + std::to_string(l)));
        opt.step(gptrs);

        auto shadow = res.ema.net.all_tensors();
        ema_update(std::as_const(res.raw.net).all_tensors(), shadow, cfg.ema_rate);
        ++res.steps_run;
    }
    return res;
}

// Mean binary cross-entropy of the classifier on clean inputs.
inline double clean_cross_entropy(const ClassifierModel& m, const Tensor& data,
                                  const LabelSet& labels, double* accuracy = nullptr) {
    const std::vector<int> ts(data.shape[0], 0);
    const Tensor logits = m.logits(data, ts);
    double ce = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const double l = logits.data[i];
        const int y = labels.bits[i];
        // -log sigmoid(l) if y=1, -log sigmoid(-l) if y=0; stable for |l| < ~700
        const double logp = y ? -std::log(sigmoid(l)) : -std::log(sigmoid(-l));
        ce += logp;
        if ((l > 0.0) == (y == 1)) ++correct;
    }
    if (accuracy) *accuracy = double(correct) / double(logits.numel());
    return ce / double(logits.numel());
}

// Trains the label memorizer on noised inputs, t uniform over {0..T} with
// t=0 presenting the clean point. Stops early once mean clean-input CE drops
// below cfg.target_ce.
inline TrainResult<ClassifierModel> train_classifier(const Tensor& data, const LabelSet& labels,
                                                     const NoiseSchedule& sched, std::size_t width,
                                                     std::size_t depth, int embed_dim,
                                                     const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CPS_REQUIRE(data.ndim() == 2 && data.shape[0] > 0, "train_classifier: non-empty [n x d] data");
    CPS_REQUIRE(labels.bits.size() == data.shape[0], "train_classifier: ", labels.bits.size(),
                " labels for ", data.shape[0], " points");
    const std::size_t n = data.shape[0];
    const std::size_t batch = cfg.batch < n ? cfg.batch : n;

    Rng init_rng = Rng::stream(seed, 0x696e6974);
    TrainResult<ClassifierModel> res;
    res.raw = make_classifier(data.shape[1], width, depth, embed_dim, sched.steps, init_rng);
    res.ema = res.raw;

    Adam opt(res.raw.all_tensors(), cfg);
    Rng rng = Rng::stream(seed, 0x747261696e);

    std::set<std::string> wrt;
    for (std::size_t l = 0; l < res.raw.trunk.n_layers(); ++l) {
        wrt.insert("t.w" + std::to_string(l));
        wrt.insert("t.b" + std::to_string(l));
    }
    wrt.insert("h.w");
    wrt.insert("h.b");

    res.final_metric = clean_cross_entropy(res.raw, data, labels);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> idx(batch);
        for (std::size_t i = 0; i < batch; ++i) idx[i] = rng.index(n);
        const Tensor xb = gather_rows(data, idx);
        const NoisingDraw nd = draw_noising(xb, sched, rng, /*include_clean=*/true);

        // BCE via log sigmoid(+/- logit): -(y log s(l) + (1-y) log s(-l)),
        // stable until |logit| reaches the exp underflow range.
        Tensor y1({batch, std::size_t(1)}), y0({batch, std::size_t(1)});
        for (std::size_t i = 0; i < batch; ++i) {
            y1.data[i] = double(labels.bits[idx[i]]);
            y0.data[i] = 1.0 - y1.data[i];
        }
        Graph g;
        NodeId logit = classifier_logit_graph(g, res.raw, nd.x_t, nd.ts, /*x_as_leaf=*/false,
                                              /*params_as_leaves=*/true);
        NodeId lp = g.log(g.sigmoid(logit));
        NodeId ln = g.log(g.sigmoid(g.negate(logit)));
        NodeId weighted = g.add(g.mul(g.constant(y1), lp), g.mul(g.constant(y0), ln));
        g.set_output(g.scale(g.mean(weighted), -1.0));

        Bindings bind;
        bind_classifier(bind, res.raw);
        std::map<std::string, Tensor> grads;
        double loss;
        try {
            grads = g.backward(bind, wrt);
            loss = g.value(g.output()).item();
        } catch (const Error& e) {
            fail(str_cat("train_classifier: diverged at step ", step, ": ", e.what()));
        }
        res.loss_trace.push_back(loss);

        std::vector<const Tensor*> gptrs;
        for (std::size_t l = 0; l < res.raw.trunk.n_layers(); ++l)
            gptrs.push_back(&grads.at("t.w" + std::to_string(l)));
        for (std::size_t l = 0; l < res.raw.trunk.n_layers(); ++l)
            gptrs.push_back(&grads.at("t.b" + std::to_string(l)));
        gptrs.push_back(&grads.at("h.w"));
        gptrs.push_back(&grads.at("h.b"));
        opt.step(gptrs);

        auto shadow = res.ema.all_tensors();
        ema_update(std::as_const(res.raw).all_tensors(), shadow, cfg.ema_rate);
        ++res.steps_run;

        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
            res.final_metric = clean_cross_entropy(res.raw, data, labels);
            if (res.final_metric < cfg.target_ce) {
                res.target_reached = true;
                break;
            }
        }
    }
    if (!res.target_reached) res.final_metric = clean_cross_entropy(res.raw, data, labels);
    return res;
}

}  // namespace cpsample

#endif
