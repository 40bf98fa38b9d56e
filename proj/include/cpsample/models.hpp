// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_MODELS_HPP
#define CPSAMPLE_MODELS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cpsample/autodiff.hpp"
#include "cpsample/rng.hpp"
#include "cpsample/tensor.hpp"

namespace cpsample {

// Sinusoidal embedding of an integer timestep. Frequencies run geometrically
// from 1 down to 1e-4; t=0 maps to (0,...,0, 1,...,1) with norm sqrt(dim/2).
inline Tensor time_embedding(int t, int steps, int dim) {
    CPS_REQUIRE(dim >= 2 && dim % 2 == 0, "time_embedding: dim must be even and >= 2, got ", dim);
    CPS_REQUIRE(t >= 0 && t <= steps, "time_embedding: t=", t, " outside [0, ", steps, "]");
    const int half = dim / 2;
    Tensor e({std::size_t(dim)});
    for (int i = 0; i < half; ++i) {
        const double freq =
            half == 1 ? 1.0 : std::pow(10.0, -4.0 * double(i) / double(half - 1));
        e.data[i] = std::sin(freq * double(t));
        e.data[half + i] = std::cos(freq * double(t));
    }
    return e;
}

struct MlpSpec {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<std::size_t> hidden;

    std::vector<std::size_t> layer_dims() const {
        std::vector<std::size_t> dims{in};
        for (std::size_t h : hidden) dims.push_back(h);
        dims.push_back(out);
        return dims;
    }
};

// Plain fully connected net with SiLU activations on hidden layers and a
// linear output layer. Weights stored as [in x out] so rows of the input
// batch multiply from the left.
struct MlpParams {
    MlpSpec spec;
    std::vector<Tensor> w;
    std::vector<Tensor> b;

    std::size_t n_layers() const { return w.size(); }

    std::vector<Tensor*> all_tensors() {
        std::vector<Tensor*> out;
        for (auto& t : w) out.push_back(&t);
        for (auto& t : b) out.push_back(&t);
        return out;
    }
    std::vector<const Tensor*> all_tensors() const {
        std::vector<const Tensor*> out;
        for (auto& t : w) out.push_back(&t);
        for (auto& t : b) out.push_back(&t);
        return out;
    }
};

inline MlpParams init_mlp(const MlpSpec& spec, Rng& rng) {
    CPS_REQUIRE(spec.in > 0 && spec.out > 0, "init_mlp: zero-width layer");
    MlpParams p;
    p.spec = spec;
    const auto dims = spec.layer_dims();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
        const double a = std::sqrt(6.0 / double(fan_in + fan_out));
        Tensor w({fan_in, fan_out});
        for (double& v : w.data) v = rng.uniform(-a, a);
        p.w.push_back(std::move(w));
        p.b.push_back(Tensor({fan_out}));
    }
    return p;
}

// Forward through the MLP on a batch of rows; returns all layer activations
// (post-activation for hidden layers), acts.back() is the linear output.
inline std::vector<Tensor> mlp_forward_all(const MlpParams& p, const Tensor& x) {
    CPS_REQUIRE(x.ndim() == 2 && x.shape[1] == p.spec.in, "mlp_forward: input ", x.shape_str(),
                " does not match spec in=", p.spec.in);
    std::vector<Tensor> acts;
    Tensor h = x;
    for (std::size_t l = 0; l < p.n_layers(); ++l) {
        h = add_bias(matmul(h, p.w[l]), p.b[l]);
        if (l + 1 < p.n_layers()) h = map_silu(h);
        acts.push_back(h);
    }
    return acts;
}

inline Tensor mlp_forward(const MlpParams& p, const Tensor& x) {
    return mlp_forward_all(p, x).back();
}

// Same computation as a graph. Parameters enter as leaves named
// "<prefix>w<l>" / "<prefix>b<l>" when params_as_leaves, else as constants.
inline NodeId mlp_graph(Graph& g, const MlpParams& p, NodeId input, bool params_as_leaves,
                        const std::string& prefix = "") {
    NodeId h = input;
    for (std::size_t l = 0; l < p.n_layers(); ++l) {
        NodeId w, b;
        if (params_as_leaves) {
            w = g.leaf(prefix + "w" + std::to_string(l), p.w[l].shape);
            b = g.leaf(prefix + "b" + std::to_string(l), p.b[l].shape);
        } else {
            w = g.constant(p.w[l]);
            b = g.constant(p.b[l]);
        }
        h = g.add(g.matmul(h, w), b);
        if (l + 1 < p.n_layers()) h = g.silu(h);
    }
    return h;
}

inline void bind_mlp(Bindings& b, const MlpParams& p, const std::string& prefix = "") {
    for (std::size_t l = 0; l < p.n_layers(); ++l) {
        b[prefix + "w" + std::to_string(l)] = p.w[l];
        b[prefix + "b" + std::to_string(l)] = p.b[l];
    }
}

// Embedding rows for a batch of timesteps, as one [n x dim] tensor.
inline Tensor embedding_rows(const std::vector<int>& ts, int steps, int dim) {
    Tensor e({ts.size(), std::size_t(dim)});
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Tensor row = time_embedding(ts[i], steps, dim);
        e.set_row(i, row);
    }
    return e;
}

// Noise-prediction network over concat(x, embed(t)).
struct DenoiserModel {
    MlpParams net;
    int embed_dim = 32;
    int steps = 0;  // schedule length the embedding was built for

    std::size_t data_dim() const { return net.spec.out; }

    Tensor eps(const Tensor& x, const std::vector<int>& ts) const {
        CPS_REQUIRE(x.ndim() == 2 && x.shape[0] == ts.size(), "denoiser: rows ", x.shape_str(),
                    " vs ts ", ts.size());
        const Tensor emb = embedding_rows(ts, steps, embed_dim);
        return mlp_forward(net, concat_cols(x, emb));
    }
};

inline DenoiserModel make_denoiser(std::size_t data_dim, std::size_t width, std::size_t depth,
                                   int embed_dim, int steps, Rng& rng) {
    DenoiserModel m;
    m.embed_dim = embed_dim;
    m.steps = steps;
    m.net = init_mlp({data_dim + std::size_t(embed_dim), data_dim,
                      std::vector<std::size_t>(depth, width)},
                     rng);
    return m;
}

// Binary classifier: SiLU trunk, single-logit linear head. p1 = sigmoid(logit),
// p0 = 1 - p1, so the pair sums to 1 exactly.
struct ClassifierModel {
    MlpParams trunk;  // spec.out == trunk width (last hidden layer is the feature layer)
    Tensor head_w;    // [width x 1]
    Tensor head_b;    // [1]
    int embed_dim = 32;
    int steps = 0;

    std::size_t data_dim() const { return trunk.spec.in - std::size_t(embed_dim); }
    std::size_t feature_dim() const { return trunk.spec.out; }

    Tensor input_rows(const Tensor& x, const std::vector<int>& ts) const {
        CPS_REQUIRE(x.ndim() == 2 && x.shape[0] == ts.size(), "classifier: rows ", x.shape_str(),
                    " vs ts ", ts.size());
        return concat_cols(x, embedding_rows(ts, steps, embed_dim));
    }

    // Trunk activations (the feature layer), then logits.
    Tensor features(const Tensor& x, const std::vector<int>& ts) const {
        return map_silu(mlp_forward(trunk, input_rows(x, ts)));
    }

    Tensor logits(const Tensor& x, const std::vector<int>& ts) const {
        Tensor l = add_bias(matmul(features(x, ts), head_w), head_b);
        Tensor out({l.shape[0]});
        out.data = l.data;
        return out;
    }

    double logit1(const Tensor& x_row, int t) const {
        return logits(as_matrix(x_row), {t}).data[0];
    }

    // (p0, p1) with p0 := 1 - p1; sums to 1 exactly in floating point.
    static std::pair<double, double> prob_pair(double logit) {
        const double p1 = sigmoid(logit);
        return {1.0 - p1, p1};
    }

    std::vector<Tensor*> all_tensors() {
        auto out = trunk.all_tensors();
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }
    std::vector<const Tensor*> all_tensors() const {
        auto out = trunk.all_tensors();
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }
};

inline ClassifierModel make_classifier(std::size_t data_dim, std::size_t width, std::size_t depth,
                                       int embed_dim, int steps, Rng& rng) {
    CPS_REQUIRE(depth >= 1, "make_classifier: depth >= 1 required");
    ClassifierModel m;
    m.embed_dim = embed_dim;
    m.steps = steps;
    m.trunk = init_mlp({data_dim + std::size_t(embed_dim), width,
                        std::vector<std::size_t>(depth - 1, width)},
                       rng);
    const double a = std::sqrt(6.0 / double(width + 1));
    m.head_w = Tensor({width, std::size_t(1)});
    for (double& v : m.head_w.data) v = rng.uniform(-a, a);
    m.head_b = Tensor({std::size_t(1)});
    return m;
}

// Logit graph on a batch. x enters as leaf "x" when x_as_leaf (for input
// gradients); parameters enter as leaves when params_as_leaves (for
// training). Returns the [n x 1] logit node.
inline NodeId classifier_logit_graph(Graph& g, const ClassifierModel& m, const Tensor& x,
                                     const std::vector<int>& ts, bool x_as_leaf,
                                     bool params_as_leaves) {
    const Tensor emb = embedding_rows(ts, m.steps, m.embed_dim);
    const NodeId xn = x_as_leaf ? g.leaf("x", x.shape) : g.constant(x);
    NodeId input = g.concat(xn, g.constant(emb), 1);
    NodeId trunk = g.silu(mlp_graph(g, m.trunk, input, params_as_leaves, "t."));
    NodeId hw = params_as_leaves ? g.leaf("h.w", m.head_w.shape) : g.constant(m.head_w);
    NodeId hb = params_as_leaves ? g.leaf("h.b", m.head_b.shape) : g.constant(m.head_b);
    return g.add(g.matmul(trunk, hw), hb);
}

inline void bind_classifier(Bindings& b, const ClassifierModel& m) {
    bind_mlp(b, m.trunk, "t.");
    b["h.w"] = m.head_w;
    b["h.b"] = m.head_b;
}

// Per-row logits plus gradient of each row's logit with respect to that row,
// computed as one reverse pass over sum(logits).
struct LogitGrad {
    Tensor logits;  // [n]
    Tensor grad;    // [n x d]
};

inline LogitGrad classifier_logit_and_xgrad(const ClassifierModel& m, const Tensor& x,
                                            const std::vector<int>& ts) {
    Graph g;
    const NodeId logit = classifier_logit_graph(g, m, x, ts, /*x_as_leaf=*/true,
                                                /*params_as_leaves=*/false);
    g.set_output(g.sum(logit));
    auto grads = g.backward({{"x", x}}, {"x"});
    LogitGrad out;
    const Tensor& lv = g.value(logit);
    out.logits = Tensor({x.shape[0]});
    out.logits.data = lv.data;
    out.grad = std::move(grads.at("x"));
    return out;
}

// Bernoulli(1/2) labels used as the protection target set.
struct LabelSet {
    std::vector<std::uint8_t> bits;
    std::uint64_t seed = 0;
};

inline LabelSet assign_random_labels(std::size_t n, std::uint64_t seed) {
    CPS_REQUIRE(n > 0, "assign_random_labels: n must be positive");
    LabelSet ls;
    ls.seed = seed;
    ls.bits.resize(n);
    Rng rng = Rng::stream(seed, 0x6c61626c);
    for (std::size_t i = 0; i < n; ++i) ls.bits[i] = rng.bernoulli(0.5) ? 1 : 0;
    return ls;
}

}  // namespace cpsample

#endif
