// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_AUTODIFF_HPP
#define CPSAMPLE_AUTODIFF_HPP

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cpsample/tensor.hpp"

namespace cpsample {

// Reverse-mode tape over a closed op set: matmul, add (incl. bias add),
// elementwise mul, sigmoid, silu, sum, mean, squared-norm, log, concat.
// Graphs are built fresh per use (define-by-run); nodes are immutable once
// added and shapes are fixed at build time.

enum class Op {
    Leaf,
    Const,
    MatMul,
    Add,      // same shape, or [m x n] + [n] bias
    Mul,      // elementwise
    Sigmoid,
    Silu,
    Sum,      // -> scalar
    Mean,     // -> scalar
    SqNorm,   // -> scalar
    Log,
    Concat,   // axis 0 or 1
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Const: return "const";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Sigmoid: return "sigmoid";
        case Op::Silu: return "silu";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::SqNorm: return "squared_norm";
        case Op::Log: return "log";
        case Op::Concat: return "concat";
    }
    return "?";
}

using NodeId = int;
using Bindings = std::map<std::string, Tensor>;

class Graph {
  public:
    NodeId leaf(std::string name, std::vector<std::size_t> shape) {
        CPS_REQUIRE(!name.empty(), "graph: leaf needs a name");
        CPS_REQUIRE(leaf_ids_.find(name) == leaf_ids_.end(), "graph: duplicate leaf '", name, "'");
        Node n;
        n.op = Op::Leaf;
        n.shape = std::move(shape);
        n.name = name;
        leaf_ids_[std::move(name)] = NodeId(nodes_.size());
        return push(std::move(n));
    }

    NodeId constant(Tensor value) {
        require_finite(value, "graph constant");
        Node n;
        n.op = Op::Const;
        n.shape = value.shape;
        n.payload = std::move(value);
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const auto& sa = shape_of(a);
        const auto& sb = shape_of(b);
        CPS_REQUIRE(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0],
                    "graph matmul: incompatible shapes");
        return push(make(Op::MatMul, {sa[0], sb[1]}, a, b));
    }

    NodeId add(NodeId a, NodeId b) {
        const auto& sa = shape_of(a);
        const auto& sb = shape_of(b);
        const bool same = sa == sb;
        const bool bias = sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0];
        CPS_REQUIRE(same || bias, "graph add: incompatible shapes");
        return push(make(Op::Add, sa, a, b));
    }

    NodeId mul(NodeId a, NodeId b) {
        CPS_REQUIRE(shape_of(a) == shape_of(b), "graph mul: shape mismatch");
        return push(make(Op::Mul, shape_of(a), a, b));
    }

    NodeId sigmoid(NodeId a) { return push(make(Op::Sigmoid, shape_of(a), a)); }
    NodeId silu(NodeId a) { return push(make(Op::Silu, shape_of(a), a)); }
    NodeId log(NodeId a) { return push(make(Op::Log, shape_of(a), a)); }
    NodeId sum(NodeId a) { return push(make(Op::Sum, {std::size_t(1)}, a)); }
    NodeId mean(NodeId a) { return push(make(Op::Mean, {std::size_t(1)}, a)); }
    NodeId squared_norm(NodeId a) { return push(make(Op::SqNorm, {std::size_t(1)}, a)); }

    NodeId concat(NodeId a, NodeId b, int axis) {
        const auto& sa = shape_of(a);
        const auto& sb = shape_of(b);
        std::vector<std::size_t> out;
        if (sa.size() == 1 && sb.size() == 1) {
            CPS_REQUIRE(axis == 0, "graph concat: rank-1 concat requires axis 0");
            out = {sa[0] + sb[0]};
        } else {
            CPS_REQUIRE(sa.size() == 2 && sb.size() == 2 && (axis == 0 || axis == 1),
                        "graph concat: rank-2 operands with axis 0/1 required");
            if (axis == 0) {
                CPS_REQUIRE(sa[1] == sb[1], "graph concat axis 0: col mismatch");
                out = {sa[0] + sb[0], sa[1]};
            } else {
                CPS_REQUIRE(sa[0] == sb[0], "graph concat axis 1: row mismatch");
                out = {sa[0], sa[1] + sb[1]};
            }
        }
        Node n = make(Op::Concat, out, a, b);
        n.axis = axis;
        return push(std::move(n));
    }

    // Convenience built from the closed op set: elementwise multiply by a
    // constant tensor of the operand's shape.
    NodeId scale(NodeId a, double s) {
        return mul(a, constant(Tensor::full(shape_of(a), s)));
    }
    NodeId negate(NodeId a) { return scale(a, -1.0); }
    NodeId add_scalar_const(NodeId a, double c) {
        return add(a, constant(Tensor::full(shape_of(a), c)));
    }

    void set_output(NodeId id) {
        check_id(id);
        output_ = id;
    }
    NodeId output() const { return output_; }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<std::size_t>& shape_of(NodeId id) const {
        check_id(id);
        return nodes_[id].shape;
    }

    // Forward pass. Every leaf must be bound with its declared shape; every
    // node must be reachable from the output; every intermediate must stay
    // finite.
    Tensor evaluate(const Bindings& bindings) {
        CPS_REQUIRE(output_ >= 0, "graph evaluate: no output set");
        check_reachability();
        values_.assign(nodes_.size(), Tensor());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            Tensor v;
            switch (n.op) {
                case Op::Leaf: {
                    auto it = bindings.find(n.name);
                    CPS_REQUIRE(it != bindings.end(), "graph evaluate: unbound leaf '", n.name,
                                "'");
                    CPS_REQUIRE(it->second.shape == n.shape,
                                "graph evaluate: leaf '", n.name, "' bound with shape ",
                                it->second.shape_str(), ", declared ", Tensor(n.shape).shape_str());
                    v = it->second;
                    break;
                }
                case Op::Const: v = n.payload; break;
                case Op::MatMul: v = cpsample::matmul(val(n.a), val(n.b)); break;
                case Op::Add: {
                    const Tensor& a = val(n.a);
                    const Tensor& b = val(n.b);
                    v = a.same_shape(b) ? cpsample::add(a, b) : cpsample::add_bias(a, b);
                    break;
                }
                case Op::Mul: v = hadamard(val(n.a), val(n.b)); break;
                case Op::Sigmoid: v = map_sigmoid(val(n.a)); break;
                case Op::Silu: v = map_silu(val(n.a)); break;
                case Op::Sum: v = Tensor::scalar(sum_all(val(n.a))); break;
                case Op::Mean:
                    v = Tensor::scalar(sum_all(val(n.a)) / double(val(n.a).numel()));
                    break;
                case Op::SqNorm: v = Tensor::scalar(sqnorm(val(n.a))); break;
                case Op::Log: v = map_log(val(n.a)); break;
                case Op::Concat: {
                    const Tensor& a = val(n.a);
                    const Tensor& b = val(n.b);
                    v = (n.axis == 1) ? concat_cols(a, b) : concat_rows(a, b);
                    break;
                }
            }
            CPS_REQUIRE(v.all_finite(), "graph evaluate: non-finite intermediate at node ", i,
                        " (", op_name(n.op), ")");
            values_[i] = std::move(v);
        }
        has_values_ = true;
        return values_[output_];
    }

    // Value of any node from the latest evaluate().
    const Tensor& value(NodeId id) const {
        check_id(id);
        CPS_REQUIRE(has_values_, "graph value: evaluate first");
        return values_[id];
    }

    // Reverse pass from a scalar output. Returns gradients for the requested
    // leaves; evaluates first with the given bindings.
    std::map<std::string, Tensor> backward(const Bindings& bindings,
                                           const std::set<std::string>& wrt) {
        for (const auto& name : wrt)
            CPS_REQUIRE(leaf_ids_.count(name), "graph backward: leaf '", name,
                        "' not in graph");
        evaluate(bindings);
        CPS_REQUIRE(values_[output_].numel() == 1,
                    "graph backward: output must be scalar, got ",
                    values_[output_].shape_str());

        std::vector<Tensor> adj(nodes_.size());
        std::vector<bool> has_adj(nodes_.size(), false);
        auto accumulate = [&](NodeId id, const Tensor& g) {
            if (!has_adj[id]) {
                adj[id] = g;
                has_adj[id] = true;
            } else {
                axpy(1.0, g, adj[id]);
            }
        };
        adj[output_] = Tensor(values_[output_].shape, 1.0);
        has_adj[output_] = true;

        for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
            if (!has_adj[i]) continue;
            const Node& n = nodes_[i];
            const Tensor& g = adj[i];
            switch (n.op) {
                case Op::Leaf:
                case Op::Const:
                    break;
                case Op::MatMul:
                    accumulate(n.a, matmul_nt(g, values_[n.b]));
                    accumulate(n.b, matmul_tn(values_[n.a], g));
                    break;
                case Op::Add: {
                    accumulate(n.a, g);
                    const Tensor& b = values_[n.b];
                    if (b.same_shape(g)) {
                        accumulate(n.b, g);
                    } else {  // bias add: column sums
                        Tensor gb(b.shape);
                        for (std::size_t r = 0; r < g.shape[0]; ++r)
                            for (std::size_t c = 0; c < g.shape[1]; ++c)
                                gb.data[c] += g.at(r, c);
                        accumulate(n.b, gb);
                    }
                    break;
                }
                case Op::Mul:
                    accumulate(n.a, hadamard(g, values_[n.b]));
                    accumulate(n.b, hadamard(g, values_[n.a]));
                    break;
                case Op::Sigmoid: {
                    const Tensor& s = values_[i];
                    Tensor ga = g;
                    for (std::size_t k = 0; k < ga.numel(); ++k)
                        ga.data[k] *= s.data[k] * (1.0 - s.data[k]);
                    accumulate(n.a, ga);
                    break;
                }
                case Op::Silu: {
                    const Tensor& x = values_[n.a];
                    Tensor ga = g;
                    for (std::size_t k = 0; k < ga.numel(); ++k) {
                        const double s = cpsample::sigmoid(x.data[k]);
                        ga.data[k] *= s + x.data[k] * s * (1.0 - s);
                    }
                    accumulate(n.a, ga);
                    break;
                }
                case Op::Sum: {
                    accumulate(n.a, Tensor(values_[n.a].shape, g.item()));
                    break;
                }
                case Op::Mean: {
                    accumulate(n.a,
                               Tensor(values_[n.a].shape, g.item() / double(values_[n.a].numel())));
                    break;
                }
                case Op::SqNorm: {
                    Tensor ga = values_[n.a];
                    for (double& v : ga.data) v *= 2.0 * g.item();
                    accumulate(n.a, ga);
                    break;
                }
                case Op::Log: {
                    const Tensor& x = values_[n.a];
                    Tensor ga = g;
                    for (std::size_t k = 0; k < ga.numel(); ++k) ga.data[k] /= x.data[k];
                    accumulate(n.a, ga);
                    break;
                }
                case Op::Concat: {
                    const Tensor& a = values_[n.a];
                    const Tensor& b = values_[n.b];
                    Tensor ga(a.shape), gb(b.shape);
                    if (a.ndim() == 1 || n.axis == 0) {
                        for (std::size_t k = 0; k < a.numel(); ++k) ga.data[k] = g.data[k];
                        for (std::size_t k = 0; k < b.numel(); ++k)
                            gb.data[k] = g.data[a.numel() + k];
                    } else {
                        for (std::size_t r = 0; r < a.shape[0]; ++r) {
                            for (std::size_t c = 0; c < a.shape[1]; ++c)
                                ga.at(r, c) = g.at(r, c);
                            for (std::size_t c = 0; c < b.shape[1]; ++c)
                                gb.at(r, c) = g.at(r, a.shape[1] + c);
                        }
                    }
                    accumulate(n.a, ga);
                    accumulate(n.b, gb);
                    break;
                }
            }
        }

        std::map<std::string, Tensor> out;
        for (const auto& name : wrt) {
            const NodeId id = leaf_ids_.at(name);
            Tensor g = has_adj[id] ? adj[id] : Tensor(nodes_[id].shape);
            CPS_REQUIRE(g.all_finite(), "graph backward: non-finite gradient for '", name, "'");
            out[name] = std::move(g);
        }
        return out;
    }

  private:
    struct Node {
        Op op = Op::Const;
        NodeId a = -1, b = -1;
        int axis = 0;
        std::vector<std::size_t> shape;
        std::string name;  // leaves only
        Tensor payload;    // consts only
    };

    Node make(Op op, std::vector<std::size_t> shape, NodeId a, NodeId b = -1) {
        check_id(a);
        if (b >= 0) check_id(b);
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.shape = std::move(shape);
        return n;
    }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        has_values_ = false;
        return NodeId(nodes_.size() - 1);
    }

    void check_id(NodeId id) const {
        CPS_REQUIRE(id >= 0 && std::size_t(id) < nodes_.size(), "graph: bad node id ", id);
    }

    void check_reachability() const {
        std::vector<bool> seen(nodes_.size(), false);
        std::vector<NodeId> stack{output_};
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            if (seen[id]) continue;
            seen[id] = true;
            const Node& n = nodes_[id];
            if (n.a >= 0) stack.push_back(n.a);
            if (n.b >= 0) stack.push_back(n.b);
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            CPS_REQUIRE(seen[i], "graph evaluate: node ", i, " (", op_name(nodes_[i].op),
                        ") unreachable from output");
    }

    const Tensor& val(NodeId id) const { return values_[id]; }

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> leaf_ids_;
    NodeId output_ = -1;
    std::vector<Tensor> values_;
    bool has_values_ = false;
};

// Builds a scalar graph over leaf "x" and compares reverse-mode gradients
// against central finite differences. Returns the max relative error over
// coordinates.
inline double grad_check(const std::function<NodeId(Graph&, NodeId)>& scalar_fn, const Tensor& x,
                         double step) {
    CPS_REQUIRE(step > 0.0, "grad_check: step must be positive");
    Graph g;
    const NodeId xid = g.leaf("x", x.shape);
    g.set_output(scalar_fn(g, xid));
    CPS_REQUIRE(Tensor::numel_of(g.shape_of(g.output())) == 1,
                "grad_check: function output must be scalar");

    Bindings b{{"x", x}};
    const Tensor ad = g.backward(b, {"x"}).at("x");

    double max_rel = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor xp = x, xm = x;
        xp.data[i] += step;
        xm.data[i] -= step;
        const double fp = g.evaluate({{"x", xp}}).item();
        const double fm = g.evaluate({{"x", xm}}).item();
        const double fd = (fp - fm) / (2.0 * step);
        const double rel = std::abs(ad.data[i] - fd) / (std::abs(fd) + 1e-12);
        if (rel > max_rel) max_rel = rel;
    }
    return max_rel;
}

}  // namespace cpsample

#endif
