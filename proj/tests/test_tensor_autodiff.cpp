// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#include "catch2/catch_amalgamated.hpp"

#include "cpsample/cpsample.hpp"

using namespace cpsample;
using Catch::Approx;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Schoolbook reference for the matmul kernels.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.shape[0], b.shape[1]});
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < b.shape[1]; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.shape[1]; ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out({a.shape[1], a.shape[0]});
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

}  // namespace

TEST_CASE("matmul matches the schoolbook rule") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.index(5), k = 1 + rng.index(5), n = 1 + rng.index(5);
        const Tensor a = random_tensor({m, k}, rng);
        const Tensor b = random_tensor({k, n}, rng);
        const Tensor got = matmul(a, b);
        const Tensor want = naive_matmul(a, b);
        for (std::size_t i = 0; i < want.numel(); ++i)
            REQUIRE(got.data[i] == Approx(want.data[i]).epsilon(1e-14));
    }
    REQUIRE_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), Error);
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposes") {
    Rng rng(102);
    const Tensor a = random_tensor({4, 3}, rng);
    const Tensor b = random_tensor({5, 3}, rng);
    const Tensor nt = matmul_nt(a, b);  // a * b^T
    const Tensor want_nt = naive_matmul(a, transpose(b));
    REQUIRE(nt.same_shape(want_nt));
    for (std::size_t i = 0; i < nt.numel(); ++i)
        REQUIRE(nt.data[i] == Approx(want_nt.data[i]).epsilon(1e-14));

    const Tensor c = random_tensor({4, 5}, rng);
    const Tensor tn = matmul_tn(a, c);  // a^T * c
    const Tensor want_tn = naive_matmul(transpose(a), c);
    REQUIRE(tn.same_shape(want_tn));
    for (std::size_t i = 0; i < tn.numel(); ++i)
        REQUIRE(tn.data[i] == Approx(want_tn.data[i]).epsilon(1e-14));
}

TEST_CASE("concat kernels invert row and column splits") {
    Rng rng(103);
    const Tensor a = random_tensor({3, 2}, rng);
    const Tensor b = random_tensor({3, 4}, rng);
    const Tensor cols = concat_cols(a, b);
    REQUIRE(cols.shape == std::vector<std::size_t>{3, 6});
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) REQUIRE(cols.at(i, j) == a.at(i, j));
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(cols.at(i, 2 + j) == b.at(i, j));
    }
    const Tensor c = random_tensor({2, 4}, rng);
    const Tensor rows = concat_rows(c, b);
    REQUIRE(rows.shape == std::vector<std::size_t>{5, 4});
    REQUIRE(rows.at(0, 0) == c.at(0, 0));
    REQUIRE(rows.at(2, 3) == b.at(0, 3));
}

TEST_CASE("every graph op passes central finite differences") {
    Rng rng(202);
    const double step = 1e-5;
    // FD truncation noise sits around 1e-6 at this step; a wrong adjoint is O(1).
    const double tol = 1e-4;

    for (int trial = 0; trial < 12; ++trial) {
        INFO("trial " << trial);
        const std::size_t m = 2 + rng.index(3), n = 2 + rng.index(3);
        const Tensor w = random_tensor({n, m}, rng);
        const Tensor a = random_tensor({m, n}, rng);
        const Tensor x = random_tensor({m, n}, rng);
        const Tensor xb = random_tensor({n}, rng);
        const Tensor xp = random_tensor({m}, rng, 0.5, 2.0);

        // matmul with x on either side
        REQUIRE(grad_check(
                    [&](Graph& g, NodeId xid) { return g.sum(g.matmul(xid, g.constant(w))); },
                    x, step) < tol);
        REQUIRE(grad_check(
                    [&](Graph& g, NodeId xid) {
                        return g.squared_norm(g.matmul(g.constant(w), xid));
                    },
                    x, step) < tol);
        // bias add (column-sum adjoint)
        REQUIRE(grad_check(
                    [&](Graph& g, NodeId xid) {
                        return g.squared_norm(g.add(g.constant(a), xid));
                    },
                    xb, step) < tol);
        // sigmoid/silu/mul chain with x appearing twice
        REQUIRE(grad_check(
                    [&](Graph& g, NodeId xid) {
                        NodeId h = g.mul(g.silu(xid), g.sigmoid(g.constant(a)));
                        return g.mean(g.mul(h, xid));
                    },
                    x, step) < tol);
        // log of a shifted square keeps the argument positive
        REQUIRE(grad_check(
                    [&](Graph& g, NodeId xid) {
                        return g.sum(g.log(g.add_scalar_const(g.mul(xid, xid), 0.3)));
                    },
                    xp, step) < tol);
        // concat along both axes
        REQUIRE(grad_check(
                    [&](Graph& g, NodeId xid) {
                        NodeId c1 = g.concat(xid, g.constant(a), 1);
                        NodeId c0 = g.concat(g.constant(concat_cols(a, a)), c1, 0);
                        return g.squared_norm(c0);
                    },
                    x, step) < tol);
    }
}

TEST_CASE("gradient of a linear form is exactly the coefficient tensor") {
    Rng rng(203);
    const Tensor a = random_tensor({4, 3}, rng);
    Graph g;
    const NodeId x = g.leaf("x", {4, 3});
    g.set_output(g.sum(g.mul(x, g.constant(a))));
    const Tensor grad = g.backward({{"x", random_tensor({4, 3}, rng)}}, {"x"}).at("x");
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(grad.data[i] == a.data[i]);  // bitwise
}

TEST_CASE("two-layer network gradients match finite differences") {
    Rng rng(204);
    const std::size_t in = 5, hid = 7, out = 3, batch = 4;
    const Tensor w0 = random_tensor({in, hid}, rng, -0.7, 0.7);
    const Tensor b0 = random_tensor({hid}, rng, -0.3, 0.3);
    const Tensor w1 = random_tensor({hid, out}, rng, -0.7, 0.7);
    const Tensor x = random_tensor({batch, in}, rng);
    const Tensor target = random_tensor({batch, out}, rng);

    // d/dW of mean squared error, checked parameter by parameter
    const auto loss_graph = [&](Graph& g, NodeId w0n, NodeId b0n, NodeId w1n) {
        NodeId h = g.silu(g.add(g.matmul(g.constant(x), w0n), b0n));
        NodeId y = g.matmul(h, w1n);
        NodeId diff = g.add(y, g.negate(g.constant(target)));
        return g.squared_norm(diff);
    };

    Graph g;
    const NodeId w0n = g.leaf("w0", w0.shape);
    const NodeId b0n = g.leaf("b0", b0.shape);
    const NodeId w1n = g.leaf("w1", w1.shape);
    g.set_output(loss_graph(g, w0n, b0n, w1n));
    Bindings bind{{"w0", w0}, {"b0", b0}, {"w1", w1}};
    const auto grads = g.backward(bind, {"w0", "b0", "w1"});

    const double step = 1e-6;
    const auto fd_check = [&](const std::string& name, const Tensor& base) {
        const Tensor& ad = grads.at(name);
        double max_rel = 0.0;
        for (std::size_t i = 0; i < base.numel(); ++i) {
            Bindings bp = bind, bm = bind;
            bp[name].data[i] += step;
            bm[name].data[i] -= step;
            const double fp = g.evaluate(bp).item();
            const double fm = g.evaluate(bm).item();
            const double fd = (fp - fm) / (2.0 * step);
            max_rel = std::max(max_rel, std::abs(ad.data[i] - fd) / (std::abs(fd) + 1e-9));
        }
        REQUIRE(max_rel < 1e-6);
    };
    fd_check("w0", w0);
    fd_check("b0", b0);
    fd_check("w1", w1);
}

TEST_CASE("graph rejects malformed use") {
    Graph g;
    const NodeId x = g.leaf("x", {2, 2});
    g.set_output(g.mul(x, x));  // non-scalar output
    const Tensor t({2, 2});
    REQUIRE_THROWS_AS(g.backward({{"x", t}}, {"x"}), Error);

    Graph g2;
    const NodeId y = g2.leaf("y", {3});
    g2.set_output(g2.sum(y));
    REQUIRE_THROWS_AS(g2.evaluate({}), Error);                    // unbound leaf
    REQUIRE_THROWS_AS(g2.evaluate({{"y", Tensor({4})}}), Error);  // wrong shape
    REQUIRE_THROWS_AS(g2.backward({{"y", Tensor({3})}}, {"z"}), Error);  // unknown leaf

    Graph g3;
    const NodeId a = g3.leaf("a", {2});
    g3.sum(a);  // dangling node
    g3.set_output(g3.sum(a));
    REQUIRE_THROWS_AS(g3.evaluate({{"a", Tensor({2})}}), Error);  // unreachable node
}

TEST_CASE("silu and sigmoid kernels match their definitions") {
    Rng rng(205);
    for (int i = 0; i < 50; ++i) {
        const double x = rng.uniform(-6.0, 6.0);
        const double s = 1.0 / (1.0 + std::exp(-x));
        REQUIRE(sigmoid(x) == Approx(s).epsilon(1e-12));
        Tensor t({std::size_t(1)});
        t.data[0] = x;
        REQUIRE(map_silu(t).data[0] == Approx(x * s).epsilon(1e-12));
    }
}
