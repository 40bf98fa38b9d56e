// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_TENSOR_HPP
#define CPSAMPLE_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpsample {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void str_cat_impl(std::ostringstream&) {}
template <typename T, typename... Rest>
void str_cat_impl(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    str_cat_impl(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string str_cat(const Args&... args) {
    std::ostringstream os;
    os.precision(17);
    detail::str_cat_impl(os, args...);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
    throw Error(str_cat(args...));
}

#define CPS_REQUIRE(cond, ...) \
    do {                       \
        if (!(cond)) ::cpsample::fail(::cpsample::str_cat(__VA_ARGS__)); \
    } while (0)

// Dense row-major tensor of doubles, rank 0..2 in practice.
// Treated as immutable once published by an operation; all published
// operations reject non-finite values instead of propagating them.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }
    Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        CPS_REQUIRE(data.size() == numel_of(shape), "tensor: data length ", data.size(),
                    " does not match shape ", shape_str());
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor scalar(double v) { return Tensor({std::size_t(1)}, std::vector<double>{v}); }
    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::size_t> s, double v) { return Tensor(std::move(s), v); }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    std::size_t rows() const {
        CPS_REQUIRE(ndim() == 2, "tensor: rows() on rank-", ndim(), " tensor");
        return shape[0];
    }
    std::size_t cols() const {
        CPS_REQUIRE(ndim() == 2, "tensor: cols() on rank-", ndim(), " tensor");
        return shape[1];
    }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    double item() const {
        CPS_REQUIRE(numel() == 1, "tensor: item() on tensor with ", numel(), " elements");
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    // Copy of row i of a 2-d tensor, as a rank-1 tensor.
    Tensor row(std::size_t i) const {
        CPS_REQUIRE(ndim() == 2 && i < shape[0], "tensor: row ", i, " out of range for ",
                    shape_str());
        Tensor r({shape[1]});
        const double* src = data.data() + i * shape[1];
        for (std::size_t j = 0; j < shape[1]; ++j) r.data[j] = src[j];
        return r;
    }

    void set_row(std::size_t i, const Tensor& r) {
        CPS_REQUIRE(ndim() == 2 && i < shape[0] && r.numel() == shape[1],
                    "tensor: set_row shape mismatch");
        double* dst = data.data() + i * shape[1];
        for (std::size_t j = 0; j < shape[1]; ++j) dst[j] = r.data[j];
    }
};

inline void require_finite(const Tensor& t, const char* where) {
    CPS_REQUIRE(t.all_finite(), where, ": non-finite value produced");
}

// --- plain kernels (shared by the autodiff ops and value-level forwards) ---

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.ndim() == 2 && b.ndim() == 2, "matmul: rank-2 operands required, got ",
                a.shape_str(), " and ", b.shape_str());
    CPS_REQUIRE(a.shape[1] == b.shape[0], "matmul: inner dims differ: ", a.shape_str(), " vs ",
                b.shape_str());
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a.data.data() + i * k;
        double* ci = c.data.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

// a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.ndim() == 2 && b.ndim() == 2 && a.shape[1] == b.shape[1],
                "matmul_nt: shape mismatch: ", a.shape_str(), " vs ", b.shape_str());
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a.data.data() + i * k;
        double* ci = c.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b.data.data() + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = s;
        }
    }
    return c;
}

// a^T * b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.ndim() == 2 && b.ndim() == 2 && a.shape[0] == b.shape[0],
                "matmul_tn: shape mismatch: ", a.shape_str(), " vs ", b.shape_str());
    const std::size_t m = a.shape[1], k = a.shape[0], n = b.shape[1];
    Tensor c({m, n});
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a.data.data() + p * m;
        const double* bp = b.data.data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c.data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.same_shape(b), "add: shape mismatch: ", a.shape_str(), " vs ", b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c.data[i] += b.data[i];
    return c;
}

// rows of a plus bias vector b (the only broadcasting form supported)
inline Tensor add_bias(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.ndim() == 2 && b.ndim() == 1 && a.shape[1] == b.shape[0],
                "add_bias: expected [m x n] + [n], got ", a.shape_str(), " and ", b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < a.shape[0]; ++i) {
        double* ci = c.data.data() + i * a.shape[1];
        for (std::size_t j = 0; j < a.shape[1]; ++j) ci[j] += b.data[j];
    }
    return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.same_shape(b), "sub: shape mismatch: ", a.shape_str(), " vs ", b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.same_shape(b), "mul: shape mismatch: ", a.shape_str(), " vs ", b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c.data[i] *= b.data[i];
    return c;
}

inline Tensor scaled(const Tensor& a, double s) {
    Tensor c = a;
    for (double& v : c.data) v *= s;
    return c;
}

// y += s * x
inline void axpy(double s, const Tensor& x, Tensor& y) {
    CPS_REQUIRE(x.same_shape(y), "axpy: shape mismatch");
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += s * x.data[i];
}

inline double sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v;
    return s;
}

inline double dot(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.numel() == b.numel(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double sqnorm(const Tensor& a) { return dot(a, a); }
inline double l2norm(const Tensor& a) { return std::sqrt(sqnorm(a)); }

inline double l2_dist(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.numel() == b.numel(), "l2_dist: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor map_sigmoid(const Tensor& a) {
    Tensor c = a;
    for (double& v : c.data) v = sigmoid(v);
    return c;
}

inline Tensor map_silu(const Tensor& a) {
    Tensor c = a;
    for (double& v : c.data) v = v * sigmoid(v);
    return c;
}

inline Tensor map_log(const Tensor& a) {
    Tensor c = a;
    for (double& v : c.data) v = std::log(v);
    return c;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    CPS_REQUIRE(a.ndim() == 2 && b.ndim() == 2 && a.shape[0] == b.shape[0],
                "concat axis 1: row counts differ: ", a.shape_str(), " vs ", b.shape_str());
    Tensor c({a.shape[0], a.shape[1] + b.shape[1]});
    for (std::size_t i = 0; i < a.shape[0]; ++i) {
        double* ci = c.data.data() + i * c.shape[1];
        const double* ai = a.data.data() + i * a.shape[1];
        const double* bi = b.data.data() + i * b.shape[1];
        for (std::size_t j = 0; j < a.shape[1]; ++j) ci[j] = ai[j];
        for (std::size_t j = 0; j < b.shape[1]; ++j) ci[a.shape[1] + j] = bi[j];
    }
    return c;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.ndim() == 1 && b.ndim() == 1) {
        Tensor c({a.shape[0] + b.shape[0]});
        for (std::size_t i = 0; i < a.shape[0]; ++i) c.data[i] = a.data[i];
        for (std::size_t i = 0; i < b.shape[0]; ++i) c.data[a.shape[0] + i] = b.data[i];
        return c;
    }
    CPS_REQUIRE(a.ndim() == 2 && b.ndim() == 2 && a.shape[1] == b.shape[1],
                "concat axis 0: col counts differ: ", a.shape_str(), " vs ", b.shape_str());
    Tensor c({a.shape[0] + b.shape[0], a.shape[1]});
    std::size_t k = 0;
    for (double v : a.data) c.data[k++] = v;
    for (double v : b.data) c.data[k++] = v;
    return c;
}

inline Tensor as_matrix(const Tensor& x) {
    if (x.ndim() == 2) return x;
    CPS_REQUIRE(x.ndim() == 1, "as_matrix: rank 1 or 2 required, got ", x.shape_str());
    Tensor m({std::size_t(1), x.shape[0]});
    m.data = x.data;
    return m;
}

// Pluggable point-to-point distance; an empty function means plain L2.
using MetricFn = std::function<double(const Tensor&, const Tensor&)>;

}  // namespace cpsample

#endif
