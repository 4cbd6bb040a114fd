#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "skiptrack/errors.hpp"
#include "skiptrack/rng.hpp"

namespace skiptrack {

// Dense row-major single-precision array, up to 4 axes. Pure value type:
// copies are deep, there are no views and no strides.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(checked_numel(dims_), 0.0f) {}

    Tensor(std::vector<std::size_t> dims, std::vector<float> values)
        : dims_(std::move(dims)), data_(std::move(values)) {
        if (data_.size() != checked_numel(dims_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string());
        }
    }

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

    static Tensor full(std::vector<std::size_t> dims, float value) {
        Tensor t(std::move(dims));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor ones(std::vector<std::size_t> dims) { return full(std::move(dims), 1.0f); }

    static Tensor random_uniform(std::vector<std::size_t> dims, float lo, float hi, SplitMix64& rng) {
        Tensor t(std::move(dims));
        for (auto& v : t.data_) v = rng.uniform(lo, hi);
        return t;
    }

    std::size_t ndim() const { return dims_.size(); }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& at(std::size_t i) {
        assert(ndim() == 1 && i < dims_[0]);
        return data_[i];
    }
    float at(std::size_t i) const { return const_cast<Tensor*>(this)->at(i); }

    float& at(std::size_t i, std::size_t j) {
        assert(ndim() == 2 && i < dims_[0] && j < dims_[1]);
        return data_[i * dims_[1] + j];
    }
    float at(std::size_t i, std::size_t j) const { return const_cast<Tensor*>(this)->at(i, j); }

    float& at(std::size_t i, std::size_t j, std::size_t k) {
        assert(ndim() == 3 && i < dims_[0] && j < dims_[1] && k < dims_[2]);
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }
    float at(std::size_t i, std::size_t j, std::size_t k) const {
        return const_cast<Tensor*>(this)->at(i, j, k);
    }

    float& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        assert(ndim() == 4 && i < dims_[0] && j < dims_[1] && k < dims_[2] && l < dims_[3]);
        return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
    }
    float at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return const_cast<Tensor*>(this)->at(i, j, k, l);
    }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

    // Metadata + copy; element order is unchanged.
    Tensor reshape(std::vector<std::size_t> new_dims) const {
        Tensor t(std::move(new_dims), data_);
        return t;
    }

    bool all_finite() const {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_string() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) os << 'x';
            os << dims_[i];
        }
        os << ']';
        return os.str();
    }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& dims) {
        if (dims.empty() || dims.size() > 4) {
            throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims.size()));
        }
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw ShapeError("tensor dims must be positive");
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

enum class PoolMode { avg, max };

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul shape mismatch: " + a.shape_string() + " x " + b.shape_string());
    }
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    Tensor c({m, p});
    const float* ad = a.data();
    const float* bd = b.data();
    float* cd = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        float* crow = cd + i * p;
        const float* arow = ad + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const float aik = arow[kk];
            const float* brow = bd + kk * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// c = a * b^T; both operands row-major, contraction over their last axis.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt shape mismatch: " + a.shape_string() + " x " + b.shape_string());
    }
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(0);
    Tensor c({m, p});
    const float* ad = a.data();
    const float* bd = b.data();
    float* cd = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = ad + i * k;
        float* crow = cd + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const float* brow = bd + j * k;
            float acc = 0.0f;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
    return c;
}

inline Tensor rowwise_softmax(const Tensor& x) {
    if (x.ndim() != 2) {
        throw ShapeError("rowwise_softmax expects a matrix, got " + x.shape_string());
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        const float* src = x.data() + i * cols;
        float* dst = out.data() + i * cols;
        float mx = src[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
        float sum = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        const float inv = 1.0f / sum;
        for (std::size_t j = 0; j < cols; ++j) dst[j] *= inv;
    }
    return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    if (x.ndim() != 2) {
        throw ShapeError("layer_norm expects a matrix, got " + x.shape_string());
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (gamma.ndim() != 1 || gamma.dim(0) != cols || beta.ndim() != 1 || beta.dim(0) != cols) {
        throw ShapeError("layer_norm gamma/beta must be length-" + std::to_string(cols) + " vectors");
    }
    if (!(eps > 0.0f)) throw ArgumentError("layer_norm eps must be positive");
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        const float* src = x.data() + i * cols;
        float* dst = out.data() + i * cols;
        float mean = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) mean += src[j];
        mean /= static_cast<float>(cols);
        float var = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) {
            const float d = src[j] - mean;
            var += d * d;
        }
        var /= static_cast<float>(cols);
        const float inv = 1.0f / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j] = (src[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
        }
    }
    return out;
}

// Reduces `axis` to length 1.
inline Tensor axis_pool(const Tensor& x, std::size_t axis, PoolMode mode) {
    if (axis >= x.ndim()) {
        throw ShapeError("axis_pool: axis " + std::to_string(axis) + " out of range for " +
                         x.shape_string());
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    const std::size_t n = x.dim(axis);

    std::vector<std::size_t> out_dims = x.dims();
    out_dims[axis] = 1;
    Tensor out(out_dims);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const float* base = x.data() + (o * n) * inner + in;
            if (mode == PoolMode::avg) {
                float acc = 0.0f;
                for (std::size_t i = 0; i < n; ++i) acc += base[i * inner];
                out.data()[o * inner + in] = acc / static_cast<float>(n);
            } else {
                float acc = base[0];
                for (std::size_t i = 1; i < n; ++i) acc = std::max(acc, base[i * inner]);
                out.data()[o * inner + in] = acc;
            }
        }
    }
    return out;
}

// Elementwise product; every axis of `a` must be 1 or match `x`.
inline Tensor broadcast_mul(const Tensor& x, const Tensor& a) {
    if (x.ndim() != a.ndim()) {
        throw ShapeError("broadcast_mul rank mismatch: " + x.shape_string() + " vs " +
                         a.shape_string());
    }
    for (std::size_t i = 0; i < x.ndim(); ++i) {
        if (a.dim(i) != 1 && a.dim(i) != x.dim(i)) {
            throw ShapeError("broadcast_mul shape mismatch: " + x.shape_string() + " vs " +
                             a.shape_string());
        }
    }
    // Pad both shapes to 4 axes on the left so one loop nest covers all ranks.
    std::size_t xd[4] = {1, 1, 1, 1}, ad[4] = {1, 1, 1, 1};
    const std::size_t off = 4 - x.ndim();
    for (std::size_t i = 0; i < x.ndim(); ++i) {
        xd[off + i] = x.dim(i);
        ad[off + i] = a.dim(i);
    }
    std::size_t astride[4];
    std::size_t s = 1;
    for (int i = 3; i >= 0; --i) {
        astride[i] = (ad[i] == 1) ? 0 : s;
        s *= ad[i];
    }
    Tensor out(x.dims());
    const float* xs = x.data();
    const float* as = a.data();
    float* os = out.data();
    std::size_t idx = 0;
    for (std::size_t i0 = 0; i0 < xd[0]; ++i0)
        for (std::size_t i1 = 0; i1 < xd[1]; ++i1)
            for (std::size_t i2 = 0; i2 < xd[2]; ++i2) {
                const std::size_t abase =
                    i0 * astride[0] + i1 * astride[1] + i2 * astride[2];
                for (std::size_t i3 = 0; i3 < xd[3]; ++i3, ++idx) {
                    os[idx] = xs[idx] * as[abase + i3 * astride[3]];
                }
            }
    return out;
}

namespace detail {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

inline std::vector<float> hann_vector(std::size_t n) {
    std::vector<float> v(n);
    if (n == 1) {
        v[0] = 1.0f;
        return v;
    }
    const double denom = static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = static_cast<float>(0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(i) / denom)));
    }
    return v;
}

inline std::vector<float> hamming_vector(std::size_t n) {
    std::vector<float> v(n);
    if (n == 1) {
        v[0] = 1.0f;
        return v;
    }
    const double denom = static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = static_cast<float>(0.54 - 0.46 * std::cos(kTwoPi * static_cast<double>(i) / denom));
    }
    return v;
}

inline Tensor outer_window(const std::vector<float>& vh, const std::vector<float>& vw) {
    Tensor w({vh.size(), vw.size()});
    for (std::size_t i = 0; i < vh.size(); ++i)
        for (std::size_t j = 0; j < vw.size(); ++j) w.at(i, j) = vh[i] * vw[j];
    return w;
}

} // namespace detail

inline Tensor hann_window_2d(std::size_t h, std::size_t w) {
    if (h < 1 || w < 1) throw ArgumentError("hann_window_2d sides must be >= 1");
    return detail::outer_window(detail::hann_vector(h), detail::hann_vector(w));
}

inline Tensor hamming_window_2d(std::size_t h, std::size_t w) {
    if (h < 1 || w < 1) throw ArgumentError("hamming_window_2d sides must be >= 1");
    return detail::outer_window(detail::hamming_vector(h), detail::hamming_vector(w));
}

// --- elementwise and layout helpers -----------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
    }
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] += b.data()[i];
    return out;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
    }
    for (std::size_t i = 0; i < a.numel(); ++i) a.data()[i] += b.data()[i];
}

// Adds a length-C vector to every row of an N x C matrix.
inline void add_row_bias(Tensor& x, const Tensor& bias) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw ShapeError("add_row_bias shape mismatch: " + x.shape_string() + " vs " +
                         bias.shape_string());
    }
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        float* row = x.data() + i * x.dim(1);
        for (std::size_t j = 0; j < x.dim(1); ++j) row[j] += bias.data()[j];
    }
}

inline Tensor transpose2d(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("transpose2d expects a matrix, got " + x.shape_string());
    Tensor out({x.dim(1), x.dim(0)});
    for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = 0; j < x.dim(1); ++j) out.at(j, i) = x.at(i, j);
    return out;
}

inline float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

inline float gelu(float v) {
    return 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752f));
}

template <typename Fn>
inline Tensor map(const Tensor& x, Fn&& fn) {
    Tensor out = x;
    for (auto& v : out.values()) v = fn(v);
    return out;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("concat_rows column mismatch: " + a.shape_string() + " vs " +
                         b.shape_string());
    }
    Tensor out({a.dim(0) + b.dim(0), a.dim(1)});
    std::copy(a.data(), a.data() + a.numel(), out.data());
    std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
    return out;
}

// Rows [begin, end) as a new matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (x.ndim() != 2 || begin >= end || end > x.dim(0)) {
        throw ShapeError("slice_rows range invalid for " + x.shape_string());
    }
    Tensor out({end - begin, x.dim(1)});
    std::copy(x.data() + begin * x.dim(1), x.data() + end * x.dim(1), out.data());
    return out;
}

// Columns [begin, end) as a new matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    if (x.ndim() != 2 || begin >= end || end > x.dim(1)) {
        throw ShapeError("slice_cols range invalid for " + x.shape_string());
    }
    const std::size_t w = end - begin;
    Tensor out({x.dim(0), w});
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        std::copy(x.data() + i * x.dim(1) + begin, x.data() + i * x.dim(1) + end,
                  out.data() + i * w);
    }
    return out;
}

} // namespace skiptrack
