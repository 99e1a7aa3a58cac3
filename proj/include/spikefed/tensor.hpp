#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "spikefed/kernels.hpp"
#include "spikefed/kernels_ref.hpp"

namespace spikefed {

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

}  // namespace detail

// Dense row-major numeric array. Production code uses Real = float (32-bit
// semantics); the double instantiation exists for numeric verification in
// tests.
template <typename Real>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(checked_size(shape_), Real(0));
    }

    static TensorT full(std::vector<int> shape, Real value) {
        TensorT t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    static TensorT from(std::vector<int> shape, std::vector<Real> data) {
        if (checked_size(shape) != data.size())
            detail::fail("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + detail::shape_str(shape));
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    Real& operator[](std::size_t i) { return data_[i]; }
    const Real& operator[](std::size_t i) const { return data_[i]; }

    Real& at2(int i, int j) {
        return data_[static_cast<std::size_t>(i) * dim(1) + j];
    }
    const Real& at2(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * dim(1) + j];
    }
    Real& at4(int a, int b, int c, int d) {
        return data_[((static_cast<std::size_t>(a) * dim(1) + b) * dim(2) + c) *
                         dim(3) +
                     d];
    }
    const Real& at4(int a, int b, int c, int d) const {
        return data_[((static_cast<std::size_t>(a) * dim(1) + b) * dim(2) + c) *
                         dim(3) +
                     d];
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    TensorT reshaped(std::vector<int> new_shape) const {
        if (checked_size(new_shape) != data_.size())
            detail::fail("reshape: " + detail::shape_str(shape_) + " -> " +
                         detail::shape_str(new_shape) + " changes element count");
        TensorT t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

    void fill(Real v) {
        for (auto& x : data_) x = v;
    }

private:
    static std::size_t checked_size(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (shape[i] <= 0)
                detail::fail("tensor: extent " + std::to_string(shape[i]) +
                             " at axis " + std::to_string(i) +
                             " must be positive, shape " + detail::shape_str(shape));
            n *= static_cast<std::size_t>(shape[i]);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<Real> data_;
};

using Tensor = TensorT<float>;

template <typename Real>
bool bitwise_equal(const TensorT<Real>& a, const TensorT<Real>& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(Real)) == 0;
}

// Every public primitive rejects non-finite results; NaN/Inf anywhere is a
// contract violation of the caller's inputs, not a value to propagate.
template <typename Real>
void check_finite(const TensorT<Real>& t, const char* op) {
    const Real* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(static_cast<double>(p[i])))
            detail::fail(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
}

namespace detail {

template <typename Real>
const kernels::Table* float_table() {
    if constexpr (std::is_same_v<Real, float>) return &kernels::table();
    return nullptr;
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

enum class EwOp { add, sub, mul, div, greater };

template <typename Real>
TensorT<Real> elementwise(EwOp op, const TensorT<Real>& a, const TensorT<Real>& b) {
    if (!a.same_shape(b))
        detail::fail("elementwise: shape mismatch " + detail::shape_str(a.shape()) +
                     " vs " + detail::shape_str(b.shape()));
    if (op == EwOp::div) {
        for (std::size_t i = 0; i < b.size(); ++i)
            if (b[i] == Real(0)) detail::fail("elementwise: division by zero");
    }
    TensorT<Real> out(a.shape());
    const std::size_t n = a.size();
    if (op == EwOp::greater) {
        for (std::size_t i = 0; i < n; ++i)
            out[i] = a[i] > b[i] ? Real(1) : Real(0);
        return out;
    }
    if constexpr (std::is_same_v<Real, float>) {
        const auto& t = kernels::table();
        switch (op) {
            case EwOp::add: t.add(out.data(), a.data(), b.data(), n); break;
            case EwOp::sub: t.sub(out.data(), a.data(), b.data(), n); break;
            case EwOp::mul: t.mul(out.data(), a.data(), b.data(), n); break;
            case EwOp::div: t.div(out.data(), a.data(), b.data(), n); break;
            default: break;
        }
    } else {
        switch (op) {
            case EwOp::add: kernels::ref::add(out.data(), a.data(), b.data(), n); break;
            case EwOp::sub: kernels::ref::sub(out.data(), a.data(), b.data(), n); break;
            case EwOp::mul: kernels::ref::mul(out.data(), a.data(), b.data(), n); break;
            case EwOp::div: kernels::ref::div(out.data(), a.data(), b.data(), n); break;
            default: break;
        }
    }
    check_finite(out, "elementwise");
    return out;
}

template <typename Real>
TensorT<Real> elementwise(EwOp op, const TensorT<Real>& a, Real scalar) {
    if (op == EwOp::div && scalar == Real(0))
        detail::fail("elementwise: division by zero");
    TensorT<Real> out(a.shape());
    const std::size_t n = a.size();
    switch (op) {
        case EwOp::add:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + scalar;
            break;
        case EwOp::sub:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - scalar;
            break;
        case EwOp::mul:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * scalar;
            break;
        case EwOp::div:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / scalar;
            break;
        case EwOp::greater:
            for (std::size_t i = 0; i < n; ++i)
                out[i] = a[i] > scalar ? Real(1) : Real(0);
            break;
    }
    check_finite(out, "elementwise");
    return out;
}

template <typename Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
    return elementwise(EwOp::add, a, b);
}
template <typename Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
    return elementwise(EwOp::sub, a, b);
}
template <typename Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
    return elementwise(EwOp::mul, a, b);
}
template <typename Real>
TensorT<Real> div(const TensorT<Real>& a, const TensorT<Real>& b) {
    return elementwise(EwOp::div, a, b);
}
template <typename Real>
TensorT<Real> scale(const TensorT<Real>& a, Real s) {
    return elementwise(EwOp::mul, a, s);
}

// y += alpha * x, in place
template <typename Real>
void axpy_inplace(TensorT<Real>& y, const TensorT<Real>& x, Real alpha) {
    if (!y.same_shape(x))
        detail::fail("axpy: shape mismatch " + detail::shape_str(y.shape()) +
                     " vs " + detail::shape_str(x.shape()));
    if constexpr (std::is_same_v<Real, float>)
        kernels::table().axpy(y.data(), x.data(), alpha, y.size());
    else
        kernels::ref::axpy(y.data(), x.data(), alpha, y.size());
}

// ---- matmul ----------------------------------------------------------------

template <typename Real>
void matmul_into(TensorT<Real>& c, const TensorT<Real>& a, const TensorT<Real>& b,
                 bool accumulate) {
    if (a.rank() != 2 || b.rank() != 2)
        detail::fail("matmul: operands must be rank 2, got " +
                     detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        detail::fail("matmul: inner dimensions disagree, a has " +
                     std::to_string(a.dim(1)) + " columns but b has " +
                     std::to_string(b.dim(0)) + " rows");
    if (c.rank() != 2 || c.dim(0) != a.dim(0) || c.dim(1) != b.dim(1))
        detail::fail("matmul: output shape " + detail::shape_str(c.shape()) +
                     " does not match " + std::to_string(a.dim(0)) + "x" +
                     std::to_string(b.dim(1)));
    if constexpr (std::is_same_v<Real, float>)
        kernels::table().matmul(c.data(), a.data(), b.data(), a.dim(0), a.dim(1),
                                b.dim(1), accumulate);
    else
        kernels::ref::matmul(c.data(), a.data(), b.data(), a.dim(0), a.dim(1),
                             b.dim(1), accumulate);
}

template <typename Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        detail::fail("matmul: operands must be rank 2, got " +
                     detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        detail::fail("matmul: inner dimensions disagree, a has " +
                     std::to_string(a.dim(1)) + " columns but b has " +
                     std::to_string(b.dim(0)) + " rows");
    TensorT<Real> c({a.dim(0), b.dim(1)});
    matmul_into(c, a, b, false);
    check_finite(c, "matmul");
    return c;
}

template <typename Real>
TensorT<Real> transpose2d(const TensorT<Real>& a) {
    if (a.rank() != 2)
        detail::fail("transpose: rank-2 tensor required, got " +
                     detail::shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    TensorT<Real> t({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) t.at2(j, i) = a.at2(i, j);
    return t;
}

// ---- conv2d ----------------------------------------------------------------

// Output extent along one axis: floor((extent - k + 2 pad) / stride) + 1.
inline int conv_out_size(int extent, int k, int pad, int stride) {
    if (stride < 1) detail::fail("conv2d: stride must be >= 1");
    if (pad < 0) detail::fail("conv2d: padding must be >= 0");
    if (k > extent + 2 * pad)
        detail::fail("conv2d: kernel size " + std::to_string(k) +
                     " exceeds padded input extent " +
                     std::to_string(extent + 2 * pad));
    return (extent - k + 2 * pad) / stride + 1;
}

namespace detail {

// Patch matrix [I*kh*kw, Mh*Mw] for one batch item; row index is
// (i*kh + dy)*kw + dx so the matmul accumulates channels and kernel taps in
// the same order a direct loop would.
template <typename Real>
void im2col(const TensorT<Real>& in, int b, int kh, int kw, int pad, int stride,
            int mh, int mw, TensorT<Real>& col) {
    const int ic = in.dim(1), h = in.dim(2), w = in.dim(3);
    Real* out = col.data();
    for (int i = 0; i < ic; ++i) {
        for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
                for (int oy = 0; oy < mh; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    const std::size_t row_base =
                        ((static_cast<std::size_t>(i) * kh + dy) * kw + dx) * mh * mw +
                        static_cast<std::size_t>(oy) * mw;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < mw; ++ox) out[row_base + ox] = Real(0);
                        continue;
                    }
                    for (int ox = 0; ox < mw; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        out[row_base + ox] =
                            (ix < 0 || ix >= w) ? Real(0) : in.at4(b, i, iy, ix);
                    }
                }
            }
        }
    }
}

// Transposed layout [Mh*Mw, I*kh*kw]; used by the weight-gradient matmul.
template <typename Real>
void im2col_t(const TensorT<Real>& in, int b, int kh, int kw, int pad, int stride,
              int mh, int mw, TensorT<Real>& col) {
    const int ic = in.dim(1), h = in.dim(2), w = in.dim(3);
    const int cols = ic * kh * kw;
    Real* out = col.data();
    for (int oy = 0; oy < mh; ++oy) {
        for (int ox = 0; ox < mw; ++ox) {
            Real* row = out + (static_cast<std::size_t>(oy) * mw + ox) * cols;
            for (int i = 0; i < ic; ++i) {
                for (int dy = 0; dy < kh; ++dy) {
                    const int iy = oy * stride + dy - pad;
                    for (int dx = 0; dx < kw; ++dx) {
                        const int ix = ox * stride + dx - pad;
                        row[(i * kh + dy) * kw + dx] =
                            (iy < 0 || iy >= h || ix < 0 || ix >= w)
                                ? Real(0)
                                : in.at4(b, i, iy, ix);
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch-gradient matrix [I*kh*kw, Mh*Mw] back onto the
// input gradient of one batch item.
template <typename Real>
void col2im_add(const TensorT<Real>& col, int b, int kh, int kw, int pad,
                int stride, int mh, int mw, TensorT<Real>& gin) {
    const int ic = gin.dim(1), h = gin.dim(2), w = gin.dim(3);
    const Real* src = col.data();
    for (int i = 0; i < ic; ++i) {
        for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
                for (int oy = 0; oy < mh; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= h) continue;
                    const std::size_t row_base =
                        ((static_cast<std::size_t>(i) * kh + dy) * kw + dx) * mh * mw +
                        static_cast<std::size_t>(oy) * mw;
                    for (int ox = 0; ox < mw; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        if (ix < 0 || ix >= w) continue;
                        gin.at4(b, i, iy, ix) += src[row_base + ox];
                    }
                }
            }
        }
    }
}

template <typename Real>
void conv_check(const TensorT<Real>& input, const TensorT<Real>& kernel) {
    if (input.rank() != 4)
        fail("conv2d: input must be [batch, channels, height, width], got " +
             shape_str(input.shape()));
    if (kernel.rank() != 4)
        fail("conv2d: kernel must be [out_ch, in_ch, k, k], got " +
             shape_str(kernel.shape()));
    if (input.dim(1) != kernel.dim(1))
        fail("conv2d: input has " + std::to_string(input.dim(1)) +
             " channels but kernel expects " + std::to_string(kernel.dim(1)));
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero padding.
template <typename Real>
TensorT<Real> conv2d(const TensorT<Real>& input, const TensorT<Real>& kernel,
                     int pad, int stride) {
    detail::conv_check(input, kernel);
    const int batch = input.dim(0), oc = kernel.dim(0);
    const int kh = kernel.dim(2), kw = kernel.dim(3);
    const int mh = conv_out_size(input.dim(2), kh, pad, stride);
    const int mw = conv_out_size(input.dim(3), kw, pad, stride);
    const int taps = kernel.dim(1) * kh * kw;

    TensorT<Real> out({batch, oc, mh, mw});
    TensorT<Real> col({taps, mh * mw});
    const TensorT<Real> kmat = kernel.reshaped({oc, taps});
    for (int b = 0; b < batch; ++b) {
        detail::im2col(input, b, kh, kw, pad, stride, mh, mw, col);
        TensorT<Real> slab({oc, mh * mw});
        matmul_into(slab, kmat, col, false);
        std::memcpy(out.data() + static_cast<std::size_t>(b) * oc * mh * mw,
                    slab.data(), slab.size() * sizeof(Real));
    }
    check_finite(out, "conv2d");
    return out;
}

// d loss / d input for conv2d; grad_out is [B, O, Mh, Mw].
template <typename Real>
TensorT<Real> conv2d_grad_input(const TensorT<Real>& grad_out,
                                const TensorT<Real>& kernel,
                                const std::vector<int>& input_shape, int pad,
                                int stride) {
    const int batch = grad_out.dim(0), oc = kernel.dim(0);
    const int kh = kernel.dim(2), kw = kernel.dim(3);
    const int mh = grad_out.dim(2), mw = grad_out.dim(3);
    const int taps = kernel.dim(1) * kh * kw;

    TensorT<Real> gin(input_shape);
    const TensorT<Real> kt = transpose2d(kernel.reshaped({oc, taps}));
    TensorT<Real> gcol({taps, mh * mw});
    for (int b = 0; b < batch; ++b) {
        const TensorT<Real> gslab = TensorT<Real>::from(
            {oc, mh * mw},
            std::vector<Real>(
                grad_out.data() + static_cast<std::size_t>(b) * oc * mh * mw,
                grad_out.data() + static_cast<std::size_t>(b + 1) * oc * mh * mw));
        matmul_into(gcol, kt, gslab, false);
        detail::col2im_add(gcol, b, kh, kw, pad, stride, mh, mw, gin);
    }
    return gin;
}

// d loss / d kernel for conv2d, accumulated into grad_kernel.
template <typename Real>
void conv2d_grad_weight(const TensorT<Real>& input, const TensorT<Real>& grad_out,
                        int pad, int stride, TensorT<Real>& grad_kernel) {
    const int batch = input.dim(0), oc = grad_out.dim(1);
    const int kh = grad_kernel.dim(2), kw = grad_kernel.dim(3);
    const int mh = grad_out.dim(2), mw = grad_out.dim(3);
    const int taps = grad_kernel.dim(1) * kh * kw;

    TensorT<Real> colt({mh * mw, taps});
    TensorT<Real> gk = grad_kernel.reshaped({oc, taps});
    for (int b = 0; b < batch; ++b) {
        detail::im2col_t(input, b, kh, kw, pad, stride, mh, mw, colt);
        const TensorT<Real> gslab = TensorT<Real>::from(
            {oc, mh * mw},
            std::vector<Real>(
                grad_out.data() + static_cast<std::size_t>(b) * oc * mh * mw,
                grad_out.data() + static_cast<std::size_t>(b + 1) * oc * mh * mw));
        matmul_into(gk, gslab, colt, true);
    }
    grad_kernel = gk.reshaped({oc, grad_kernel.dim(1), kh, kw});
}

}  // namespace spikefed
