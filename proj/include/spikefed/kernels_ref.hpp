#pragma once

#include <cstddef>
#include <cstdint>

namespace spikefed::kernels::ref {

// Scalar reference kernels. These define the semantics; the SIMD variants
// in kernels_avx2.cpp / kernels_neon.cpp must produce bitwise-identical
// results (per-element ops are lane-independent, and matmul accumulates in
// the same k order per output element). Keep accumulation order stable.

template <typename R>
void add(R* dst, const R* a, const R* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

template <typename R>
void sub(R* dst, const R* a, const R* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

template <typename R>
void mul(R* dst, const R* a, const R* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

template <typename R>
void div(R* dst, const R* a, const R* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] / b[i];
}

// dst[i] = a[i] * alpha + beta
template <typename R>
void affine(R* dst, const R* a, R alpha, R beta, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * alpha + beta;
}

// y[i] += alpha * x[i]
template <typename R>
void axpy(R* y, const R* x, R alpha, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[k,n], row-major.
// i-k-j loop order: each C element sees contributions in ascending k.
template <typename R>
void matmul(R* c, const R* a, const R* b, int m, int k, int n, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i) c[i] = R(0);
    }
    for (int i = 0; i < m; ++i) {
        R* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const R av = a[static_cast<std::size_t>(i) * k + p];
            const R* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Per (batch, channel) row of `inner` contiguous values:
//   xhat = (z - mean[c]) * inv_std[c];   out = gamma[c] * xhat
template <typename R>
void bntt_apply(R* xhat, R* out, const R* z, const R* mean, const R* inv_std,
                const R* gamma, int batch, int channels, int inner) {
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t base =
                (static_cast<std::size_t>(b) * channels + c) * inner;
            const R m = mean[c], is = inv_std[c], g = gamma[c];
            for (int i = 0; i < inner; ++i) {
                const R xh = (z[base + i] - m) * is;
                xhat[base + i] = xh;
                out[base + i] = g * xh;
            }
        }
    }
}

// Membrane update with hard reset:
//   v = leak * v + drive;  v_pre = v;  fired = v >= threshold;
//   spikes = fired ? 1 : 0;  v = fired ? 0 : v.   Returns #fired.
// v_pre keeps the pre-reset potential for the backward pass.
template <typename R>
std::uint64_t lif_step(R* membrane, R* v_pre, R* spikes, const R* drive, R leak,
                       R threshold, std::size_t n) {
    std::uint64_t fired = 0;
    for (std::size_t i = 0; i < n; ++i) {
        R v = leak * membrane[i] + drive[i];
        v_pre[i] = v;
        if (v >= threshold) {
            spikes[i] = R(1);
            membrane[i] = R(0);
            ++fired;
        } else {
            spikes[i] = R(0);
            membrane[i] = v;
        }
    }
    return fired;
}

// vel = momentum * vel + grad + wd * param;  param -= lr * vel
template <typename R>
void sgd_step(R* param, R* vel, const R* grad, R lr, R momentum, R wd,
              std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const R v = momentum * vel[i] + grad[i] + wd * param[i];
        vel[i] = v;
        param[i] -= lr * v;
    }
}

template <typename R>
void relu(R* out, const R* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > R(0) ? x[i] : R(0);
}

// gin = x > 0 ? g : 0
template <typename R>
void relu_grad(R* gin, const R* g, const R* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gin[i] = x[i] > R(0) ? g[i] : R(0);
}

}  // namespace spikefed::kernels::ref
