// NEON (AArch64) variants of the float kernels. Same bitwise-equivalence
// contract as the AVX2 file: lane ops mirror the reference, matmul keeps the
// per-element k accumulation order, comparisons produce the same masks.

#if defined(__ARM_NEON) && defined(__aarch64__)

#include <arm_neon.h>

#include "spikefed/kernels.hpp"

namespace spikefed::kernels {
namespace {

void add_neon(float* dst, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(dst + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_neon(float* dst, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(dst + i, vsubq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_neon(float* dst, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(dst + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void div_neon(float* dst, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(dst + i, vdivq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) dst[i] = a[i] / b[i];
}

void affine_neon(float* dst, const float* a, float alpha, float beta,
                 std::size_t n) {
    const float32x4_t va = vdupq_n_f32(alpha);
    const float32x4_t vb = vdupq_n_f32(beta);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(dst + i, vaddq_f32(vmulq_f32(vld1q_f32(a + i), va), vb));
    for (; i < n; ++i) dst[i] = a[i] * alpha + beta;
}

void axpy_neon(float* y, const float* x, float alpha, std::size_t n) {
    const float32x4_t va = vdupq_n_f32(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t vy = vld1q_f32(y + i);
        vst1q_f32(y + i, vaddq_f32(vy, vmulq_f32(va, vld1q_f32(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void matmul_neon(float* c, const float* a, const float* b, int m, int k, int n,
                 bool accumulate) {
    if (!accumulate) {
        const float32x4_t zero = vdupq_n_f32(0.0f);
        const std::size_t total = static_cast<std::size_t>(m) * n;
        std::size_t i = 0;
        for (; i + 4 <= total; i += 4) vst1q_f32(c + i, zero);
        for (; i < total; ++i) c[i] = 0.0f;
    }
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = a[static_cast<std::size_t>(i) * k + p];
            const float* brow = b + static_cast<std::size_t>(p) * n;
            const float32x4_t vav = vdupq_n_f32(av);
            int j = 0;
            for (; j + 4 <= n; j += 4) {
                const float32x4_t vc = vld1q_f32(crow + j);
                vst1q_f32(crow + j,
                          vaddq_f32(vc, vmulq_f32(vav, vld1q_f32(brow + j))));
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void bntt_apply_neon(float* xhat, float* out, const float* z, const float* mean,
                     const float* inv_std, const float* gamma, int batch,
                     int channels, int inner) {
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t base =
                (static_cast<std::size_t>(b) * channels + c) * inner;
            const float m = mean[c], is = inv_std[c], g = gamma[c];
            const float32x4_t vm = vdupq_n_f32(m);
            const float32x4_t vis = vdupq_n_f32(is);
            const float32x4_t vg = vdupq_n_f32(g);
            int i = 0;
            for (; i + 4 <= inner; i += 4) {
                const float32x4_t xh =
                    vmulq_f32(vsubq_f32(vld1q_f32(z + base + i), vm), vis);
                vst1q_f32(xhat + base + i, xh);
                vst1q_f32(out + base + i, vmulq_f32(vg, xh));
            }
            for (; i < inner; ++i) {
                const float xh = (z[base + i] - m) * is;
                xhat[base + i] = xh;
                out[base + i] = g * xh;
            }
        }
    }
}

std::uint64_t lif_step_neon(float* membrane, float* v_pre, float* spikes,
                            const float* drive, float leak, float threshold,
                            std::size_t n) {
    const float32x4_t vleak = vdupq_n_f32(leak);
    const float32x4_t vthr = vdupq_n_f32(threshold);
    const uint32x4_t vone = vreinterpretq_u32_f32(vdupq_n_f32(1.0f));
    std::uint64_t fired = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t v = vaddq_f32(
            vmulq_f32(vleak, vld1q_f32(membrane + i)), vld1q_f32(drive + i));
        vst1q_f32(v_pre + i, v);
        const uint32x4_t mask = vcgeq_f32(v, vthr);
        vst1q_f32(spikes + i, vreinterpretq_f32_u32(vandq_u32(mask, vone)));
        vst1q_f32(membrane + i, vreinterpretq_f32_u32(
                                    vbicq_u32(vreinterpretq_u32_f32(v), mask)));
        fired += vaddvq_u32(vshrq_n_u32(mask, 31));
    }
    for (; i < n; ++i) {
        const float v = leak * membrane[i] + drive[i];
        v_pre[i] = v;
        if (v >= threshold) {
            spikes[i] = 1.0f;
            membrane[i] = 0.0f;
            ++fired;
        } else {
            spikes[i] = 0.0f;
            membrane[i] = v;
        }
    }
    return fired;
}

void sgd_step_neon(float* param, float* vel, const float* grad, float lr,
                   float momentum, float wd, std::size_t n) {
    const float32x4_t vmom = vdupq_n_f32(momentum);
    const float32x4_t vwd = vdupq_n_f32(wd);
    const float32x4_t vlr = vdupq_n_f32(lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t p = vld1q_f32(param + i);
        float32x4_t v = vmulq_f32(vmom, vld1q_f32(vel + i));
        v = vaddq_f32(v, vld1q_f32(grad + i));
        v = vaddq_f32(v, vmulq_f32(vwd, p));
        vst1q_f32(vel + i, v);
        vst1q_f32(param + i, vsubq_f32(p, vmulq_f32(vlr, v)));
    }
    for (; i < n; ++i) {
        const float v = momentum * vel[i] + grad[i] + wd * param[i];
        vel[i] = v;
        param[i] -= lr * v;
    }
}

void relu_neon(float* out, const float* x, std::size_t n) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t vx = vld1q_f32(x + i);
        const uint32x4_t mask = vcgtq_f32(vx, zero);
        vst1q_f32(out + i, vreinterpretq_f32_u32(
                               vandq_u32(mask, vreinterpretq_u32_f32(vx))));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_grad_neon(float* gin, const float* g, const float* x, std::size_t n) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const uint32x4_t mask = vcgtq_f32(vld1q_f32(x + i), zero);
        vst1q_f32(gin + i, vreinterpretq_f32_u32(vandq_u32(
                               mask, vreinterpretq_u32_f32(vld1q_f32(g + i)))));
    }
    for (; i < n; ++i) gin[i] = x[i] > 0.0f ? g[i] : 0.0f;
}

}  // namespace

const Table& neon_table() {
    static const Table t = {
        &add_neon,    &sub_neon,        &mul_neon,      &div_neon,
        &affine_neon, &axpy_neon,       &matmul_neon,   &bntt_apply_neon,
        &lif_step_neon, &sgd_step_neon, &relu_neon,     &relu_grad_neon,
    };
    return t;
}

}  // namespace spikefed::kernels

#endif  // __ARM_NEON && __aarch64__
