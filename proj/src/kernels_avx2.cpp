// AVX2 variants of the float kernels. Compiled with -mavx2 and reached only
// after the runtime CPU check in kernels_dispatch.cpp. Each kernel keeps the
// reference accumulation order per output element so results are bitwise
// identical to kernels_ref.hpp (mul/add kept separate; no FMA).

#if defined(__AVX2__)

#include <immintrin.h>

#include "spikefed/kernels.hpp"

namespace spikefed::kernels {
namespace {

void add_avx2(float* dst, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(a + i),
                                                _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_avx2(float* dst, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(dst + i, _mm256_sub_ps(_mm256_loadu_ps(a + i),
                                                _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_avx2(float* dst, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(dst + i, _mm256_mul_ps(_mm256_loadu_ps(a + i),
                                                _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void div_avx2(float* dst, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(dst + i, _mm256_div_ps(_mm256_loadu_ps(a + i),
                                                _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] / b[i];
}

void affine_avx2(float* dst, const float* a, float alpha, float beta,
                 std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    const __m256 vb = _mm256_set1_ps(beta);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(
            dst + i, _mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(a + i), va), vb));
    }
    for (; i < n; ++i) dst[i] = a[i] * alpha + beta;
}

void axpy_avx2(float* y, const float* x, float alpha, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vy = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(
            y + i, _mm256_add_ps(vy, _mm256_mul_ps(va, _mm256_loadu_ps(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void matmul_avx2(float* c, const float* a, const float* b, int m, int k, int n,
                 bool accumulate) {
    if (!accumulate) {
        const __m256 zero = _mm256_setzero_ps();
        const std::size_t total = static_cast<std::size_t>(m) * n;
        std::size_t i = 0;
        for (; i + 8 <= total; i += 8) _mm256_storeu_ps(c + i, zero);
        for (; i < total; ++i) c[i] = 0.0f;
    }
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = a[static_cast<std::size_t>(i) * k + p];
            const float* brow = b + static_cast<std::size_t>(p) * n;
            const __m256 vav = _mm256_set1_ps(av);
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                const __m256 vc = _mm256_loadu_ps(crow + j);
                _mm256_storeu_ps(
                    crow + j,
                    _mm256_add_ps(vc, _mm256_mul_ps(vav, _mm256_loadu_ps(brow + j))));
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void bntt_apply_avx2(float* xhat, float* out, const float* z, const float* mean,
                     const float* inv_std, const float* gamma, int batch,
                     int channels, int inner) {
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t base =
                (static_cast<std::size_t>(b) * channels + c) * inner;
            const float m = mean[c], is = inv_std[c], g = gamma[c];
            const __m256 vm = _mm256_set1_ps(m);
            const __m256 vis = _mm256_set1_ps(is);
            const __m256 vg = _mm256_set1_ps(g);
            int i = 0;
            for (; i + 8 <= inner; i += 8) {
                const __m256 xh = _mm256_mul_ps(
                    _mm256_sub_ps(_mm256_loadu_ps(z + base + i), vm), vis);
                _mm256_storeu_ps(xhat + base + i, xh);
                _mm256_storeu_ps(out + base + i, _mm256_mul_ps(vg, xh));
            }
            for (; i < inner; ++i) {
                const float xh = (z[base + i] - m) * is;
                xhat[base + i] = xh;
                out[base + i] = g * xh;
            }
        }
    }
}

std::uint64_t lif_step_avx2(float* membrane, float* v_pre, float* spikes,
                            const float* drive, float leak, float threshold,
                            std::size_t n) {
    const __m256 vleak = _mm256_set1_ps(leak);
    const __m256 vthr = _mm256_set1_ps(threshold);
    const __m256 vone = _mm256_set1_ps(1.0f);
    std::uint64_t fired = 0;
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_add_ps(
            _mm256_mul_ps(vleak, _mm256_loadu_ps(membrane + i)),
            _mm256_loadu_ps(drive + i));
        _mm256_storeu_ps(v_pre + i, v);
        const __m256 mask = _mm256_cmp_ps(v, vthr, _CMP_GE_OQ);
        _mm256_storeu_ps(spikes + i, _mm256_and_ps(mask, vone));
        _mm256_storeu_ps(membrane + i, _mm256_andnot_ps(mask, v));
        fired += static_cast<unsigned>(
            __builtin_popcount(_mm256_movemask_ps(mask)));
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

void sgd_step_avx2(float* param, float* vel, const float* grad, float lr,
                   float momentum, float wd, std::size_t n) {
    const __m256 vmom = _mm256_set1_ps(momentum);
    const __m256 vwd = _mm256_set1_ps(wd);
    const __m256 vlr = _mm256_set1_ps(lr);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 p = _mm256_loadu_ps(param + i);
        // ((momentum * vel) + grad) + (wd * param), as in the reference
        __m256 v = _mm256_mul_ps(vmom, _mm256_loadu_ps(vel + i));
        v = _mm256_add_ps(v, _mm256_loadu_ps(grad + i));
        v = _mm256_add_ps(v, _mm256_mul_ps(vwd, p));
        _mm256_storeu_ps(vel + i, v);
        _mm256_storeu_ps(param + i, _mm256_sub_ps(p, _mm256_mul_ps(vlr, v)));
    }
    for (; i < n; ++i) {
        const float v = momentum * vel[i] + grad[i] + wd * param[i];
        vel[i] = v;
        param[i] -= lr * v;
    }
}

void relu_avx2(float* out, const float* x, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        // max(x, 0) picks +0 for x == -0 and 0 for NaN, same as x > 0 ? x : 0
        _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_grad_avx2(float* gin, const float* g, const float* x, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(gin + i, _mm256_and_ps(mask, _mm256_loadu_ps(g + i)));
    }
    for (; i < n; ++i) gin[i] = x[i] > 0.0f ? g[i] : 0.0f;
}

}  // namespace

const Table& avx2_table() {
    static const Table t = {
        &add_avx2,    &sub_avx2,        &mul_avx2,      &div_avx2,
        &affine_avx2, &axpy_avx2,       &matmul_avx2,   &bntt_apply_avx2,
        &lif_step_avx2, &sgd_step_avx2, &relu_avx2,     &relu_grad_avx2,
    };
    return t;
}

}  // namespace spikefed::kernels

#endif  // __AVX2__
