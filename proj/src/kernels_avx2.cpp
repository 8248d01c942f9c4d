#include "rtfd/kernels.hpp"

// AVX2 double-precision variants. Compiled with -mavx2 on x86-64; the
// dispatcher only hands this table out after a runtime CPU check.
//
// Elementwise kernels and matmul_acc use mul+add (no FMA) and process each
// element with the same operation order as the scalar table, so they produce
// bit-identical results. sum uses a 4-lane tree reduction and is only
// guaranteed equal up to rounding.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

namespace rtfd::kernels {
namespace {

void add_v(double* dst, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_v(double* dst, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_v(double* dst, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale_v(double* dst, const double* a, double s, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    }
    for (; i < n; ++i) dst[i] = a[i] * s;
}

void acc_v(double* dst, const double* a, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), _mm256_loadu_pd(a + i)));
    }
    for (; i < n; ++i) dst[i] += a[i];
}

void axpy_v(double* dst, const double* a, double s, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(vs, _mm256_loadu_pd(a + i));
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), prod));
    }
    for (; i < n; ++i) dst[i] += s * a[i];
}

void mul_acc_v(double* dst, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), prod));
    }
    for (; i < n; ++i) dst[i] += a[i] * b[i];
}

void add_scalar_acc_v(double* dst, double s, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), vs));
    }
    for (; i < n; ++i) dst[i] += s;
}

void relu_v(double* dst, const double* a, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_max_pd(_mm256_loadu_pd(a + i), zero));
    }
    for (; i < n; ++i) dst[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_mask_acc_v(double* dst, const double* g, const double* x, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d gm = _mm256_and_pd(_mm256_loadu_pd(g + i), mask);
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), gm));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0) dst[i] += g[i];
    }
}

void matmul_acc_v(double* c, const double* a, const double* b,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const __m256d va = _mm256_set1_pd(aip);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(brow + j));
                _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void matmul_set_v(double* c, const double* a, const double* b,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        {
            const __m256d va = _mm256_set1_pd(a[i * k]);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                _mm256_storeu_pd(crow + j, _mm256_mul_pd(va, _mm256_loadu_pd(b + j)));
            }
            for (; j < n; ++j) crow[j] = a[i * k] * b[j];
        }
        for (std::size_t p = 1; p < k; ++p) {
            const double aip = a[i * k + p];
            const __m256d va = _mm256_set1_pd(aip);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(brow + j));
                _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

double sum_v(const double* a, std::size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vacc = _mm256_add_pd(vacc, _mm256_loadu_pd(a + i));
    double lanes[4];
    _mm256_storeu_pd(lanes, vacc);
    double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) s += a[i];
    return s;
}

}  // namespace

const KernelTable* avx2_table() {
    if (!__builtin_cpu_supports("avx2")) return nullptr;
    static const KernelTable table{
        "avx2",  add_v,  sub_v,          mul_v,  scale_v,         acc_v,
        axpy_v,  mul_acc_v, add_scalar_acc_v, relu_v, relu_mask_acc_v,
        matmul_acc_v, matmul_set_v, sum_v, scalar_table().argmax,
    };
    return &table;
}

}  // namespace rtfd::kernels

#else  // non-x86 build: no AVX2 table

namespace rtfd::kernels {

const KernelTable* avx2_table() { return nullptr; }

}  // namespace rtfd::kernels

#endif
