#include "rtfd/kernels.hpp"

// Reference kernels. Deliberately plain sequential loops: the vector tables
// are tested against these, and gradient checks assume their semantics.

namespace rtfd::kernels {
namespace {

void add_s(double* dst, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_s(double* dst, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_s(double* dst, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale_s(double* dst, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * s;
}

void acc_s(double* dst, const double* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += a[i];
}

void axpy_s(double* dst, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += s * a[i];
}

void mul_acc_s(double* dst, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += a[i] * b[i];
}

void add_scalar_acc_s(double* dst, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += s;
}

void relu_s(double* dst, const double* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_mask_acc_s(double* dst, const double* g, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) dst[i] += g[i];
    }
}

// Loop order m,k,n: each C[m,n] accumulates over k in ascending order. The
// AVX2 kernel keeps this order per element, so results match bit for bit.
void matmul_acc_s(double* c, const double* a, const double* b,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void matmul_set_s(double* c, const double* a, const double* b,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        {
            const double ai0 = a[i * k];
            for (std::size_t j = 0; j < n; ++j) crow[j] = ai0 * b[j];
        }
        for (std::size_t p = 1; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

double sum_s(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

std::size_t argmax_s(const double* a, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (a[i] > a[best]) best = i;
    }
    return best;
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{
        "scalar",  add_s,  sub_s,          mul_s,  scale_s,         acc_s,
        axpy_s,    mul_acc_s, add_scalar_acc_s, relu_s, relu_mask_acc_s,
        matmul_acc_s, matmul_set_s, sum_s, argmax_s,
    };
    return table;
}

}  // namespace rtfd::kernels
