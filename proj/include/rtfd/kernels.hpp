#pragma once

#include <cstddef>
#include <string>

namespace rtfd::kernels {

// Raw-buffer inner loops behind the tensor ops. The scalar table is the
// reference implementation; vector tables must reproduce it element for
// element. Elementwise kernels and matmul_acc keep the exact per-element
// operation order, so they are bit-identical to the scalar table; sum is a
// tree reduction in the AVX2 table and may differ in the last bits.
//
// Buffers passed to a kernel must not alias unless noted.
struct KernelTable {
    const char* name;

    void (*add)(double* dst, const double* a, const double* b, std::size_t n);
    void (*sub)(double* dst, const double* a, const double* b, std::size_t n);
    void (*mul)(double* dst, const double* a, const double* b, std::size_t n);
    void (*scale)(double* dst, const double* a, double s, std::size_t n);
    // dst += a
    void (*acc)(double* dst, const double* a, std::size_t n);
    // dst += s * a
    void (*axpy)(double* dst, const double* a, double s, std::size_t n);
    // dst += a * b
    void (*mul_acc)(double* dst, const double* a, const double* b, std::size_t n);
    // dst[i] += s
    void (*add_scalar_acc)(double* dst, double s, std::size_t n);
    void (*relu)(double* dst, const double* a, std::size_t n);
    // dst += g where x > 0
    void (*relu_mask_acc)(double* dst, const double* g, const double* x, std::size_t n);
    // C[m,n] += sum_k A[m,k] * B[k,n]; row-major, C must not alias A or B.
    void (*matmul_acc)(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t k, std::size_t n);
    // C[m,n] = sum_k A[m,k] * B[k,n]; C may start uninitialized. k >= 1.
    void (*matmul_set)(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t k, std::size_t n);
    double (*sum)(const double* a, std::size_t n);
    // index of the first maximum entry; n >= 1
    std::size_t (*argmax)(const double* a, std::size_t n);
};

const KernelTable& scalar_table();

/// AVX2 table, or nullptr when this build/CPU cannot run it.
const KernelTable* avx2_table();

/// Active table. Chosen once per process: AVX2 when the CPU supports it,
/// scalar otherwise. Override with RTFD_KERNELS=scalar|avx2|auto.
const KernelTable& active();

std::string active_name();

}  // namespace rtfd::kernels
