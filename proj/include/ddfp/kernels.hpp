#pragma once

// Dense inner-loop kernels. Every kernel has a portable scalar reference
// implementation; an AVX2+FMA variant is compiled on x86-64 and chosen at
// runtime when the CPU supports it. Setting DDFP_KERNELS=scalar in the
// environment forces the reference path.
//
// All matrices are row-major and densely packed.

#include <cstddef>
#include <string_view>

namespace ddfp {
class Tensor;
}

namespace ddfp::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  const char* name;
  // C[m x n] (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate);
  // C[m x n] (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate);
  // C[k x n] (+)= A[m x k]^T * B[m x n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table() noexcept;
// nullptr when the AVX2 variant was not compiled in (non-x86 targets).
const KernelTable* avx2_table() noexcept;
bool cpu_supports_avx2() noexcept;

const KernelTable& active() noexcept;
// Throws ContractViolation when the requested ISA is unavailable.
void set_active(Isa isa);
Isa parse_isa(std::string_view name);

// Tensor conveniences over active(); shapes are checked.
void matmul(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);

}  // namespace ddfp::kernels
