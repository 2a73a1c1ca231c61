#include <atomic>
#include <cstdlib>
#include <string>

#include "ddfp/errors.hpp"
#include "ddfp/tensor.hpp"
#include "kernels_impl.hpp"

namespace ddfp::kernels {

namespace {

const KernelTable kScalarTable{Isa::kScalar,    "scalar",       &scalar::gemm_nn,
                               &scalar::gemm_nt, &scalar::gemm_tn, &scalar::dot,
                               &scalar::axpy};

#ifdef DDFP_HAVE_AVX2_KERNELS
const KernelTable kAvx2Table{Isa::kAvx2,     "avx2",       &avx2::gemm_nn, &avx2::gemm_nt,
                             &avx2::gemm_tn, &avx2::dot,   &avx2::axpy};
#endif

const KernelTable* select_default() noexcept {
  if (const char* env = std::getenv("DDFP_KERNELS")) {
    if (std::string(env) == "scalar") return &kScalarTable;
  }
  if (cpu_supports_avx2()) {
    if (const KernelTable* t = avx2_table()) return t;
  }
  return &kScalarTable;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{select_default()};
  return table;
}

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalarTable; }

const KernelTable* avx2_table() noexcept {
#ifdef DDFP_HAVE_AVX2_KERNELS
  return &kAvx2Table;
#else
  return nullptr;
#endif
}

bool cpu_supports_avx2() noexcept {
#if defined(DDFP_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

void set_active(Isa isa) {
  if (isa == Isa::kScalar) {
    current().store(&kScalarTable);
    return;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr || !cpu_supports_avx2()) {
    throw ContractViolation("kernels: AVX2 variant unavailable on this machine");
  }
  current().store(t);
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  throw ConfigError("unknown kernel ISA '" + std::string(name) + "'");
}

namespace {
[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ContractViolation(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) +
                          "x" + std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                          "x" + std::to_string(b.cols()));
}

void prepare_out(Tensor& out, std::size_t rows, std::size_t cols, bool accumulate) {
  if (out.rows() == rows && out.cols() == cols) return;
  if (accumulate) throw ContractViolation("kernels: accumulate into wrongly shaped output");
  out = Tensor(rows, cols);
}
}  // namespace

void matmul(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  prepare_out(out, a.rows(), b.cols(), accumulate);
  active().gemm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(),
                   b.cols(), accumulate);
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  prepare_out(out, a.rows(), b.rows(), accumulate);
  active().gemm_nt(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(),
                   b.rows(), accumulate);
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
  prepare_out(out, a.cols(), b.cols(), accumulate);
  active().gemm_tn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(),
                   b.cols(), accumulate);
}

}  // namespace ddfp::kernels
