#include <doctest.h>

#include <cstdlib>

#include "ddfp/errors.hpp"
#include "ddfp/kernels.hpp"
#include "ddfp/tensor.hpp"
#include "support.hpp"

using namespace ddfp;

namespace {

// Naive triple loop, independent of both kernel sets.
Tensor reference_nn(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

const std::size_t kShapes[][3] = {{1, 1, 1}, {3, 5, 2}, {7, 1, 9}, {4, 16, 4}, {13, 17, 11},
                                  {2, 256, 8}, {64, 4, 256}, {5, 3, 3}, {1, 33, 1}};

}  // namespace

TEST_CASE("scalar kernels match a naive reference") {
  Rng rng = make_rng(1);
  const kernels::KernelTable& k = kernels::scalar_table();
  for (const auto& s : kShapes) {
    const Tensor a = test::uniform(s[0], s[1], rng);
    const Tensor b = test::uniform(s[1], s[2], rng);
    const Tensor ref = reference_nn(a, b);
    Tensor c(s[0], s[2]);
    k.gemm_nn(a.data().data(), b.data().data(), c.data().data(), s[0], s[1], s[2], false);
    CHECK(test::max_abs_diff(c, ref) < 1e-12);
    const Tensor bt = transpose(b);
    k.gemm_nt(a.data().data(), bt.data().data(), c.data().data(), s[0], s[1], s[2], false);
    CHECK(test::max_abs_diff(c, ref) < 1e-12);
    // tn with A = a^T gives back a * b.
    const Tensor at = transpose(a);
    k.gemm_tn(at.data().data(), b.data().data(), c.data().data(), s[1], s[0], s[2], false);
    CHECK(test::max_abs_diff(c, ref) < 1e-12);
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const kernels::KernelTable* fast = kernels::avx2_table();
  if (fast == nullptr || !kernels::cpu_supports_avx2()) {
    MESSAGE("AVX2 kernels unavailable on this machine; skipped");
    return;
  }
  const kernels::KernelTable& ref = kernels::scalar_table();
  Rng rng = make_rng(2);
  for (const auto& s : kShapes) {
    const std::size_t m = s[0], kk = s[1], n = s[2];
    const Tensor a = test::uniform(m, kk, rng);
    const Tensor b = test::uniform(kk, n, rng);
    const Tensor bt = transpose(b);
    const Tensor seed_c = test::uniform(m, n, rng);
    for (bool acc : {false, true}) {
      Tensor c1 = seed_c, c2 = seed_c;
      ref.gemm_nn(a.data().data(), b.data().data(), c1.data().data(), m, kk, n, acc);
      fast->gemm_nn(a.data().data(), b.data().data(), c2.data().data(), m, kk, n, acc);
      CHECK(test::max_abs_diff(c1, c2) < 1e-12);

      c1 = seed_c, c2 = seed_c;
      ref.gemm_nt(a.data().data(), bt.data().data(), c1.data().data(), m, kk, n, acc);
      fast->gemm_nt(a.data().data(), bt.data().data(), c2.data().data(), m, kk, n, acc);
      CHECK(test::max_abs_diff(c1, c2) < 1e-12);

      const Tensor a2 = test::uniform(m, kk, rng);
      const Tensor b2 = test::uniform(m, n, rng);
      Tensor d1 = test::uniform(kk, n, rng);
      Tensor d2 = d1;
      ref.gemm_tn(a2.data().data(), b2.data().data(), d1.data().data(), m, kk, n, acc);
      fast->gemm_tn(a2.data().data(), b2.data().data(), d2.data().data(), m, kk, n, acc);
      CHECK(test::max_abs_diff(d1, d2) < 1e-12);
    }
  }
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 17u, 100u}) {
    const Tensor x = test::uniform(1, n, rng), y = test::uniform(1, n, rng);
    CHECK(std::abs(ref.dot(x.data().data(), y.data().data(), n) -
                   fast->dot(x.data().data(), y.data().data(), n)) < 1e-12);
    Tensor y1 = y, y2 = y;
    ref.axpy(0.37, x.data().data(), y1.data().data(), n);
    fast->axpy(0.37, x.data().data(), y2.data().data(), n);
    CHECK(test::max_abs_diff(y1, y2) < 1e-15);
  }
}

TEST_CASE("dispatch can be switched and tensor wrappers check shapes") {
  const kernels::Isa before = kernels::active().isa;
  kernels::set_active(kernels::Isa::kScalar);
  CHECK(kernels::active().isa == kernels::Isa::kScalar);
  Rng rng = make_rng(3);
  const Tensor a = test::uniform(3, 4, rng), b = test::uniform(4, 2, rng);
  Tensor out;
  kernels::matmul(a, b, out);
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 2);
  CHECK(test::max_abs_diff(out, reference_nn(a, b)) < 1e-12);
  CHECK_THROWS_AS(kernels::matmul(a, a, out), ContractViolation);
  kernels::matmul(a, b, out, /*accumulate=*/true);
  Tensor twice = reference_nn(a, b);
  for (double& x : twice.data()) x *= 2.0;
  CHECK(test::max_abs_diff(out, twice) < 1e-12);
  CHECK(kernels::parse_isa("scalar") == kernels::Isa::kScalar);
  CHECK_THROWS(kernels::parse_isa("neon"));
  if (kernels::cpu_supports_avx2() && kernels::avx2_table() != nullptr) kernels::set_active(before);
}
