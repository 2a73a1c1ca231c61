#pragma once

// Seeded generators for the property tests.

#include <cstdint>
#include <random>
#include <vector>

#include "ddfp/flow.hpp"
#include "ddfp/latent.hpp"
#include "ddfp/rng.hpp"
#include "ddfp/tensor.hpp"

namespace ddfp::test {

inline Tensor uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (double& x : t.data()) x = u(rng);
  return t;
}

inline Tensor normal(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t(rows, cols);
  for (double& x : t.data()) x = n(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline flow::FlowModel random_flow(std::size_t dim, std::uint64_t seed, double stddev = 0.05,
                                   std::size_t hidden = 32) {
  flow::FlowModel model(flow::FlowConfig{dim, hidden, 2, 2.0, seed});
  Rng rng = make_rng(seed, 77);
  flow::randomize(model, stddev, rng);
  return model;
}

}  // namespace ddfp::test
