#pragma once

// Brute-force reference computations. Nothing here calls the analytic
// log-det or gradient code: the Jacobian and gradients are built from plain
// forward evaluations only.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "ddfp/flow.hpp"
#include "ddfp/latent.hpp"
#include "ddfp/tensor.hpp"

namespace ddfp::oracle {

// log|det| of a square row-major matrix via LU with partial pivoting.
// Throws NumericError when |det| < 1e-300.
double log_abs_det(Tensor a);

using VectorMap = std::function<std::vector<double>(std::span<const double>)>;

// d x d central-difference Jacobian of `f` at `v`.
Tensor numeric_jacobian(const VectorMap& f, std::span<const double> v, double h);

// log|det| of the central-difference Jacobian of the flow's forward map.
// Requires d <= 16 and h > 0.
double numeric_jacobian_logdet(const flow::FlowModel& flow, std::span<const double> v, double h);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences per coordinate. Requires h > 0.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> v, double h);

struct Box {
  double lo = -8.0;
  double hi = 8.0;
};

struct MassEstimate {
  double mass = 0.0;
  double stderr_ = 0.0;
  // Estimated share of the model's mass lying outside the box, from samples
  // drawn through the inverse flow. Above 1% triggers `warning`.
  double outside = 0.0;
  bool warning = false;
};

// Uniform Monte-Carlo estimate of the integral of exp(marginal_loglik) over
// box^2. Requires d = 2 and n > 0.
MassEstimate mc_normalization(const flow::FlowModel& flow, const latent::GmmLatent& latent,
                              Box box, std::size_t n, std::uint64_t seed);

struct GridCell {
  double x = 0.0;
  double y = 0.0;
  double logp = 0.0;
  std::size_t cls = 0;
};

// resolution^2 cell centres, row-major (y outer, x inner), with the marginal
// log-density and the most likely latent component.
std::vector<GridCell> grid_density(const flow::FlowModel& flow, const latent::GmmLatent& latent,
                                   Box box, std::size_t resolution);

// CSV "x,y,logp[,class]".
void write_grid_csv(std::ostream& os, std::span<const GridCell> cells, bool with_class);

}  // namespace ddfp::oracle
