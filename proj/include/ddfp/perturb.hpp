#pragma once

// Feature-space perturbations: the density-descending step computed from a
// frozen flow estimator, and the baselines it is compared against.
// All perturbations are returned as plain tensors, i.e. detached from any
// parameter graph.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "ddfp/flow.hpp"
#include "ddfp/latent.hpp"
#include "ddfp/nn.hpp"
#include "ddfp/rng.hpp"
#include "ddfp/tensor.hpp"

namespace ddfp::perturb {

enum class Kind {
  kNone,
  kDensityDescending,
  kGaussianNoise,  // normal direction, normalised and scaled
  kUniformNoise,   // U[-1, 1]^d direction, normalised and scaled
  kChannelDropout,
  kVatLite,
};

Kind parse_kind(std::string_view name);
std::string_view to_string(Kind kind);

enum class StepMode {
  kAbsolute,    // epsilon = step
  kFeatureStd,  // epsilon = step * feature_std(batch)
};

StepMode parse_step_mode(std::string_view name);
std::string_view to_string(StepMode mode);

struct PerturbConfig {
  Kind kind = Kind::kDensityDescending;
  double step = 4.0;
  StepMode step_mode = StepMode::kAbsolute;
  double dropout_rate = 0.5;
  std::size_t vat_iterations = 1;
  double vat_xi = 1e-2;

  void validate() const;
};

// Gradient norms at or below this count as "no direction".
inline constexpr double kMinGradientNorm = 1e-12;

// Root of the mean per-dimension variance of the rows of `v`.
double feature_std(const Tensor& v);
// Step size epsilon for this batch under the configured mode.
double resolve_step(const PerturbConfig& config, const Tensor& v);

// Row i is grad_v(-log p_V(v_i)) through the full mixture marginal, with the
// flow parameters held constant.
Tensor density_gradient(const Tensor& v, const flow::FlowModel& flow,
                        const latent::GmmLatent& latent);
std::vector<double> density_gradient(std::span<const double> v, const flow::FlowModel& flow,
                                     const latent::GmmLatent& latent);

struct Perturbation {
  Tensor delta;
  std::size_t fallbacks = 0;  // rows left unperturbed (vanishing gradient)
};

// delta_i = eps * g_i / ||g_i||_2 with g = density_gradient.
Perturbation ddfp_perturbation(const Tensor& v, double eps, const flow::FlowModel& flow,
                               const latent::GmmLatent& latent);

Tensor inject(const Tensor& v, const Tensor& delta);

// Noise / dropout / VAT perturbations. `head` (the classifier over
// features) is required for kVatLite only.
Tensor baseline_perturbation(Kind kind, const Tensor& v, const PerturbConfig& config, double eps,
                             Rng& rng, const nn::Linear* head = nullptr);

}  // namespace ddfp::perturb
