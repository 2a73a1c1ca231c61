#pragma once

// Class-anchored Gaussian-mixture base density with identity covariances,
// and the feature log-likelihoods obtained through a flow.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ddfp/autodiff.hpp"
#include "ddfp/flow.hpp"
#include "ddfp/tensor.hpp"

namespace ddfp::latent {

struct GmmLatent {
  Tensor means;                     // K x d, one component per class
  std::vector<double> log_weights;  // log pi_k
  std::uint64_t seed = 0;

  std::size_t components() const noexcept { return means.rows(); }
  std::size_t dim() const noexcept { return means.cols(); }
};

// Means ~ N(0, I) from `seed`; weights uniform unless given (must be
// positive and sum to 1 within 1e-9). Throws ConfigError on K < 1 or d < 1.
GmmLatent init_latent(std::size_t components, std::size_t dim, std::uint64_t seed,
                      std::span<const double> weights = {});

// log N(z | mu, I) = -d/2 log(2 pi) - ||z - mu||^2 / 2
double gaussian_logpdf(std::span<const double> z, std::span<const double> mu);
// log sum_k pi_k N(z | mu_k, I), evaluated with a max-shifted logsumexp.
double mixture_logpdf(std::span<const double> z, const GmmLatent& latent);

// log N(phi(v) | mu_k, I) + log|det dphi/dv|; k is zero-based.
double class_conditional_loglik(std::span<const double> v, std::size_t k,
                                const flow::FlowModel& flow, const GmmLatent& latent);
// log p_Z(phi(v)) + log|det dphi/dv|
double marginal_loglik(std::span<const double> v, const flow::FlowModel& flow,
                       const GmmLatent& latent);

// Batch forms, one entry per row of `v`.
std::vector<double> class_conditional_loglik(const Tensor& v, std::span<const std::size_t> labels,
                                             const flow::FlowModel& flow, const GmmLatent& latent);
std::vector<double> marginal_loglik(const Tensor& v, const flow::FlowModel& flow,
                                    const GmmLatent& latent);

// ---- differentiable path --------------------------------------------------

// N x K matrix of log N(z_i | mu_k, I).
ad::Var component_logpdf(ad::Var z, const GmmLatent& latent);
// N x 1 mixture log-density.
ad::Var mixture_logpdf(ad::Var z, const GmmLatent& latent);
ad::Var class_conditional_loglik(ad::Var v, std::span<const std::size_t> labels,
                                 const flow::BoundFlow& flow, const GmmLatent& latent);
ad::Var marginal_loglik(ad::Var v, const flow::BoundFlow& flow, const GmmLatent& latent);

}  // namespace ddfp::latent
