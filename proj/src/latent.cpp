#include "ddfp/latent.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "ddfp/errors.hpp"
#include "ddfp/rng.hpp"

namespace ddfp::latent {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2 pi)

double log_normaliser(std::size_t d) { return -0.5 * static_cast<double>(d) * kLog2Pi; }

void check_component(std::size_t k, const GmmLatent& latent) {
  if (k >= latent.components()) {
    throw ContractViolation("invalid class index " + std::to_string(k) + " for " +
                            std::to_string(latent.components()) + " components");
  }
}
}  // namespace

GmmLatent init_latent(std::size_t components, std::size_t dim, std::uint64_t seed,
                      std::span<const double> weights) {
  if (components < 1) throw ConfigError("latent: need at least one component");
  if (dim < 1) throw ConfigError("latent: dimension must be positive");
  GmmLatent latent;
  latent.seed = seed;
  latent.means = Tensor(components, dim);
  Rng rng = make_rng(seed, 0x6a11);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& m : latent.means.data()) m = normal(rng);

  if (weights.empty()) {
    latent.log_weights.assign(components, -std::log(static_cast<double>(components)));
  } else {
    if (weights.size() != components) throw ConfigError("latent: one weight per component");
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("latent: weights must sum to 1");
    for (double w : weights) {
      if (!(w > 0.0)) throw ConfigError("latent: weights must be positive");
      latent.log_weights.push_back(std::log(w));
    }
  }
  return latent;
}

double gaussian_logpdf(std::span<const double> z, std::span<const double> mu) {
  if (z.size() != mu.size()) throw ContractViolation("gaussian_logpdf: dimension mismatch");
  double sq = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double diff = z[j] - mu[j];
    sq += diff * diff;
  }
  return log_normaliser(z.size()) - 0.5 * sq;
}

double mixture_logpdf(std::span<const double> z, const GmmLatent& latent) {
  const std::size_t k = latent.components();
  std::vector<double> terms(k);
  for (std::size_t c = 0; c < k; ++c) {
    terms[c] = latent.log_weights[c] + gaussian_logpdf(z, latent.means.row(c));
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

double class_conditional_loglik(std::span<const double> v, std::size_t k,
                                const flow::FlowModel& flow, const GmmLatent& latent) {
  check_component(k, latent);
  const flow::VectorResult f = flow::flow_forward(v, flow);
  return gaussian_logpdf(f.z, latent.means.row(k)) + f.logdet;
}

double marginal_loglik(std::span<const double> v, const flow::FlowModel& flow,
                       const GmmLatent& latent) {
  const flow::VectorResult f = flow::flow_forward(v, flow);
  return mixture_logpdf(f.z, latent) + f.logdet;
}

std::vector<double> class_conditional_loglik(const Tensor& v, std::span<const std::size_t> labels,
                                             const flow::FlowModel& flow,
                                             const GmmLatent& latent) {
  if (labels.size() != v.rows()) throw ContractViolation("class_conditional_loglik: one label per row");
  const flow::Transformed f = flow::flow_forward(v, flow);
  std::vector<double> out(v.rows());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    check_component(labels[r], latent);
    out[r] = gaussian_logpdf(f.out.row(r), latent.means.row(labels[r])) + f.logdet[r];
  }
  return out;
}

std::vector<double> marginal_loglik(const Tensor& v, const flow::FlowModel& flow,
                                    const GmmLatent& latent) {
  const flow::Transformed f = flow::flow_forward(v, flow);
  std::vector<double> out(v.rows());
  for (std::size_t r = 0; r < v.rows(); ++r) out[r] = mixture_logpdf(f.out.row(r), latent) + f.logdet[r];
  return out;
}

ad::Var component_logpdf(ad::Var z, const GmmLatent& latent) {
  if (z.cols() != latent.dim()) throw ContractViolation("component_logpdf: dimension mismatch");
  return ad::add_scalar(ad::scale(ad::sq_dist_rows(z, latent.means), -0.5),
                        log_normaliser(latent.dim()));
}

ad::Var mixture_logpdf(ad::Var z, const GmmLatent& latent) {
  ad::Var log_pi = z.tape()->constant(Tensor::row_vector(latent.log_weights));
  return ad::logsumexp_rows(ad::add_row(component_logpdf(z, latent), log_pi));
}

ad::Var class_conditional_loglik(ad::Var v, std::span<const std::size_t> labels,
                                 const flow::BoundFlow& flow, const GmmLatent& latent) {
  for (std::size_t k : labels) check_component(k, latent);
  const flow::TapeTransformed f = flow::flow_forward(v, flow);
  return ad::add(ad::pick_cols(component_logpdf(f.out, latent), labels), f.logdet);
}

ad::Var marginal_loglik(ad::Var v, const flow::BoundFlow& flow, const GmmLatent& latent) {
  const flow::TapeTransformed f = flow::flow_forward(v, flow);
  return ad::add(mixture_logpdf(f.out, latent), f.logdet);
}

}  // namespace ddfp::latent
