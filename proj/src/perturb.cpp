#include "ddfp/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "ddfp/autodiff.hpp"
#include "ddfp/errors.hpp"

namespace ddfp::perturb {

Kind parse_kind(std::string_view name) {
  if (name == "none") return Kind::kNone;
  if (name == "density-descending" || name == "dd") return Kind::kDensityDescending;
  if (name == "gaussian-noise" || name == "random") return Kind::kGaussianNoise;
  if (name == "uniform-noise" || name == "uniform") return Kind::kUniformNoise;
  if (name == "channel-dropout" || name == "dropout") return Kind::kChannelDropout;
  if (name == "vat-lite" || name == "vat") return Kind::kVatLite;
  throw ConfigError("unknown perturbation kind '" + std::string(name) + "'");
}

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kDensityDescending: return "density-descending";
    case Kind::kGaussianNoise: return "gaussian-noise";
    case Kind::kUniformNoise: return "uniform-noise";
    case Kind::kChannelDropout: return "channel-dropout";
    case Kind::kVatLite: return "vat-lite";
  }
  return "?";
}

StepMode parse_step_mode(std::string_view name) {
  if (name == "absolute") return StepMode::kAbsolute;
  if (name == "feature-std") return StepMode::kFeatureStd;
  throw ConfigError("unknown step mode '" + std::string(name) + "'");
}

std::string_view to_string(StepMode mode) {
  return mode == StepMode::kAbsolute ? "absolute" : "feature-std";
}

void PerturbConfig::validate() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("perturb: step must be positive");
  if (!(dropout_rate > 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("perturb: dropout_rate must lie in (0, 1)");
  }
  if (vat_iterations < 1) throw ConfigError("perturb: vat_iterations must be >= 1");
  if (!(vat_xi > 0.0)) throw ConfigError("perturb: vat_xi must be positive");
}

double feature_std(const Tensor& v) {
  if (v.rows() == 0 || v.cols() == 0) return 0.0;
  const double n = static_cast<double>(v.rows());
  double total = 0.0;
  for (std::size_t j = 0; j < v.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < v.rows(); ++r) mean += v(r, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < v.rows(); ++r) var += (v(r, j) - mean) * (v(r, j) - mean);
    total += var / n;
  }
  return std::sqrt(total / static_cast<double>(v.cols()));
}

double resolve_step(const PerturbConfig& config, const Tensor& v) {
  return config.step_mode == StepMode::kAbsolute ? config.step : config.step * feature_std(v);
}

namespace {

double row_norm(std::span<const double> row) {
  double s = 0.0;
  for (double x : row) s += x * x;
  return std::sqrt(s);
}

// Scales every row to length eps; rows with no direction are zeroed and
// counted.
std::size_t normalise_rows(Tensor& t, double eps) {
  std::size_t zeroed = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    const double n = row_norm(row);
    if (!(n > kMinGradientNorm)) {
      std::fill(row.begin(), row.end(), 0.0);
      ++zeroed;
      continue;
    }
    for (double& x : row) x = eps * (x / n);
  }
  return zeroed;
}

}  // namespace

Tensor density_gradient(const Tensor& v, const flow::FlowModel& flow,
                        const latent::GmmLatent& latent) {
  ad::Tape tape;
  const flow::BoundFlow bound = flow::bind(tape, flow, /*trainable=*/false);
  ad::Var x = tape.variable(v);
  // Rows are independent, so the gradient of the summed NLL is the per-row gradient.
  ad::Var nll = ad::neg(ad::sum(latent::marginal_loglik(x, bound, latent)));
  const ad::Var wrt[] = {x};
  try {
    return std::move(tape.grad(nll, wrt).front());
  } catch (const NumericError&) {
    std::ostringstream os;
    os << "density_gradient: non-finite gradient; first offending feature:";
    // Locate the offending row with per-row evaluation.
    for (std::size_t r = 0; r < v.rows(); ++r) {
      ad::Tape t1;
      const flow::BoundFlow b1 = flow::bind(t1, flow, false);
      ad::Var xr = t1.variable(Tensor::row_vector(v.row(r)));
      const ad::Var w1[] = {xr};
      try {
        t1.grad(ad::neg(ad::sum(latent::marginal_loglik(xr, b1, latent))), w1);
      } catch (const NumericError&) {
        for (double x : v.row(r)) os << ' ' << x;
        break;
      }
    }
    throw NumericError(os.str());
  }
}

std::vector<double> density_gradient(std::span<const double> v, const flow::FlowModel& flow,
                                     const latent::GmmLatent& latent) {
  Tensor g = density_gradient(Tensor::row_vector(v), flow, latent);
  return {g.data().begin(), g.data().end()};
}

Perturbation ddfp_perturbation(const Tensor& v, double eps, const flow::FlowModel& flow,
                               const latent::GmmLatent& latent) {
  if (!(eps >= 0.0)) throw ContractViolation("ddfp_perturbation: eps must be non-negative");
  Perturbation p{density_gradient(v, flow, latent), 0};
  p.fallbacks = normalise_rows(p.delta, eps);
  return p;
}

Tensor inject(const Tensor& v, const Tensor& delta) {
  if (!v.same_shape(delta)) throw ContractViolation("inject: shape mismatch");
  Tensor out = v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
  return out;
}

namespace {

Tensor vat_direction(const Tensor& v, const PerturbConfig& config, Rng& rng,
                     const nn::Linear& head) {
  const Tensor p = nn::softmax_rows(head.forward(v));
  Tensor d(v.rows(), v.cols());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : d.data()) x = normal(rng);
  normalise_rows(d, 1.0);

  for (std::size_t it = 0; it < config.vat_iterations; ++it) {
    ad::Tape tape;
    const nn::BoundLinear g = nn::bind(tape, head, /*trainable=*/false);
    Tensor r0 = d;
    for (double& x : r0.data()) x *= config.vat_xi;
    ad::Var r = tape.variable(std::move(r0));
    ad::Var logq = ad::log_softmax_rows(g(ad::add(tape.constant(v), r)));
    // KL(p || q) up to a term constant in r.
    ad::Var kl = ad::neg(ad::sum(ad::mul(tape.constant(p), logq)));
    const ad::Var wrt[] = {r};
    Tensor grad = std::move(tape.grad(kl, wrt).front());
    // Keep the previous direction for rows whose gradient vanished.
    for (std::size_t row = 0; row < grad.rows(); ++row) {
      if (row_norm(grad.row(row)) > kMinGradientNorm) {
        std::copy(grad.row(row).begin(), grad.row(row).end(), d.row(row).begin());
      }
    }
    normalise_rows(d, 1.0);
  }
  return d;
}

}  // namespace

Tensor baseline_perturbation(Kind kind, const Tensor& v, const PerturbConfig& config, double eps,
                             Rng& rng, const nn::Linear* head) {
  switch (kind) {
    case Kind::kGaussianNoise: {
      Tensor d(v.rows(), v.cols());
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& x : d.data()) x = normal(rng);
      normalise_rows(d, eps);
      return d;
    }
    case Kind::kUniformNoise: {
      Tensor d(v.rows(), v.cols());
      std::uniform_real_distribution<double> uniform(-1.0, 1.0);
      for (double& x : d.data()) x = uniform(rng);
      normalise_rows(d, eps);
      return d;
    }
    case Kind::kChannelDropout: {
      // Exactly round(rate * d) coordinates of every row are zeroed.
      const std::size_t dim = v.cols();
      const auto drop = static_cast<std::size_t>(std::lround(config.dropout_rate * static_cast<double>(dim)));
      Tensor d(v.rows(), dim);
      std::vector<std::size_t> idx(dim);
      for (std::size_t r = 0; r < v.rows(); ++r) {
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < drop; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, dim - 1);
          std::swap(idx[i], idx[pick(rng)]);
          d(r, idx[i]) = -v(r, idx[i]);
        }
      }
      return d;
    }
    case Kind::kVatLite: {
      if (head == nullptr) throw ContractViolation("vat-lite perturbation needs the classifier head");
      if (head->in() != v.cols()) throw ContractViolation("vat-lite: head width mismatch");
      Tensor d = vat_direction(v, config, rng, *head);
      for (double& x : d.data()) x *= eps;
      return d;
    }
    case Kind::kNone:
      return Tensor(v.rows(), v.cols());
    case Kind::kDensityDescending:
      break;
  }
  throw ContractViolation("baseline_perturbation: '" + std::string(to_string(kind)) +
                          "' is not a baseline kind");
}

}  // namespace ddfp::perturb
