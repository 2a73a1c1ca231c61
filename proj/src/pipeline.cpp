#include "ddfp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "ddfp/errors.hpp"
#include "ddfp/oracle.hpp"
#include "ddfp/perturb.hpp"

namespace ddfp::pipeline {

DensityFit fit_density(const config::RunConfig& config, std::size_t steps) {
  data::Dataset ds = config::make_dataset(config.data, config.seed);
  const std::size_t d = ds.points.cols();
  const ssl::SslConfig& s = config.ssl;
  flow::FlowConfig fc{d, s.flow_hidden, s.flow_blocks, s.flow_s_max, config.seed, s.flow_activation};
  fc.validate();
  DensityFit fit{{flow::FlowModel(fc), latent::init_latent(ds.classes, d, config.seed, s.latent_weights)},
                 {},
                 {}};
  estimator::FlowTrainConfig tc = s.estimator;
  tc.seed = config.seed;
  const Tensor labeled = ds.rows(ds.labeled);
  const Tensor unlabeled = ds.unlabeled.empty() ? Tensor(0, d) : ds.rows(ds.unlabeled);
  const std::vector<std::size_t> labels = ds.labels_of(ds.labeled);
  fit.log = estimator::fit_density(fit.model.flow, fit.model.latent, labeled, labels, unlabeled, tc, steps);
  fit.dataset = std::move(ds);
  return fit;
}

namespace {

Tensor uniform_batch(std::size_t n, std::size_t d, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(n, d);
  for (double& x : t.data()) x = u(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Check roundtrip_check(const std::string& name, const flow::FlowModel& flow, Rng& rng) {
  const Tensor v = uniform_batch(1000, flow.dim(), -2.0, 2.0, rng);
  const double err = max_abs_diff(flow::flow_inverse(flow::flow_forward(v, flow).out, flow), v);
  return {name, err < 1e-9, err, 1e-9, "max |inverse(forward(v)) - v| over 1000 vectors"};
}

double logdet_rel_error(const flow::FlowModel& flow, std::span<const double> v, double h) {
  const double analytic = flow::flow_forward(v, flow).logdet;
  const double numeric = oracle::numeric_jacobian_logdet(flow, v, h);
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

std::vector<Check> verify(const config::RunConfig& config, const checkpoint::Checkpoint* trained) {
  const config::VerifyConfig& vc = config.verify;
  const ssl::SslConfig& s = config.ssl;
  Rng rng = make_rng(config.seed, 0x7e51f);
  std::vector<Check> checks;

  flow::FlowConfig fc{vc.dim, s.flow_hidden, s.flow_blocks, s.flow_s_max, config.seed, s.flow_activation};
  const flow::FlowModel identity(fc);
  checks.push_back(roundtrip_check("identity_roundtrip", identity, rng));
  {
    const Tensor v = uniform_batch(100, vc.dim, -2.0, 2.0, rng);
    double worst = 0.0;
    for (double ld : flow::flow_forward(v, identity).logdet) worst = std::max(worst, std::abs(ld));
    for (std::size_t r = 0; r < 5; ++r) {
      worst = std::max(worst, std::abs(oracle::numeric_jacobian_logdet(identity, v.row(r), vc.h)));
    }
    checks.push_back({"identity_logdet", worst < 1e-6, worst, 1e-6, "analytic and numeric log|det| of the identity flow"});
  }

  double rt = 0.0, ld = 0.0;
  for (std::size_t t = 0; t < vc.trials; ++t) {
    fc.seed = config.seed + t + 1;
    flow::FlowModel model(fc);
    flow::randomize(model, vc.randomize_std, rng);
    rt = std::max(rt, roundtrip_check("", model, rng).value);
    const Tensor v = uniform_batch(1, vc.dim, -2.0, 2.0, rng);
    ld = std::max(ld, logdet_rel_error(model, v.row(0), vc.h));
  }
  checks.push_back({"random_roundtrip", rt < 1e-9, rt, 1e-9, std::to_string(vc.trials) + " randomised flows"});
  checks.push_back({"logdet_vs_numeric_jacobian", ld < 1e-4, ld, 1e-4,
                    "max relative error over " + std::to_string(vc.trials) + " randomised flows"});

  std::optional<DensityFit> fit;
  const checkpoint::Checkpoint* model = trained;
  if (model == nullptr) {
    fit = fit_density(config, vc.fit_steps);
    model = &fit->model;
  }
  if (model->flow.dim() != 2) {
    checks.push_back({"density_model_dim", false, static_cast<double>(model->flow.dim()), 2.0,
                      "gradient and mass checks need a 2-D density model"});
    return checks;
  }
  {
    const Tensor v = uniform_batch(200, 2, -1.5, 2.5, rng);
    const Tensor g = perturb::density_gradient(v, model->flow, model->latent);
    const oracle::ScalarFn nll = [model](std::span<const double> x) {
      return -latent::marginal_loglik(x, model->flow, model->latent);
    };
    double worst = 0.0;
    for (std::size_t r = 0; r < v.rows(); ++r) {
      const std::vector<double> fd = oracle::finite_diff_grad(nll, v.row(r), vc.h);
      for (std::size_t j = 0; j < fd.size(); ++j) {
        worst = std::max(worst, std::abs(g(r, j) - fd[j]) / std::max(1.0, std::abs(fd[j])));
      }
    }
    checks.push_back({"density_gradient_vs_finite_diff", worst < 1e-3, worst, 1e-3, "200 features"});
  }
  {
    const oracle::MassEstimate m =
        oracle::mc_normalization(model->flow, model->latent, {-8.0, 8.0}, vc.mc_samples, config.seed);
    std::ostringstream os;
    os << "mass over [-8,8]^2 = " << m.mass << " +- " << m.stderr_ << ", outside share " << m.outside;
    checks.push_back({"mc_normalization", std::abs(m.mass - 1.0) <= 0.03 && !m.warning, m.mass, 0.03, os.str()});
  }
  return checks;
}

}  // namespace ddfp::pipeline
