#include "ddfp/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ddfp/errors.hpp"

namespace ddfp::estimator {

void FlowTrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("estimator: lr must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("estimator: Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("estimator: Adam eps must be positive");
  if (!(decay_factor > 0.0)) throw ConfigError("estimator: decay_factor must be positive");
  for (double m : decay_milestones) {
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("estimator: milestones must lie in [0, 1]");
  }
  if (sample_budget == 0 || sample_budget % 2 != 0) {
    throw ConfigError("estimator: sample_budget must be even and positive");
  }
  if (warm_start_epoch < 1) throw ConfigError("estimator: warm_start_epoch must be >= 1");
  if (steps_per_iteration < 1) throw ConfigError("estimator: steps_per_iteration must be >= 1");
}

namespace {
// First `count` entries of a seeded partial Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> choose(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  count = std::min(count, n);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}
}  // namespace

FeaturePool sample_feature_pool(const Tensor& labeled, std::span<const std::size_t> labels,
                                const Tensor& unlabeled, std::size_t budget, Rng& rng) {
  if (budget % 2 != 0) throw ContractViolation("sample_feature_pool: budget must be even");
  if (labels.size() != labeled.rows()) {
    throw ContractViolation("sample_feature_pool: one label per labeled feature");
  }
  const std::size_t half = budget / 2;
  FeaturePool pool;
  if (labeled.rows() == 0) ++pool.warnings;
  if (unlabeled.rows() == 0) ++pool.warnings;

  const std::vector<std::size_t> li = choose(labeled.rows(), half, rng);
  pool.labeled = labeled.gather_rows(li);
  pool.labels.reserve(li.size());
  for (std::size_t i : li) pool.labels.push_back(labels[i]);
  if (pool.labeled.cols() == 0) pool.labeled = Tensor(0, unlabeled.cols());

  pool.unlabeled = unlabeled.gather_rows(choose(unlabeled.rows(), half, rng));
  if (pool.unlabeled.cols() == 0) pool.unlabeled = Tensor(0, labeled.cols());
  return pool;
}

ad::Var flow_loss(const flow::BoundFlow& flow, const FeaturePool& pool,
                  const latent::GmmLatent& latent) {
  const std::size_t total = pool.size();
  if (total == 0) throw ContractViolation("flow_loss: empty feature pool");
  ad::Tape& tape = *flow.params.front().tape();
  ad::Var acc;
  if (pool.labeled.rows() > 0) {
    ad::Var v = tape.constant(pool.labeled);
    acc = ad::sum(latent::class_conditional_loglik(v, pool.labels, flow, latent));
  }
  if (pool.unlabeled.rows() > 0) {
    ad::Var v = tape.constant(pool.unlabeled);
    ad::Var s = ad::sum(latent::marginal_loglik(v, flow, latent));
    acc = acc.valid() ? ad::add(acc, s) : s;
  }
  return ad::scale(acc, -1.0 / static_cast<double>(total));
}

double flow_loss(const FeaturePool& pool, const flow::FlowModel& flow,
                 const latent::GmmLatent& latent) {
  const std::size_t total = pool.size();
  if (total == 0) throw ContractViolation("flow_loss: empty feature pool");
  double s = 0.0;
  if (pool.labeled.rows() > 0) {
    for (double x : latent::class_conditional_loglik(pool.labeled, pool.labels, flow, latent)) s += x;
  }
  if (pool.unlabeled.rows() > 0) {
    for (double x : latent::marginal_loglik(pool.unlabeled, flow, latent)) s += x;
  }
  return -s / static_cast<double>(total);
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw ContractViolation("Adam: params/grads length mismatch");
  if (m_.empty()) {
    for (Tensor* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size()) throw ContractViolation("Adam: parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g) || !p.same_shape(m_[i])) throw ContractViolation("Adam: shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      if (lr == 0.0) continue;
      const double mhat = m_[i][j] / c1;
      const double vhat = v_[i][j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double scheduled_lr(const FlowTrainConfig& config, double progress) {
  double lr = config.lr;
  for (double m : config.decay_milestones)
    if (progress >= m) lr *= config.decay_factor;
  return lr;
}

namespace {
std::string pool_stats(const FeaturePool& pool) {
  double sum = 0.0, sq = 0.0, lo = 0.0, hi = 0.0;
  std::size_t n = 0;
  for (const Tensor* t : {&pool.labeled, &pool.unlabeled}) {
    for (double x : t->data()) {
      if (n == 0) lo = hi = x;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      sum += x;
      sq += x * x;
      ++n;
    }
  }
  std::ostringstream os;
  const double mean = n ? sum / static_cast<double>(n) : 0.0;
  os << "labeled=" << pool.labeled.rows() << " unlabeled=" << pool.unlabeled.rows()
     << " mean=" << mean << " std=" << (n ? std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean)) : 0.0)
     << " min=" << lo << " max=" << hi;
  return os.str();
}
}  // namespace

double flow_train_step(const FeaturePool& pool, flow::FlowModel& flow,
                       const latent::GmmLatent& latent, Adam& optimizer, double lr) {
  std::vector<Tensor> grads;
  double loss = 0.0;
  try {
    ad::Tape tape;
    const flow::BoundFlow bound = flow::bind(tape, flow, /*trainable=*/true);
    ad::Var obj = flow_loss(bound, pool, latent);
    loss = obj.value().item();
    grads = tape.grad(obj, bound.params);
  } catch (const NumericError& e) {
    std::ostringstream os;
    os << "flow_train_step aborted: " << e.what() << " (lr=" << lr << ", " << pool_stats(pool) << ")";
    throw NumericError(os.str());
  }
  std::vector<Tensor*> params = flow.parameters();
  optimizer.step(params, grads, lr);
  return loss;
}

std::vector<LossLogEntry> fit_density(flow::FlowModel& flow, const latent::GmmLatent& latent,
                                      const Tensor& labeled, std::span<const std::size_t> labels,
                                      const Tensor& unlabeled, const FlowTrainConfig& config,
                                      std::size_t steps) {
  config.validate();
  Rng rng = make_rng(config.seed, 0xe57);
  Adam adam(config.beta1, config.beta2, config.adam_eps);
  std::vector<LossLogEntry> log;
  log.reserve(steps);
  for (std::size_t it = 0; it < steps; ++it) {
    const double lr = scheduled_lr(config, static_cast<double>(it) / static_cast<double>(steps));
    const FeaturePool pool = sample_feature_pool(labeled, labels, unlabeled, config.sample_budget, rng);
    const double loss = flow_train_step(pool, flow, latent, adam, lr);
    log.push_back({it, loss, lr});
  }
  return log;
}

void write_loss_csv(std::ostream& os, std::span<const LossLogEntry> log) {
  os << "iteration,flow_loss,lr\n";
  const auto old = os.precision(17);
  for (const LossLogEntry& e : log) os << e.iteration << ',' << e.loss << ',' << e.lr << '\n';
  os.precision(old);
}

}  // namespace ddfp::estimator
