#pragma once

// Online likelihood training of the flow on detached teacher features.
// The estimator only ever touches flow parameters: features arrive as plain
// tensors, so no gradient can reach the model that produced them, and the
// latent means/weights are read-only.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "ddfp/autodiff.hpp"
#include "ddfp/flow.hpp"
#include "ddfp/latent.hpp"
#include "ddfp/rng.hpp"
#include "ddfp/tensor.hpp"

namespace ddfp::estimator {

struct FlowTrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Step decay: lr is multiplied by decay_factor at each milestone, given
  // as a fraction of the total training length.
  double decay_factor = 0.5;
  std::vector<double> decay_milestones{1.0 / 3.0, 2.0 / 3.0};
  std::size_t sample_budget = 2048;  // split equally labeled / unlabeled
  std::size_t warm_start_epoch = 2;  // 1-based main-model epoch
  std::size_t steps_per_iteration = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FeaturePool {
  Tensor labeled;                   // M x d
  std::vector<std::size_t> labels;  // M class ids
  Tensor unlabeled;                 // N x d
  std::size_t warnings = 0;         // empty source batches seen while sampling

  std::size_t size() const noexcept { return labeled.rows() + unlabeled.rows(); }
};

// Uniform subsample without replacement of budget/2 rows from each source;
// a source with fewer rows contributes all of them. Requires an even budget.
FeaturePool sample_feature_pool(const Tensor& labeled, std::span<const std::size_t> labels,
                                const Tensor& unlabeled, std::size_t budget, Rng& rng);

// -(sum_m log p(v_m | y_m) + sum_n log p(v_n)) / (M + N)
ad::Var flow_loss(const flow::BoundFlow& flow, const FeaturePool& pool,
                  const latent::GmmLatent& latent);
double flow_loss(const FeaturePool& pool, const flow::FlowModel& flow,
                 const latent::GmmLatent& latent);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Learning rate after `progress` (fraction of training done, in [0, 1]).
double scheduled_lr(const FlowTrainConfig& config, double progress);

// One Adam step on the flow parameters only. Returns the pre-step loss.
// A non-finite loss or gradient aborts with NumericError carrying the
// learning rate and batch statistics.
double flow_train_step(const FeaturePool& pool, flow::FlowModel& flow,
                       const latent::GmmLatent& latent, Adam& optimizer, double lr);

struct LossLogEntry {
  std::size_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
};

// Stand-alone fit: `steps` iterations, each drawing a fresh pool from the
// given feature sets and applying the step-decay schedule over `steps`.
std::vector<LossLogEntry> fit_density(flow::FlowModel& flow, const latent::GmmLatent& latent,
                                      const Tensor& labeled, std::span<const std::size_t> labels,
                                      const Tensor& unlabeled, const FlowTrainConfig& config,
                                      std::size_t steps);

// CSV with header "iteration,flow_loss,lr".
void write_loss_csv(std::ostream& os, std::span<const LossLogEntry> log);

}  // namespace ddfp::estimator
