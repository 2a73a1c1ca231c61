#pragma once

// Teacher-student semi-supervised training with feature-level consistency.
//
// The classifier is f = g(h(x)): an encoder h (Linear -> tanh -> Linear)
// producing d-dimensional features and an affine decoder g producing class
// logits. The teacher is an EMA copy of the student. Each iteration:
//   1. supervised CE on weakly augmented labeled points,
//   2. pseudo-labels from the teacher on a weak view of the unlabeled batch,
//      masked by confidence > tau, supervise the student on a strong view,
//   3. the same strong-view student features are perturbed (detached delta)
//      and decoded again, supervised by the same pseudo-labels,
//   4. SGD step on the student, EMA update of the teacher,
//   5. one flow step on detached teacher features (from the warm-start epoch).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ddfp/autodiff.hpp"
#include "ddfp/data.hpp"
#include "ddfp/estimator.hpp"
#include "ddfp/flow.hpp"
#include "ddfp/latent.hpp"
#include "ddfp/nn.hpp"
#include "ddfp/perturb.hpp"
#include "ddfp/rng.hpp"
#include "ddfp/tensor.hpp"

namespace ddfp::ssl {

struct Model {
  nn::Linear enc1;  // input -> hidden
  nn::Linear enc2;  // hidden -> feature
  nn::Linear dec;   // feature -> classes

  std::size_t feature_dim() const noexcept { return enc2.out(); }
  std::size_t classes() const noexcept { return dec.out(); }
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

Model make_model(std::size_t input_dim, std::size_t hidden, std::size_t feature_dim,
                 std::size_t classes, Rng& rng);

Tensor encode(const Model& model, const Tensor& x);
Tensor decode(const Model& model, const Tensor& features);
Tensor predict_proba(const Model& model, const Tensor& x);
double accuracy(const Model& model, const Tensor& x, std::span<const std::size_t> labels);

struct BoundModel {
  nn::BoundLinear enc1, enc2, dec;
  std::vector<ad::Var> params;  // same order as Model::parameters()

  ad::Var encode(ad::Var x) const { return enc2(ad::tanh(enc1(x))); }
  ad::Var decode(ad::Var features) const { return dec(features); }
};
BoundModel bind(ad::Tape& tape, const Model& model, bool trainable);

// ---- augmentation ----------------------------------------------------------

Tensor augment_weak(const Tensor& x, double sigma, Rng& rng);
// Jitter with sigma, then every coordinate is zeroed with probability drop_p.
Tensor augment_strong(const Tensor& x, double sigma, double drop_p, Rng& rng);

// ---- losses ------------------------------------------------------------------

struct PseudoLabelBatch {
  std::vector<std::size_t> labels;
  std::vector<double> mask;  // 1 where max prob > tau, else 0

  std::size_t retained() const;
};

// Throws ContractViolation on rows that are not probability vectors
// (negative entries or sum off 1 by more than 1e-6).
PseudoLabelBatch pseudo_labels(const Tensor& probs, double tau);

// Mean -log p_y over the batch.
double sup_loss(const Tensor& probs, std::span<const std::size_t> labels);
// sum over retained rows of -log p_label, divided by the full batch size.
double image_consistency_loss(const Tensor& probs, const PseudoLabelBatch& pseudo);
double unified_loss(double sup, double im, double ft, double lambda_ft);

ad::Var sup_loss(ad::Var logits, std::span<const std::size_t> labels);
ad::Var image_consistency_loss(ad::Var logits, const PseudoLabelBatch& pseudo);

struct FeatureLoss {
  ad::Var loss;
  std::size_t fallbacks = 0;
  double eps = 0.0;
};

// Perturbs `features` (delta computed from their detached values) and
// decodes them through `model`. The step is resolved against the batch.
FeatureLoss feature_consistency_loss(ad::Var features, const BoundModel& model,
                                     const Model& head_source, const PseudoLabelBatch& pseudo,
                                     const flow::FlowModel& flow, const latent::GmmLatent& latent,
                                     const perturb::PerturbConfig& config, Rng& rng);

// teacher <- m * teacher + (1 - m) * student; m = 1 and m = 0 are exact.
void ema_update(Model& teacher, const Model& student, double m);

// ---- training ------------------------------------------------------------------

struct SslConfig {
  std::size_t hidden = 64;
  std::size_t feature_dim = 8;
  double tau = 0.95;
  double lambda_ft = 0.5;
  double ema_momentum = 0.99;
  perturb::PerturbConfig perturb;
  std::size_t epochs = 30;
  std::size_t iterations_per_epoch = 20;
  std::size_t labeled_batch = 8;
  std::size_t unlabeled_batch = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double poly_power = 0.9;
  double sigma_weak = 0.05;
  double sigma_strong = 0.2;
  double drop_p = 0.1;
  // 0 means one epoch after the estimator's warm-start epoch.
  std::size_t ft_start_epoch = 0;
  std::size_t flow_hidden = 256;
  std::size_t flow_blocks = 2;
  double flow_s_max = 2.0;
  flow::Activation flow_activation = flow::Activation::kSoftplus;
  estimator::FlowTrainConfig estimator;
  std::vector<double> latent_weights;  // empty = uniform
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t feature_start_epoch() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double sup = 0.0;
  double im = 0.0;
  double ft = 0.0;
  double flow = 0.0;  // mean flow loss over this epoch's flow steps (0 if none)
  double retention = 0.0;
  double test_accuracy = 0.0;
  bool warming = false;  // feature loss requested but not active yet
  std::size_t fallbacks = 0;
  std::size_t flow_steps = 0;
  // Parameter checksums compared around every optimizer step of the epoch.
  bool flow_touched_by_ssl = false;
  bool model_touched_by_flow = false;
};

struct SslResult {
  std::vector<EpochMetrics> epochs;
  Model student;
  Model teacher;
  flow::FlowModel flow;
  latent::GmmLatent latent;
  double final_accuracy = 0.0;

  explicit SslResult(flow::FlowModel f) : flow(std::move(f)) {}
};

// Requires labeled points of every class. An empty unlabeled split trains
// the supervised term only.
SslResult train_ssl(const SslConfig& config, const data::Dataset& dataset);

// FNV-1a over the raw bytes of every tensor.
std::uint64_t checksum(std::span<const Tensor* const> tensors);

// Columns: epoch,L_sup,L_im,L_ft,L_flow,pseudo_retention,test_acc,warming,fallbacks
void write_metrics_csv(std::ostream& os, std::span<const EpochMetrics> epochs);

// ---- ablation ------------------------------------------------------------------

struct SweepSpec {
  std::vector<perturb::Kind> kinds;
  std::vector<double> steps;
  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;
};

struct AblationRow {
  std::string setting;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

// Every kind x step x lambda cell, trained on every seed. Empty lists fall
// back to the base config's value. `make_dataset(seed)` builds the split.
std::vector<AblationRow> ablate(const SslConfig& base, const SweepSpec& sweep,
                                const std::function<data::Dataset(std::uint64_t)>& make_dataset);

// Header "setting,seed,accuracy".
void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows);

}  // namespace ddfp::ssl
