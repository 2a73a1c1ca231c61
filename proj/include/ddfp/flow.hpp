#pragma once

// Invertible feature-space map built from affine coupling blocks.
//
// Each block splits its input v = [a | b] in half along the feature axis,
// keeps a, and maps b -> b * exp(s(a)) + t(a), where (raw, t) come from a
// two-layer conditioner (Linear -> activation -> Linear) and the scale is softly
// clamped: s = s_max * tanh(raw / s_max). Consecutive blocks are separated
// by a fixed reversal of the feature order. The log-determinant of a block
// is sum(s); the reversal contributes nothing.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ddfp/autodiff.hpp"
#include "ddfp/nn.hpp"
#include "ddfp/rng.hpp"
#include "ddfp/tensor.hpp"

namespace ddfp::flow {

// Conditioner nonlinearity. Softplus is the default: ReLU kinks make
// central-difference checks of gradients and log-dets unreliable.
enum class Activation { kSoftplus, kRelu };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation activation);

struct FlowConfig {
  std::size_t dim = 2;
  std::size_t hidden = 256;
  std::size_t blocks = 2;
  double s_max = 2.0;
  std::uint64_t seed = 0;
  Activation activation = Activation::kSoftplus;

  // Throws ConfigError (odd or zero dim, zero width/blocks, s_max <= 0).
  void validate() const;
};

struct CouplingBlock {
  nn::Linear hidden;  // dim/2 -> width
  nn::Linear output;  // width -> dim: [raw scale | translation]
  double s_max = 2.0;
  Activation activation = Activation::kSoftplus;

  std::size_t dim() const noexcept { return output.out(); }
  std::size_t half() const noexcept { return output.out() / 2; }
};

// Batch result: one row of `out` and one logdet entry per input row.
struct Transformed {
  Tensor out;
  std::vector<double> logdet;
};

class FlowModel {
 public:
  // Hidden layers He-initialised from config.seed, output layers zero, so a
  // fresh model is the identity up to the feature reversals.
  explicit FlowModel(const FlowConfig& config);

  const FlowConfig& config() const noexcept { return config_; }
  std::size_t dim() const noexcept { return config_.dim; }
  std::vector<CouplingBlock>& blocks() noexcept { return blocks_; }
  const std::vector<CouplingBlock>& blocks() const noexcept { return blocks_; }

  // Stable order: block0.hidden.{weight,bias}, block0.output.{weight,bias}, block1...
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

 private:
  FlowConfig config_;
  std::vector<CouplingBlock> blocks_;
};

// Adds N(0, stddev^2) noise to every parameter (test and verification aid).
void randomize(FlowModel& model, double stddev, Rng& rng);

Transformed coupling_forward(const Tensor& v, const CouplingBlock& block);
Tensor coupling_inverse(const Tensor& v, const CouplingBlock& block);

Transformed flow_forward(const Tensor& v, const FlowModel& model);
Tensor flow_inverse(const Tensor& z, const FlowModel& model);

// Single-vector conveniences.
struct VectorResult {
  std::vector<double> z;
  double logdet = 0.0;
};
VectorResult flow_forward(std::span<const double> v, const FlowModel& model);
std::vector<double> flow_inverse(std::span<const double> z, const FlowModel& model);

// ---- differentiable path --------------------------------------------------

struct BoundCoupling {
  nn::BoundLinear hidden;
  nn::BoundLinear output;
  double s_max = 2.0;
  Activation activation = Activation::kSoftplus;
};

struct BoundFlow {
  std::vector<BoundCoupling> blocks;
  std::vector<ad::Var> params;  // same order as FlowModel::parameters()
};

// Places the model parameters on `tape`; `trainable` selects variables
// (for likelihood training) or constants (evaluation mode).
BoundFlow bind(ad::Tape& tape, const FlowModel& model, bool trainable);

struct TapeTransformed {
  ad::Var out;     // N x d
  ad::Var logdet;  // N x 1
};

TapeTransformed coupling_forward(ad::Var v, const BoundCoupling& block);
TapeTransformed flow_forward(ad::Var v, const BoundFlow& flow);

}  // namespace ddfp::flow
