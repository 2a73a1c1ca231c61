#include "ddfp/flow.hpp"

#include <cmath>
#include <string>

#include "ddfp/errors.hpp"

namespace ddfp::flow {

Activation parse_activation(std::string_view name) {
  if (name == "softplus") return Activation::kSoftplus;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("flow: unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation activation) {
  return activation == Activation::kRelu ? "relu" : "softplus";
}

void FlowConfig::validate() const {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("flow: feature dimension must be even and positive, got " +
                      std::to_string(dim));
  }
  if (hidden == 0) throw ConfigError("flow: conditioner width must be positive");
  if (blocks == 0) throw ConfigError("flow: at least one coupling block is required");
  if (!(s_max > 0.0) || !std::isfinite(s_max)) throw ConfigError("flow: s_max must be positive");
}

FlowModel::FlowModel(const FlowConfig& config) : config_(config) {
  config_.validate();
  Rng rng = make_rng(config_.seed, 0xf10);
  blocks_.reserve(config_.blocks);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    CouplingBlock block;
    block.hidden = nn::Linear::gaussian(config_.dim / 2, config_.hidden, 2.0, rng);
    block.output = nn::Linear::zeros(config_.hidden, config_.dim);
    block.s_max = config_.s_max;
    block.activation = config_.activation;
    blocks_.push_back(std::move(block));
  }
}

std::vector<Tensor*> FlowModel::parameters() {
  std::vector<Tensor*> out;
  for (CouplingBlock& b : blocks_) {
    out.insert(out.end(), {&b.hidden.weight, &b.hidden.bias, &b.output.weight, &b.output.bias});
  }
  return out;
}

std::vector<const Tensor*> FlowModel::parameters() const {
  std::vector<const Tensor*> out;
  for (const CouplingBlock& b : blocks_) {
    out.insert(out.end(), {&b.hidden.weight, &b.hidden.bias, &b.output.weight, &b.output.bias});
  }
  return out;
}

void randomize(FlowModel& model, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Tensor* p : model.parameters())
    for (double& v : p->data()) v += normal(rng);
}

namespace {

void check_width(const Tensor& v, std::size_t dim, const char* op) {
  if (v.cols() != dim) {
    throw ContractViolation(std::string(op) + ": expected " + std::to_string(dim) +
                            " features, got " + std::to_string(v.cols()));
  }
}

// Conditioner output for the pass-through half: returns (s, t) packed as
// [clamped scale | translation].
Tensor conditioner(const Tensor& v, const CouplingBlock& block) {
  const std::size_t h = block.half();
  Tensor a(v.rows(), h);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t j = 0; j < h; ++j) a(r, j) = v(r, j);
  Tensor pre = block.hidden.forward(a);
  Tensor st = block.output.forward(block.activation == Activation::kRelu ? nn::relu(std::move(pre))
                                                                         : nn::softplus(std::move(pre)));
  for (std::size_t r = 0; r < st.rows(); ++r)
    for (std::size_t j = 0; j < h; ++j) st(r, j) = block.s_max * std::tanh(st(r, j) / block.s_max);
  return st;
}

void reverse_in_place(Tensor& v) {
  const std::size_t d = v.cols();
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t j = 0; j < d / 2; ++j) std::swap(v(r, j), v(r, d - 1 - j));
}

}  // namespace

Transformed coupling_forward(const Tensor& v, const CouplingBlock& block) {
  check_width(v, block.dim(), "coupling_forward");
  const std::size_t h = block.half();
  const Tensor st = conditioner(v, block);
  Transformed res{v, std::vector<double>(v.rows(), 0.0)};
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double ld = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
      const double s = st(r, j);
      res.out(r, h + j) = v(r, h + j) * std::exp(s) + st(r, h + j);
      ld += s;
    }
    res.logdet[r] = ld;
  }
  return res;
}

Tensor coupling_inverse(const Tensor& v, const CouplingBlock& block) {
  check_width(v, block.dim(), "coupling_inverse");
  const std::size_t h = block.half();
  const Tensor st = conditioner(v, block);
  Tensor out = v;
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t j = 0; j < h; ++j)
      out(r, h + j) = (v(r, h + j) - st(r, h + j)) * std::exp(-st(r, j));
  return out;
}

Transformed flow_forward(const Tensor& v, const FlowModel& model) {
  check_width(v, model.dim(), "flow_forward");
  Transformed acc{v, std::vector<double>(v.rows(), 0.0)};
  const auto& blocks = model.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (b > 0) reverse_in_place(acc.out);
    Transformed step = coupling_forward(acc.out, blocks[b]);
    acc.out = std::move(step.out);
    for (std::size_t r = 0; r < v.rows(); ++r) acc.logdet[r] += step.logdet[r];
  }
  return acc;
}

Tensor flow_inverse(const Tensor& z, const FlowModel& model) {
  check_width(z, model.dim(), "flow_inverse");
  Tensor v = z;
  const auto& blocks = model.blocks();
  for (std::size_t b = blocks.size(); b-- > 0;) {
    v = coupling_inverse(v, blocks[b]);
    if (b > 0) reverse_in_place(v);
  }
  return v;
}

VectorResult flow_forward(std::span<const double> v, const FlowModel& model) {
  Transformed t = flow_forward(Tensor::row_vector(v), model);
  return {std::vector<double>(t.out.data().begin(), t.out.data().end()), t.logdet[0]};
}

std::vector<double> flow_inverse(std::span<const double> z, const FlowModel& model) {
  Tensor v = flow_inverse(Tensor::row_vector(z), model);
  return {v.data().begin(), v.data().end()};
}

BoundFlow bind(ad::Tape& tape, const FlowModel& model, bool trainable) {
  BoundFlow bound;
  for (const CouplingBlock& b : model.blocks()) {
    BoundCoupling bc{nn::bind(tape, b.hidden, trainable), nn::bind(tape, b.output, trainable),
                     b.s_max, b.activation};
    bound.params.insert(bound.params.end(), {bc.hidden.weight, bc.hidden.bias,
                                             bc.output.weight, bc.output.bias});
    bound.blocks.push_back(bc);
  }
  return bound;
}

TapeTransformed coupling_forward(ad::Var v, const BoundCoupling& block) {
  const std::size_t d = v.cols();
  const std::size_t h = d / 2;
  ad::Var a = ad::slice_cols(v, 0, h);
  ad::Var b = ad::slice_cols(v, h, d);
  ad::Var pre = block.hidden(a);
  ad::Var st = block.output(block.activation == Activation::kRelu ? ad::relu(pre) : ad::softplus(pre));
  ad::Var raw = ad::slice_cols(st, 0, h);
  ad::Var t = ad::slice_cols(st, h, d);
  ad::Var s = ad::scale(ad::tanh(ad::scale(raw, 1.0 / block.s_max)), block.s_max);
  ad::Var b2 = ad::add(ad::mul(b, ad::exp(s)), t);
  return {ad::concat_cols(a, b2), ad::sum_rows(s)};
}

TapeTransformed flow_forward(ad::Var v, const BoundFlow& flow) {
  if (flow.blocks.empty()) throw ContractViolation("flow_forward: unbound flow");
  if (v.cols() != flow.blocks.front().output.bias.cols()) {
    throw ContractViolation("flow_forward: feature width does not match the flow");
  }
  TapeTransformed acc = coupling_forward(v, flow.blocks[0]);
  for (std::size_t b = 1; b < flow.blocks.size(); ++b) {
    TapeTransformed step = coupling_forward(ad::reverse_cols(acc.out), flow.blocks[b]);
    acc.out = step.out;
    acc.logdet = ad::add(acc.logdet, step.logdet);
  }
  return acc;
}

}  // namespace ddfp::flow
