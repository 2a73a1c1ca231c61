#pragma once

#include <cstddef>
#include <vector>

#include "ddfp/autodiff.hpp"
#include "ddfp/rng.hpp"
#include "ddfp/tensor.hpp"

namespace ddfp::nn {

// y = x * weight + bias, weight is (in x out), bias is (1 x out).
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear zeros(std::size_t in, std::size_t out);
  // Weights ~ N(0, gain / in), zero bias.
  static Linear gaussian(std::size_t in, std::size_t out, double gain, Rng& rng);

  std::size_t in() const noexcept { return weight.rows(); }
  std::size_t out() const noexcept { return weight.cols(); }
  Tensor forward(const Tensor& x) const;
};

struct BoundLinear {
  ad::Var weight;
  ad::Var bias;
  ad::Var operator()(ad::Var x) const { return ad::add_row(ad::matmul(x, weight), bias); }
};

// Puts the layer on `tape` as variables (trainable) or constants.
BoundLinear bind(ad::Tape& tape, const Linear& layer, bool trainable);

Tensor relu(Tensor x);
Tensor softplus(Tensor x);
Tensor tanh(Tensor x);
Tensor softmax_rows(const Tensor& logits);

}  // namespace ddfp::nn
