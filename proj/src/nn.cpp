#include "ddfp/nn.hpp"

#include <algorithm>
#include <cmath>

#include "ddfp/errors.hpp"
#include "ddfp/kernels.hpp"

namespace ddfp::nn {

Linear Linear::zeros(std::size_t in, std::size_t out) { return {Tensor(in, out), Tensor(1, out)}; }

Linear Linear::gaussian(std::size_t in, std::size_t out, double gain, Rng& rng) {
  Linear layer = zeros(in, out);
  std::normal_distribution<double> normal(0.0, std::sqrt(gain / static_cast<double>(in)));
  for (double& w : layer.weight.data()) w = normal(rng);
  return layer;
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.cols() != in()) throw ContractViolation("Linear::forward: input width mismatch");
  Tensor y(x.rows(), out());
  for (std::size_t r = 0; r < y.rows(); ++r) std::copy_n(bias.data().begin(), out(), y.row(r).begin());
  kernels::matmul(x, weight, y, /*accumulate=*/true);
  return y;
}

BoundLinear bind(ad::Tape& tape, const Linear& layer, bool trainable) {
  if (trainable) return {tape.variable(layer.weight), tape.variable(layer.bias)};
  return {tape.constant(layer.weight), tape.constant(layer.bias)};
}

Tensor relu(Tensor x) {
  for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
  return x;
}

Tensor softplus(Tensor x) {
  for (double& v : x.data()) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  return x;
}

Tensor tanh(Tensor x) {
  for (double& v : x.data()) v = std::tanh(v);
  return x;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += (p(r, j) = std::exp(row[j] - m));
    for (std::size_t j = 0; j < row.size(); ++j) p(r, j) /= s;
  }
  return p;
}

}  // namespace ddfp::nn
