#include "ddfp/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "ddfp/errors.hpp"
#include "ddfp/rng.hpp"

namespace ddfp::oracle {

double log_abs_det(Tensor a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ContractViolation("log_abs_det: matrix must be square");
  double logdet = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(a(r, k)) > std::abs(a(pivot, k))) pivot = r;
    if (pivot != k)
      for (std::size_t c = 0; c < n; ++c) std::swap(a(k, c), a(pivot, c));
    const double p = a(k, k);
    if (p == 0.0) throw NumericError("log_abs_det: singular matrix");
    logdet += std::log(std::abs(p));
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = a(r, k) / p;
      for (std::size_t c = k; c < n; ++c) a(r, c) -= f * a(k, c);
    }
  }
  if (logdet < std::log(1e-300)) throw NumericError("log_abs_det: |det| below 1e-300");
  return logdet;
}

Tensor numeric_jacobian(const VectorMap& f, std::span<const double> v, double h) {
  if (!(h > 0.0)) throw ContractViolation("numeric_jacobian: h must be positive");
  const std::size_t d = v.size();
  std::vector<double> x(v.begin(), v.end());
  Tensor jac;
  for (std::size_t j = 0; j < d; ++j) {
    x[j] = v[j] + h;
    const std::vector<double> up = f(x);
    x[j] = v[j] - h;
    const std::vector<double> down = f(x);
    x[j] = v[j];
    if (j == 0) jac = Tensor(up.size(), d);
    for (std::size_t i = 0; i < up.size(); ++i) jac(i, j) = (up[i] - down[i]) / (2.0 * h);
  }
  return jac;
}

double numeric_jacobian_logdet(const flow::FlowModel& flow, std::span<const double> v, double h) {
  if (v.size() != flow.dim()) throw ContractViolation("numeric_jacobian_logdet: dimension mismatch");
  if (v.size() > 16) throw ContractViolation("numeric_jacobian_logdet: d must be <= 16");
  const VectorMap forward = [&flow](std::span<const double> x) {
    return flow::flow_forward(x, flow).z;
  };
  return log_abs_det(numeric_jacobian(forward, v, h));
}

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> v, double h) {
  if (!(h > 0.0)) throw ContractViolation("finite_diff_grad: h must be positive");
  std::vector<double> x(v.begin(), v.end());
  std::vector<double> g(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    x[j] = v[j] + h;
    const double up = f(x);
    x[j] = v[j] - h;
    const double down = f(x);
    x[j] = v[j];
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

constexpr std::size_t kChunk = 1 << 15;
constexpr std::size_t kTailSamples = 20000;

// Share of model samples (latent draws mapped back through the flow) that
// land outside the box.
double outside_share(const flow::FlowModel& flow, const latent::GmmLatent& latent, Box box,
                     Rng& rng) {
  std::vector<double> cum(latent.components());
  double acc = 0.0;
  for (std::size_t k = 0; k < cum.size(); ++k) cum[k] = acc += std::exp(latent.log_weights[k]);
  std::uniform_real_distribution<double> u(0.0, acc);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z(kTailSamples, 2);
  for (std::size_t i = 0; i < kTailSamples; ++i) {
    const double r = u(rng);
    const std::size_t k = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin()),
        cum.size() - 1);
    for (std::size_t j = 0; j < 2; ++j) z(i, j) = latent.means(k, j) + normal(rng);
  }
  const Tensor v = flow::flow_inverse(z, flow);
  std::size_t out = 0;
  for (std::size_t i = 0; i < v.rows(); ++i) {
    const bool inside = v(i, 0) >= box.lo && v(i, 0) <= box.hi && v(i, 1) >= box.lo && v(i, 1) <= box.hi;
    out += !inside;
  }
  return static_cast<double>(out) / static_cast<double>(kTailSamples);
}

}  // namespace

MassEstimate mc_normalization(const flow::FlowModel& flow, const latent::GmmLatent& latent,
                              Box box, std::size_t n, std::uint64_t seed) {
  if (flow.dim() != 2) throw ContractViolation("mc_normalization: only d = 2 is supported");
  if (n == 0) throw ContractViolation("mc_normalization: n must be positive");
  if (!(box.hi > box.lo)) throw ContractViolation("mc_normalization: empty box");
  Rng rng = make_rng(seed, 0x3c);
  std::uniform_real_distribution<double> u(box.lo, box.hi);
  const double area = (box.hi - box.lo) * (box.hi - box.lo);

  // Welford accumulation of the integrand values.
  double mean = 0.0, m2 = 0.0;
  std::size_t seen = 0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(kChunk, n - start);
    Tensor v(m, 2);
    for (double& x : v.data()) x = u(rng);
    for (double lp : latent::marginal_loglik(v, flow, latent)) {
      const double f = area * std::exp(lp);
      ++seen;
      const double delta = f - mean;
      mean += delta / static_cast<double>(seen);
      m2 += delta * (f - mean);
    }
  }
  MassEstimate est;
  est.mass = mean;
  est.stderr_ = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
  est.outside = outside_share(flow, latent, box, rng);
  est.warning = est.outside > 0.01;
  return est;
}

std::vector<GridCell> grid_density(const flow::FlowModel& flow, const latent::GmmLatent& latent,
                                   Box box, std::size_t resolution) {
  if (flow.dim() != 2) throw ContractViolation("grid_density: only d = 2 is supported");
  if (resolution == 0) throw ContractViolation("grid_density: resolution must be positive");
  const double step = (box.hi - box.lo) / static_cast<double>(resolution);
  Tensor v(resolution * resolution, 2);
  for (std::size_t iy = 0; iy < resolution; ++iy) {
    for (std::size_t ix = 0; ix < resolution; ++ix) {
      v(iy * resolution + ix, 0) = box.lo + (static_cast<double>(ix) + 0.5) * step;
      v(iy * resolution + ix, 1) = box.lo + (static_cast<double>(iy) + 0.5) * step;
    }
  }
  const std::vector<double> logp = latent::marginal_loglik(v, flow, latent);
  std::vector<std::vector<double>> per_class;
  for (std::size_t k = 0; k < latent.components(); ++k) {
    const std::vector<std::size_t> labels(v.rows(), k);
    per_class.push_back(latent::class_conditional_loglik(v, labels, flow, latent));
  }
  std::vector<GridCell> cells(v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    cells[i].x = v(i, 0);
    cells[i].y = v(i, 1);
    cells[i].logp = logp[i];
    for (std::size_t k = 1; k < per_class.size(); ++k) {
      if (per_class[k][i] + latent.log_weights[k] >
          per_class[cells[i].cls][i] + latent.log_weights[cells[i].cls]) {
        cells[i].cls = k;
      }
    }
  }
  return cells;
}

void write_grid_csv(std::ostream& os, std::span<const GridCell> cells, bool with_class) {
  os << (with_class ? "x,y,logp,class\n" : "x,y,logp\n");
  const auto old = os.precision(17);
  for (const GridCell& c : cells) {
    os << c.x << ',' << c.y << ',' << c.logp;
    if (with_class) os << ',' << c.cls;
    os << '\n';
  }
  os.precision(old);
}

}  // namespace ddfp::oracle
