#include <doctest.h>

#include <cmath>

#include "ddfp/errors.hpp"
#include "ddfp/nn.hpp"
#include "ddfp/oracle.hpp"
#include "ddfp/perturb.hpp"
#include "support.hpp"

using namespace ddfp;

namespace {

// Fresh two-block flow (a coordinate swap) with one component at the origin.
struct Swap {
  flow::FlowModel flow{flow::FlowConfig{2, 8, 2, 2.0, 0}};
  latent::GmmLatent lat = [] {
    latent::GmmLatent l = latent::init_latent(1, 2, 0);
    l.means.fill(0.0);
    return l;
  }();
};

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double x : r) s += x * x;
  return std::sqrt(s);
}

double kl_rows(const Tensor& p, const Tensor& q, std::size_t r) {
  double kl = 0.0;
  for (std::size_t k = 0; k < p.cols(); ++k) kl += p(r, k) * (std::log(p(r, k)) - std::log(q(r, k)));
  return kl;
}

}  // namespace

TEST_CASE("density gradient of a standard normal at (a, 0) is (a, 0)") {
  Swap s;
  for (double a : {-2.0, 0.5, 3.0}) {
    const double v[] = {a, 0.0};
    const std::vector<double> g = perturb::density_gradient(v, s.flow, s.lat);
    CHECK(g[0] == doctest::Approx(a).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(0.0));
  }
}

TEST_CASE("no direction at the mode: the row falls back to zero") {
  Swap s;
  const Tensor v(2, 2, {0.0, 0.0, 1.0, 1.0});
  const perturb::Perturbation p = perturb::ddfp_perturbation(v, 0.7, s.flow, s.lat);
  CHECK(p.fallbacks == 1);
  CHECK(p.delta(0, 0) == 0.0);
  CHECK(p.delta(0, 1) == 0.0);
  CHECK(row_norm(p.delta.row(1)) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("density gradient agrees with central differences of the marginal") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const flow::FlowModel model = test::random_flow(4, seed, 0.1);
    const latent::GmmLatent lat = latent::init_latent(3, 4, seed);
    Rng rng = make_rng(seed, 1);
    const Tensor v = test::normal(1, 4, rng);
    const std::vector<double> g = perturb::density_gradient(v.data(), model, lat);
    const std::vector<double> fd = oracle::finite_diff_grad(
        [&](std::span<const double> x) { return -latent::marginal_loglik(x, model, lat); }, v.data(), 1e-5);
    for (std::size_t j = 0; j < 4; ++j) CHECK(g[j] == doctest::Approx(fd[j]).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("perturbation rows have norm epsilon") {
  Rng rng = make_rng(2);
  const flow::FlowModel model = test::random_flow(6, 2, 0.1);
  const latent::GmmLatent lat = latent::init_latent(2, 6, 2);
  const Tensor v = test::normal(50, 6, rng, 2.0);
  for (double eps : {1e-3, 0.5, 4.0}) {
    const perturb::Perturbation p = perturb::ddfp_perturbation(v, eps, model, lat);
    CHECK(p.fallbacks == 0);
    for (std::size_t r = 0; r < v.rows(); ++r) CHECK(std::abs(row_norm(p.delta.row(r)) - eps) < 1e-12);
  }
  perturb::PerturbConfig cfg;
  for (perturb::Kind k : {perturb::Kind::kGaussianNoise, perturb::Kind::kUniformNoise}) {
    const Tensor d = perturb::baseline_perturbation(k, v, cfg, 0.3, rng);
    for (std::size_t r = 0; r < v.rows(); ++r) CHECK(std::abs(row_norm(d.row(r)) - 0.3) < 1e-12);
  }
}

TEST_CASE("zero step gives a zero perturbation") {
  Swap s;
  const Tensor v(1, 2, {1.0, 2.0});
  CHECK(perturb::ddfp_perturbation(v, 0.0, s.flow, s.lat).delta == Tensor(1, 2, 0.0));
}

TEST_CASE("inject adds the perturbation") {
  const Tensor v(1, 2, {1.0, 2.0}), d(1, 2, {0.5, -1.0});
  CHECK(perturb::inject(v, d) == Tensor(1, 2, {1.5, 1.0}));
  CHECK(perturb::inject(v, Tensor(1, 2)) == v);
  CHECK_THROWS_AS(perturb::inject(v, Tensor(2, 2)), ContractViolation);
}

TEST_CASE("channel dropout zeroes exactly round(rate * d) coordinates per row") {
  Rng rng = make_rng(3);
  const Tensor v = test::uniform(40, 8, rng, 0.5, 1.5);  // no zeros to begin with
  perturb::PerturbConfig cfg;
  cfg.dropout_rate = 0.5;
  const Tensor out = perturb::inject(v, perturb::baseline_perturbation(perturb::Kind::kChannelDropout, v, cfg, 1.0, rng));
  for (std::size_t r = 0; r < out.rows(); ++r) {
    int zeros = 0, kept = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      if (out(r, j) == 0.0) ++zeros;
      else if (out(r, j) == v(r, j)) ++kept;
    }
    CHECK(zeros == 4);
    CHECK(kept == 4);
  }
}

TEST_CASE("vat-lite increases the prediction change more than random directions") {
  Rng rng = make_rng(4);
  const nn::Linear head = nn::Linear::gaussian(6, 3, 1.0, rng);
  const Tensor v = test::normal(100, 6, rng);
  perturb::PerturbConfig cfg;
  const double eps = 0.5;
  const Tensor p = nn::softmax_rows(head.forward(v));
  const Tensor qv = nn::softmax_rows(head.forward(perturb::inject(
      v, perturb::baseline_perturbation(perturb::Kind::kVatLite, v, cfg, eps, rng, &head))));
  const Tensor qr = nn::softmax_rows(head.forward(perturb::inject(
      v, perturb::baseline_perturbation(perturb::Kind::kGaussianNoise, v, cfg, eps, rng))));
  int wins = 0;
  for (std::size_t r = 0; r < v.rows(); ++r)
    if (kl_rows(p, qv, r) > kl_rows(p, qr, r)) ++wins;
  CHECK(wins >= 80);
  CHECK_THROWS_AS(perturb::baseline_perturbation(perturb::Kind::kVatLite, v, cfg, eps, rng), ContractViolation);
}

TEST_CASE("same seed, same perturbation") {
  const Tensor v(3, 4, 0.25);
  perturb::PerturbConfig cfg;
  for (perturb::Kind k : {perturb::Kind::kGaussianNoise, perturb::Kind::kUniformNoise, perturb::Kind::kChannelDropout}) {
    Rng a = make_rng(5), b = make_rng(5);
    CHECK(perturb::baseline_perturbation(k, v, cfg, 1.0, a) == perturb::baseline_perturbation(k, v, cfg, 1.0, b));
  }
}

TEST_CASE("computing a perturbation leaves inputs and the flow alone") {
  const flow::FlowModel model = test::random_flow(4, 6, 0.1);
  const flow::FlowModel copy = model;
  const latent::GmmLatent lat = latent::init_latent(2, 4, 6);
  Rng rng = make_rng(6);
  const Tensor v = test::normal(10, 4, rng);
  const Tensor v_copy = v;
  (void)perturb::ddfp_perturbation(v, 1.0, model, lat);
  CHECK(v == v_copy);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) CHECK(*model.parameters()[i] == *copy.parameters()[i]);
}

TEST_CASE("small steps lower the marginal density") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const flow::FlowModel model = test::random_flow(4, seed, 0.1);
    const latent::GmmLatent lat = latent::init_latent(3, 4, seed + 10);
    Rng rng = make_rng(seed, 7);
    const Tensor v = test::normal(30, 4, rng, 1.5);
    const Tensor moved = perturb::inject(v, perturb::ddfp_perturbation(v, 1e-3, model, lat).delta);
    const std::vector<double> before = latent::marginal_loglik(v, model, lat);
    const std::vector<double> after = latent::marginal_loglik(moved, model, lat);
    for (std::size_t r = 0; r < v.rows(); ++r) CHECK(after[r] < before[r]);
  }
}

TEST_CASE("step modes") {
  perturb::PerturbConfig cfg;
  cfg.step = 2.0;
  const Tensor v(2, 2, {0.0, 0.0, 2.0, 2.0});  // per-dimension std 1
  CHECK(perturb::feature_std(v) == doctest::Approx(1.0));
  CHECK(perturb::resolve_step(cfg, v) == 2.0);
  cfg.step_mode = perturb::StepMode::kFeatureStd;
  CHECK(perturb::resolve_step(cfg, v) == doctest::Approx(2.0));
  CHECK(perturb::resolve_step(cfg, Tensor(2, 2, {0.0, 0.0, 4.0, 4.0})) == doctest::Approx(4.0));
}

TEST_CASE("names and validation") {
  for (perturb::Kind k : {perturb::Kind::kNone, perturb::Kind::kDensityDescending, perturb::Kind::kGaussianNoise,
                          perturb::Kind::kUniformNoise, perturb::Kind::kChannelDropout, perturb::Kind::kVatLite})
    CHECK(perturb::parse_kind(perturb::to_string(k)) == k);
  CHECK_THROWS_AS(perturb::parse_kind("adversarial"), ConfigError);
  CHECK_THROWS_AS(perturb::parse_step_mode("relative"), ConfigError);
  perturb::PerturbConfig cfg;
  cfg.step = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
