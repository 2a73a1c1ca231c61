#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ddfp/errors.hpp"
#include "ddfp/oracle.hpp"
#include "support.hpp"

using namespace ddfp;

TEST_CASE("log-determinant of simple matrices") {
  CHECK(oracle::log_abs_det(Tensor(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1})) == 0.0);
  CHECK(oracle::log_abs_det(Tensor(3, 3, {2, 0, 0, 0, 2, 0, 0, 0, 2})) == doctest::Approx(3.0 * std::log(2.0)));
  // Needs a row swap; det = -6.
  CHECK(oracle::log_abs_det(Tensor(2, 2, {0, 2, 3, 1})) == doctest::Approx(std::log(6.0)));
  CHECK_THROWS_AS(oracle::log_abs_det(Tensor(2, 2, {1, 2, 2, 4})), NumericError);
}

TEST_CASE("numeric Jacobian of a linear map is the matrix") {
  const oracle::VectorMap f = [](std::span<const double> v) {
    return std::vector<double>{2.0 * v[0] + v[1], -v[0] + 3.0 * v[1]};
  };
  const double v[] = {0.3, -0.7};
  const Tensor j = oracle::numeric_jacobian(f, v, 1e-4);
  CHECK(test::max_abs_diff(j, Tensor(2, 2, {2, 1, -1, 3})) < 1e-10);
}

TEST_CASE("identity flow has zero numerical log-det") {
  const flow::FlowModel model(flow::FlowConfig{4, 8, 2, 2.0, 0});
  const double v[] = {0.1, 0.2, -0.3, 0.4};
  CHECK(std::abs(oracle::numeric_jacobian_logdet(model, v, 1e-4)) < 1e-10);
}

TEST_CASE("jacobian oracle rejects large or malformed requests") {
  const flow::FlowModel model(flow::FlowConfig{18, 8, 2, 2.0, 0});
  const std::vector<double> v(18, 0.0);
  CHECK_THROWS_AS(oracle::numeric_jacobian_logdet(model, v, 1e-4), ContractViolation);
  const double x[] = {1.0};
  CHECK_THROWS_AS(oracle::finite_diff_grad([](std::span<const double> s) { return s[0]; }, x, 0.0), ContractViolation);
}

TEST_CASE("finite differences of a quadratic") {
  const double v[] = {1.0, -2.0, 0.5};
  const std::vector<double> g =
      oracle::finite_diff_grad([](std::span<const double> s) { return s[0] * s[0] + 3.0 * s[1] * s[2]; }, v, 1e-4);
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == doctest::Approx(1.5));
  CHECK(g[2] == doctest::Approx(-6.0));
}

TEST_CASE("Monte-Carlo mass of a randomized flow is one") {
  const flow::FlowModel model = test::random_flow(2, 1, 0.05);
  latent::GmmLatent lat = latent::init_latent(2, 2, 1);
  const oracle::MassEstimate m = oracle::mc_normalization(model, lat, {}, 200000, 3);
  CHECK(std::abs(m.mass - 1.0) < 0.03);
  CHECK(m.stderr_ > 0.0);
  CHECK_FALSE(m.warning);
}

TEST_CASE("standard error shrinks like one over root n") {
  const flow::FlowModel model(flow::FlowConfig{2, 8, 2, 2.0, 0});
  const latent::GmmLatent lat = latent::init_latent(1, 2, 0);
  const double small = oracle::mc_normalization(model, lat, {}, 10000, 5).stderr_;
  const double large = oracle::mc_normalization(model, lat, {}, 160000, 5).stderr_;
  CHECK(small / large == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("mass escaping the box raises the warning") {
  const flow::FlowModel model(flow::FlowConfig{2, 8, 2, 2.0, 0});
  const latent::GmmLatent lat = latent::init_latent(1, 2, 0);
  const oracle::MassEstimate m = oracle::mc_normalization(model, lat, {-1.0, 1.0}, 20000, 6);
  CHECK(m.warning);
  CHECK(m.outside > 0.5);
  CHECK(m.mass < 0.6);
}

TEST_CASE("Monte-Carlo argument checks") {
  const flow::FlowModel model(flow::FlowConfig{2, 8, 2, 2.0, 0});
  const latent::GmmLatent lat = latent::init_latent(1, 2, 0);
  CHECK_THROWS_AS(oracle::mc_normalization(model, lat, {}, 0, 0), ContractViolation);
  const flow::FlowModel wide(flow::FlowConfig{4, 8, 2, 2.0, 0});
  CHECK_THROWS_AS(oracle::mc_normalization(wide, latent::init_latent(1, 4, 0), {}, 10, 0), ContractViolation);
}

TEST_CASE("grid cells are centred and match direct evaluation bit for bit") {
  const flow::FlowModel model = test::random_flow(2, 7, 0.1);
  const latent::GmmLatent lat = latent::init_latent(3, 2, 7);
  const std::vector<oracle::GridCell> two = oracle::grid_density(model, lat, {-1.0, 1.0}, 2);
  REQUIRE(two.size() == 4);
  CHECK(two[0].x == -0.5);
  CHECK(two[0].y == -0.5);
  CHECK(two[1].x == 0.5);
  CHECK(two[1].y == -0.5);
  CHECK(two[2].x == -0.5);
  CHECK(two[2].y == 0.5);
  for (const oracle::GridCell& c : oracle::grid_density(model, lat, {-3.0, 3.0}, 7)) {
    const double v[] = {c.x, c.y};
    CHECK(c.logp == latent::marginal_loglik(v, model, lat));
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (lat.log_weights[k] + latent::class_conditional_loglik(v, k, model, lat) >
          lat.log_weights[best] + latent::class_conditional_loglik(v, best, model, lat))
        best = k;
    CHECK(c.cls == best);
  }
}

TEST_CASE("grid csv layout") {
  const std::vector<oracle::GridCell> cells{{0.5, -0.5, -1.25, 2}};
  std::ostringstream a, b;
  oracle::write_grid_csv(a, cells, true);
  oracle::write_grid_csv(b, cells, false);
  CHECK(a.str() == "x,y,logp,class\n0.5,-0.5,-1.25,2\n");
  CHECK(b.str() == "x,y,logp\n0.5,-0.5,-1.25\n");
}
