#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ddfp/errors.hpp"
#include "ddfp/estimator.hpp"
#include "support.hpp"

using namespace ddfp;

namespace {

latent::GmmLatent fixed_latent() {
  latent::GmmLatent lat = latent::init_latent(2, 2, 0);
  lat.means = Tensor(2, 2, {1.0, 2.0, -1.0, -2.0});
  return lat;
}

estimator::FeaturePool pool_of(Tensor labeled, std::vector<std::size_t> labels, Tensor unlabeled) {
  estimator::FeaturePool p;
  p.labeled = std::move(labeled);
  p.labels = std::move(labels);
  p.unlabeled = std::move(unlabeled);
  return p;
}

// Two well separated blobs in 2-D, labeled by blob.
void blobs(std::size_t n, Rng& rng, Tensor& labeled, std::vector<std::size_t>& labels, Tensor& unlabeled) {
  labeled = test::normal(n, 2, rng, 0.3);
  unlabeled = test::normal(4 * n, 2, rng, 0.3);
  labels.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = i % 2;
    labeled(i, 0) += labels[i] == 0 ? 2.0 : -2.0;
  }
  for (std::size_t i = 0; i < unlabeled.rows(); ++i) unlabeled(i, 0) += i % 2 == 0 ? 2.0 : -2.0;
}

}  // namespace

TEST_CASE("a labeled point mapped onto its class mean costs the standard normal peak") {
  // The fresh two-block flow reverses coordinates, so v = (2, 1) lands on (1, 2).
  const flow::FlowModel model(flow::FlowConfig{2, 8, 2, 2.0, 0});
  const auto pool = pool_of(Tensor(1, 2, {2.0, 1.0}), {0}, Tensor(0, 2));
  CHECK(estimator::flow_loss(pool, model, fixed_latent()) == doctest::Approx(1.837877).epsilon(1e-6));
}

TEST_CASE("unlabeled-only pools use the marginal") {
  const flow::FlowModel model(flow::FlowConfig{2, 8, 2, 2.0, 0});
  const latent::GmmLatent lat = fixed_latent();
  const Tensor u(3, 2, {0.1, 0.2, -0.3, 1.0, 2.0, -1.0});
  const auto pool = pool_of(Tensor(0, 2), {}, u);
  const std::vector<double> ll = latent::marginal_loglik(u, model, lat);
  CHECK(estimator::flow_loss(pool, model, lat) == doctest::Approx(-(ll[0] + ll[1] + ll[2]) / 3.0));
  ad::Tape tape;
  const ad::Var taped = estimator::flow_loss(flow::bind(tape, model, false), pool, lat);
  CHECK(taped.value().item() == doctest::Approx(estimator::flow_loss(pool, model, lat)).epsilon(1e-12));
}

TEST_CASE("empty pools are rejected") {
  const flow::FlowModel model(flow::FlowConfig{2, 8, 2, 2.0, 0});
  const auto pool = pool_of(Tensor(0, 2), {}, Tensor(0, 2));
  CHECK_THROWS_AS(estimator::flow_loss(pool, model, fixed_latent()), ContractViolation);
}

TEST_CASE("pool sampling respects the budget split") {
  Rng rng = make_rng(1);
  const Tensor l = test::normal(10, 2, rng), u = test::normal(100, 2, rng);
  const std::vector<std::size_t> y(10, 1);
  SUBCASE("budget 2 takes one row from each source") {
    const auto p = estimator::sample_feature_pool(l, y, u, 2, rng);
    CHECK(p.labeled.rows() == 1);
    CHECK(p.unlabeled.rows() == 1);
    CHECK(p.warnings == 0);
  }
  SUBCASE("a short source contributes everything") {
    const auto p = estimator::sample_feature_pool(l, y, u, 64, rng);
    CHECK(p.labeled.rows() == 10);
    CHECK(p.unlabeled.rows() == 32);
  }
  SUBCASE("empty sources are counted as warnings") {
    const auto p = estimator::sample_feature_pool(Tensor(0, 2), {}, u, 8, rng);
    CHECK(p.warnings == 1);
    CHECK(p.unlabeled.rows() == 4);
  }
  SUBCASE("odd budgets are a contract violation") {
    CHECK_THROWS_AS(estimator::sample_feature_pool(l, y, u, 3, rng), ContractViolation);
  }
  SUBCASE("sampled rows are distinct source rows") {
    const auto p = estimator::sample_feature_pool(l, y, u, 40, rng);
    for (std::size_t i = 0; i < p.unlabeled.rows(); ++i)
      for (std::size_t j = i + 1; j < p.unlabeled.rows(); ++j) CHECK(p.unlabeled.row(i)[0] != p.unlabeled.row(j)[0]);
  }
}

TEST_CASE("a zero learning rate leaves the flow untouched") {
  flow::FlowModel model = test::random_flow(2, 3, 0.1);
  const flow::FlowModel before = model;
  Rng rng = make_rng(3);
  Tensor l, u;
  std::vector<std::size_t> y;
  blobs(16, rng, l, y, u);
  estimator::Adam adam;
  estimator::flow_train_step(pool_of(l, y, u), model, fixed_latent(), adam, 0.0);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) CHECK(*model.parameters()[i] == *before.parameters()[i]);
}

TEST_CASE("small steps descend for almost every seed") {
  const latent::GmmLatent lat = fixed_latent();
  int descended = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    flow::FlowModel model = test::random_flow(2, s, 0.05);
    Rng rng = make_rng(s, 4);
    Tensor l, u;
    std::vector<std::size_t> y;
    blobs(16, rng, l, y, u);
    const auto pool = pool_of(l, y, u);
    estimator::Adam adam;
    const double before = estimator::flow_train_step(pool, model, lat, adam, 1e-4);
    if (estimator::flow_loss(pool, model, lat) < before) ++descended;
  }
  CHECK(descended >= 18);
}

TEST_CASE("latent means and weights are never updated") {
  flow::FlowModel model = test::random_flow(2, 5, 0.05);
  const latent::GmmLatent lat = fixed_latent();
  const latent::GmmLatent copy = lat;
  Rng rng = make_rng(5);
  Tensor l, u;
  std::vector<std::size_t> y;
  blobs(16, rng, l, y, u);
  estimator::FlowTrainConfig cfg;
  cfg.sample_budget = 32;
  estimator::fit_density(model, lat, l, y, u, cfg, 20);
  CHECK(lat.means == copy.means);
  CHECK(lat.log_weights == copy.log_weights);
}

TEST_CASE("loss trends down over a long fit") {
  flow::FlowModel model(flow::FlowConfig{2, 64, 2, 2.0, 6});
  Rng rng = make_rng(6);
  Tensor l, u;
  std::vector<std::size_t> y;
  blobs(64, rng, l, y, u);
  estimator::FlowTrainConfig cfg;
  cfg.sample_budget = 128;
  cfg.lr = 1e-2;
  const auto log = estimator::fit_density(model, fixed_latent(), l, y, u, cfg, 500);
  REQUIRE(log.size() == 500);
  auto window = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - 5; i < end; ++i) s += log[i].loss;
    return s / 5.0;
  };
  CHECK(window(500) < window(5));
  CHECK(log.back().lr == doctest::Approx(1e-2 * 0.25));
}

TEST_CASE("step-decay schedule") {
  estimator::FlowTrainConfig cfg;
  cfg.lr = 1.0;
  CHECK(estimator::scheduled_lr(cfg, 0.0) == 1.0);
  CHECK(estimator::scheduled_lr(cfg, 0.5) == 0.5);
  CHECK(estimator::scheduled_lr(cfg, 0.9) == 0.25);
}

TEST_CASE("config validation") {
  estimator::FlowTrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.sample_budget = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lr = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.warm_start_epoch = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("non-finite losses abort with a numeric error") {
  flow::FlowModel model(flow::FlowConfig{2, 8, 2, 2.0, 0});
  const auto pool = pool_of(Tensor(1, 2, {1e200, 1e200}), {0}, Tensor(0, 2));
  estimator::Adam adam;
  CHECK_THROWS_AS(estimator::flow_train_step(pool, model, fixed_latent(), adam, 1e-3), NumericError);
}

TEST_CASE("loss csv") {
  std::ostringstream os;
  const estimator::LossLogEntry e[] = {{1, 2.5, 0.001}};
  estimator::write_loss_csv(os, e);
  CHECK(os.str().rfind("iteration,flow_loss,lr\n1,2.5,", 0) == 0);
}
