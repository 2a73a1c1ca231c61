#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ddfp/errors.hpp"
#include "ddfp/ssl.hpp"
#include "support.hpp"

using namespace ddfp;

namespace {

data::Dataset moons(std::uint64_t seed, std::size_t per_class = 4) {
  return data::partition(data::generate(data::Kind::kMoons, 300, 0.1, seed), per_class, 0.3, seed);
}

ssl::SslConfig quick(perturb::Kind kind = perturb::Kind::kDensityDescending) {
  ssl::SslConfig c;
  c.epochs = 4;
  c.iterations_per_epoch = 5;
  c.unlabeled_batch = 32;
  c.hidden = 16;
  c.feature_dim = 4;
  c.flow_hidden = 16;
  c.estimator.sample_budget = 32;
  c.estimator.warm_start_epoch = 1;
  c.tau = 0.6;
  c.perturb.kind = kind;
  c.perturb.step = 0.5;
  return c;
}

Tensor probs(std::size_t rows, std::vector<double> values) {
  const std::size_t cols = values.size() / rows;
  return Tensor(rows, cols, std::move(values));
}

}  // namespace

TEST_CASE("weak augmentation is seeded jitter") {
  Rng a = make_rng(1), b = make_rng(1);
  const Tensor x(50, 2, 1.0);
  const Tensor wa = ssl::augment_weak(x, 0.1, a);
  CHECK(wa == ssl::augment_weak(x, 0.1, b));
  CHECK(test::max_abs_diff(wa, x) < 0.6);
  Rng c = make_rng(2);
  CHECK(ssl::augment_weak(x, 0.0, c) == x);
}

TEST_CASE("strong augmentation zeroes about drop_p of the coordinates") {
  Rng rng = make_rng(3);
  const Tensor x(4000, 2, 5.0);
  const Tensor s = ssl::augment_strong(x, 0.01, 0.25, rng);
  std::size_t zeros = 0;
  for (double v : s.data()) zeros += v == 0.0;
  CHECK(static_cast<double>(zeros) / 8000.0 == doctest::Approx(0.25).epsilon(0.1));
}

TEST_CASE("pseudo-label examples") {
  const ssl::PseudoLabelBatch p = ssl::pseudo_labels(probs(3, {0.9, 0.1, 0.4, 0.6, 0.5, 0.5}), 0.7);
  CHECK(p.labels == std::vector<std::size_t>{0, 1, 0});
  CHECK(p.mask == std::vector<double>{1.0, 0.0, 0.0});
  CHECK(p.retained() == 1);
  // The threshold is strict.
  CHECK(ssl::pseudo_labels(probs(1, {0.7, 0.3}), 0.7).retained() == 0);
  CHECK_THROWS_AS(ssl::pseudo_labels(probs(1, {0.7, 0.4}), 0.5), ContractViolation);
  CHECK_THROWS_AS(ssl::pseudo_labels(probs(1, {1.2, -0.2}), 0.5), ContractViolation);
}

TEST_CASE("threshold settings from the benchmarks") {
  const ssl::PseudoLabelBatch strict = ssl::pseudo_labels(probs(2, {0.97, 0.03, 0.6, 0.4}), 0.95);
  CHECK(strict.labels[0] == 0);
  CHECK(strict.mask == std::vector<double>{1.0, 0.0});
  CHECK(ssl::pseudo_labels(probs(1, {0.71, 0.29}), 0.7).retained() == 1);
}

TEST_CASE("retention falls as tau rises and labels follow the argmax") {
  Rng rng = make_rng(4);
  Tensor logits = test::normal(200, 5, rng, 2.0);
  const Tensor p = nn::softmax_rows(logits);
  std::size_t last = p.rows() + 1;
  std::vector<std::size_t> first_labels;
  for (double tau : {0.05, 0.2, 0.4, 0.6, 0.8, 0.95}) {
    const ssl::PseudoLabelBatch b = ssl::pseudo_labels(p, tau);
    CHECK(b.retained() <= last);
    last = b.retained();
    if (first_labels.empty()) first_labels = b.labels;
    CHECK(b.labels == first_labels);
  }
  for (std::size_t r = 0; r < p.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 5; ++k)
      if (p(r, k) > p(r, best)) best = k;
    CHECK(first_labels[r] == best);
  }
}

TEST_CASE("uniform predictions over 21 classes cost log 21") {
  const Tensor p(4, 21, 1.0 / 21.0);
  const ssl::PseudoLabelBatch b = ssl::pseudo_labels(p, 0.01);
  CHECK(b.retained() == 4);
  CHECK(ssl::image_consistency_loss(p, b) == doctest::Approx(3.0445).epsilon(1e-4));
  const std::vector<std::size_t> y{0, 5, 20, 3};
  CHECK(ssl::sup_loss(p, y) == doctest::Approx(std::log(21.0)));
}

TEST_CASE("hand-computed loss values") {
  const Tensor p = probs(2, {0.8, 0.2, 0.25, 0.75});
  const std::vector<std::size_t> y{0, 1};
  CHECK(ssl::sup_loss(p, y) == doctest::Approx(-(std::log(0.8) + std::log(0.75)) / 2.0));
  // Only the first row passes tau = 0.78; the sum is still divided by 2.
  const ssl::PseudoLabelBatch b = ssl::pseudo_labels(p, 0.78);
  CHECK(ssl::image_consistency_loss(p, b) == doctest::Approx(-std::log(0.8) / 2.0));
  CHECK(ssl::unified_loss(1.0, 2.0, 3.0, 0.5) == doctest::Approx(4.5));
  CHECK(ssl::unified_loss(1.0, 2.0, 3.0, 0.0) == doctest::Approx(3.0));
}

TEST_CASE("tape losses agree with the probability forms") {
  Rng rng = make_rng(5);
  const Tensor logits = test::normal(6, 3, rng);
  const Tensor p = nn::softmax_rows(logits);
  const ssl::PseudoLabelBatch b = ssl::pseudo_labels(p, 0.4);
  ad::Tape tape;
  const ad::Var l = tape.constant(logits);
  CHECK(ssl::image_consistency_loss(l, b).value().item() == doctest::Approx(ssl::image_consistency_loss(p, b)));
  CHECK(ssl::sup_loss(l, b.labels).value().item() == doctest::Approx(ssl::sup_loss(p, b.labels)));
}

TEST_CASE("feature loss with a zero step equals the image loss on the same features") {
  Rng rng = make_rng(6);
  const ssl::Model model = ssl::make_model(2, 8, 4, 3, rng);
  const flow::FlowModel f = test::random_flow(4, 6, 0.1);
  const latent::GmmLatent lat = latent::init_latent(3, 4, 6);
  const Tensor x = test::normal(10, 2, rng);
  const ssl::PseudoLabelBatch b = ssl::pseudo_labels(ssl::predict_proba(model, x), 0.2);
  for (perturb::Kind kind : {perturb::Kind::kDensityDescending, perturb::Kind::kGaussianNoise, perturb::Kind::kVatLite}) {
    perturb::PerturbConfig cfg;
    cfg.kind = kind;
    cfg.step = 0.0;
    ad::Tape tape;
    const ssl::BoundModel bm = ssl::bind(tape, model, true);
    const ad::Var feats = bm.encode(tape.constant(x));
    const ssl::FeatureLoss ft = ssl::feature_consistency_loss(feats, bm, model, b, f, lat, cfg, rng);
    CHECK(ft.loss.value().item() == doctest::Approx(ssl::image_consistency_loss(bm.decode(feats), b).value().item()).epsilon(1e-14));
  }
}

TEST_CASE("the decoder is affine in the perturbation") {
  Rng rng = make_rng(7);
  const ssl::Model model = ssl::make_model(2, 8, 4, 3, rng);
  const Tensor v = test::normal(5, 4, rng), d = test::normal(5, 4, rng);
  const Tensor base = ssl::decode(model, v), moved = ssl::decode(model, perturb::inject(v, d));
  const Tensor wd = ssl::decode(model, d);
  const Tensor zero = ssl::decode(model, Tensor(5, 4));
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(moved[i] == doctest::Approx(base[i] + wd[i] - zero[i]).epsilon(1e-12));
}

TEST_CASE("EMA update is exact at the ends and convex in between") {
  Rng rng = make_rng(8);
  const ssl::Model s = ssl::make_model(2, 4, 2, 2, rng);
  const ssl::Model t0 = ssl::make_model(2, 4, 2, 2, rng);
  ssl::Model t = t0;
  ssl::ema_update(t, s, 1.0);
  CHECK(t.enc1.weight == t0.enc1.weight);
  ssl::ema_update(t, s, 0.0);
  CHECK(t.enc1.weight == s.enc1.weight);
  t = t0;
  ssl::ema_update(t, s, 0.25);
  for (std::size_t i = 0; i < t.dec.weight.size(); ++i)
    CHECK(t.dec.weight[i] == doctest::Approx(0.25 * t0.dec.weight[i] + 0.75 * s.dec.weight[i]).epsilon(1e-15));
  CHECK_THROWS_AS(ssl::ema_update(t, s, 1.5), ContractViolation);
}

TEST_CASE("lambda zero reproduces the run without a feature term bit for bit") {
  const data::Dataset ds = moons(1);
  ssl::SslConfig a = quick(perturb::Kind::kDensityDescending);
  a.lambda_ft = 0.0;
  ssl::SslConfig b = quick(perturb::Kind::kNone);
  const ssl::SslResult ra = ssl::train_ssl(a, ds), rb = ssl::train_ssl(b, ds);
  CHECK(ssl::checksum(ra.teacher.parameters()) == ssl::checksum(rb.teacher.parameters()));
  CHECK(ssl::checksum(ra.flow.parameters()) == ssl::checksum(rb.flow.parameters()));
  CHECK(ra.final_accuracy == rb.final_accuracy);
}

TEST_CASE("flow and classifier updates never touch each other") {
  const data::Dataset ds = moons(2);
  const ssl::SslResult r = ssl::train_ssl(quick(), ds);
  REQUIRE(r.epochs.size() == 4);
  for (const ssl::EpochMetrics& m : r.epochs) {
    CHECK_FALSE(m.flow_touched_by_ssl);
    CHECK_FALSE(m.model_touched_by_flow);
    CHECK(m.flow_steps == 5);
    CHECK(std::isfinite(m.flow));
  }
  // Feature term starts one epoch after the warm start.
  CHECK(r.epochs[0].warming);
  CHECK(r.epochs[0].ft == 0.0);
  CHECK_FALSE(r.epochs[1].warming);
  CHECK(r.epochs[1].ft > 0.0);
}

TEST_CASE("a labeled-only dataset trains the supervised term alone") {
  data::Dataset ds = moons(3);
  ds.unlabeled.clear();
  const ssl::SslResult r = ssl::train_ssl(quick(), ds);
  for (const ssl::EpochMetrics& m : r.epochs) {
    CHECK(m.im == 0.0);
    CHECK(m.ft == 0.0);
    CHECK_FALSE(m.warming);
  }
  ds.labeled.clear();
  CHECK_THROWS_AS(ssl::train_ssl(quick(), ds), ConfigError);
}

TEST_CASE("training is deterministic for a seed") {
  const data::Dataset ds = moons(4);
  for (perturb::Kind k : {perturb::Kind::kDensityDescending, perturb::Kind::kGaussianNoise, perturb::Kind::kVatLite}) {
    const ssl::SslResult a = ssl::train_ssl(quick(k), ds), b = ssl::train_ssl(quick(k), ds);
    std::ostringstream ma, mb;
    ssl::write_metrics_csv(ma, a.epochs);
    ssl::write_metrics_csv(mb, b.epochs);
    CHECK(ma.str() == mb.str());
    CHECK(ssl::checksum(a.student.parameters()) == ssl::checksum(b.student.parameters()));
  }
}

TEST_CASE("config validation") {
  ssl::SslConfig c = quick();
  c.tau = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick();
  c.feature_dim = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick();
  c.sigma_strong = c.sigma_weak / 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick();
  c.lambda_ft = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ablation covers every cell and seed") {
  ssl::SslConfig base = quick();
  base.epochs = 2;
  base.iterations_per_epoch = 2;
  ssl::SweepSpec sweep{{perturb::Kind::kDensityDescending, perturb::Kind::kGaussianNoise}, {0.5, 1.0}, {}, {0, 1}};
  const auto rows = ssl::ablate(base, sweep, [](std::uint64_t s) { return moons(s); });
  CHECK(rows.size() == 8);
  CHECK(rows.front().setting == "density-descending/step=0.5/lambda=0.5");
  std::ostringstream os;
  ssl::write_ablation_csv(os, rows);
  CHECK(os.str().rfind("setting,seed,accuracy\n", 0) == 0);
}
