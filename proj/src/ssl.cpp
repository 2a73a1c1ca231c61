#include "ddfp/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ostream>
#include <sstream>

#include "ddfp/errors.hpp"

namespace ddfp::ssl {

std::vector<Tensor*> Model::parameters() {
  return {&enc1.weight, &enc1.bias, &enc2.weight, &enc2.bias, &dec.weight, &dec.bias};
}

std::vector<const Tensor*> Model::parameters() const {
  return {&enc1.weight, &enc1.bias, &enc2.weight, &enc2.bias, &dec.weight, &dec.bias};
}

Model make_model(std::size_t input_dim, std::size_t hidden, std::size_t feature_dim,
                 std::size_t classes, Rng& rng) {
  if (input_dim == 0 || hidden == 0 || feature_dim == 0 || classes < 2) {
    throw ConfigError("ssl: model dimensions must be positive and classes >= 2");
  }
  return Model{nn::Linear::gaussian(input_dim, hidden, 1.0, rng),
               nn::Linear::gaussian(hidden, feature_dim, 1.0, rng),
               nn::Linear::gaussian(feature_dim, classes, 1.0, rng)};
}

Tensor encode(const Model& model, const Tensor& x) {
  return model.enc2.forward(nn::tanh(model.enc1.forward(x)));
}

Tensor decode(const Model& model, const Tensor& features) { return model.dec.forward(features); }

Tensor predict_proba(const Model& model, const Tensor& x) {
  Tensor p = nn::softmax_rows(decode(model, encode(model, x)));
  if (!p.all_finite()) throw NumericError("predict_proba: non-finite class probabilities");
  return p;
}

namespace {
std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}
}  // namespace

double accuracy(const Model& model, const Tensor& x, std::span<const std::size_t> labels) {
  if (labels.size() != x.rows()) throw ContractViolation("accuracy: one label per row");
  if (x.rows() == 0) return 0.0;
  const Tensor logits = decode(model, encode(model, x));
  std::size_t hit = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) hit += argmax_row(logits.row(r)) == labels[r];
  return static_cast<double>(hit) / static_cast<double>(x.rows());
}

BoundModel bind(ad::Tape& tape, const Model& model, bool trainable) {
  BoundModel b{nn::bind(tape, model.enc1, trainable), nn::bind(tape, model.enc2, trainable),
               nn::bind(tape, model.dec, trainable), {}};
  b.params = {b.enc1.weight, b.enc1.bias, b.enc2.weight, b.enc2.bias, b.dec.weight, b.dec.bias};
  return b;
}

Tensor augment_weak(const Tensor& x, double sigma, Rng& rng) {
  Tensor out = x;
  if (sigma > 0.0) {
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& v : out.data()) v += normal(rng);
  }
  return out;
}

Tensor augment_strong(const Tensor& x, double sigma, double drop_p, Rng& rng) {
  Tensor out = augment_weak(x, sigma, rng);
  if (drop_p > 0.0) {
    std::bernoulli_distribution drop(drop_p);
    for (double& v : out.data())
      if (drop(rng)) v = 0.0;
  }
  return out;
}

std::size_t PseudoLabelBatch::retained() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1.0));
}

PseudoLabelBatch pseudo_labels(const Tensor& probs, double tau) {
  PseudoLabelBatch out;
  out.labels.reserve(probs.rows());
  out.mask.reserve(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    double total = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw ContractViolation("pseudo_labels: negative or NaN probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractViolation("pseudo_labels: row " + std::to_string(r) + " sums to " +
                              std::to_string(total));
    }
    const std::size_t k = argmax_row(row);
    out.labels.push_back(k);
    out.mask.push_back(row[k] > tau ? 1.0 : 0.0);
  }
  return out;
}

double sup_loss(const Tensor& probs, std::span<const std::size_t> labels) {
  if (labels.size() != probs.rows() || probs.rows() == 0) {
    throw ContractViolation("sup_loss: one label per row required");
  }
  double s = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) s -= std::log(probs(r, labels[r]));
  return s / static_cast<double>(probs.rows());
}

double image_consistency_loss(const Tensor& probs, const PseudoLabelBatch& pseudo) {
  if (pseudo.labels.size() != probs.rows()) throw ContractViolation("consistency: batch mismatch");
  if (probs.rows() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    if (pseudo.mask[r] != 0.0) s -= std::log(probs(r, pseudo.labels[r]));
  }
  return s / static_cast<double>(probs.rows());
}

double unified_loss(double sup, double im, double ft, double lambda_ft) {
  if (!(lambda_ft >= 0.0)) throw ContractViolation("unified_loss: lambda_ft must be >= 0");
  return sup + im + lambda_ft * ft;
}

ad::Var sup_loss(ad::Var logits, std::span<const std::size_t> labels) {
  return ad::softmax_cross_entropy(logits, labels);
}

ad::Var image_consistency_loss(ad::Var logits, const PseudoLabelBatch& pseudo) {
  return ad::softmax_cross_entropy(logits, pseudo.labels, pseudo.mask);
}

FeatureLoss feature_consistency_loss(ad::Var features, const BoundModel& model,
                                     const Model& head_source, const PseudoLabelBatch& pseudo,
                                     const flow::FlowModel& flow, const latent::GmmLatent& latent,
                                     const perturb::PerturbConfig& config, Rng& rng) {
  const Tensor& v = features.value();
  FeatureLoss out;
  out.eps = perturb::resolve_step(config, v);
  Tensor delta;
  switch (config.kind) {
    case perturb::Kind::kDensityDescending: {
      perturb::Perturbation p = perturb::ddfp_perturbation(v, out.eps, flow, latent);
      delta = std::move(p.delta);
      out.fallbacks = p.fallbacks;
      break;
    }
    default:
      delta = perturb::baseline_perturbation(config.kind, v, config, out.eps, rng, &head_source.dec);
  }
  ad::Tape& tape = *features.tape();
  ad::Var perturbed = ad::add(features, tape.constant(std::move(delta)));
  out.loss = image_consistency_loss(model.decode(perturbed), pseudo);
  return out;
}

void ema_update(Model& teacher, const Model& student, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ContractViolation("ema_update: m must lie in [0, 1]");
  std::vector<Tensor*> t = teacher.parameters();
  std::vector<const Tensor*> s = student.parameters();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t[i]->same_shape(*s[i])) throw ContractViolation("ema_update: shape mismatch");
  }
  if (m == 1.0) return;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (m == 0.0) {
      *t[i] = *s[i];
      continue;
    }
    for (std::size_t j = 0; j < t[i]->size(); ++j) {
      (*t[i])[j] = m * (*t[i])[j] + (1.0 - m) * (*s[i])[j];
    }
  }
}

void SslConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("ssl: tau must lie in (0, 1)");
  if (!(lambda_ft >= 0.0)) throw ConfigError("ssl: lambda_ft must be >= 0");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) {
    throw ConfigError("ssl: ema_momentum must lie in [0, 1]");
  }
  if (epochs == 0 || iterations_per_epoch == 0) throw ConfigError("ssl: epochs and iterations must be positive");
  if (labeled_batch == 0 || unlabeled_batch == 0) throw ConfigError("ssl: batch sizes must be positive");
  if (!(lr > 0.0)) throw ConfigError("ssl: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("ssl: momentum must lie in [0, 1)");
  if (!(sigma_weak >= 0.0 && sigma_strong >= 0.0)) throw ConfigError("ssl: jitter must be >= 0");
  if (sigma_strong > 0.0 && !(sigma_weak < sigma_strong)) {
    throw ConfigError("ssl: sigma_weak must be smaller than sigma_strong");
  }
  if (!(drop_p >= 0.0 && drop_p < 1.0)) throw ConfigError("ssl: drop_p must lie in [0, 1)");
  if (feature_dim % 2 != 0) throw ConfigError("ssl: feature_dim must be even for the flow");
  if (perturb.kind != perturb::Kind::kNone) perturb.validate();
  estimator.validate();
}

std::size_t SslConfig::feature_start_epoch() const {
  return ft_start_epoch != 0 ? ft_start_epoch : estimator.warm_start_epoch + 1;
}

std::uint64_t checksum(std::span<const Tensor* const> tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor* t : tensors) {
    for (double x : t->data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &x, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

namespace {

std::uint64_t model_checksum(const Model& m) { return ssl::checksum(m.parameters()); }
std::uint64_t flow_checksum(const flow::FlowModel& f) { return ssl::checksum(f.parameters()); }

std::vector<std::size_t> draw(std::span<const std::size_t> pool, std::size_t count, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::size_t> out(count);
  for (std::size_t& i : out) i = pool[pick(rng)];
  return out;
}

class Sgd {
 public:
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr,
            double momentum) {
    if (buf_.empty()) {
      for (Tensor* p : params) buf_.emplace_back(p->rows(), p->cols());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        buf_[i][j] = momentum * buf_[i][j] + grads[i][j];
        p[j] -= lr * buf_[i][j];
      }
    }
  }

 private:
  std::vector<Tensor> buf_;
};

}  // namespace

SslResult train_ssl(const SslConfig& config, const data::Dataset& dataset) {
  config.validate();
  if (dataset.labeled.empty()) throw ConfigError("train_ssl: no labeled samples");
  const std::size_t classes = dataset.classes;
  const std::size_t d = config.feature_dim;

  Rng model_rng = make_rng(config.seed, 0x30de1);
  Rng aug_rng = make_rng(config.seed, 0xa06);
  Rng perturb_rng = make_rng(config.seed, 0x9e27);
  Rng pool_rng = make_rng(config.seed, 0xf1a);

  flow::FlowConfig fc{d, config.flow_hidden, config.flow_blocks, config.flow_s_max,
                      config.seed ^ 0xf10f10ULL, config.flow_activation};
  SslResult res{flow::FlowModel(fc)};
  res.latent = latent::init_latent(classes, d, config.seed ^ 0x1a7e47ULL, config.latent_weights);
  res.student = make_model(dataset.points.cols(), config.hidden, d, classes, model_rng);
  res.teacher = res.student;
  estimator::Adam adam(config.estimator.beta1, config.estimator.beta2, config.estimator.adam_eps);
  Sgd sgd;

  const Tensor test_x = dataset.rows(dataset.test);
  const std::vector<std::size_t> test_y = dataset.labels_of(dataset.test);
  const bool has_unlabeled = !dataset.unlabeled.empty();
  const bool wants_ft = config.lambda_ft > 0.0 && config.perturb.kind != perturb::Kind::kNone;
  const std::size_t total_iters = config.epochs * config.iterations_per_epoch;

  std::size_t iter = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch;
    const bool ft_active = wants_ft && has_unlabeled && epoch >= config.feature_start_epoch();
    const bool flow_active = epoch >= config.estimator.warm_start_epoch;
    em.warming = wants_ft && has_unlabeled && !ft_active;
    const double flow_lr = estimator::scheduled_lr(
        config.estimator, static_cast<double>(epoch - 1) / static_cast<double>(config.epochs));

    for (std::size_t it = 0; it < config.iterations_per_epoch; ++it, ++iter) {
      try {
        const std::vector<std::size_t> li = draw(dataset.labeled, config.labeled_batch, aug_rng);
        const std::vector<std::size_t> ly = dataset.labels_of(li);
        const Tensor xl = augment_weak(dataset.rows(li), config.sigma_weak, aug_rng);
        Tensor xu_weak, xu_strong;
        PseudoLabelBatch pseudo;
        if (has_unlabeled) {
          const std::vector<std::size_t> ui = draw(dataset.unlabeled, config.unlabeled_batch, aug_rng);
          const Tensor xu = dataset.rows(ui);
          xu_weak = augment_weak(xu, config.sigma_weak, aug_rng);
          xu_strong = augment_strong(xu, config.sigma_strong, config.drop_p, aug_rng);
          pseudo = pseudo_labels(predict_proba(res.teacher, xu_weak), config.tau);
          em.retention += static_cast<double>(pseudo.retained()) / static_cast<double>(pseudo.mask.size());
        }

        // Student update.
        const std::uint64_t flow_before = flow_checksum(res.flow);
        {
          ad::Tape tape;
          const BoundModel student = bind(tape, res.student, /*trainable=*/true);
          ad::Var loss = sup_loss(student.decode(student.encode(tape.constant(xl))), ly);
          em.sup += loss.value().item();
          if (has_unlabeled) {
            ad::Var feats = student.encode(tape.constant(xu_strong));
            ad::Var im = image_consistency_loss(student.decode(feats), pseudo);
            em.im += im.value().item();
            loss = ad::add(loss, im);
            if (ft_active) {
              const FeatureLoss ft = feature_consistency_loss(feats, student, res.student, pseudo,
                                                              res.flow, res.latent, config.perturb,
                                                              perturb_rng);
              em.ft += ft.loss.value().item();
              em.fallbacks += ft.fallbacks;
              loss = ad::add(loss, ad::scale(ft.loss, config.lambda_ft));
            }
          }
          const std::vector<Tensor> grads = tape.grad(loss, student.params);
          const double progress = static_cast<double>(iter) / static_cast<double>(total_iters);
          const double lr = config.lr * std::pow(1.0 - progress, config.poly_power);
          const std::vector<Tensor*> params = res.student.parameters();
          sgd.step(params, grads, lr, config.momentum);
        }
        ema_update(res.teacher, res.student, config.ema_momentum);
        if (flow_checksum(res.flow) != flow_before) em.flow_touched_by_ssl = true;

        // Density estimator on detached teacher features.
        if (flow_active) {
          const std::uint64_t student_before = model_checksum(res.student);
          const std::uint64_t teacher_before = model_checksum(res.teacher);
          const Tensor fl = encode(res.teacher, xl);
          const Tensor fu = has_unlabeled ? encode(res.teacher, xu_weak) : Tensor(0, d);
          const estimator::FeaturePool pool =
              estimator::sample_feature_pool(fl, ly, fu, config.estimator.sample_budget, pool_rng);
          for (std::size_t s = 0; s < config.estimator.steps_per_iteration; ++s) {
            em.flow += estimator::flow_train_step(pool, res.flow, res.latent, adam, flow_lr);
            ++em.flow_steps;
          }
          if (model_checksum(res.student) != student_before || model_checksum(res.teacher) != teacher_before) {
            em.model_touched_by_flow = true;
          }
        }
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "train_ssl aborted at epoch " << epoch << " iteration " << it << ": " << e.what();
        throw NumericError(os.str());
      }
    }

    const double n = static_cast<double>(config.iterations_per_epoch);
    em.sup /= n;
    em.im /= n;
    em.ft /= n;
    em.retention /= n;
    if (em.flow_steps > 0) em.flow /= static_cast<double>(em.flow_steps);
    em.test_accuracy = accuracy(res.teacher, test_x, test_y);
    res.epochs.push_back(em);
  }
  res.final_accuracy = res.epochs.back().test_accuracy;
  return res;
}

void write_metrics_csv(std::ostream& os, std::span<const EpochMetrics> epochs) {
  os << "epoch,L_sup,L_im,L_ft,L_flow,pseudo_retention,test_acc,warming,fallbacks\n";
  const auto old = os.precision(17);
  for (const EpochMetrics& e : epochs) {
    os << e.epoch << ',' << e.sup << ',' << e.im << ',' << e.ft << ',' << e.flow << ','
       << e.retention << ',' << e.test_accuracy << ',' << (e.warming ? 1 : 0) << ',' << e.fallbacks
       << '\n';
  }
  os.precision(old);
}

namespace {
std::string format_setting(perturb::Kind kind, double step, double lambda) {
  std::ostringstream os;
  os << perturb::to_string(kind) << "/step=" << step << "/lambda=" << lambda;
  return os.str();
}
}  // namespace

std::vector<AblationRow> ablate(const SslConfig& base, const SweepSpec& sweep,
                                const std::function<data::Dataset(std::uint64_t)>& make_dataset) {
  const std::vector<perturb::Kind> kinds =
      sweep.kinds.empty() ? std::vector<perturb::Kind>{base.perturb.kind} : sweep.kinds;
  const std::vector<double> steps = sweep.steps.empty() ? std::vector<double>{base.perturb.step} : sweep.steps;
  const std::vector<double> lambdas = sweep.lambdas.empty() ? std::vector<double>{base.lambda_ft} : sweep.lambdas;
  const std::vector<std::uint64_t> seeds =
      sweep.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : sweep.seeds;

  std::vector<data::Dataset> datasets;
  for (std::uint64_t seed : seeds) datasets.push_back(make_dataset(seed));

  std::vector<AblationRow> rows;
  for (perturb::Kind kind : kinds) {
    for (double step : steps) {
      for (double lambda : lambdas) {
        for (std::size_t s = 0; s < seeds.size(); ++s) {
          SslConfig cfg = base;
          cfg.seed = seeds[s];
          cfg.perturb.kind = kind;
          cfg.perturb.step = step;
          cfg.lambda_ft = lambda;
          rows.push_back({format_setting(kind, step, lambda), seeds[s],
                          train_ssl(cfg, datasets[s]).final_accuracy});
        }
      }
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
  os << "setting,seed,accuracy\n";
  const auto old = os.precision(17);
  for (const AblationRow& r : rows) os << r.setting << ',' << r.seed << ',' << r.accuracy << '\n';
  os.precision(old);
}

}  // namespace ddfp::ssl
