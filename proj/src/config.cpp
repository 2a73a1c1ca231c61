#include "ddfp/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ddfp/errors.hpp"
#include "ddfp/latent.hpp"

namespace ddfp::config {

using nlohmann::json;

namespace {

// Reads typed members of one JSON object and remembers which keys it saw,
// so leftovers can be reported as unknown.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ != nullptr && !j_->is_object()) fail("", "expected an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_ != nullptr && j_->contains(key);
  }

  void get(const char* key, double& out) {
    if (!has(key)) return;
    const json& v = (*j_)[key];
    if (!v.is_number()) fail(key, "expected a number");
    out = v.get<double>();
  }

  void get(const char* key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = (*j_)[key];
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      fail(key, "expected a non-negative integer");
    }
    out = v.get<std::size_t>();
  }

  void get(const char* key, std::uint64_t& out, int) {
    std::size_t tmp = out;
    get(key, tmp);
    out = tmp;
  }

  void get(const char* key, std::string& out) {
    if (!has(key)) return;
    const json& v = (*j_)[key];
    if (!v.is_string()) fail(key, "expected a string");
    out = v.get<std::string>();
  }

  void get(const char* key, std::vector<double>& out) {
    if (!has(key)) return;
    const json& v = (*j_)[key];
    if (!v.is_array()) fail(key, "expected an array of numbers");
    out.clear();
    for (const json& x : v) {
      if (!x.is_number()) fail(key, "expected an array of numbers");
      out.push_back(x.get<double>());
    }
  }

  template <typename Parse, typename T>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    if (!has(key)) return;
    get(key, s);
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

  const json* raw(const char* key) {
    return has(key) ? &(*j_)[key] : nullptr;
  }

  Section child(const char* key) { return Section(raw(key), join(key)); }

  void finish() const {
    if (j_ == nullptr) return;
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!seen_.contains(it.key())) {
        throw ConfigError("config: unknown key '" + join(it.key()) + "'");
      }
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config: '" + (key.empty() ? path_ : join(key)) + "': " + what);
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

std::string position(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

void read_data(Section s, DataConfig& c) {
  s.get_enum("kind", c.kind, data::parse_kind);
  s.get("n", c.n);
  s.get("noise", c.noise);
  s.get("classes", c.classes);
  if (const json* v = s.raw("labeled_per_class")) {
    if (v->is_string() && v->get<std::string>() == "all") {
      c.labeled_per_class = data::kAllLabeled;
    } else {
      s.get("labeled_per_class", c.labeled_per_class);
    }
  }
  s.get("test_fraction", c.test_fraction);
  s.get("seed", c.seed, 0);
  s.finish();
}

void read_perturb(Section s, perturb::PerturbConfig& c) {
  s.get_enum("kind", c.kind, perturb::parse_kind);
  s.get("step", c.step);
  s.get_enum("step_mode", c.step_mode, perturb::parse_step_mode);
  s.get("dropout_rate", c.dropout_rate);
  s.get("vat_iterations", c.vat_iterations);
  s.get("vat_xi", c.vat_xi);
  s.finish();
}

void read_estimator(Section s, estimator::FlowTrainConfig& c) {
  s.get("lr", c.lr);
  s.get("beta1", c.beta1);
  s.get("beta2", c.beta2);
  s.get("adam_eps", c.adam_eps);
  s.get("decay_factor", c.decay_factor);
  s.get("decay_milestones", c.decay_milestones);
  s.get("sample_budget", c.sample_budget);
  s.get("warm_start_epoch", c.warm_start_epoch);
  s.get("steps_per_iteration", c.steps_per_iteration);
  s.finish();
}

void read_ssl(Section s, ssl::SslConfig& c) {
  s.get("hidden", c.hidden);
  s.get("feature_dim", c.feature_dim);
  s.get("tau", c.tau);
  s.get("lambda_ft", c.lambda_ft);
  s.get("ema_momentum", c.ema_momentum);
  s.get("epochs", c.epochs);
  s.get("iterations_per_epoch", c.iterations_per_epoch);
  s.get("labeled_batch", c.labeled_batch);
  s.get("unlabeled_batch", c.unlabeled_batch);
  s.get("lr", c.lr);
  s.get("momentum", c.momentum);
  s.get("poly_power", c.poly_power);
  s.get("sigma_weak", c.sigma_weak);
  s.get("sigma_strong", c.sigma_strong);
  s.get("drop_p", c.drop_p);
  s.get("ft_start_epoch", c.ft_start_epoch);
  s.finish();
}

void read_box(Section& s, const char* key, oracle::Box& box) {
  std::vector<double> b{box.lo, box.hi};
  s.get(key, b);
  if (b.size() != 2 || !(b[1] > b[0])) s.fail(key, "expected [lo, hi] with lo < hi");
  box = {b[0], b[1]};
}

void validate(const RunConfig& c) {
  if (c.data.n < 10) throw ConfigError("config: 'data.n' must be >= 10");
  if (!(c.data.noise >= 0.0)) throw ConfigError("config: 'data.noise' must be >= 0");
  if (!(c.data.test_fraction >= 0.0 && c.data.test_fraction < 1.0)) {
    throw ConfigError("config: 'data.test_fraction' must lie in [0, 1)");
  }
  if (c.data.labeled_per_class == 0) throw ConfigError("config: 'data.labeled_per_class' must be >= 1");
  flow::FlowConfig{c.ssl.feature_dim, c.ssl.flow_hidden, c.ssl.flow_blocks, c.ssl.flow_s_max, 0,
                   c.ssl.flow_activation}.validate();
  c.ssl.validate();
  if (!c.ssl.latent_weights.empty()) {
    if (c.ssl.latent_weights.size() != c.data.classes) {
      throw ConfigError("config: 'latent.weights' needs one entry per class");
    }
    latent::init_latent(c.data.classes, c.ssl.feature_dim, 0, c.ssl.latent_weights);
  }
  if (c.fit_density.steps == 0) throw ConfigError("config: 'fit_density.steps' must be positive");
  if (c.verify.dim < 2 || c.verify.dim % 2 != 0 || c.verify.dim > 16) {
    throw ConfigError("config: 'verify.dim' must be even and in [2, 16]");
  }
  if (!(c.verify.h > 0.0)) throw ConfigError("config: 'verify.h' must be positive");
  if (c.verify.mc_samples == 0) throw ConfigError("config: 'verify.mc_samples' must be positive");
}

}  // namespace

RunConfig parse(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: syntax error at " + position(text, e.byte) + ": " + e.what());
  }
  RunConfig c;
  Section top(&root, "");
  top.get("seed", c.seed, 0);
  top.get("output_dir", c.output_dir);
  read_data(top.child("data"), c.data);

  {
    Section f = top.child("flow");
    f.get("hidden", c.ssl.flow_hidden);
    f.get("blocks", c.ssl.flow_blocks);
    f.get("s_max", c.ssl.flow_s_max);
    f.get_enum("activation", c.ssl.flow_activation, flow::parse_activation);
    f.finish();
  }
  {
    Section l = top.child("latent");
    l.get("weights", c.ssl.latent_weights);
    l.finish();
  }
  read_estimator(top.child("estimator"), c.ssl.estimator);
  read_perturb(top.child("perturb"), c.ssl.perturb);
  read_ssl(top.child("ssl"), c.ssl);
  {
    Section f = top.child("fit_density");
    f.get("steps", c.fit_density.steps);
    f.get("grid_resolution", c.fit_density.grid_resolution);
    read_box(f, "grid_bounds", c.fit_density.grid_box);
    f.finish();
  }
  {
    Section v = top.child("verify");
    v.get("dim", c.verify.dim);
    v.get("trials", c.verify.trials);
    v.get("h", c.verify.h);
    v.get("randomize_std", c.verify.randomize_std);
    v.get("mc_samples", c.verify.mc_samples);
    v.get("fit_steps", c.verify.fit_steps);
    v.finish();
  }
  top.finish();

  c.ssl.seed = c.seed;
  c.ssl.estimator.seed = c.seed;
  validate(c);
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump(const RunConfig& c) {
  const ssl::SslConfig& s = c.ssl;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["data"] = {{"kind", std::string(data::to_string(c.data.kind))},
               {"n", c.data.n},
               {"noise", c.data.noise},
               {"classes", c.data.classes},
               {"test_fraction", c.data.test_fraction},
               {"seed", c.data.seed}};
  if (c.data.labeled_per_class == data::kAllLabeled) {
    j["data"]["labeled_per_class"] = "all";
  } else {
    j["data"]["labeled_per_class"] = c.data.labeled_per_class;
  }
  j["flow"] = {{"hidden", s.flow_hidden},
               {"blocks", s.flow_blocks},
               {"s_max", s.flow_s_max},
               {"activation", std::string(flow::to_string(s.flow_activation))}};
  j["latent"] = {{"weights", s.latent_weights}};
  j["estimator"] = {{"lr", s.estimator.lr},
                    {"beta1", s.estimator.beta1},
                    {"beta2", s.estimator.beta2},
                    {"adam_eps", s.estimator.adam_eps},
                    {"decay_factor", s.estimator.decay_factor},
                    {"decay_milestones", s.estimator.decay_milestones},
                    {"sample_budget", s.estimator.sample_budget},
                    {"warm_start_epoch", s.estimator.warm_start_epoch},
                    {"steps_per_iteration", s.estimator.steps_per_iteration}};
  j["perturb"] = {{"kind", std::string(perturb::to_string(s.perturb.kind))},
                  {"step", s.perturb.step},
                  {"step_mode", std::string(perturb::to_string(s.perturb.step_mode))},
                  {"dropout_rate", s.perturb.dropout_rate},
                  {"vat_iterations", s.perturb.vat_iterations},
                  {"vat_xi", s.perturb.vat_xi}};
  j["ssl"] = {{"hidden", s.hidden},
              {"feature_dim", s.feature_dim},
              {"tau", s.tau},
              {"lambda_ft", s.lambda_ft},
              {"ema_momentum", s.ema_momentum},
              {"epochs", s.epochs},
              {"iterations_per_epoch", s.iterations_per_epoch},
              {"labeled_batch", s.labeled_batch},
              {"unlabeled_batch", s.unlabeled_batch},
              {"lr", s.lr},
              {"momentum", s.momentum},
              {"poly_power", s.poly_power},
              {"sigma_weak", s.sigma_weak},
              {"sigma_strong", s.sigma_strong},
              {"drop_p", s.drop_p},
              {"ft_start_epoch", s.ft_start_epoch}};
  j["fit_density"] = {{"steps", c.fit_density.steps},
                      {"grid_resolution", c.fit_density.grid_resolution},
                      {"grid_bounds", {c.fit_density.grid_box.lo, c.fit_density.grid_box.hi}}};
  j["verify"] = {{"dim", c.verify.dim},
                 {"trials", c.verify.trials},
                 {"h", c.verify.h},
                 {"randomize_std", c.verify.randomize_std},
                 {"mc_samples", c.verify.mc_samples},
                 {"fit_steps", c.verify.fit_steps}};
  return j.dump(2) + "\n";
}

ssl::SweepSpec parse_sweep(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("sweep: syntax error at " + position(text, e.byte) + ": " + e.what());
  }
  ssl::SweepSpec spec;
  Section top(&root, "");
  if (const json* kinds = top.raw("kinds")) {
    if (!kinds->is_array()) top.fail("kinds", "expected an array of strings");
    for (const json& k : *kinds) {
      if (!k.is_string()) top.fail("kinds", "expected an array of strings");
      try {
        spec.kinds.push_back(perturb::parse_kind(k.get<std::string>()));
      } catch (const ConfigError& e) {
        top.fail("kinds", e.what());
      }
    }
  }
  top.get("steps", spec.steps);
  top.get("lambdas", spec.lambdas);
  if (const json* seeds = top.raw("seeds")) {
    if (!seeds->is_array()) top.fail("seeds", "expected an array of non-negative integers");
    for (const json& s : *seeds) {
      if (!s.is_number_unsigned()) top.fail("seeds", "expected an array of non-negative integers");
      spec.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  top.finish();
  for (double x : spec.steps)
    if (!(x > 0.0)) throw ConfigError("sweep: 'steps' entries must be positive");
  for (double x : spec.lambdas)
    if (!(x >= 0.0)) throw ConfigError("sweep: 'lambdas' entries must be >= 0");
  return spec;
}

ssl::SweepSpec load_sweep(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("sweep: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_sweep(ss.str());
}

data::Dataset make_dataset(const DataConfig& c, std::uint64_t split_seed) {
  return data::partition(data::generate(c.kind, c.n, c.noise, c.seed, c.classes),
                         c.labeled_per_class, c.test_fraction, split_seed);
}

std::filesystem::path resolve_output(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("DDFP_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
      return std::filesystem::path(root) / p;
    }
  }
  return p;
}

}  // namespace ddfp::config
