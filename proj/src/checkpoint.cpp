#include "ddfp/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "ddfp/errors.hpp"

namespace ddfp::checkpoint {

namespace {

constexpr const char* kMagic = "ddfp-checkpoint";
constexpr int kVersion = 1;

void write_values(std::ostream& os, std::span<const double> values) {
  for (double x : values) os << ' ' << x;
  os << '\n';
}

void expect(std::istream& is, const std::string& word) {
  std::string got;
  if (!(is >> got) || got != word) {
    throw ConfigError("checkpoint: expected '" + word + "', found '" + got + "'");
  }
}

template <typename T>
T next(std::istream& is, const char* what) {
  T value{};
  if (!(is >> value)) throw ConfigError(std::string("checkpoint: cannot read ") + what);
  return value;
}

void read_values(std::istream& is, std::span<double> out, const char* what) {
  for (double& x : out) {
    // operator>> rejects "inf"/"nan", which checkpoints never contain.
    x = next<double>(is, what);
  }
}

}  // namespace

void write(std::ostream& os, const flow::FlowModel& flow, const latent::GmmLatent& latent) {
  if (latent.dim() != flow.dim()) throw ContractViolation("checkpoint: latent/flow dimension mismatch");
  const auto old = os.precision(17);
  const flow::FlowConfig& c = flow.config();
  os << kMagic << ' ' << kVersion << '\n';
  os << "dim " << c.dim << " hidden " << c.hidden << " blocks " << c.blocks << " s_max " << c.s_max
     << " seed " << c.seed << " activation " << flow::to_string(c.activation) << '\n';
  os << "latent " << latent.components() << ' ' << latent.seed << '\n';
  os << "weights";
  write_values(os, latent.log_weights);
  os << "means";
  write_values(os, latent.means.data());
  for (const Tensor* t : flow.parameters()) {
    os << "tensor " << t->rows() << ' ' << t->cols();
    write_values(os, t->data());
  }
  os.precision(old);
}

Checkpoint read(std::istream& is) {
  expect(is, kMagic);
  if (next<int>(is, "version") != kVersion) throw ConfigError("checkpoint: unsupported version");
  flow::FlowConfig c;
  expect(is, "dim");
  c.dim = next<std::size_t>(is, "dim");
  expect(is, "hidden");
  c.hidden = next<std::size_t>(is, "hidden");
  expect(is, "blocks");
  c.blocks = next<std::size_t>(is, "blocks");
  expect(is, "s_max");
  c.s_max = next<double>(is, "s_max");
  expect(is, "seed");
  c.seed = next<std::uint64_t>(is, "seed");
  expect(is, "activation");
  c.activation = flow::parse_activation(next<std::string>(is, "activation"));
  c.validate();

  Checkpoint ck{flow::FlowModel(c), {}};
  expect(is, "latent");
  const auto k = next<std::size_t>(is, "component count");
  if (k == 0) throw ConfigError("checkpoint: latent needs at least one component");
  ck.latent.seed = next<std::uint64_t>(is, "latent seed");
  expect(is, "weights");
  ck.latent.log_weights.resize(k);
  read_values(is, ck.latent.log_weights, "weights");
  expect(is, "means");
  ck.latent.means = Tensor(k, c.dim);
  read_values(is, ck.latent.means.data(), "means");

  for (Tensor* t : ck.flow.parameters()) {
    expect(is, "tensor");
    const auto rows = next<std::size_t>(is, "tensor rows");
    const auto cols = next<std::size_t>(is, "tensor cols");
    if (rows != t->rows() || cols != t->cols()) throw ConfigError("checkpoint: tensor shape mismatch");
    read_values(is, t->data(), "tensor values");
  }
  std::string trailing;
  if (is >> trailing) throw ConfigError("checkpoint: trailing data '" + trailing + "'");
  return ck;
}

void save(const std::string& path, const flow::FlowModel& flow, const latent::GmmLatent& latent) {
  std::ofstream os(path);
  if (!os) throw ConfigError("checkpoint: cannot open '" + path + "' for writing");
  write(os, flow, latent);
  if (!os) throw ConfigError("checkpoint: write to '" + path + "' failed");
}

Checkpoint load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("checkpoint: cannot open '" + path + "'");
  return read(is);
}

}  // namespace ddfp::checkpoint
