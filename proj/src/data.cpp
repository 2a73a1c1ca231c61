#include "ddfp/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>

#include "ddfp/errors.hpp"
#include "ddfp/rng.hpp"

namespace ddfp::data {

Kind parse_kind(std::string_view name) {
  if (name == "moons") return Kind::kMoons;
  if (name == "circles") return Kind::kCircles;
  if (name == "blobs") return Kind::kBlobs;
  if (name == "anisotropic-gmm") return Kind::kAnisotropicGmm;
  throw ConfigError("unknown dataset kind '" + std::string(name) + "'");
}

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::kMoons: return "moons";
    case Kind::kCircles: return "circles";
    case Kind::kBlobs: return "blobs";
    case Kind::kAnisotropicGmm: return "anisotropic-gmm";
  }
  return "?";
}

std::vector<std::size_t> Dataset::labels_of(const std::vector<std::size_t>& idx) const {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels.at(i));
  return out;
}

namespace {

// Class sizes as even as possible: the first n % k classes get one extra.
std::size_t class_size(std::size_t n, std::size_t k, std::size_t c) {
  return n / k + (c < n % k ? 1 : 0);
}

Dataset blobs(std::size_t n, double noise, std::size_t classes, Rng& rng, bool anisotropic) {
  Dataset ds;
  ds.classes = classes;
  ds.points = Tensor(n, 2);
  ds.labels.resize(n);
  std::uniform_real_distribution<double> box(-10.0, 10.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Spread of each blob; `noise` scales the unit-variance default.
  const double sd = noise > 0.0 ? noise : 1.0;
  // Centres are kept 6 sd apart so the classes stay separable; when the box
  // is too crowded for that the separation is relaxed step by step.
  Tensor centers(classes, 2);
  double separation = 6.0 * sd;
  for (std::size_t placed = 0, tries = 0; placed < classes;) {
    centers(placed, 0) = box(rng);
    centers(placed, 1) = box(rng);
    bool ok = true;
    for (std::size_t c = 0; c < placed && ok; ++c)
      ok = std::hypot(centers(c, 0) - centers(placed, 0), centers(c, 1) - centers(placed, 1)) >= separation;
    if (ok) {
      ++placed;
    } else if (++tries == 1000) {
      separation *= 0.9;
      tries = 0;
    }
  }
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < class_size(n, classes, c); ++i, ++row) {
      double x = centers(c, 0) + sd * normal(rng);
      double y = centers(c, 1) + sd * normal(rng);
      if (anisotropic) {
        const double ax = 0.6 * x - 0.6 * y;
        const double ay = -0.4 * x + 0.8 * y;
        x = ax;
        y = ay;
      }
      ds.points(row, 0) = x;
      ds.points(row, 1) = y;
      ds.labels[row] = c;
    }
  }
  return ds;
}

}  // namespace

Dataset generate(Kind kind, std::size_t n, double noise, std::uint64_t seed, std::size_t classes) {
  if (n < 10) throw ConfigError("dataset: need n >= 10");
  if (!(noise >= 0.0)) throw ConfigError("dataset: noise must be non-negative");
  Rng rng = make_rng(seed, 0xda7a);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double pi = std::numbers::pi;

  switch (kind) {
    case Kind::kMoons: {
      Dataset ds;
      ds.classes = 2;
      ds.points = Tensor(n, 2);
      ds.labels.resize(n);
      const std::size_t outer = class_size(n, 2, 0);
      const std::size_t inner = n - outer;
      std::size_t row = 0;
      for (std::size_t i = 0; i < outer; ++i, ++row) {
        const double t = outer > 1 ? pi * static_cast<double>(i) / static_cast<double>(outer - 1) : 0.0;
        ds.points(row, 0) = std::cos(t);
        ds.points(row, 1) = std::sin(t);
        ds.labels[row] = 0;
      }
      for (std::size_t i = 0; i < inner; ++i, ++row) {
        const double t = inner > 1 ? pi * static_cast<double>(i) / static_cast<double>(inner - 1) : 0.0;
        ds.points(row, 0) = 1.0 - std::cos(t);
        ds.points(row, 1) = 0.5 - std::sin(t);
        ds.labels[row] = 1;
      }
      for (double& x : ds.points.data()) x += noise * normal(rng);
      return ds;
    }
    case Kind::kCircles: {
      Dataset ds;
      ds.classes = 2;
      ds.points = Tensor(n, 2);
      ds.labels.resize(n);
      const std::size_t outer = class_size(n, 2, 0);
      std::size_t row = 0;
      for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t count = c == 0 ? outer : n - outer;
        const double radius = c == 0 ? 1.0 : 0.5;
        for (std::size_t i = 0; i < count; ++i, ++row) {
          const double t = 2.0 * pi * static_cast<double>(i) / static_cast<double>(count);
          ds.points(row, 0) = radius * std::cos(t);
          ds.points(row, 1) = radius * std::sin(t);
          ds.labels[row] = c;
        }
      }
      for (double& x : ds.points.data()) x += noise * normal(rng);
      return ds;
    }
    case Kind::kBlobs:
    case Kind::kAnisotropicGmm:
      if (classes < 2) throw ConfigError("dataset: blobs need at least two classes");
      return blobs(n, noise, classes, rng, kind == Kind::kAnisotropicGmm);
  }
  throw ConfigError("dataset: unknown kind");
}

Dataset partition(Dataset ds, std::size_t labeled_per_class, double test_fraction,
                  std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("partition: test_fraction must lie in [0, 1)");
  }
  const std::size_t n = ds.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  Rng rng = make_rng(seed, 0x5b11);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  ds.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  ds.labeled.clear();
  ds.unlabeled.clear();

  if (labeled_per_class == kAllLabeled) {
    ds.labeled = pool;
  } else {
    if (labeled_per_class * ds.classes > pool.size()) {
      throw ConfigError("partition: " + std::to_string(labeled_per_class) + " labels per class x " +
                        std::to_string(ds.classes) + " classes exceeds the train pool of " +
                        std::to_string(pool.size()));
    }
    std::vector<std::size_t> taken(ds.classes, 0);
    for (std::size_t i : pool) {
      const std::size_t c = ds.labels[i];
      if (taken[c] < labeled_per_class) {
        ds.labeled.push_back(i);
        ++taken[c];
      } else {
        ds.unlabeled.push_back(i);
      }
    }
    for (std::size_t c = 0; c < ds.classes; ++c) {
      if (taken[c] < labeled_per_class) {
        throw ConfigError("partition: class " + std::to_string(c) + " has only " +
                          std::to_string(taken[c]) + " train samples");
      }
    }
  }
  std::sort(ds.test.begin(), ds.test.end());
  std::sort(ds.labeled.begin(), ds.labeled.end());
  std::sort(ds.unlabeled.begin(), ds.unlabeled.end());
  return ds;
}

void write_csv(std::ostream& os, const Dataset& ds) {
  std::vector<const char*> split(ds.size(), "none");
  for (std::size_t i : ds.labeled) split[i] = "labeled";
  for (std::size_t i : ds.unlabeled) split[i] = "unlabeled";
  for (std::size_t i : ds.test) split[i] = "test";
  for (std::size_t j = 0; j < ds.points.cols(); ++j) os << 'x' << (j + 1) << ',';
  os << "label,split\n";
  const auto old = os.precision(17);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double x : ds.points.row(r)) os << x << ',';
    os << ds.labels[r] << ',' << split[r] << '\n';
  }
  os.precision(old);
}

}  // namespace ddfp::data
