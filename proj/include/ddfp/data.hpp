#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string_view>
#include <vector>

#include "ddfp/tensor.hpp"

namespace ddfp::data {

enum class Kind { kMoons, kCircles, kBlobs, kAnisotropicGmm };

Kind parse_kind(std::string_view name);
std::string_view to_string(Kind kind);

struct Dataset {
  Tensor points;                    // N x input_dim
  std::vector<std::size_t> labels;  // N class ids in [0, classes)
  std::size_t classes = 0;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::vector<std::size_t> test;

  std::size_t size() const noexcept { return points.rows(); }
  Tensor rows(const std::vector<std::size_t>& idx) const { return points.gather_rows(idx); }
  std::vector<std::size_t> labels_of(const std::vector<std::size_t>& idx) const;
};

// moons and circles are two-class; blobs and anisotropic-gmm take `classes`.
// Throws ConfigError for n < 10 or classes < 2.
Dataset generate(Kind kind, std::size_t n, double noise, std::uint64_t seed,
                 std::size_t classes = 2);

inline constexpr std::size_t kAllLabeled = std::numeric_limits<std::size_t>::max();

// Draws round(n * test_fraction) test points, then labeled_per_class points
// of every class from the remainder; the rest is unlabeled. kAllLabeled
// labels the whole train pool. Throws ConfigError when infeasible.
Dataset partition(Dataset dataset, std::size_t labeled_per_class, double test_fraction,
                  std::uint64_t seed);

// Header "x1,...,xm,label,split"; split is labeled|unlabeled|test|none.
void write_csv(std::ostream& os, const Dataset& dataset);

}  // namespace ddfp::data
