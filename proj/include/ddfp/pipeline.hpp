#pragma once

// End-to-end runs shared by the CLI and the tests: fitting a flow directly
// on a 2-D dataset, and the oracle verification suite.

#include <string>
#include <vector>

#include "ddfp/checkpoint.hpp"
#include "ddfp/config.hpp"
#include "ddfp/estimator.hpp"

namespace ddfp::pipeline {

struct DensityFit {
  checkpoint::Checkpoint model;
  std::vector<estimator::LossLogEntry> log;
  data::Dataset dataset;
};

// Flow over the raw points (input dimension must be even), one latent
// component per class, trained on the labeled and unlabeled splits.
DensityFit fit_density(const config::RunConfig& config, std::size_t steps);

struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

// Round trip and log-det on identity and randomised flows, density gradient
// against finite differences and Monte-Carlo mass on a fitted 2-D model.
// `trained` replaces the fitted model when given.
std::vector<Check> verify(const config::RunConfig& config,
                          const checkpoint::Checkpoint* trained = nullptr);

}  // namespace ddfp::pipeline
