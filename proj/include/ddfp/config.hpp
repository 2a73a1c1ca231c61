#pragma once

// Run configuration: one JSON document, every key optional, unknown keys
// rejected. See README.md for the full key list and defaults.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "ddfp/data.hpp"
#include "ddfp/oracle.hpp"
#include "ddfp/ssl.hpp"

namespace ddfp::config {

struct DataConfig {
  data::Kind kind = data::Kind::kMoons;
  std::size_t n = 1000;
  double noise = 0.1;
  std::size_t classes = 2;
  std::size_t labeled_per_class = 4;  // data::kAllLabeled for "all"
  double test_fraction = 0.492;
  std::uint64_t seed = 0;
};

struct FitDensityConfig {
  std::size_t steps = 2000;
  std::size_t grid_resolution = 0;  // 0 disables the grid dump
  oracle::Box grid_box{-3.0, 3.0};
};

struct VerifyConfig {
  std::size_t dim = 4;
  std::size_t trials = 20;
  double h = 1e-4;
  double randomize_std = 0.05;
  std::size_t mc_samples = 1000000;
  std::size_t fit_steps = 1500;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DataConfig data;
  ssl::SslConfig ssl;  // also carries flow, estimator, perturb and latent knobs
  FitDensityConfig fit_density;
  VerifyConfig verify;
};

// Throws ConfigError naming the line/column of a syntax error or the dotted
// path of an unknown key / wrong type / invalid value.
RunConfig parse(const std::string& text);
RunConfig load(const std::filesystem::path& path);

// Effective configuration as pretty-printed JSON (re-parses to the same config).
std::string dump(const RunConfig& config);

// Sweep document: {"kinds": [...], "steps": [...], "lambdas": [...], "seeds": [...]}.
ssl::SweepSpec parse_sweep(const std::string& text);
ssl::SweepSpec load_sweep(const std::filesystem::path& path);

data::Dataset make_dataset(const DataConfig& config, std::uint64_t split_seed);

// Resolves a relative output directory against $DDFP_OUTPUT_ROOT when set.
std::filesystem::path resolve_output(const std::string& dir);

}  // namespace ddfp::config
