// ddfp_cli: fit-density | train-ssl | ablate | verify
//
// Exit codes: 0 success, 1 failed verification, 2 configuration error,
// 3 numeric abort.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ddfp/checkpoint.hpp"
#include "ddfp/config.hpp"
#include "ddfp/errors.hpp"
#include "ddfp/kernels.hpp"
#include "ddfp/oracle.hpp"
#include "ddfp/pipeline.hpp"
#include "ddfp/ssl.hpp"

namespace fs = std::filesystem;
using namespace ddfp;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kConfig = 2, kNumeric = 3 };

config::RunConfig load_config(const std::string& path) {
  return path.empty() ? config::parse("{}") : config::load(path);
}

fs::path prepare_out(const config::RunConfig& rc, const std::string& out_flag) {
  const fs::path dir = config::resolve_output(out_flag.empty() ? rc.output_dir : out_flag);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  std::ofstream(dir / "config.json") << config::dump(rc);
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  return os;
}

// Timestamps live only here so every other output is reproducible.
void sidecar(const fs::path& dir, const std::string& command) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ofstream os(dir / "run.log", std::ios::app);
  os << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << ' ' << command
     << " kernels=" << kernels::active().name << '\n';
}

std::vector<std::uint64_t> parse_seeds(const std::string& text, std::uint64_t fallback) {
  std::vector<std::uint64_t> seeds;
  if (text.empty()) return {fallback};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    try {
      seeds.push_back(std::stoull(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--seeds: cannot parse '" + item + "'");
  }
  if (seeds.empty()) throw ConfigError("--seeds: empty list");
  return seeds;
}

int fit_density(const std::string& cfg_path, const std::string& out) {
  const config::RunConfig rc = load_config(cfg_path);
  const fs::path dir = prepare_out(rc, out);
  const pipeline::DensityFit fit = pipeline::fit_density(rc, rc.fit_density.steps);
  checkpoint::save((dir / "checkpoint.txt").string(), fit.model.flow, fit.model.latent);
  {
    std::ofstream os = open_out(dir / "flow_loss.csv");
    estimator::write_loss_csv(os, fit.log);
  }
  if (rc.fit_density.grid_resolution > 0) {
    std::ofstream os = open_out(dir / "grid.csv");
    oracle::write_grid_csv(os, oracle::grid_density(fit.model.flow, fit.model.latent, rc.fit_density.grid_box,
                                                    rc.fit_density.grid_resolution),
                           /*with_class=*/true);
  }
  sidecar(dir, "fit-density");
  std::cout << "final flow loss " << fit.log.back().loss << "; wrote " << dir.string() << '\n';
  return kOk;
}

int train_ssl(const std::string& cfg_path, const std::string& out, const std::string& seeds_flag) {
  const config::RunConfig rc = load_config(cfg_path);
  const fs::path dir = prepare_out(rc, out);
  nlohmann::json summary;
  summary["config"] = nlohmann::json::parse(config::dump(rc));
  summary["runs"] = nlohmann::json::array();
  double total = 0.0;
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_flag, rc.seed);
  for (std::uint64_t seed : seeds) {
    ssl::SslConfig cfg = rc.ssl;
    cfg.seed = seed;
    cfg.estimator.seed = seed;
    const ssl::SslResult res = ssl::train_ssl(cfg, config::make_dataset(rc.data, seed));
    const fs::path run = dir / ("seed_" + std::to_string(seed));
    fs::create_directories(run);
    {
      std::ofstream os = open_out(run / "metrics.csv");
      ssl::write_metrics_csv(os, res.epochs);
    }
    checkpoint::save((run / "flow_checkpoint.txt").string(), res.flow, res.latent);
    summary["runs"].push_back({{"seed", seed}, {"test_accuracy", res.final_accuracy}});
    total += res.final_accuracy;
    std::cout << "seed " << seed << ": test accuracy " << res.final_accuracy << '\n';
  }
  summary["mean_test_accuracy"] = total / static_cast<double>(seeds.size());
  open_out(dir / "summary.json") << summary.dump(2) << '\n';
  sidecar(dir, "train-ssl");
  return kOk;
}

int ablate(const std::string& cfg_path, const std::string& sweep_path, const std::string& out) {
  const config::RunConfig rc = load_config(cfg_path);
  const ssl::SweepSpec sweep = config::load_sweep(sweep_path);
  const fs::path dir = prepare_out(rc, out);
  const std::vector<ssl::AblationRow> rows = ssl::ablate(
      rc.ssl, sweep, [&rc](std::uint64_t seed) { return config::make_dataset(rc.data, seed); });
  std::ofstream os = open_out(dir / "ablation.csv");
  ssl::write_ablation_csv(os, rows);
  sidecar(dir, "ablate");
  std::cout << rows.size() << " runs; wrote " << (dir / "ablation.csv").string() << '\n';
  return kOk;
}

int verify(const std::string& cfg_path, const std::string& checkpoint_path) {
  const config::RunConfig rc = load_config(cfg_path);
  std::optional<checkpoint::Checkpoint> ck;
  if (!checkpoint_path.empty()) ck = checkpoint::load(checkpoint_path);
  const std::vector<pipeline::Check> checks = pipeline::verify(rc, ck ? &*ck : nullptr);
  bool ok = true;
  for (const pipeline::Check& c : checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << "  value=" << c.value
              << " tol=" << c.tolerance << "  " << c.detail << '\n';
    ok = ok && c.pass;
  }
  return ok ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Density-descending feature perturbation at desk scale"};
  app.require_subcommand(1);
  std::string cfg, out, seeds, sweep, ckpt, isa;
  app.add_option("--kernels", isa, "Force the kernel set (scalar|avx2)");

  CLI::App* fit = app.add_subcommand("fit-density", "Fit a flow to the configured 2-D dataset");
  fit->add_option("--config", cfg, "JSON config file")->check(CLI::ExistingFile);
  fit->add_option("--out", out, "Output directory");

  CLI::App* train = app.add_subcommand("train-ssl", "Teacher-student training with feature perturbation");
  train->add_option("--config", cfg, "JSON config file")->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory");
  train->add_option("--seeds", seeds, "Comma-separated seeds, e.g. 0,1,2");

  CLI::App* abl = app.add_subcommand("ablate", "Train every cell of a sweep over kinds, steps, lambdas, seeds");
  abl->add_option("--config", cfg, "JSON config file")->check(CLI::ExistingFile);
  abl->add_option("--sweep", sweep, "JSON sweep file")->required()->check(CLI::ExistingFile);
  abl->add_option("--out", out, "Output directory");

  CLI::App* ver = app.add_subcommand("verify", "Run the oracle checks");
  ver->add_option("--config", cfg, "JSON config file")->check(CLI::ExistingFile);
  ver->add_option("--checkpoint", ckpt, "Verify this 2-D checkpoint instead of fitting one")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (!isa.empty()) kernels::set_active(kernels::parse_isa(isa));
    if (*fit) return fit_density(cfg, out);
    if (*train) return train_ssl(cfg, out, seeds);
    if (*abl) return ablate(cfg, sweep, out);
    if (*ver) return verify(cfg, ckpt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kNumeric;
  } catch (const ContractViolation& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfig;
  }
  return kConfig;
}
