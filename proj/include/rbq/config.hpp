#pragma once

// Run configuration: a nested JSON object with sections metric, data, land,
// integrator, solver, benchmark and output. Keys absent from a file take the
// defaults of default_config(), except the required ones listed there.

#include "rbq/common.hpp"
#include "rbq/geodesics.hpp"
#include "rbq/integrator.hpp"
#include "rbq/land.hpp"
#include "rbq/metrics.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace rbq {

struct MetricConfig {
  std::string family = "kernel";  // kernel | mixture | euclidean
  double sigma = 0.1;
  double rho = 1e-3;
  std::string components_file;  // mixture only
};

struct DataConfig {
  std::string path;  // load from file when set, otherwise generate
  std::string dataset = "circle";
  int n = 1000;
  double noise = 0.1;
  int embed_dim = 0;  // 0 keeps the 2-D data
  double embed_noise = 0.01;
  std::uint64_t seed = 1;
};

struct SolverConfig {
  LogMapOptions log_map;
  double cache_threshold = 0.5;
  std::string cache_path;  // geodesic cache loaded before and saved after a fit
  int threads = 1;
  bool single_core = true;  // pins Eigen and every worker pool to one thread
};

struct IntegratorConfig {
  Method method = Method::WsabiL;
  IntegrationBudget budget;
  BqSettings settings;
};

struct BenchmarkConfig {
  std::vector<Method> methods{Method::WsabiL, Method::WsabiM, Method::Dcv};
  int repeats = 16;
  std::uint64_t seed = 0;
  int ground_truth_samples = 40000;
  std::uint64_t ground_truth_seed = 40000;
  std::string pool_dir = "pools";
  bool generate_ground_truth = false;
  double limit_min = 5.0;
  double limit_max = 65.0;
  int limit_count = 30;
  std::vector<double> limits;  // explicit grid; empty uses limit_min/max/count
  int runtime_repeats = 30;
  int workers = 1;
};

struct Config {
  MetricConfig metric;
  DataConfig data;
  LandOptions land;
  IntegratorConfig integrator;
  SolverConfig solver;
  BenchmarkConfig benchmark;
  std::string output_dir = "out";
  nlohmann::json resolved;  // defaults merged with the user's values
};

/// Every key with its default. metric.family, land.components and
/// integrator.method carry defaults here but must be given in a file.
nlohmann::json default_config();

/// Merges `user` over the defaults and validates. Unknown keys, missing
/// required keys and ill-typed values raise ValidationError naming the
/// dotted key.
Config parse_config(const nlohmann::json& user);
Config load_config(const std::filesystem::path& path);
/// The raw JSON of a config file (comments allowed), before validation.
nlohmann::json read_config_json(const std::filesystem::path& path);

/// Applies "section.key=value"; the value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& user, const std::string& assignment);

/// Points from data.path or the configured generator.
Mat load_data(const DataConfig& cfg);

/// Metric built from the config; kernel metrics use `data`, the Euclidean
/// metric takes its dimension from it.
std::unique_ptr<Metric> make_metric(const MetricConfig& cfg, const Mat& data);

/// Compact one-line JSON of the resolved config.
std::string provenance(const Config& cfg);

}  // namespace rbq
