#pragma once

// The two integration benchmarks: replaying a LAND problem corpus against
// ground-truth pools (one error per method and repeat), and sweeping
// wall-clock limits on a single problem.

#include "rbq/integrator.hpp"
#include "rbq/land.hpp"
#include "rbq/mc.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rbq {

/// Where the pool of problem `id` lives inside `dir`.
std::filesystem::path pool_path(const std::filesystem::path& dir, const std::string& id);

/// Loads the pool of every corpus entry. Missing pools are built with
/// `samples` draws when `generate` is set (seed derived from `seed` and the
/// entry index) and saved with `header`; otherwise InvalidArgument explains
/// how to create them.
std::vector<GroundTruthPool> load_or_build_pools(const Metric& metric, const std::vector<CorpusEntry>& corpus,
                                                 const std::filesystem::path& dir, bool generate, int samples,
                                                 std::uint64_t seed, int threads, const std::string& header = "");

struct CorpusBenchOptions {
  std::vector<Method> methods{Method::WsabiL, Method::WsabiM, Method::Dcv};  // BQ methods; MC is always added
  IntegrationBudget budget;
  BqSettings settings;
  int repeats = 16;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// One integration of one corpus problem.
struct ProblemRun {
  Method method = Method::WsabiL;
  int repeat = 0;
  std::string problem;
  double estimate = 0.0;
  double truth = 0.0;
  double rel_error = 0.0;  // |estimate - truth| / truth
  double wall_clock = 0.0;
  int exp_maps = 0;
  int g_evals = 0;
  int reused = 0;
  int mc_samples = 0;  // MC only
};

/// Mean over the corpus of one (method, repeat).
struct RepeatSummary {
  Method method = Method::WsabiL;
  int repeat = 0;
  double mean_rel_error = 0.0;
  double runtime = 0.0;  // summed wall-clock (MC: bookkeeping runtime of the drawn samples)
  int problems = 0;
};

struct CorpusBenchmark {
  std::vector<ProblemRun> runs;         // method-major, then repeat, then corpus order
  std::vector<RepeatSummary> summary;   // one row per (method, repeat)
  std::vector<double> mc_budget;        // seconds per problem
};

/// BQ methods replay the corpus in order with one BqMemory per component, so
/// observations are reused exactly as during the fit. MC then gets, per
/// problem, the mean (over repeats) wall-clock of the slowest BQ method and
/// subsamples the pool accordingly.
CorpusBenchmark bench_corpus(const Metric& metric, const std::vector<CorpusEntry>& corpus,
                             const std::vector<GroundTruthPool>& pools, const CorpusBenchOptions& opts);

struct RuntimeBenchOptions {
  std::vector<Method> methods{Method::WsabiL, Method::WsabiM, Method::Dcv};  // MC is always added
  std::vector<double> limits;  // seconds
  int repeats = 30;
  std::uint64_t seed = 0;
  BqSettings settings;
  int workers = 1;
};

struct RuntimeRun {
  Method method = Method::WsabiL;
  double limit = 0.0;
  int repeat = 0;
  double realized = 0.0;  // BQ: measured wall-clock; MC: bookkeeping runtime
  double estimate = 0.0;
  double truth = 0.0;
  double rel_error = 0.0;
  int observations = 0;
};

struct RuntimeSummary {
  Method method = Method::WsabiL;
  double limit = 0.0;
  int runs = 0;
  double mean_rel_error = 0.0;
  double ci_low = 0.0;  // 95% Student-t interval of the mean
  double ci_high = 0.0;
  double mean_realized = 0.0;
};

/// `count` evenly spaced limits from lo to hi inclusive.
std::vector<double> runtime_grid(double lo, double hi, int count);

/// Fresh time-limited integrations of one problem for every (limit, method,
/// repeat); MC subsamples the pool with the limit as runtime budget.
std::vector<RuntimeRun> bench_runtime(const Metric& metric, const CorpusEntry& problem, const GroundTruthPool& pool,
                                      const RuntimeBenchOptions& opts);
std::vector<RuntimeSummary> summarize_runtime(const std::vector<RuntimeRun>& runs);

}  // namespace rbq
