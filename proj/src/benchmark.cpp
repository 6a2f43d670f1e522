#include "rbq/benchmark.hpp"

#include "rbq/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <map>

namespace rbq {

namespace {

std::vector<Method> bq_only(const std::vector<Method>& methods) {
  std::vector<Method> out;
  for (Method m : methods)
    if (m != Method::Mc && std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  return out;
}

double rel_error(double est, double truth) { return std::abs(est - truth) / std::abs(truth); }

McEstimate mc_for_budget(const GroundTruthPool& pool, double seconds, std::uint64_t seed) {
  const int need = static_cast<int>(std::floor(seconds * 1e3 / pool.mean_runtime_ms()));
  if (need > pool.size())
    throw InvalidArgument("ground-truth pool of '" + pool.problem_id + "' holds " + std::to_string(pool.size()) +
                          " samples but an MC budget of " + std::to_string(seconds) + " s needs " +
                          std::to_string(need) + "; rebuild it with more benchmark.ground_truth_samples");
  return mc_subsample_runtime(pool, seconds, seed);
}

IntegrationProblem as_problem(const Metric& metric, const CorpusEntry& e) { return {e.id, &metric, e.mu, e.sigma}; }

}  // namespace

std::filesystem::path pool_path(const std::filesystem::path& dir, const std::string& id) {
  std::string name = id;
  std::replace(name.begin(), name.end(), '/', '_');
  return dir / (name + ".pool");
}

std::vector<GroundTruthPool> load_or_build_pools(const Metric& metric, const std::vector<CorpusEntry>& corpus,
                                                 const std::filesystem::path& dir, bool generate, int samples,
                                                 std::uint64_t seed, int threads, const std::string& header) {
  std::vector<GroundTruthPool> pools;
  pools.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const CorpusEntry& e = corpus[i];
    const auto path = pool_path(dir, e.id);
    if (std::filesystem::exists(path)) {
      GroundTruthPool p = GroundTruthPool::load(path);
      if (p.mu != e.mu || p.sigma != e.sigma)
        throw InvalidArgument("ground-truth pool " + path.string() + " was built for a different problem than '" +
                              e.id + "'");
      pools.push_back(std::move(p));
      continue;
    }
    if (!generate)
      throw InvalidArgument("no ground-truth pool for problem '" + e.id + "' (expected " + path.string() +
                            "); create it with `rbq ground-truth` or set benchmark.generate_ground_truth=true");
    std::filesystem::create_directories(dir);
    GroundTruthPool p = build_ground_truth(metric, e.id, e.mu, e.sigma, samples, derive_seed(seed, i), threads);
    p.save(path, header);
    pools.push_back(std::move(p));
  }
  return pools;
}

CorpusBenchmark bench_corpus(const Metric& metric, const std::vector<CorpusEntry>& corpus,
                             const std::vector<GroundTruthPool>& pools, const CorpusBenchOptions& opts) {
  if (corpus.empty()) throw InvalidArgument("bench_corpus: empty corpus");
  if (pools.size() != corpus.size()) throw InvalidArgument("bench_corpus: one pool per problem required");
  if (opts.repeats < 1) throw InvalidArgument("bench_corpus: repeats must be >= 1");
  const std::vector<Method> bq = bq_only(opts.methods);
  if (bq.empty()) throw InvalidArgument("bench_corpus: at least one BQ method required");
  const int np = static_cast<int>(corpus.size());
  const int nr = opts.repeats;
  std::vector<double> truth(np);
  for (int i = 0; i < np; ++i) truth[i] = pools[i].estimate().value;

  int ncomp = 0;
  for (const auto& e : corpus) ncomp = std::max(ncomp, e.component + 1);

  // BQ: each (method, repeat) replays the corpus with its own memories
  const int ntask = static_cast<int>(bq.size()) * nr;
  std::vector<std::vector<ProblemRun>> bq_runs(ntask);
  parallel_for(ntask, opts.workers, [&](int t) {
    const Method m = bq[t / nr];
    const int r = t % nr;
    std::vector<BqMemory> memory(ncomp);
    auto& out = bq_runs[t];
    for (int i = 0; i < np; ++i) {
      BqSettings s = opts.settings;
      s.seed = derive_seed(derive_seed(opts.seed, r), i);
      const IntegrationResult res =
          run_integration(as_problem(metric, corpus[i]), m, opts.budget, s, &memory[corpus[i].component]);
      ProblemRun pr;
      pr.method = m;
      pr.repeat = r;
      pr.problem = corpus[i].id;
      pr.estimate = res.normalization;
      pr.truth = truth[i];
      pr.rel_error = rel_error(res.normalization, truth[i]);
      pr.wall_clock = res.wall_clock;
      pr.exp_maps = res.exp_maps;
      pr.g_evals = res.g_evals;
      pr.reused = res.reused;
      out.push_back(pr);
    }
  });

  CorpusBenchmark bench;
  bench.mc_budget.assign(np, 0.0);
  for (std::size_t k = 0; k < bq.size(); ++k)
    for (int i = 0; i < np; ++i) {
      double mean = 0.0;
      for (int r = 0; r < nr; ++r) mean += bq_runs[k * nr + r][i].wall_clock / nr;
      bench.mc_budget[i] = std::max(bench.mc_budget[i], mean);
    }

  for (const auto& task : bq_runs) bench.runs.insert(bench.runs.end(), task.begin(), task.end());
  for (int r = 0; r < nr; ++r)
    for (int i = 0; i < np; ++i) {
      const McEstimate e =
          mc_for_budget(pools[i], bench.mc_budget[i], derive_seed(derive_seed(opts.seed, r), 1000000 + i));
      ProblemRun pr;
      pr.method = Method::Mc;
      pr.repeat = r;
      pr.problem = corpus[i].id;
      pr.estimate = e.value;
      pr.truth = truth[i];
      pr.rel_error = rel_error(e.value, truth[i]);
      pr.wall_clock = e.wall_clock;
      pr.exp_maps = e.sample_count;
      pr.g_evals = e.sample_count - e.failures;
      pr.mc_samples = e.sample_count;
      bench.runs.push_back(pr);
    }

  for (std::size_t start = 0; start < bench.runs.size(); start += np) {
    RepeatSummary s;
    s.method = bench.runs[start].method;
    s.repeat = bench.runs[start].repeat;
    s.problems = np;
    for (int i = 0; i < np; ++i) {
      s.mean_rel_error += bench.runs[start + i].rel_error / np;
      s.runtime += bench.runs[start + i].wall_clock;
    }
    bench.summary.push_back(s);
  }
  return bench;
}

std::vector<double> runtime_grid(double lo, double hi, int count) {
  if (count < 1 || !(lo > 0.0) || hi < lo) throw InvalidArgument("runtime_grid: need 0 < lo <= hi and count >= 1");
  if (count == 1) return {lo};
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i) out[i] = lo + (hi - lo) * i / (count - 1);
  return out;
}

std::vector<RuntimeRun> bench_runtime(const Metric& metric, const CorpusEntry& problem, const GroundTruthPool& pool,
                                      const RuntimeBenchOptions& opts) {
  if (opts.limits.empty()) throw InvalidArgument("bench_runtime: no limits");
  if (opts.repeats < 1) throw InvalidArgument("bench_runtime: repeats must be >= 1");
  for (double l : opts.limits)
    if (!(l > 0.0)) throw InvalidArgument("bench_runtime: limits must be positive");
  std::vector<Method> methods = bq_only(opts.methods);
  methods.push_back(Method::Mc);
  const double truth = pool.estimate().value;
  const int nl = static_cast<int>(opts.limits.size());
  const int nm = static_cast<int>(methods.size());
  const int nr = opts.repeats;

  // limit-major, then method, then repeat
  std::vector<RuntimeRun> runs(static_cast<std::size_t>(nl) * nm * nr);
  parallel_for(static_cast<int>(runs.size()), opts.workers, [&](int t) {
    const int l = t / (nm * nr);
    const Method m = methods[(t / nr) % nm];
    const int r = t % nr;
    const std::uint64_t seed = derive_seed(derive_seed(opts.seed, r), 2000000 + l);
    RuntimeRun run;
    run.method = m;
    run.limit = opts.limits[l];
    run.repeat = r;
    run.truth = truth;
    if (m == Method::Mc) {
      const McEstimate e = mc_for_budget(pool, run.limit, seed);
      run.realized = e.wall_clock;
      run.estimate = e.value;
      run.observations = e.sample_count;
    } else {
      IntegrationBudget b;
      b.time_limit = run.limit;
      BqSettings s = opts.settings;
      s.seed = seed;
      const IntegrationResult res = run_integration(as_problem(metric, problem), m, b, s);
      run.realized = res.wall_clock;
      run.estimate = res.normalization;
      run.observations = res.new_observations;
    }
    run.rel_error = rel_error(run.estimate, truth);
    runs[t] = run;
  });
  return runs;
}

std::vector<RuntimeSummary> summarize_runtime(const std::vector<RuntimeRun>& runs) {
  std::map<std::pair<double, int>, std::vector<const RuntimeRun*>> groups;
  std::vector<std::pair<double, int>> order;
  for (const auto& r : runs) {
    const auto key = std::make_pair(r.limit, static_cast<int>(r.method));
    if (groups.find(key) == groups.end()) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<RuntimeSummary> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    RuntimeSummary s;
    s.method = g.front()->method;
    s.limit = key.first;
    s.runs = static_cast<int>(g.size());
    for (const auto* r : g) {
      s.mean_rel_error += r->rel_error / s.runs;
      s.mean_realized += r->realized / s.runs;
    }
    double half = 0.0;
    if (s.runs > 1) {
      double ss = 0.0;
      for (const auto* r : g) ss += (r->rel_error - s.mean_rel_error) * (r->rel_error - s.mean_rel_error);
      const double sd = std::sqrt(ss / (s.runs - 1));
      const boost::math::students_t t(s.runs - 1);
      half = boost::math::quantile(boost::math::complement(t, 0.025)) * sd / std::sqrt(double(s.runs));
    }
    s.ci_low = s.mean_rel_error - half;
    s.ci_high = s.mean_rel_error + half;
    out.push_back(s);
  }
  return out;
}

}  // namespace rbq
