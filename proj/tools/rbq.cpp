// rbq: data generation, LAND fits, single integrations and the integration
// benchmarks. Exit codes: 0 success, 1 I/O or other failure, 2 invalid
// input or configuration, 3 numerical failure.

#include "rbq/benchmark.hpp"
#include "rbq/config.hpp"
#include "rbq/data_io.hpp"
#include "rbq/land.hpp"
#include "rbq/mc.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rbq;

namespace {

// Shortest representation that round-trips.
std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join(const double* p, Eigen::Index n) {
  std::string s;
  for (Eigen::Index i = 0; i < n; ++i) s += (i ? "," : "") + num(p[i]);
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError(what + ": '" + s + "' is not a number");
}

// Tab-separated table preceded by '#' provenance lines.
class Table {
 public:
  Table(fs::path path, const std::string& provenance, const std::vector<std::string>& columns)
      : path_(std::move(path)), out_(path_) {
    if (!out_) throw std::runtime_error("cannot write " + path_.string());
    out_ << "# " << provenance << '\n';
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "\t" : "") << columns[i];
    out_ << '\n';
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "\t" : "") << cells[i];
    out_ << '\n';
  }
  ~Table() {
    out_.flush();
    if (!out_) std::cerr << "warning: write failed: " << path_ << '\n';
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

struct Run {
  std::string command;
  std::vector<std::string> args;
  Config cfg;
  fs::path out_dir;
  json outputs = json::object();  // file -> format and timing-dependent fields
  json summary = json::object();
  json timing_summary = json::array();  // summary keys that follow measured time
  json notes = json::array();

  // Tables: timing columns by header name; rows matching timing_rows (column -> values)
  // are timing-dependent as a whole. Key-value files name the timing keys instead.
  void output(const std::string& file, std::vector<std::string> timing = {}, json timing_rows = json::object(),
              const std::string& format = "tsv") {
    outputs[file] = {{"format", format}, {"timing_columns", timing}, {"timing_rows", timing_rows}};
  }

  void write_manifest() const {
    json m;
    m["command"] = command;
    m["arguments"] = args;
    m["config"] = cfg.resolved;
    m["outputs"] = outputs;
    m["summary"] = summary;
    m["timing_summary"] = timing_summary;
    if (!notes.empty()) m["notes"] = notes;
    const fs::path path = out_dir / (command + ".manifest.json");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << m.dump(2) << '\n';
  }
};

// Options shared by every config-driven command.
struct ConfigArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config, "JSON config file")->required();
  cmd->add_option("--set", a.sets, "override section.key=value (repeatable)");
  cmd->add_option("--out", a.out, "output directory (overrides output.dir)");
}

Run start(const std::string& command, const ConfigArgs& a, json user, const std::vector<std::string>& argv) {
  for (const auto& s : a.sets) apply_override(user, s);
  if (!a.out.empty()) apply_override(user, "output.dir=" + json(a.out).dump());
  Run run;
  run.command = command;
  run.args = argv;
  run.cfg = parse_config(user);
  if (run.cfg.solver.single_core) Eigen::setNbThreads(1);
  run.out_dir = run.cfg.output_dir;
  fs::create_directories(run.out_dir);
  return run;
}

std::vector<CorpusEntry> load_corpus(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("corpus file not found: " + path);
  return read_corpus(path);
}

const CorpusEntry& find_problem(const std::vector<CorpusEntry>& corpus, const std::string& id) {
  if (corpus.empty()) throw ValidationError("corpus is empty");
  if (id.empty()) return corpus.front();
  for (const auto& e : corpus)
    if (e.id == id) return e;
  throw ValidationError("problem '" + id + "' not in corpus");
}

std::string methods_list(const std::string& s) {
  json arr = json::array();
  for (const auto& m : split(s, ',')) arr.push_back(m);
  return arr.dump();
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string dataset;
  int n = 1000;
  double noise = 0.1;
  int embed_dim = 0;
  double embed_noise = 0.01;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.dataset != "circle" && a.dataset != "curly" && a.dataset != "two_circles")
    throw ValidationError("--dataset must be circle, curly or two_circles");
  if (a.n < 1) throw ValidationError("--n must be >= 1");
  if (a.noise < 0 || a.embed_noise < 0) throw ValidationError("noise levels must be non-negative");
  if (a.embed_dim == 1 || a.embed_dim < 0) throw ValidationError("--embed-dim must be 0 or >= 2");
  Mat x = gen_dataset(a.dataset, a.n, a.noise, a.seed);
  if (a.embed_dim >= 2) x = embed_high_dim(x, a.embed_dim, a.embed_noise, derive_seed(a.seed, 1));
  const std::string header = "rbq gen-data --dataset " + a.dataset + " --n " + std::to_string(a.n) + " --noise " +
                             num(a.noise) + " --embed-dim " + std::to_string(a.embed_dim) + " --embed-noise " +
                             num(a.embed_noise) + " --seed " + std::to_string(a.seed) + "\nrows " +
                             std::to_string(x.rows()) + " cols " + std::to_string(x.cols());
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_points(a.out, x, header);
  std::cout << "# " << header.substr(0, header.find('\n')) << "\n# wrote " << x.rows() << "x" << x.cols() << " to "
            << a.out << "\n";
  return 0;
}

int cmd_fit_land(Run& run) {
  const Config& c = run.cfg;
  const Mat data = load_data(c.data);
  const auto metric = make_metric(c.metric, data);
  IntegratorMoments provider(*metric, c.integrator.method, c.integrator.budget, c.integrator.settings);
  LandOptions opts = c.land;
  GeodesicCache cache(c.solver.cache_threshold);
  if (!c.solver.cache_path.empty()) {
    if (fs::exists(c.solver.cache_path)) cache.load(c.solver.cache_path);
    opts.cache = &cache;
  }
  LandFit fit;
  try {
    fit = fit_land(data, *metric, provider, opts);
  } catch (const NumericalError& e) {
    const std::string what = e.what();
    throw NumericalError(what.rfind("fit-failure", 0) == 0 ? what : "fit-failure: " + what);
  }
  if (!c.solver.cache_path.empty()) cache.save(c.solver.cache_path);

  const std::string prov = provenance(c);
  write_fit_trace(run.out_dir / "trace.txt", fit, prov);
  run.output("trace.txt", {"wall_clock"}, json::object(), "keyvalue");
  write_corpus(run.out_dir / "corpus.tsv", provider.corpus(), prov);
  run.output("corpus.tsv");
  {
    Table t(run.out_dir / "components.tsv", prov, {"component", "weight", "norm_const", "mu", "sigma"});
    for (std::size_t j = 0; j < fit.components.size(); ++j) {
      const auto& k = fit.components[j];
      const Mat s = k.sigma.transpose();
      t.row({std::to_string(j), num(k.weight), num(k.norm_const), join(k.mu.data(), k.mu.size()),
             join(s.data(), s.size())});
    }
  }
  run.output("components.tsv");
  {
    Table t(run.out_dir / "integrations.tsv", prov,
            {"method", "problem", "mean", "variance", "wall_clock_s", "exp_maps", "g_evals", "standard_error",
             "failures", "reused"});
    for (const auto& r : provider.results()) {
      std::vector<std::string> cells = split(r.to_record(), '\t');
      cells.push_back(num(r.standard_error));
      cells.push_back(std::to_string(r.failures));
      cells.push_back(std::to_string(r.reused));
      t.row(cells);
    }
  }
  run.output("integrations.tsv", {"wall_clock_s"});

  const auto& last = fit.trace.back();
  run.summary = {{"converged", fit.converged},
                 {"iterations", last.iteration},
                 {"final_nll", last.nll},
                 {"integration_problems", provider.corpus().size()},
                 {"wall_clock_s", fit.wall_clock}};
  run.timing_summary = {"wall_clock_s"};
  run.write_manifest();
  std::cout << "fit-land: " << fit.trace.size() - 1 << " iterations, nll " << num(last.nll) << ", "
            << provider.corpus().size() << " integration problems -> " << run.out_dir.string() << "\n";
  return 0;
}

struct IntegrateArgs {
  std::string corpus, id, mu, sigma;
};

int cmd_integrate(Run& run, const IntegrateArgs& a) {
  const Config& c = run.cfg;
  const Mat data = load_data(c.data);
  const auto metric = make_metric(c.metric, data);
  CorpusEntry e;
  if (!a.corpus.empty()) {
    e = find_problem(load_corpus(a.corpus), a.id);
  } else {
    if (a.mu.empty() || a.sigma.empty()) throw ValidationError("integrate needs --corpus or both --mu and --sigma");
    std::vector<double> mu, sg;
    for (const auto& s : split(a.mu, ',')) mu.push_back(to_double(s, "--mu"));
    for (const auto& s : split(a.sigma, ',')) sg.push_back(to_double(s, "--sigma"));
    const auto d = static_cast<Eigen::Index>(mu.size());
    if (static_cast<Eigen::Index>(sg.size()) != d * d) throw ValidationError("--sigma must hold D*D numbers");
    e.id = a.id.empty() ? "cli" : a.id;
    e.mu = Eigen::Map<const Vec>(mu.data(), d);
    e.sigma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(sg.data(), d, d);
  }
  const IntegrationResult r =
      run_integration({e.id, metric.get(), e.mu, e.sigma}, c.integrator.method, c.integrator.budget, c.integrator.settings);
  {
    Table t(run.out_dir / "integrate.tsv", provenance(c),
            {"method", "problem", "mean", "variance", "wall_clock_s", "exp_maps", "g_evals", "standard_error",
             "failures", "vector", "matrix"});
    std::vector<std::string> cells = split(r.to_record(), '\t');
    const Mat m = r.matrix.transpose();
    cells.insert(cells.end(), {num(r.standard_error), std::to_string(r.failures), join(r.vector.data(), r.vector.size()),
                               join(m.data(), m.size())});
    t.row(cells);
  }
  run.output("integrate.tsv", {"wall_clock_s"});
  run.summary = {{"problem", e.id}, {"method", to_string(r.method)}, {"normalization", r.normalization}};
  run.write_manifest();
  std::cout << IntegrationResult::record_header() << "\n" << r.to_record() << "\n";
  return 0;
}

struct GroundTruthArgs {
  std::string corpus, ids;
};

int cmd_ground_truth(Run& run, const GroundTruthArgs& a) {
  const Config& c = run.cfg;
  const Mat data = load_data(c.data);
  const auto metric = make_metric(c.metric, data);
  const auto corpus = load_corpus(a.corpus);
  const auto wanted = split(a.ids, ',');
  const fs::path dir = c.benchmark.pool_dir;
  fs::create_directories(dir);
  json built = json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& e = corpus[i];
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), e.id) == wanted.end()) continue;
    const GroundTruthPool p = build_ground_truth(*metric, e.id, e.mu, e.sigma, c.benchmark.ground_truth_samples,
                                                 derive_seed(c.benchmark.ground_truth_seed, i), c.solver.threads);
    p.save(pool_path(dir, e.id), provenance(c));
    const McEstimate est = p.estimate();
    built.push_back({{"problem", e.id}, {"estimate", est.value}, {"standard_error", est.standard_error},
                     {"failures", p.failures}});
    std::cout << e.id << "\t" << num(est.value) << "\t" << num(est.standard_error) << "\n";
  }
  for (const auto& w : wanted)
    if (std::none_of(corpus.begin(), corpus.end(), [&](const CorpusEntry& e) { return e.id == w; }))
      throw ValidationError("problem '" + w + "' not in corpus");
  run.summary = {{"pool_dir", dir.string()}, {"pools", built}};
  run.notes.push_back("pool files: the last column of each sample row (runtime in ms) is timing-dependent");
  run.write_manifest();
  return 0;
}

struct BenchArgs {
  std::string corpus, problem;
  bool generate = false;
};

std::vector<GroundTruthPool> pools_for(const Config& c, const Metric& metric, const std::vector<CorpusEntry>& corpus) {
  return load_or_build_pools(metric, corpus, c.benchmark.pool_dir, c.benchmark.generate_ground_truth,
                             c.benchmark.ground_truth_samples, c.benchmark.ground_truth_seed, c.solver.threads,
                             provenance(c));
}

int cmd_bench_corpus(Run& run, const BenchArgs& a) {
  const Config& c = run.cfg;
  const Mat data = load_data(c.data);
  const auto metric = make_metric(c.metric, data);
  const auto corpus = load_corpus(a.corpus);
  const auto pools = pools_for(c, *metric, corpus);

  CorpusBenchOptions o;
  o.methods = c.benchmark.methods;
  o.budget = c.integrator.budget;
  o.settings = c.integrator.settings;
  o.repeats = c.benchmark.repeats;
  o.seed = c.benchmark.seed;
  o.workers = c.benchmark.workers;
  const CorpusBenchmark b = bench_corpus(*metric, corpus, pools, o);

  const std::string prov = provenance(c);
  {
    Table t(run.out_dir / "bench-corpus.tsv", prov, {"method", "repeat", "mean_rel_error", "runtime_s", "problems"});
    for (const auto& s : b.summary)
      t.row({to_string(s.method), std::to_string(s.repeat), num(s.mean_rel_error), num(s.runtime),
             std::to_string(s.problems)});
  }
  {
    Table t(run.out_dir / "bench-corpus-runs.tsv", prov,
            {"method", "repeat", "problem", "estimate", "truth", "rel_error", "wall_clock_s", "exp_maps", "g_evals",
             "reused", "mc_samples", "mc_budget_s"});
    for (std::size_t k = 0; k < b.runs.size(); ++k) {
      const auto& r = b.runs[k];
      const bool mc = r.method == Method::Mc;
      t.row({to_string(r.method), std::to_string(r.repeat), r.problem, num(r.estimate), num(r.truth),
             num(r.rel_error), num(r.wall_clock), std::to_string(r.exp_maps), std::to_string(r.g_evals),
             std::to_string(r.reused), std::to_string(r.mc_samples),
             mc ? num(b.mc_budget[k % corpus.size()]) : "-"});
    }
  }
  const json mc_rows = {{"method", {"mc"}}};
  run.output("bench-corpus.tsv", {"runtime_s"}, mc_rows);
  run.output("bench-corpus-runs.tsv", {"wall_clock_s", "mc_budget_s"}, mc_rows);
  run.notes.push_back(
      "mc rows: the sample count, estimate and error follow from the measured BQ wall-clock and are "
      "timing-dependent");
  run.notes.push_back(
      "mean_rel_error averages |estimate - truth| / truth over the corpus problems; truth is the pool estimate");

  json medians = json::object();
  std::vector<Method> all;
  for (const auto& s : b.summary)
    if (std::find(all.begin(), all.end(), s.method) == all.end()) all.push_back(s.method);
  for (Method m : all) {
    std::vector<double> e;
    for (const auto& s : b.summary)
      if (s.method == m) e.push_back(s.mean_rel_error);
    std::sort(e.begin(), e.end());
    const std::size_t n = e.size();
    medians[to_string(m)] = n % 2 ? e[n / 2] : 0.5 * (e[n / 2 - 1] + e[n / 2]);
    std::cout << to_string(m) << "\tmedian mean-relative-error " << num(medians[to_string(m)].get<double>()) << "\n";
  }
  run.summary = {{"problems", corpus.size()}, {"repeats", o.repeats}, {"median_mean_rel_error", medians}};
  run.timing_summary = {"median_mean_rel_error.mc"};
  run.write_manifest();
  return 0;
}

int cmd_bench_runtime(Run& run, const BenchArgs& a) {
  const Config& c = run.cfg;
  const Mat data = load_data(c.data);
  const auto metric = make_metric(c.metric, data);
  const auto corpus = load_corpus(a.corpus);
  const CorpusEntry& problem = find_problem(corpus, a.problem);
  const auto pools = pools_for(c, *metric, {problem});

  RuntimeBenchOptions o;
  o.methods = c.benchmark.methods;
  o.limits = c.benchmark.limits.empty()
                 ? runtime_grid(c.benchmark.limit_min, c.benchmark.limit_max, c.benchmark.limit_count)
                 : c.benchmark.limits;
  o.repeats = c.benchmark.runtime_repeats;
  o.seed = c.benchmark.seed;
  o.settings = c.integrator.settings;
  o.workers = c.benchmark.workers;
  const auto runs = bench_runtime(*metric, problem, pools[0], o);
  const auto summary = summarize_runtime(runs);

  const std::string prov = provenance(c);
  {
    Table t(run.out_dir / "bench-runtime.tsv", prov,
            {"method", "limit_s", "repeat", "realized_s", "estimate", "truth", "rel_error", "observations"});
    for (const auto& r : runs)
      t.row({to_string(r.method), num(r.limit), std::to_string(r.repeat), num(r.realized), num(r.estimate),
             num(r.truth), num(r.rel_error), std::to_string(r.observations)});
  }
  {
    Table t(run.out_dir / "bench-runtime-summary.tsv", prov,
            {"method", "limit_s", "runs", "mean_rel_error", "ci95_low", "ci95_high", "mean_realized_s"});
    for (const auto& s : summary)
      t.row({to_string(s.method), num(s.limit), std::to_string(s.runs), num(s.mean_rel_error), num(s.ci_low),
             num(s.ci_high), num(s.mean_realized)});
  }
  run.output("bench-runtime.tsv", {"realized_s", "estimate", "rel_error", "observations"});
  run.output("bench-runtime-summary.tsv", {"mean_rel_error", "ci95_low", "ci95_high", "mean_realized_s"});
  run.notes.push_back("BQ runs stop collecting once the limit is reached; realized_s includes finalization");
  run.notes.push_back("mc rows subsample the pool with floor(limit / mean per-sample runtime) draws");
  int short_runs = 0;
  for (const auto& r : runs) short_runs += r.method != Method::Mc && r.realized < r.limit;
  run.summary = {{"problem", problem.id}, {"limits", o.limits}, {"repeats", o.repeats}, {"rows", runs.size()},
                 {"bq_runs_below_limit", short_runs}};
  run.timing_summary = {"bq_runs_below_limit"};
  run.write_manifest();
  std::cout << "bench-runtime: " << runs.size() << " runs on " << problem.id << " -> " << run.out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rbq: Riemannian Bayesian quadrature and LAND fitting"};
  app.require_subcommand(1);
  std::vector<std::string> argv_copy(argv + 1, argv + argc);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  c_gen->add_option("--dataset", gen.dataset, "circle, curly or two_circles")->required();
  c_gen->add_option("--n", gen.n, "number of points");
  c_gen->add_option("--noise", gen.noise, "noise standard deviation");
  c_gen->add_option("--embed-dim", gen.embed_dim, "embed into this many dimensions (0: keep 2-D)");
  c_gen->add_option("--embed-noise", gen.embed_noise, "noise variance added after embedding");
  c_gen->add_option("--seed", gen.seed, "random seed");
  c_gen->add_option("--out", gen.out, "output file")->required();

  auto* c_print = app.add_subcommand("print-config", "print the default config");

  ConfigArgs fit_args;
  auto* c_fit = app.add_subcommand("fit-land", "fit a LAND mixture and record its integration problems");
  add_config_args(c_fit, fit_args);
  std::string fit_method;
  c_fit->add_option("--method", fit_method, "integration method (overrides integrator.method)");

  ConfigArgs int_args;
  IntegrateArgs integ;
  std::string int_method;
  auto* c_int = app.add_subcommand("integrate", "estimate one normalization constant");
  add_config_args(c_int, int_args);
  c_int->add_option("--corpus", integ.corpus, "problem corpus");
  c_int->add_option("--id", integ.id, "problem id (default: first in corpus)");
  c_int->add_option("--mu", integ.mu, "comma-separated mean");
  c_int->add_option("--sigma", integ.sigma, "comma-separated row-major covariance");
  c_int->add_option("--method", int_method, "integration method (overrides integrator.method)");

  ConfigArgs gt_args;
  GroundTruthArgs gt;
  std::string gt_pools;
  int gt_samples = 0;
  auto* c_gt = app.add_subcommand("ground-truth", "build Monte Carlo ground-truth pools");
  add_config_args(c_gt, gt_args);
  c_gt->add_option("--corpus", gt.corpus, "problem corpus")->required();
  c_gt->add_option("--ids", gt.ids, "comma-separated problem ids (default: all)");
  c_gt->add_option("--pools", gt_pools, "pool directory (overrides benchmark.pool_dir)");
  c_gt->add_option("--samples", gt_samples, "draws per pool (overrides benchmark.ground_truth_samples)");

  ConfigArgs bc_args;
  BenchArgs bc;
  std::string bc_methods, bc_budgets, bc_pools;
  int bc_repeats = 0;
  std::int64_t bc_seed = -1;
  auto* c_bc = app.add_subcommand("bench-corpus", "replay a corpus against ground truth (boxplot protocol)");
  add_config_args(c_bc, bc_args);
  c_bc->add_option("--corpus", bc.corpus, "problem corpus")->required();
  c_bc->add_option("--methods", bc_methods, "comma-separated BQ methods");
  c_bc->add_option("--budgets", bc_budgets, "comma-separated samples=,reuse_samples=,rays=,reuse_rays=");
  c_bc->add_option("--repeats", bc_repeats, "independent repeats");
  c_bc->add_option("--seed", bc_seed, "benchmark seed");
  c_bc->add_option("--pools", bc_pools, "pool directory");
  c_bc->add_flag("--generate", bc.generate, "build missing ground-truth pools");

  ConfigArgs br_args;
  BenchArgs br;
  std::string br_methods, br_limits, br_pools;
  int br_repeats = 0;
  std::int64_t br_seed = -1;
  auto* c_br = app.add_subcommand("bench-runtime", "sweep wall-clock limits on one problem");
  add_config_args(c_br, br_args);
  c_br->add_option("--corpus", br.corpus, "problem corpus")->required();
  c_br->add_option("--problem", br.problem, "problem id (default: first in corpus)");
  c_br->add_option("--limits", br_limits, "lo:hi:count or a comma-separated list of seconds");
  c_br->add_option("--repeats", br_repeats, "repeats per limit and method");
  c_br->add_option("--methods", br_methods, "comma-separated BQ methods");
  c_br->add_option("--seed", br_seed, "benchmark seed");
  c_br->add_option("--pools", br_pools, "pool directory");
  c_br->add_flag("--generate", br.generate, "build a missing ground-truth pool");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_gen->parsed()) return cmd_gen_data(gen);
    if (c_print->parsed()) {
      std::cout << default_config().dump(2) << "\n";
      return 0;
    }
    if (c_fit->parsed()) {
      json user = read_config_json(fit_args.config);
      if (!fit_method.empty()) apply_override(user, "integrator.method=" + json(fit_method).dump());
      Run run = start("fit-land", fit_args, user, argv_copy);
      return cmd_fit_land(run);
    }
    if (c_int->parsed()) {
      json user = read_config_json(int_args.config);
      if (!int_method.empty()) apply_override(user, "integrator.method=" + json(int_method).dump());
      Run run = start("integrate", int_args, user, argv_copy);
      return cmd_integrate(run, integ);
    }
    if (c_gt->parsed()) {
      json user = read_config_json(gt_args.config);
      if (!gt_pools.empty()) apply_override(user, "benchmark.pool_dir=" + json(gt_pools).dump());
      if (gt_samples > 0) apply_override(user, "benchmark.ground_truth_samples=" + std::to_string(gt_samples));
      Run run = start("ground-truth", gt_args, user, argv_copy);
      return cmd_ground_truth(run, gt);
    }
    if (c_bc->parsed()) {
      json user = read_config_json(bc_args.config);
      if (!bc_methods.empty()) apply_override(user, "benchmark.methods=" + methods_list(bc_methods));
      for (const auto& kv : split(bc_budgets, ',')) {
        const auto eq = kv.find('=');
        const std::string key = kv.substr(0, eq);
        if (eq == std::string::npos || (key != "samples" && key != "reuse_samples" && key != "rays" && key != "reuse_rays"))
          throw ValidationError("--budgets entries must be samples=, reuse_samples=, rays= or reuse_rays=");
        apply_override(user, "integrator." + kv);
      }
      if (bc_repeats > 0) apply_override(user, "benchmark.repeats=" + std::to_string(bc_repeats));
      if (bc_seed >= 0) apply_override(user, "benchmark.seed=" + std::to_string(bc_seed));
      if (!bc_pools.empty()) apply_override(user, "benchmark.pool_dir=" + json(bc_pools).dump());
      if (bc.generate) apply_override(user, "benchmark.generate_ground_truth=true");
      Run run = start("bench-corpus", bc_args, user, argv_copy);
      return cmd_bench_corpus(run, bc);
    }
    if (c_br->parsed()) {
      json user = read_config_json(br_args.config);
      if (!br_methods.empty()) apply_override(user, "benchmark.methods=" + methods_list(br_methods));
      if (!br_limits.empty()) {
        const auto parts = split(br_limits, ':');
        if (br_limits.find(':') != std::string::npos) {
          if (parts.size() != 3) throw ValidationError("--limits must be lo:hi:count or a comma-separated list");
          apply_override(user, "benchmark.limit_min=" + num(to_double(parts[0], "--limits")));
          apply_override(user, "benchmark.limit_max=" + num(to_double(parts[1], "--limits")));
          apply_override(user, "benchmark.limit_count=" + parts[2]);
          apply_override(user, "benchmark.limits=[]");
        } else {
          json arr = json::array();
          for (const auto& s : split(br_limits, ',')) arr.push_back(to_double(s, "--limits"));
          apply_override(user, "benchmark.limits=" + arr.dump());
        }
      }
      if (br_repeats > 0) apply_override(user, "benchmark.runtime_repeats=" + std::to_string(br_repeats));
      if (br_seed >= 0) apply_override(user, "benchmark.seed=" + std::to_string(br_seed));
      if (!br_pools.empty()) apply_override(user, "benchmark.pool_dir=" + json(br_pools).dump());
      if (br.generate) apply_override(user, "benchmark.generate_ground_truth=true");
      Run run = start("bench-runtime", br_args, user, argv_copy);
      return cmd_bench_runtime(run, br);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const rbq::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
