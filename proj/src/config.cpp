#include "rbq/config.hpp"

#include "rbq/data_io.hpp"

#include <fstream>
#include <limits>
#include <set>

namespace rbq {

using nlohmann::json;

namespace {

const std::set<std::string> kRequired{"metric.family", "land.components", "integrator.method"};

std::string dotted(const std::string& section, const std::string& key) { return section + "." + key; }

// Same JSON kind as the default value; integers may stand in for floats.
bool compatible(const json& def, const json& val) {
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_number_float()) return val.is_number();
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_array()) {
    if (!val.is_array()) return false;
    const bool strings = !def.empty() && def.front().is_string();
    for (const auto& e : val)
      if (strings ? !e.is_string() : !e.is_number()) return false;
    return true;
  }
  return false;
}

const char* kind(const json& def) {
  if (def.is_boolean()) return "a boolean";
  if (def.is_string()) return "a string";
  if (def.is_number_float()) return "a number";
  if (def.is_number_integer()) return "an integer";
  return !def.empty() && def.front().is_string() ? "a list of strings" : "a list of numbers";
}

class Reader {
 public:
  explicit Reader(const json& j) : j_(j) {}

  const json& at(const std::string& key) const {
    const auto dot = key.find('.');
    return j_.at(key.substr(0, dot)).at(key.substr(dot + 1));
  }
  double num(const std::string& key) const { return at(key).get<double>(); }
  double positive(const std::string& key) const {
    const double v = num(key);
    if (!(v > 0.0)) throw ValidationError("config key '" + key + "' must be positive");
    return v;
  }
  double nonneg(const std::string& key) const {
    const double v = num(key);
    if (!(v >= 0.0)) throw ValidationError("config key '" + key + "' must be non-negative");
    return v;
  }
  int integer(const std::string& key, long lo) const {
    const long v = at(key).get<long>();
    if (v < lo || v > std::numeric_limits<int>::max())
      throw ValidationError("config key '" + key + "' must be an integer >= " + std::to_string(lo));
    return static_cast<int>(v);
  }
  std::uint64_t seed(const std::string& key) const {
    const json& v = at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    const long long s = v.get<long long>();
    if (s < 0) throw ValidationError("config key '" + key + "' must be a non-negative integer");
    return static_cast<std::uint64_t>(s);
  }
  std::string str(const std::string& key) const { return at(key).get<std::string>(); }
  bool flag(const std::string& key) const { return at(key).get<bool>(); }

  Method method(const std::string& key) const { return method_named(key, str(key)); }
  static Method method_named(const std::string& key, const std::string& name) {
    try {
      return method_from_string(name);
    } catch (const InvalidArgument& e) {
      throw ValidationError("config key '" + key + "': " + e.what());
    }
  }

 private:
  const json& j_;
};

}  // namespace

json default_config() {
  return json{
      {"metric", {{"family", "kernel"}, {"sigma", 0.1}, {"rho", 1e-3}, {"components_file", ""}}},
      {"data",
       {{"path", ""},
        {"dataset", "circle"},
        {"n", 1000},
        {"noise", 0.1},
        {"embed_dim", 0},
        {"embed_noise", 0.01},
        {"seed", 1}}},
      {"land",
       {{"components", 2},
        {"max_iterations", 7},
        {"mu_step", 0.3},
        {"mu_tolerance", 0.01},
        {"nll_tolerance", 2.0},
        {"covariance_steps", 2},
        {"covariance_linesearch", 4},
        {"seed", 0}}},
      {"integrator",
       {{"method", "wsabi-l"},
        {"samples", 80},
        {"reuse_samples", 10},
        {"rays", 18},
        {"reuse_rays", 2},
        {"mc_samples", 1000},
        {"time_limit", 0.0},
        {"kernel", "rbf"},
        {"far_field_prior", true},
        {"initial_points", 5},
        {"hyperopt_every", 10},
        {"seed", 0}}},
      {"solver",
       {{"fp_max_iterations", 1000},
        {"fp_mesh_nodes", 10},
        {"fp_tolerance", 0.1},
        {"collocation_max_nodes", 100},
        {"collocation_tolerance", 0.1},
        {"shooting_iterations", 8},
        {"cache_threshold", 0.5},
        {"cache_path", ""},
        {"threads", 1},
        {"single_core", true}}},
      {"benchmark",
       {{"methods", json::array({"wsabi-l", "wsabi-m", "dcv"})},
        {"repeats", 16},
        {"seed", 0},
        {"ground_truth_samples", 40000},
        {"ground_truth_seed", 40000},
        {"pool_dir", "pools"},
        {"generate_ground_truth", false},
        {"limit_min", 5.0},
        {"limit_max", 65.0},
        {"limit_count", 30},
        {"limits", json::array()},
        {"runtime_repeats", 30},
        {"workers", 1}}},
      {"output", {{"dir", "out"}}},
  };
}

Config parse_config(const json& user) {
  if (!user.is_object()) throw ValidationError("config must be a JSON object");
  json merged = default_config();
  for (const auto& [section, body] : user.items()) {
    if (!merged.contains(section)) throw ValidationError("unknown config section '" + section + "'");
    if (!body.is_object()) throw ValidationError("config section '" + section + "' must be an object");
    for (const auto& [key, val] : body.items()) {
      const std::string name = dotted(section, key);
      if (!merged[section].contains(key)) throw ValidationError("unknown config key '" + name + "'");
      if (!compatible(merged[section][key], val))
        throw ValidationError("config key '" + name + "' must be " + kind(merged[section][key]));
      merged[section][key] = val;
    }
  }
  for (const auto& name : kRequired) {
    const auto dot = name.find('.');
    const std::string section = name.substr(0, dot), key = name.substr(dot + 1);
    if (!user.contains(section) || !user.at(section).contains(key))
      throw ValidationError("missing config key '" + name + "'");
  }

  const Reader r(merged);
  Config c;
  c.resolved = merged;

  c.metric.family = r.str("metric.family");
  if (c.metric.family != "kernel" && c.metric.family != "mixture" && c.metric.family != "euclidean")
    throw ValidationError("config key 'metric.family' must be kernel, mixture or euclidean");
  c.metric.sigma = r.positive("metric.sigma");
  c.metric.rho = r.positive("metric.rho");
  c.metric.components_file = r.str("metric.components_file");
  if (c.metric.family == "mixture") {
    if (!user.at("metric").contains("rho")) throw ValidationError("missing config key 'metric.rho'");
    if (c.metric.components_file.empty()) throw ValidationError("missing config key 'metric.components_file'");
  }
  if (c.metric.family == "kernel")
    for (const char* key : {"sigma", "rho"})
      if (!user.at("metric").contains(key)) throw ValidationError(std::string("missing config key 'metric.") + key + "'");

  c.data.path = r.str("data.path");
  c.data.dataset = r.str("data.dataset");
  if (c.data.dataset != "circle" && c.data.dataset != "curly" && c.data.dataset != "two_circles")
    throw ValidationError("config key 'data.dataset' must be circle, curly or two_circles");
  c.data.n = r.integer("data.n", 1);
  c.data.noise = r.nonneg("data.noise");
  c.data.embed_dim = r.integer("data.embed_dim", 0);
  if (c.data.embed_dim == 1) throw ValidationError("config key 'data.embed_dim' must be 0 or >= 2");
  c.data.embed_noise = r.nonneg("data.embed_noise");
  c.data.seed = r.seed("data.seed");

  c.land.components = r.integer("land.components", 1);
  c.land.max_iterations = r.integer("land.max_iterations", 0);
  c.land.mu_step = r.positive("land.mu_step");
  c.land.mu_tolerance = r.nonneg("land.mu_tolerance");
  c.land.nll_tolerance = r.nonneg("land.nll_tolerance");
  c.land.covariance.outer_steps = r.integer("land.covariance_steps", 0);
  c.land.covariance.max_linesearch = r.integer("land.covariance_linesearch", 1);
  c.land.seed = r.seed("land.seed");

  auto& ig = c.integrator;
  ig.method = r.method("integrator.method");
  ig.budget.samples = r.integer("integrator.samples", 1);
  ig.budget.reuse_samples = r.integer("integrator.reuse_samples", 0);
  ig.budget.rays = r.integer("integrator.rays", 1);
  ig.budget.reuse_rays = r.integer("integrator.reuse_rays", 0);
  ig.budget.mc_samples = r.integer("integrator.mc_samples", 1);
  ig.budget.time_limit = r.nonneg("integrator.time_limit");
  try {
    ig.settings.kernel = kernel_family_from_string(r.str("integrator.kernel"));
  } catch (const std::exception& e) {
    throw ValidationError(std::string("config key 'integrator.kernel': ") + e.what());
  }
  ig.settings.far_field_prior = r.flag("integrator.far_field_prior");
  ig.settings.initial_points = r.integer("integrator.initial_points", 1);
  ig.settings.hyperopt_every = r.integer("integrator.hyperopt_every", 1);
  ig.settings.seed = r.seed("integrator.seed");

  auto& so = c.solver;
  so.log_map.fixed_point.max_iterations = r.integer("solver.fp_max_iterations", 1);
  so.log_map.fixed_point.mesh_nodes = r.integer("solver.fp_mesh_nodes", 3);
  so.log_map.fixed_point.tolerance = r.positive("solver.fp_tolerance");
  so.log_map.collocation.max_nodes = r.integer("solver.collocation_max_nodes", 3);
  so.log_map.collocation.tolerance = r.positive("solver.collocation_tolerance");
  so.log_map.shooting_iterations = r.integer("solver.shooting_iterations", 0);
  so.cache_threshold = r.nonneg("solver.cache_threshold");
  so.cache_path = r.str("solver.cache_path");
  so.single_core = r.flag("solver.single_core");
  so.threads = so.single_core ? 1 : r.integer("solver.threads", 0);

  auto& b = c.benchmark;
  b.methods.clear();
  for (const auto& m : r.at("benchmark.methods")) b.methods.push_back(Reader::method_named("benchmark.methods", m));
  if (b.methods.empty()) throw ValidationError("config key 'benchmark.methods' must not be empty");
  b.repeats = r.integer("benchmark.repeats", 1);
  b.seed = r.seed("benchmark.seed");
  b.ground_truth_samples = r.integer("benchmark.ground_truth_samples", 1);
  b.ground_truth_seed = r.seed("benchmark.ground_truth_seed");
  b.pool_dir = r.str("benchmark.pool_dir");
  b.generate_ground_truth = r.flag("benchmark.generate_ground_truth");
  b.limit_min = r.positive("benchmark.limit_min");
  b.limit_max = r.positive("benchmark.limit_max");
  if (b.limit_max < b.limit_min) throw ValidationError("config key 'benchmark.limit_max' must be >= benchmark.limit_min");
  b.limit_count = r.integer("benchmark.limit_count", 1);
  for (const auto& l : r.at("benchmark.limits")) {
    if (!(l.get<double>() > 0.0)) throw ValidationError("config key 'benchmark.limits' must hold positive numbers");
    b.limits.push_back(l.get<double>());
  }
  b.runtime_repeats = r.integer("benchmark.runtime_repeats", 1);
  b.workers = so.single_core ? 1 : r.integer("benchmark.workers", 1);

  c.output_dir = r.str("output.dir");

  c.land.log_map = so.log_map;
  c.land.cache_threshold = so.cache_threshold;
  c.land.threads = so.threads;
  return c;
}

Config load_config(const std::filesystem::path& path) { return parse_config(read_config_json(path)); }

json read_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const json::parse_error& e) {
    throw ValidationError("config file " + path.string() + ": " + e.what());
  }
  return j;
}

void apply_override(json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ValidationError("override '" + assignment + "' must look like section.key=value");
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string text = assignment.substr(eq + 1);
  json val = json::parse(text, nullptr, false);
  if (val.is_discarded()) val = text;
  if (!user.is_object()) user = json::object();
  user[section][key] = val;
}

Mat load_data(const DataConfig& cfg) {
  if (!cfg.path.empty()) return load_points(cfg.path);
  Mat x = gen_dataset(cfg.dataset, cfg.n, cfg.noise, cfg.seed);
  if (cfg.embed_dim >= 2) x = embed_high_dim(x, cfg.embed_dim, cfg.embed_noise, derive_seed(cfg.seed, 1));
  return x;
}

std::unique_ptr<Metric> make_metric(const MetricConfig& cfg, const Mat& data) {
  if (cfg.family == "euclidean") return std::make_unique<EuclideanMetric>(static_cast<int>(data.cols()));
  if (cfg.family == "mixture") {
    auto comps = load_mixture_components(cfg.components_file);
    if (!comps.empty() && comps[0].mean.size() != data.cols())
      throw ValidationError("mixture components in " + cfg.components_file + " have dimension " +
                            std::to_string(comps[0].mean.size()) + " but the data have " +
                            std::to_string(data.cols()));
    return std::make_unique<MixtureMetric>(std::move(comps), cfg.rho);
  }
  return std::make_unique<KernelMetric>(data, cfg.sigma, cfg.rho);
}

std::string provenance(const Config& cfg) { return "config " + cfg.resolved.dump(); }

}  // namespace rbq
