#include "doctest.h"

#include "rbq/data_io.hpp"
#include "rbq/land.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace rbq;

#ifndef RBQ_CLI_PATH
#error "RBQ_CLI_PATH must point at the rbq binary"
#endif

namespace {

struct Result {
  int code = -1;
  std::string err;
};

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "rbq_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result run_cli(const std::string& args) {
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = std::string("cd ") + scratch().string() + " && " + RBQ_CLI_PATH + " " + args + " > stdout.txt 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("gen-data writes the requested shape and reruns are byte-identical") {
  REQUIRE(run_cli("gen-data --dataset circle --n 1000 --seed 1 --out a.txt").code == 0);
  REQUIRE(run_cli("gen-data --dataset circle --n 1000 --seed 1 --out b.txt").code == 0);
  CHECK(slurp(scratch() / "a.txt") == slurp(scratch() / "b.txt"));
  const Mat a = load_points(scratch() / "a.txt");
  CHECK(a.rows() == 1000);
  CHECK(a.cols() == 2);
  CHECK(a == gen_circle(1000, 0.1, 1));
  CHECK(slurp(scratch() / "a.txt").rfind("# rbq gen-data --dataset circle", 0) == 0);

  REQUIRE(run_cli("gen-data --dataset circle --n 1000 --embed-dim 5 --seed 1 --out e.txt").code == 0);
  const Mat e = load_points(scratch() / "e.txt");
  CHECK(e.rows() == 1000);
  CHECK(e.cols() == 5);

  CHECK(run_cli("gen-data --dataset square --n 10 --out x.txt").code == 2);
  CHECK(run_cli("gen-data --n 10 --out x.txt").code == 2);
}

TEST_CASE("missing config key exits 2 and names the key") {
  write(scratch() / "missing.json", R"({"metric": {"family": "euclidean"}, "land": {"components": 1}})");
  const Result r = run_cli("fit-land --config missing.json");
  CHECK(r.code == 2);
  CHECK(r.err.find("integrator.method") != std::string::npos);
  CHECK(run_cli("fit-land --config nowhere.json").code == 2);
}

TEST_CASE("euclidean fit-land reproduces the gaussian maximum likelihood fit") {
  const Mat x = gen_circle(150, 0.1, 7);
  save_points(scratch() / "flat.txt", x);
  write(scratch() / "flat.json", R"({
    "metric": {"family": "euclidean"},
    "data": {"path": "flat.txt"},
    "land": {"components": 1, "max_iterations": 40, "nll_tolerance": 1e-9},
    "integrator": {"method": "wsabi-l", "samples": 20, "rays": 4},
    "output": {"dir": "flat_out"}
  })");
  REQUIRE(run_cli("fit-land --config flat.json").code == 0);
  for (const char* f : {"trace.txt", "corpus.tsv", "components.tsv", "integrations.tsv", "fit-land.manifest.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(scratch() / "flat_out" / f));
    CHECK(slurp(scratch() / "flat_out" / f).find("\"land\":") != std::string::npos);  // embedded config
  }
  CHECK(!read_corpus(scratch() / "flat_out" / "corpus.tsv").empty());

  std::ifstream in(scratch() / "flat_out" / "components.tsv");
  std::string line;
  std::getline(in, line);  // provenance
  std::getline(in, line);  // header
  std::getline(in, line);
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string item; std::getline(ss, item, '\t');) f.push_back(item);
  REQUIRE(f.size() == 5);
  auto numbers = [](const std::string& s) {
    std::vector<double> v;
    std::stringstream is(s);
    for (std::string item; std::getline(is, item, ',');) v.push_back(std::stod(item));
    return v;
  };
  const auto mu = numbers(f[3]);
  const auto sg = numbers(f[4]);
  const Vec mean = x.colwise().mean().transpose();
  const Mat centred = x.rowwise() - mean.transpose();
  const Mat cov = centred.transpose() * centred / x.rows();
  REQUIRE(mu.size() == 2);
  REQUIRE(sg.size() == 4);
  const Vec fitted_mu = Eigen::Map<const Vec>(mu.data(), 2);
  const Mat fitted_sigma = Eigen::Map<const Mat>(sg.data(), 2, 2);
  // relative to the scale of the data (the sample mean is near 0)
  CHECK((fitted_mu - mean).norm() < 0.02 * std::sqrt(cov.trace()));
  CHECK((fitted_sigma - cov).norm() < 0.02 * cov.norm());

  // manifest
  const auto manifest = nlohmann::json::parse(slurp(scratch() / "flat_out" / "fit-land.manifest.json"));
  CHECK(manifest.at("config").at("land").at("components") == 1);
  CHECK(manifest.at("outputs").contains("trace.txt"));
}

TEST_CASE("fit-land reruns reproduce every non-timing field") {
  write(scratch() / "det.json", R"({
    "metric": {"family": "kernel", "sigma": 0.1, "rho": 0.001},
    "data": {"n": 40, "seed": 2},
    "land": {"components": 2, "max_iterations": 1},
    "integrator": {"method": "dcv", "rays": 4},
    "output": {"dir": "det"}
  })");
  REQUIRE(run_cli("fit-land --config det.json").code == 0);
  const std::string corpus = slurp(scratch() / "det" / "corpus.tsv");
  const std::string comps = slurp(scratch() / "det" / "components.tsv");
  REQUIRE(run_cli("fit-land --config det.json").code == 0);
  CHECK(slurp(scratch() / "det" / "corpus.tsv") == corpus);
  CHECK(slurp(scratch() / "det" / "components.tsv") == comps);
}

TEST_CASE("numerical fit failure exits 3 with a diagnostic") {
  write(scratch() / "fail.json", R"({
    "metric": {"family": "kernel", "sigma": 0.1, "rho": 0.001},
    "data": {"n": 30},
    "land": {"components": 1},
    "integrator": {"method": "wsabi-l"},
    "solver": {"collocation_max_nodes": 3, "collocation_tolerance": 1e-12, "shooting_iterations": 0},
    "output": {"dir": "fail"}
  })");
  const Result r = run_cli("fit-land --config fail.json");
  CHECK(r.code == 3);
  CHECK(r.err.find("fit-failure") != std::string::npos);
}

TEST_CASE("benchmarks without ground truth explain how to create it") {
  write(scratch() / "corpus.tsv",
        "id\tcomponent\titeration\treuse\tmu\tsigma\np0\t0\t0\t0\t1,0\t0.05,0,0,0.05\n");
  write(scratch() / "bench.json", R"({
    "metric": {"family": "kernel", "sigma": 0.1, "rho": 0.001}, "data": {"n": 30},
    "land": {"components": 1}, "integrator": {"method": "wsabi-l", "samples": 10, "rays": 2},
    "benchmark": {"pool_dir": "no_pools", "repeats": 1, "ground_truth_samples": 5000},
    "output": {"dir": "bench"}
  })");
  const Result r = run_cli("bench-corpus --config bench.json --corpus corpus.tsv");
  CHECK(r.code == 2);
  CHECK(r.err.find("rbq ground-truth") != std::string::npos);

  REQUIRE(run_cli("ground-truth --config bench.json --corpus corpus.tsv --pools pools").code == 0);
  CHECK(fs::exists(scratch() / "pools" / "p0.pool"));
  REQUIRE(run_cli("bench-corpus --config bench.json --corpus corpus.tsv --pools pools --repeats 2 --methods wsabi-l,dcv").code ==
          0);
  // header plus one row per (method, repeat): 2 BQ methods and MC, 2 repeats
  std::ifstream in(scratch() / "bench" / "bench-corpus.tsv");
  int rows = 0;
  for (std::string line; std::getline(in, line);) rows += !line.empty() && line[0] != '#';
  CHECK(rows == 1 + 3 * 2);
}
