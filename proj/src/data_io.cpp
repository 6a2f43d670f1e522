#include "rbq/data_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace rbq {

namespace {

void check_n(int n) {
  if (n < 1) throw InvalidArgument("dataset size must be >= 1");
}

}  // namespace

Mat gen_circle(int n, double noise, std::uint64_t seed) {
  check_n(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> eps(0.0, 1.0);
  Mat out(n, 2);
  for (int i = 0; i < n; ++i) {
    const double a = angle(rng);
    out(i, 0) = std::cos(a);
    out(i, 1) = std::sin(a);
  }
  if (noise > 0.0)
    for (int i = 0; i < n; ++i) {
      out(i, 0) += noise * eps(rng);
      out(i, 1) += noise * eps(rng);
    }
  return out;
}

Mat gen_curly(int n, double noise, std::uint64_t seed) {
  check_n(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> eps(0.0, 1.0);
  const double pi = std::numbers::pi;
  Mat out(n, 2);
  for (int i = 0; i < n; ++i) {
    const double s = unit(rng);
    const double r = 0.3 + 0.7 * s;
    const double phi = 0.5 * pi + 2.5 * pi * s;
    out(i, 0) = r * std::cos(phi) + noise * eps(rng);
    out(i, 1) = r * std::sin(phi) + noise * eps(rng);
  }
  return out;
}

Mat gen_two_circles(int n, double noise, std::uint64_t seed) {
  check_n(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> eps(0.0, 1.0);
  Mat out(n, 2);
  for (int i = 0; i < n; ++i) {
    const double cx = coin(rng) ? 1.0 : -1.0;
    const double a = angle(rng);
    out(i, 0) = cx + std::cos(a) + noise * eps(rng);
    out(i, 1) = std::sin(a) + noise * eps(rng);
  }
  return out;
}

Mat gen_dataset(const std::string& name, int n, double noise, std::uint64_t seed) {
  if (name == "circle") return gen_circle(n, noise, seed);
  if (name == "curly") return gen_curly(n, noise, seed);
  if (name == "two_circles" || name == "2-circles") return gen_two_circles(n, noise, seed);
  throw InvalidArgument("unknown dataset '" + name + "'");
}

void standardize(Mat& data) {
  if (data.rows() == 0) return;
  const double n = static_cast<double>(data.rows());
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    auto col = data.col(j);
    const double mean = col.sum() / n;
    col.array() -= mean;
    const double sd = std::sqrt(col.squaredNorm() / n);
    if (sd > 0.0) col /= sd;
  }
}

Mat embed_high_dim(const Mat& data, int d, double noise_var, std::uint64_t seed, Mat* basis) {
  if (d < 2) throw InvalidArgument("embed_high_dim: target dimension must be >= 2");
  if (data.cols() != 2) throw InvalidArgument("embed_high_dim: data must have 2 columns");
  if (noise_var < 0.0) throw InvalidArgument("embed_high_dim: noise variance must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, 1.0);
  Mat g(d, 2);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = eps(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(d, 2);
  // Fix signs so the factor is unique given g.
  const Mat r = qr.matrixQR().topRows(2).triangularView<Eigen::Upper>();
  for (int j = 0; j < 2; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  Mat out = data * q.transpose();
  const double sd = std::sqrt(noise_var);
  if (sd > 0.0)
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += sd * eps(rng);
  standardize(out);
  if (basis) *basis = q;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

/// Numbers on one line; returns false for blank/comment lines.
bool parse_row(const std::string& raw, std::size_t lineno, std::vector<double>& row) {
  row.clear();
  std::string line = raw.substr(0, raw.find('#'));
  for (char& c : line)
    if (c == ',' || c == '\t' || c == ';' || c == '\r') c = ' ';
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw ParseError("not a number: '" + tok + "'", lineno);
    if (!std::isfinite(v)) throw ParseError("non-finite value: '" + tok + "'", lineno);
    row.push_back(v);
  }
  return !row.empty();
}

template <class Fn>
void for_each_row(const std::filesystem::path& path, Fn fn) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> row;
  while (std::getline(is, line)) {
    ++lineno;
    if (parse_row(line, lineno, row)) fn(row, lineno);
  }
}

void write_number(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace

Mat load_points(const std::filesystem::path& path) {
  std::vector<std::vector<double>> rows;
  for_each_row(path, [&](const std::vector<double>& row, std::size_t lineno) {
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("expected " + std::to_string(rows.front().size()) + " columns, found " +
                           std::to_string(row.size()),
                       lineno);
    rows.push_back(row);
  });
  if (rows.empty()) throw ParseError("no data rows in " + path.string(), 0);
  Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(i, j) = rows[i][j];
  return out;
}

void save_points(const std::filesystem::path& path, const Mat& data, const std::string& header) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot write " + path.string());
  if (!header.empty()) {
    std::istringstream hs(header);
    std::string line;
    while (std::getline(hs, line)) os << "# " << line << '\n';
  }
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      if (j) os << ',';
      write_number(os, data(i, j));
    }
    os << '\n';
  }
  if (!os) throw InvalidArgument("failed writing " + path.string());
}

std::vector<MixtureComponent> load_mixture_components(const std::filesystem::path& path) {
  std::vector<MixtureComponent> comps;
  std::size_t width = 0;
  for_each_row(path, [&](const std::vector<double>& row, std::size_t lineno) {
    if (row.size() < 3 || row.size() % 2 == 0)
      throw ParseError("component record needs 2D+1 numbers (weight, mean, variance)", lineno);
    if (width && row.size() != width) throw ParseError("component dimension differs from earlier records", lineno);
    width = row.size();
    const auto d = static_cast<Eigen::Index>((row.size() - 1) / 2);
    MixtureComponent c;
    c.weight = row[0];
    c.mean = Eigen::Map<const Vec>(row.data() + 1, d);
    c.variance = Eigen::Map<const Vec>(row.data() + 1 + d, d);
    if (!(c.weight > 0.0)) throw ParseError("component weight must be > 0", lineno);
    if ((c.variance.array() <= 0.0).any()) throw ParseError("component variances must be > 0", lineno);
    comps.push_back(std::move(c));
  });
  if (comps.empty()) throw ParseError("no component records in " + path.string(), 0);
  return comps;
}

void save_mixture_components(const std::filesystem::path& path, const std::vector<MixtureComponent>& comps) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot write " + path.string());
  for (const auto& c : comps) {
    write_number(os, c.weight);
    for (Eigen::Index i = 0; i < c.mean.size(); ++i) {
      os << ',';
      write_number(os, c.mean[i]);
    }
    for (Eigen::Index i = 0; i < c.variance.size(); ++i) {
      os << ',';
      write_number(os, c.variance[i]);
    }
    os << '\n';
  }
}

}  // namespace rbq
