#pragma once

// Synthetic datasets, random high-dimensional embeddings and plain-text I/O
// for point clouds and mixture components.

#include "rbq/common.hpp"
#include "rbq/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rbq {

/// Unit circle: angles uniform in [0, 2pi), isotropic Gaussian noise of
/// standard deviation `noise` added to each coordinate.
Mat gen_circle(int n, double noise, std::uint64_t seed);

/// One and a quarter turns of an outward spiral,
///   r(s) = 0.3 + 0.7 s,  phi(s) = pi/2 + 2.5 pi s,  s ~ U(0, 1),
/// plus isotropic noise.
Mat gen_curly(int n, double noise, std::uint64_t seed);

/// Two unit circles centred at (-1, 0) and (1, 0) touching at the origin;
/// each point picks a circle with probability 1/2.
Mat gen_two_circles(int n, double noise, std::uint64_t seed);

/// Dispatch by name ("circle", "curly", "two_circles").
Mat gen_dataset(const std::string& name, int n, double noise, std::uint64_t seed);

/// Column-wise standardization to mean 0 and (population) standard deviation 1.
/// Constant columns are centred only.
void standardize(Mat& data);

/// Map N x 2 data through a random d x 2 orthonormal matrix, add N(0, noise_var)
/// to every coordinate and standardize. The basis is returned through `basis`.
Mat embed_high_dim(const Mat& data, int d, double noise_var, std::uint64_t seed, Mat* basis = nullptr);

/// Delimited numeric text: comma, tab or space separated; '#' starts a comment.
Mat load_points(const std::filesystem::path& path);
void save_points(const std::filesystem::path& path, const Mat& data, const std::string& header = "");

/// One component per line: weight, D mean entries, D variance entries
/// (2D + 1 numbers, any of the separators accepted by load_points).
std::vector<MixtureComponent> load_mixture_components(const std::filesystem::path& path);
void save_mixture_components(const std::filesystem::path& path, const std::vector<MixtureComponent>& comps);

}  // namespace rbq
