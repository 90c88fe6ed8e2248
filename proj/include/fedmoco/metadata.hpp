#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedmoco/nn.hpp"
#include "fedmoco/rng.hpp"

namespace fedmoco {

inline constexpr double kDefaultBoxCoxLambda = 0.5;
inline constexpr double kDefaultCovarianceJitter = 1e-8;

// (x^lambda - 1) / lambda, or ln x when lambda == 0.
double boxcox(double x, double lambda);

// Inverse of boxcox. For lambda != 0 the base lambda*y + 1 is clamped at 0,
// so every real y maps to a non-negative value.
double inv_boxcox(double y, double lambda);

std::vector<double> boxcox(std::span<const double> x, double lambda);
std::vector<double> inv_boxcox(std::span<const double> y, double lambda);

// Gaussian summary of a node's Box-Cox transformed features. This is the only
// description of local data that ever leaves a node besides model weights.
struct NodeMetadata {
  int node_id = 0;
  int round = 0;
  double lambda = kDefaultBoxCoxLambda;
  std::vector<double> mu;     // d
  std::vector<double> sigma;  // d x d, row-major

  std::size_t dim() const { return mu.size(); }
  double cov(std::size_t i, std::size_t j) const { return sigma[i * mu.size() + j]; }

  friend bool operator==(const NodeMetadata&, const NodeMetadata&) = default;
};

// Sample mean and unbiased covariance of boxcox(features), plus jitter * I.
NodeMetadata compute_metadata(std::span<const FeatureVector> features, double lambda,
                              double jitter = kDefaultCovarianceJitter, int node_id = 0,
                              int round = 0);

// Lower-triangular L with L L^T = a for a symmetric positive semi-definite
// matrix. Non-positive pivots (rank deficiency) produce zero columns.
std::vector<double> cholesky_psd(std::span<const double> a, std::size_t n);

// count draws from N(mu, sigma) in Box-Cox space.
std::vector<std::vector<double>> sample_gaussian(std::span<const double> mu,
                                                 std::span<const double> sigma, std::size_t count,
                                                 Rng& rng);

// Draws in Box-Cox space mapped back through inv_boxcox and the feature head
// (clamp at zero, L2 normalization).
std::vector<FeatureVector> sample_synthetic(const NodeMetadata& metadata, std::size_t count,
                                            Rng& rng);

struct SyntheticQuota {
  std::size_t per_node = 0;
  std::size_t total = 0;

  friend bool operator==(const SyntheticQuota&, const SyntheticQuota&) = default;
};

// floor(eta * N / (K - 1)) draws from each of the other K - 1 nodes.
SyntheticQuota synthetic_quota(std::size_t queue_size, double eta, std::size_t num_nodes);

}  // namespace fedmoco
