#include "fedmoco/metadata.hpp"

#include <cmath>

#include "fedmoco/errors.hpp"

namespace fedmoco {

double boxcox(double x, double lambda) {
  if (lambda == 0.0) {
    if (!(x > 0.0)) throw DomainError("log Box-Cox needs strictly positive input");
    return std::log(x);
  }
  if (!(x >= 0.0)) throw DomainError("Box-Cox needs non-negative input");
  return (std::pow(x, lambda) - 1.0) / lambda;
}

double inv_boxcox(double y, double lambda) {
  if (lambda == 0.0) return std::exp(y);
  const double base = std::max(lambda * y + 1.0, 0.0);
  return std::pow(base, 1.0 / lambda);
}

std::vector<double> boxcox(std::span<const double> x, double lambda) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = boxcox(x[i], lambda);
  return out;
}

std::vector<double> inv_boxcox(std::span<const double> y, double lambda) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = inv_boxcox(y[i], lambda);
  return out;
}

NodeMetadata compute_metadata(std::span<const FeatureVector> features, double lambda,
                              double jitter, int node_id, int round) {
  if (features.size() < 2) throw ArgumentError("metadata needs at least two feature vectors");
  const std::size_t d = features.front().size();
  for (const auto& z : features)
    if (z.size() != d) throw ShapeError("feature vectors differ in dimension");

  NodeMetadata meta;
  meta.node_id = node_id;
  meta.round = round;
  meta.lambda = lambda;
  meta.mu.assign(d, 0.0);
  meta.sigma.assign(d * d, 0.0);

  std::vector<std::vector<double>> ys;
  ys.reserve(features.size());
  for (const auto& z : features) ys.push_back(boxcox(z.values(), lambda));

  const double n = static_cast<double>(ys.size());
  for (const auto& y : ys)
    for (std::size_t i = 0; i < d; ++i) meta.mu[i] += y[i];
  for (auto& m : meta.mu) m /= n;

  std::vector<double> centered(d);
  for (const auto& y : ys) {
    for (std::size_t i = 0; i < d; ++i) centered[i] = y[i] - meta.mu[i];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) meta.sigma[i * d + j] += centered[i] * centered[j];
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = meta.sigma[i * d + j] / (n - 1.0);
      meta.sigma[i * d + j] = v;
      meta.sigma[j * d + i] = v;
    }
    meta.sigma[i * d + i] += jitter;
  }
  return meta;
}

std::vector<double> cholesky_psd(std::span<const double> a, std::size_t n) {
  if (a.size() != n * n) throw ShapeError("covariance is not n x n");
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= l[j * n + k] * l[j * n + k];
    if (!(diag > 0.0)) continue;  // rank deficient direction
    const double root = std::sqrt(diag);
    l[j * n + j] = root;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = v / root;
    }
  }
  return l;
}

std::vector<std::vector<double>> sample_gaussian(std::span<const double> mu,
                                                 std::span<const double> sigma, std::size_t count,
                                                 Rng& rng) {
  const std::size_t d = mu.size();
  const auto chol = cholesky_psd(sigma, d);
  std::vector<std::vector<double>> out;
  out.reserve(count);
  std::vector<double> eps(d);
  for (std::size_t s = 0; s < count; ++s) {
    for (auto& e : eps) e = rng.normal();
    std::vector<double> y(mu.begin(), mu.end());
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k <= i; ++k) y[i] += chol[i * d + k] * eps[k];
    out.push_back(std::move(y));
  }
  return out;
}

std::vector<FeatureVector> sample_synthetic(const NodeMetadata& metadata, std::size_t count,
                                            Rng& rng) {
  std::vector<FeatureVector> out;
  if (count == 0) return out;
  out.reserve(count);
  for (auto& y : sample_gaussian(metadata.mu, metadata.sigma, count, rng))
    out.push_back(FeatureVector::from_activations(inv_boxcox(y, metadata.lambda)));
  return out;
}

SyntheticQuota synthetic_quota(std::size_t queue_size, double eta, std::size_t num_nodes) {
  if (num_nodes == 0) throw ArgumentError("need at least one node");
  if (!(eta >= 0.0)) throw ArgumentError("eta must be non-negative");
  if (num_nodes == 1 || eta == 0.0) return {};
  const auto others = static_cast<double>(num_nodes - 1);
  const auto per_node = static_cast<std::size_t>(std::floor(eta * static_cast<double>(queue_size) / others));
  return {per_node, per_node * (num_nodes - 1)};
}

}  // namespace fedmoco
