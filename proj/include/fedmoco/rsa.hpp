#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedmoco/nn.hpp"

namespace fedmoco {

// Representation dissimilarity matrix: entry (i, j) is one minus the Pearson
// correlation of features i and j across their coordinates.
class Rdm {
 public:
  Rdm() = default;
  explicit Rdm(std::size_t n) : n_(n), entries_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return entries_[i * n_ + j]; }

  // Strictly lower triangle, row by row: (1,0), (2,0), (2,1), ...
  std::vector<double> lower_triangle() const;

 private:
  std::size_t n_ = 0;
  std::vector<double> entries_;
};

// Pearson correlation; 0 when either side is constant.
double pearson(std::span<const double> u, std::span<const double> v);

Rdm compute_rdm(std::span<const FeatureVector> features);

// 1-based ranks; tied values share the average of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

// Spearman rank correlation. Without ties this is 1 - 6 sum d^2 / (n (n^2 - 1));
// with ties it is the Pearson correlation of the average ranks.
double spearman(std::span<const double> u, std::span<const double> v);

// Rank correlation between the RDMs of the previous global encoder and a
// locally updated one on the same probe images.
double rsa_score(const EncoderParams& theta_prev, const EncoderParams& theta_k,
                 std::span<const ImageSample> probe);

// Simplex weights over K nodes.
class AggregationWeights {
 public:
  AggregationWeights() = default;
  explicit AggregationWeights(std::vector<double> weights);

  std::span<const double> values() const { return weights_; }
  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t k) const { return weights_[k]; }

  friend bool operator==(const AggregationWeights&, const AggregationWeights&) = default;

 private:
  std::vector<double> weights_;
};

// a_k proportional to 1 - r_k; uniform when every r_k == 1.
AggregationWeights self_adaptive_weights(std::span<const double> rsa_scores);

// a_k = n_k / sum n_j.
AggregationWeights fedavg_weights(std::span<const std::size_t> sample_counts);

EncoderParams aggregate(std::span<const EncoderParams> thetas, const AggregationWeights& weights);

}  // namespace fedmoco
