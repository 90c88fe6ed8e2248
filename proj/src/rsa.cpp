#include "fedmoco/rsa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedmoco/errors.hpp"

namespace fedmoco {

std::vector<double> Rdm::lower_triangle() const {
  std::vector<double> out;
  out.reserve(n_ * (n_ > 0 ? n_ - 1 : 0) / 2);
  for (std::size_t i = 1; i < n_; ++i)
    for (std::size_t j = 0; j < i; ++j) out.push_back((*this)(i, j));
  return out;
}

double pearson(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ArgumentError("pearson: length mismatch");
  if (u.empty()) return 0.0;
  const double n = static_cast<double>(u.size());
  const double mean_u = std::accumulate(u.begin(), u.end(), 0.0) / n;
  const double mean_v = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double cov = 0.0, var_u = 0.0, var_v = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double du = u[i] - mean_u;
    const double dv = v[i] - mean_v;
    cov += du * dv;
    var_u += du * du;
    var_v += dv * dv;
  }
  if (var_u == 0.0 || var_v == 0.0) return 0.0;
  return std::clamp(cov / std::sqrt(var_u * var_v), -1.0, 1.0);
}

Rdm compute_rdm(std::span<const FeatureVector> features) {
  if (features.size() < 3) throw ArgumentError("an RDM needs at least three samples");
  const std::size_t n = features.size();
  Rdm rdm(n);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double value = 1.0 - pearson(features[i].values(), features[j].values());
      rdm(i, j) = value;
      rdm(j, i) = value;
    }
  }
  return rdm;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 share ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

namespace {

bool has_ties(std::span<const double> ranks) {
  std::vector<double> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

}  // namespace

double spearman(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ArgumentError("spearman: length mismatch");
  if (u.size() < 2) throw ArgumentError("spearman needs at least two observations");
  const auto ru = average_ranks(u);
  const auto rv = average_ranks(v);
  if (has_ties(ru) || has_ties(rv)) return pearson(ru, rv);

  const double n = static_cast<double>(u.size());
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < ru.size(); ++i) {
    const double d = ru[i] - rv[i];
    sum_sq += d * d;
  }
  return std::clamp(1.0 - 6.0 * sum_sq / (n * (n * n - 1.0)), -1.0, 1.0);
}

double rsa_score(const EncoderParams& theta_prev, const EncoderParams& theta_k,
                 std::span<const ImageSample> probe) {
  if (probe.size() < 3) throw ArgumentError("RSA probe needs at least three images");
  const auto before = compute_rdm(forward_all(theta_prev, probe)).lower_triangle();
  const auto after = compute_rdm(forward_all(theta_k, probe)).lower_triangle();
  return spearman(before, after);
}

AggregationWeights::AggregationWeights(std::vector<double> weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw ArgumentError("aggregation weights are empty");
  for (double w : weights_)
    if (!(w >= 0.0)) throw ArgumentError("aggregation weights must be non-negative");
}

AggregationWeights self_adaptive_weights(std::span<const double> rsa_scores) {
  if (rsa_scores.empty()) throw ArgumentError("no RSA scores");
  double total = 0.0;
  for (double r : rsa_scores) {
    if (!(r >= -1.0 && r <= 1.0)) throw ArgumentError("RSA score outside [-1, 1]");
    total += 1.0 - r;
  }
  const std::size_t k = rsa_scores.size();
  std::vector<double> weights(k);
  if (total == 0.0) {
    std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(k));
  } else {
    for (std::size_t i = 0; i < k; ++i) weights[i] = (1.0 - rsa_scores[i]) / total;
  }
  return AggregationWeights(std::move(weights));
}

AggregationWeights fedavg_weights(std::span<const std::size_t> sample_counts) {
  if (sample_counts.empty()) throw ArgumentError("no sample counts");
  double total = 0.0;
  for (auto n : sample_counts) {
    if (n == 0) throw ArgumentError("sample counts must be positive");
    total += static_cast<double>(n);
  }
  std::vector<double> weights;
  weights.reserve(sample_counts.size());
  for (auto n : sample_counts) weights.push_back(static_cast<double>(n) / total);
  return AggregationWeights(std::move(weights));
}

EncoderParams aggregate(std::span<const EncoderParams> thetas, const AggregationWeights& weights) {
  if (thetas.empty()) throw ArgumentError("nothing to aggregate");
  if (thetas.size() != weights.size())
    throw ArgumentError("one weight per node model is required");
  EncoderParams out = EncoderParams::zeros(thetas.front().shapes());
  for (std::size_t k = 0; k < thetas.size(); ++k) out.axpy(weights[k], thetas[k]);
  return out;
}

}  // namespace fedmoco
