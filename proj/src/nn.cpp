#include "fedmoco/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedmoco/errors.hpp"
#include "fedmoco/rng.hpp"

namespace fedmoco {

void validate_shapes(std::span<const LayerShape> shapes) {
  if (shapes.empty()) throw ConfigError("encoder needs at least one layer");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].rows == 0 || shapes[i].cols == 0)
      throw ConfigError("layer " + std::to_string(i) + " has a zero dimension");
    if (i > 0 && shapes[i].cols != shapes[i - 1].rows)
      throw ConfigError("layer " + std::to_string(i) + " expects " +
                        std::to_string(shapes[i].cols) + " inputs but layer " +
                        std::to_string(i - 1) + " produces " + std::to_string(shapes[i - 1].rows));
  }
}

std::vector<LayerShape> mlp_shapes(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw ConfigError("an MLP needs an input and an output width");
  std::vector<LayerShape> shapes;
  for (std::size_t i = 1; i < widths.size(); ++i) shapes.push_back({widths[i], widths[i - 1], true});
  validate_shapes(shapes);
  return shapes;
}

namespace {

std::size_t total_params(std::span<const LayerShape> shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) n += s.param_count();
  return n;
}

void require_same_shape(const EncoderParams& a, const EncoderParams& b) {
  if (!a.same_shape(b)) throw ShapeError("encoder parameter manifests differ");
}

}  // namespace

EncoderParams::EncoderParams(std::vector<LayerShape> shapes, std::vector<double> values)
    : shapes_(std::move(shapes)), values_(std::move(values)) {
  validate_shapes(shapes_);
  if (values_.size() != total_params(shapes_))
    throw ShapeError("parameter vector has " + std::to_string(values_.size()) +
                     " values, manifest implies " + std::to_string(total_params(shapes_)));
}

EncoderParams EncoderParams::zeros(std::vector<LayerShape> shapes) {
  validate_shapes(shapes);
  const auto n = total_params(shapes);
  return EncoderParams(std::move(shapes), std::vector<double>(n, 0.0));
}

std::size_t EncoderParams::input_dim() const { return shapes_.empty() ? 0 : shapes_.front().cols; }

std::size_t EncoderParams::feature_dim() const { return shapes_.empty() ? 0 : shapes_.back().rows; }

std::size_t EncoderParams::layer_offset(std::size_t layer) const {
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layer; ++i) offset += shapes_[i].param_count();
  return offset;
}

void EncoderParams::axpy(double scale, const EncoderParams& other) {
  require_same_shape(*this, other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

EncoderParams& EncoderParams::operator+=(const EncoderParams& other) {
  require_same_shape(*this, other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

EncoderParams& EncoderParams::operator*=(double scale) {
  for (auto& v : values_) v *= scale;
  return *this;
}

FeatureVector FeatureVector::from_activations(std::vector<double> activations) {
  double sq = 0.0;
  for (auto& a : activations) {
    a = std::max(a, 0.0);
    sq += a * a;
  }
  FeatureVector z;
  if (sq > 0.0) {
    const double norm = std::sqrt(sq);
    for (auto& a : activations) a /= norm;
  }
  z.values_ = std::move(activations);
  return z;
}

double FeatureVector::dot(const FeatureVector& other) const {
  if (other.size() != size()) throw ShapeError("feature dimensions differ");
  return std::inner_product(values_.begin(), values_.end(), other.values_.begin(), 0.0);
}

bool FeatureVector::is_zero() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

ImageSample make_image(std::size_t height, std::size_t width, double fill) {
  return ImageSample{height, width, std::vector<double>(height * width, fill), std::nullopt};
}

EncoderParams init_params(const std::vector<LayerShape>& shapes, std::uint64_t seed) {
  auto params = EncoderParams::zeros(shapes);
  Rng rng(seed);
  auto values = params.values();
  std::size_t offset = 0;
  for (const auto& layer : shapes) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.cols));
    for (std::size_t i = 0; i < layer.param_count(); ++i)
      values[offset + i] = rng.uniform(-bound, bound);
    offset += layer.param_count();
  }
  return params;
}

ForwardTrace forward_trace(const EncoderParams& params, std::span<const double> input) {
  if (params.empty()) throw ShapeError("encoder has no parameters");
  if (input.size() != params.input_dim())
    throw ShapeError("input has " + std::to_string(input.size()) + " values, encoder expects " +
                     std::to_string(params.input_dim()));
  ForwardTrace trace;
  const auto& shapes = params.shapes();
  const auto values = params.values();
  trace.layer_inputs.reserve(shapes.size());
  trace.preactivations.reserve(shapes.size());

  std::vector<double> x(input.begin(), input.end());
  std::size_t offset = 0;
  for (const auto& layer : shapes) {
    const double* w = values.data() + offset;
    const double* b = layer.has_bias ? w + layer.rows * layer.cols : nullptr;
    std::vector<double> pre(layer.rows);
    for (std::size_t r = 0; r < layer.rows; ++r) {
      const double* row = w + r * layer.cols;
      double acc = b ? b[r] : 0.0;
      for (std::size_t c = 0; c < layer.cols; ++c) acc += row[c] * x[c];
      pre[r] = acc;
    }
    trace.layer_inputs.push_back(std::move(x));
    x.resize(layer.rows);
    for (std::size_t r = 0; r < layer.rows; ++r) x[r] = std::max(pre[r], 0.0);
    trace.preactivations.push_back(std::move(pre));
    offset += layer.param_count();
  }
  double sq = 0.0;
  for (double v : x) sq += v * v;
  trace.head_norm = std::sqrt(sq);
  trace.output = FeatureVector::from_activations(std::move(x));
  return trace;
}

FeatureVector forward(const EncoderParams& params, std::span<const double> input) {
  return forward_trace(params, input).output;
}

FeatureVector forward(const EncoderParams& params, const ImageSample& image) {
  return forward(params, std::span<const double>(image.pixels));
}

std::vector<FeatureVector> forward_all(const EncoderParams& params,
                                       std::span<const ImageSample> images) {
  std::vector<FeatureVector> out;
  out.reserve(images.size());
  for (const auto& image : images) out.push_back(forward(params, image));
  return out;
}

std::vector<double> backward(const EncoderParams& params, const ForwardTrace& trace,
                             std::span<const double> grad_output, EncoderParams& grad) {
  if (!grad.same_shape(params)) throw ShapeError("gradient buffer does not match encoder");
  const auto& shapes = params.shapes();
  const auto& z = trace.output;
  if (grad_output.size() != z.size()) throw ShapeError("output gradient has wrong dimension");

  // L2 normalization: dL/dh = (g - z (z.g)) / |h|; zero at the degenerate point.
  std::vector<double> delta(z.size(), 0.0);
  if (trace.head_norm > 0.0) {
    double zg = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) zg += z[i] * grad_output[i];
    for (std::size_t i = 0; i < z.size(); ++i)
      delta[i] = (grad_output[i] - z[i] * zg) / trace.head_norm;
  }

  const auto values = params.values();
  auto grad_values = grad.values();
  for (std::size_t li = shapes.size(); li-- > 0;) {
    const auto& layer = shapes[li];
    const auto& pre = trace.preactivations[li];
    const auto& x = trace.layer_inputs[li];
    const std::size_t offset = params.layer_offset(li);
    const double* w = values.data() + offset;
    double* gw = grad_values.data() + offset;
    double* gb = layer.has_bias ? gw + layer.rows * layer.cols : nullptr;

    std::vector<double> upstream(layer.cols, 0.0);
    for (std::size_t r = 0; r < layer.rows; ++r) {
      const double d = pre[r] > 0.0 ? delta[r] : 0.0;
      if (d == 0.0) continue;
      const double* row = w + r * layer.cols;
      double* grow = gw + r * layer.cols;
      for (std::size_t c = 0; c < layer.cols; ++c) {
        grow[c] += d * x[c];
        upstream[c] += d * row[c];
      }
      if (gb) gb[r] += d;
    }
    delta = std::move(upstream);
  }
  return delta;
}

namespace {

// Logits of one query against [positive, negatives..., synthetic...].
std::vector<double> query_logits(const FeatureVector& query, const FeatureVector& positive,
                                 std::span<const FeatureVector> negatives,
                                 std::span<const FeatureVector> synthetic, double temperature) {
  std::vector<double> logits;
  logits.reserve(1 + negatives.size() + synthetic.size());
  logits.push_back(query.dot(positive) / temperature);
  for (const auto& k : negatives) logits.push_back(query.dot(k) / temperature);
  for (const auto& k : synthetic) logits.push_back(query.dot(k) / temperature);
  return logits;
}

// Softmax in place; returns log-sum-exp.
double softmax_in_place(std::vector<double>& logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - peak);
    sum += l;
  }
  for (auto& l : logits) l /= sum;
  return peak + std::log(sum);
}

}  // namespace

double info_nce(const FeatureVector& query, const FeatureVector& positive,
                std::span<const FeatureVector> negatives,
                std::span<const FeatureVector> synthetic_negatives, double temperature) {
  if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");
  auto logits = query_logits(query, positive, negatives, synthetic_negatives, temperature);
  const double positive_logit = logits.front();
  return softmax_in_place(logits) - positive_logit;
}

LossAndGrad loss_and_grad(const EncoderParams& params_q, std::span<const ImageSample> query_views,
                          std::span<const FeatureVector> positives,
                          std::span<const FeatureVector> negatives,
                          std::span<const FeatureVector> synthetic_negatives, double temperature) {
  if (query_views.empty()) throw ArgumentError("contrastive batch is empty");
  if (positives.size() != query_views.size())
    throw ArgumentError("need exactly one positive key per query");
  if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");

  LossAndGrad out{0.0, EncoderParams::zeros(params_q.shapes())};
  const double batch = static_cast<double>(query_views.size());
  const std::size_t d = params_q.feature_dim();
  std::vector<double> grad_z(d);

  for (std::size_t q = 0; q < query_views.size(); ++q) {
    const auto trace = forward_trace(params_q, query_views[q].pixels);
    const auto& zq = trace.output;
    auto probs = query_logits(zq, positives[q], negatives, synthetic_negatives, temperature);
    const double positive_logit = probs.front();
    out.loss += softmax_in_place(probs) - positive_logit;

    // dL/dz_q = (sum_j p_j k_j - k_+) / tau, scaled by 1/batch for the mean.
    std::fill(grad_z.begin(), grad_z.end(), 0.0);
    auto accumulate = [&](const FeatureVector& key, double weight) {
      for (std::size_t i = 0; i < d; ++i) grad_z[i] += weight * key[i];
    };
    accumulate(positives[q], probs[0] - 1.0);
    std::size_t j = 1;
    for (const auto& k : negatives) accumulate(k, probs[j++]);
    for (const auto& k : synthetic_negatives) accumulate(k, probs[j++]);
    for (auto& g : grad_z) g /= temperature * batch;

    backward(params_q, trace, grad_z, out.grad);
  }
  out.loss /= batch;
  return out;
}

}  // namespace fedmoco
