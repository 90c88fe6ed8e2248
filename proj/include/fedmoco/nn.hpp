#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fedmoco {

// One fully connected layer: `rows` outputs, `cols` inputs, weights stored
// row-major and followed by `rows` biases when has_bias is set.
struct LayerShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool has_bias = true;

  std::size_t param_count() const { return rows * cols + (has_bias ? rows : 0); }
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

// Throws ConfigError unless every layer is non-empty and consecutive layers chain.
void validate_shapes(std::span<const LayerShape> shapes);

// {256, 64, 32} -> two layers 256->64 and 64->32, all with bias.
std::vector<LayerShape> mlp_shapes(std::span<const std::size_t> widths);

// Flat parameter vector of an encoder together with its layer manifest.
// Values with equal shapes form a vector space; aggregation and the
// momentum update are written in terms of the arithmetic below.
class EncoderParams {
 public:
  EncoderParams() = default;
  EncoderParams(std::vector<LayerShape> shapes, std::vector<double> values);

  static EncoderParams zeros(std::vector<LayerShape> shapes);

  const std::vector<LayerShape>& shapes() const { return shapes_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t input_dim() const;
  std::size_t feature_dim() const;
  std::size_t layer_offset(std::size_t layer) const;

  bool same_shape(const EncoderParams& other) const { return shapes_ == other.shapes_; }

  // this += scale * other
  void axpy(double scale, const EncoderParams& other);
  EncoderParams& operator+=(const EncoderParams& other);
  EncoderParams& operator*=(double scale);

  // Exact (bitwise for finite values) equality of manifest and values.
  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;

 private:
  std::vector<LayerShape> shapes_;
  std::vector<double> values_;
};

// Non-negative, L2-normalized embedding. The only way to build one is through
// the feature head, so every instance is either unit-norm or exactly zero.
class FeatureVector {
 public:
  FeatureVector() = default;

  // ReLU followed by L2 normalization; the zero vector maps to itself.
  static FeatureVector from_activations(std::vector<double> activations);

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double dot(const FeatureVector& other) const;
  bool is_zero() const;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<double> values_;
};

// Grayscale image with pixels in [0, 1], row-major. Labels are only kept on
// evaluation data.
struct ImageSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  std::optional<int> label;

  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  std::size_t size() const { return pixels.size(); }
};

ImageSample make_image(std::size_t height, std::size_t width, double fill = 0.0);

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
EncoderParams init_params(const std::vector<LayerShape>& shapes, std::uint64_t seed);

// Intermediate values kept for reverse mode.
struct ForwardTrace {
  std::vector<std::vector<double>> layer_inputs;
  std::vector<std::vector<double>> preactivations;
  double head_norm = 0.0;
  FeatureVector output;
};

ForwardTrace forward_trace(const EncoderParams& params, std::span<const double> input);
FeatureVector forward(const EncoderParams& params, std::span<const double> input);
FeatureVector forward(const EncoderParams& params, const ImageSample& image);
std::vector<FeatureVector> forward_all(const EncoderParams& params,
                                       std::span<const ImageSample> images);

// Accumulates dL/dparams into `grad` given dL/dz for the traced input.
// Returns dL/dinput.
std::vector<double> backward(const EncoderParams& params, const ForwardTrace& trace,
                             std::span<const double> grad_output, EncoderParams& grad);

struct LossAndGrad {
  double loss = 0.0;
  EncoderParams grad;
};

// Mean InfoNCE loss over the query batch. Query i is contrasted against its
// positive key, every dictionary negative and every synthetic negative.
// Keys and synthetic negatives are constants: only params_q gets a gradient.
LossAndGrad loss_and_grad(const EncoderParams& params_q, std::span<const ImageSample> query_views,
                          std::span<const FeatureVector> positives,
                          std::span<const FeatureVector> negatives,
                          std::span<const FeatureVector> synthetic_negatives, double temperature);

// Per-query loss given an already computed query feature.
double info_nce(const FeatureVector& query, const FeatureVector& positive,
                std::span<const FeatureVector> negatives,
                std::span<const FeatureVector> synthetic_negatives, double temperature);

}  // namespace fedmoco
