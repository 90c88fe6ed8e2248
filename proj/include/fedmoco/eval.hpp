#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedmoco/nn.hpp"

namespace fedmoco {

struct ProbeConfig {
  std::size_t epochs = 50;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct FineTuneConfig {
  std::size_t epochs = 100;
  double learning_rate = 0.01;
  double sgd_momentum = 0.9;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

// Class-indexed fields follow the order of `class_ids`.
struct ClassificationReport {
  std::vector<int> class_ids;  // sorted distinct labels of train and test
  std::size_t num_classes = 0;
  double accuracy = 0.0;             // after the final epoch
  double best_epoch_accuracy = 0.0;  // max over epochs (model selection on test)
  std::size_t best_epoch = 0;
  std::vector<std::optional<double>> per_class_accuracy;  // empty when no test samples
  std::vector<std::vector<std::size_t>> confusion;         // [true][predicted]
  std::vector<int> missing_from_train;                     // classes seen only in test
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

// Multinomial logistic regression over weights (C x d) and biases (C).
class LinearClassifier {
 public:
  LinearClassifier(std::size_t num_classes, std::size_t dim);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t dim() const { return dim_; }

  std::vector<double> logits(std::span<const double> x) const;
  int predict(std::span<const double> x) const;

  // Cross-entropy gradient for one sample; accumulates into the buffers
  // and returns dL/dx.
  std::vector<double> accumulate_gradient(std::span<const double> x, int label,
                                          std::vector<double>& grad_w,
                                          std::vector<double>& grad_b) const;

  std::vector<double>& weights() { return weights_; }
  std::vector<double>& biases() { return biases_; }

 private:
  std::size_t num_classes_;
  std::size_t dim_;
  std::vector<double> weights_;
  std::vector<double> biases_;
};

// Frozen-encoder evaluation: features are extracted once and a linear
// classifier is trained on top with constant-rate minibatch SGD.
ClassificationReport linear_probe(const EncoderParams& encoder, std::span<const ImageSample> train,
                                  std::span<const ImageSample> test, const ProbeConfig& config);

// Indices of a per-class subsample of floor(fraction * n_c) items.
// Throws ArgumentError if any class would get no sample.
std::vector<std::size_t> stratified_subsample(std::span<const ImageSample> labelled,
                                              double fraction, std::uint64_t seed);

// End-to-end training of a copy of the encoder plus a linear head on a
// stratified fraction of `train`.
ClassificationReport fine_tune(const EncoderParams& encoder, double train_fraction,
                               std::span<const ImageSample> train,
                               std::span<const ImageSample> test, const FineTuneConfig& config);

}  // namespace fedmoco
