#include "fedmoco/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "fedmoco/errors.hpp"
#include "fedmoco/rng.hpp"

namespace fedmoco {

namespace {

int label_of(const ImageSample& image) {
  if (!image.label) throw ArgumentError("evaluation image has no label");
  if (*image.label < 0) throw ArgumentError("negative class label");
  return *image.label;
}

// Sorted distinct labels of both splits; classifier outputs index into this.
std::vector<int> collect_classes(std::span<const ImageSample> train, std::span<const ImageSample> test) {
  std::vector<int> classes;
  for (const auto& image : train) classes.push_back(label_of(image));
  for (const auto& image : test) classes.push_back(label_of(image));
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  return classes;
}

int class_index(std::span<const int> classes, int label) {
  return static_cast<int>(std::lower_bound(classes.begin(), classes.end(), label) - classes.begin());
}

std::vector<int> classes_missing_from_train(std::span<const ImageSample> train,
                                            std::span<const ImageSample> test) {
  std::vector<bool> seen;
  for (const auto& image : train) {
    const auto c = static_cast<std::size_t>(label_of(image));
    if (seen.size() <= c) seen.resize(c + 1, false);
    seen[c] = true;
  }
  std::vector<int> missing;
  for (const auto& image : test) {
    const int c = label_of(image);
    const bool present = static_cast<std::size_t>(c) < seen.size() && seen[c];
    if (!present && std::find(missing.begin(), missing.end(), c) == missing.end())
      missing.push_back(c);
  }
  std::sort(missing.begin(), missing.end());
  return missing;
}

// Confusion matrix, accuracy and per-class accuracy from predictions.
void score(ClassificationReport& report, std::span<const int> truth,
           std::span<const int> predicted) {
  const std::size_t c = report.num_classes;
  report.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    report.confusion[truth[i]][predicted[i]] += 1;
    if (truth[i] == predicted[i]) ++correct;
  }
  report.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  report.per_class_accuracy.assign(c, std::nullopt);
  for (std::size_t k = 0; k < c; ++k) {
    const auto row = std::accumulate(report.confusion[k].begin(), report.confusion[k].end(), std::size_t{0});
    if (row > 0)
      report.per_class_accuracy[k] = static_cast<double>(report.confusion[k][k]) / static_cast<double>(row);
  }
}

double accuracy_of(std::span<const int> truth, std::span<const int> predicted) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == predicted[i] ? 1 : 0;
  return truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
}

void track_best(ClassificationReport& report, double accuracy, std::size_t epoch) {
  if (epoch == 1 || accuracy > report.best_epoch_accuracy) {
    report.best_epoch_accuracy = accuracy;
    report.best_epoch = epoch;
  }
}

}  // namespace

LinearClassifier::LinearClassifier(std::size_t num_classes, std::size_t dim)
    : num_classes_(num_classes), dim_(dim), weights_(num_classes * dim, 0.0), biases_(num_classes, 0.0) {
  if (num_classes == 0 || dim == 0) throw ArgumentError("classifier needs classes and inputs");
}

std::vector<double> LinearClassifier::logits(std::span<const double> x) const {
  if (x.size() != dim_) throw ShapeError("classifier input has wrong dimension");
  std::vector<double> out(biases_);
  for (std::size_t c = 0; c < num_classes_; ++c)
    for (std::size_t i = 0; i < dim_; ++i) out[c] += weights_[c * dim_ + i] * x[i];
  return out;
}

int LinearClassifier::predict(std::span<const double> x) const {
  const auto l = logits(x);
  return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
}

std::vector<double> LinearClassifier::accumulate_gradient(std::span<const double> x, int label,
                                                          std::vector<double>& grad_w,
                                                          std::vector<double>& grad_b) const {
  auto p = logits(x);
  const double peak = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (auto& v : p) {
    v = std::exp(v - peak);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  p[static_cast<std::size_t>(label)] -= 1.0;

  std::vector<double> grad_x(dim_, 0.0);
  for (std::size_t c = 0; c < num_classes_; ++c) {
    grad_b[c] += p[c];
    for (std::size_t i = 0; i < dim_; ++i) {
      grad_w[c * dim_ + i] += p[c] * x[i];
      grad_x[i] += p[c] * weights_[c * dim_ + i];
    }
  }
  return grad_x;
}

ClassificationReport linear_probe(const EncoderParams& encoder, std::span<const ImageSample> train,
                                  std::span<const ImageSample> test, const ProbeConfig& config) {
  if (train.empty() || test.empty()) throw ArgumentError("linear probe needs labelled train and test data");
  if (config.batch_size == 0) throw ArgumentError("probe batch size must be positive");

  ClassificationReport report;
  report.class_ids = collect_classes(train, test);
  report.num_classes = report.class_ids.size();
  report.missing_from_train = classes_missing_from_train(train, test);
  report.train_size = train.size();
  report.test_size = test.size();

  const auto train_features = forward_all(encoder, train);
  const auto test_features = forward_all(encoder, test);
  std::vector<int> train_labels, test_labels;
  for (const auto& image : train) train_labels.push_back(class_index(report.class_ids, label_of(image)));
  for (const auto& image : test) test_labels.push_back(class_index(report.class_ids, label_of(image)));

  LinearClassifier classifier(report.num_classes, encoder.feature_dim());
  std::vector<double> grad_w(classifier.weights().size());
  std::vector<double> grad_b(classifier.biases().size());
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(config.seed);
  std::vector<int> predicted(test.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      std::fill(grad_w.begin(), grad_w.end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (std::size_t i = begin; i < end; ++i)
        classifier.accumulate_gradient(train_features[order[i]].values(), train_labels[order[i]],
                                       grad_w, grad_b);
      const double step = config.learning_rate / static_cast<double>(end - begin);
      for (std::size_t i = 0; i < grad_w.size(); ++i) classifier.weights()[i] -= step * grad_w[i];
      for (std::size_t i = 0; i < grad_b.size(); ++i) classifier.biases()[i] -= step * grad_b[i];
    }
    for (std::size_t i = 0; i < test.size(); ++i) predicted[i] = classifier.predict(test_features[i].values());
    track_best(report, accuracy_of(test_labels, predicted), epoch);
  }
  if (config.epochs == 0)
    for (std::size_t i = 0; i < test.size(); ++i) predicted[i] = classifier.predict(test_features[i].values());
  score(report, test_labels, predicted);
  if (config.epochs == 0) report.best_epoch_accuracy = report.accuracy;
  return report;
}

std::vector<std::size_t> stratified_subsample(std::span<const ImageSample> labelled,
                                              double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("train fraction must lie in (0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labelled.size(); ++i) by_class[label_of(labelled[i])].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> picked;
  for (auto& [label, members] : by_class) {
    const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size()) + 1e-9));
    if (take == 0)
      throw ArgumentError("train fraction leaves class " + std::to_string(label) + " without samples");
    shuffle_in_place(members, rng);
    picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

ClassificationReport fine_tune(const EncoderParams& encoder, double train_fraction,
                               std::span<const ImageSample> train,
                               std::span<const ImageSample> test, const FineTuneConfig& config) {
  if (train.empty() || test.empty()) throw ArgumentError("fine-tuning needs labelled train and test data");
  if (config.batch_size == 0) throw ArgumentError("fine-tune batch size must be positive");
  const auto subset = stratified_subsample(train, train_fraction, derive_seed(config.seed, {1}));

  ClassificationReport report;
  report.class_ids = collect_classes(train, test);
  report.num_classes = report.class_ids.size();
  std::vector<ImageSample> chosen;
  for (auto i : subset) chosen.push_back(train[i]);
  report.missing_from_train = classes_missing_from_train(chosen, test);
  report.train_size = chosen.size();
  report.test_size = test.size();

  EncoderParams params = encoder;
  EncoderParams velocity = EncoderParams::zeros(encoder.shapes());
  LinearClassifier head(report.num_classes, encoder.feature_dim());
  std::vector<double> head_vw(head.weights().size(), 0.0), head_vb(head.biases().size(), 0.0);
  std::vector<double> grad_w(head.weights().size()), grad_b(head.biases().size());

  std::vector<int> test_labels;
  for (const auto& image : test) test_labels.push_back(class_index(report.class_ids, label_of(image)));
  std::vector<int> predicted(test.size());
  auto predict_all = [&] {
    for (std::size_t i = 0; i < test.size(); ++i) predicted[i] = head.predict(forward(params, test[i]).values());
  };

  std::vector<std::size_t> order(chosen.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(config.seed, {2}));
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      const double scale = 1.0 / static_cast<double>(end - begin);
      EncoderParams grad = EncoderParams::zeros(params.shapes());
      std::fill(grad_w.begin(), grad_w.end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& image = chosen[order[i]];
        const auto trace = forward_trace(params, image.pixels);
        auto grad_z = head.accumulate_gradient(trace.output.values(),
                                               class_index(report.class_ids, label_of(image)), grad_w, grad_b);
        backward(params, trace, grad_z, grad);
      }
      grad *= scale;
      velocity *= config.sgd_momentum;
      velocity += grad;
      params.axpy(-config.learning_rate, velocity);
      for (std::size_t i = 0; i < grad_w.size(); ++i) {
        head_vw[i] = config.sgd_momentum * head_vw[i] + scale * grad_w[i];
        head.weights()[i] -= config.learning_rate * head_vw[i];
      }
      for (std::size_t i = 0; i < grad_b.size(); ++i) {
        head_vb[i] = config.sgd_momentum * head_vb[i] + scale * grad_b[i];
        head.biases()[i] -= config.learning_rate * head_vb[i];
      }
    }
    predict_all();
    track_best(report, accuracy_of(test_labels, predicted), epoch);
  }
  if (config.epochs == 0) predict_all();
  score(report, test_labels, predicted);
  if (config.epochs == 0) report.best_epoch_accuracy = report.accuracy;
  return report;
}

}  // namespace fedmoco
