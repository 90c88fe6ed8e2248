#include "fedmoco/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fedmoco/errors.hpp"

namespace fedmoco {

namespace {

ImageSample flip_horizontal(const ImageSample& in) {
  ImageSample out = in;
  for (std::size_t r = 0; r < in.height; ++r)
    for (std::size_t c = 0; c < in.width; ++c) out.at(r, c) = in.at(r, in.width - 1 - c);
  return out;
}

// Rotation about the image centre; samples falling outside are zero.
ImageSample rotate(const ImageSample& in, double degrees) {
  ImageSample out = in;
  const double angle = degrees * std::numbers::pi / 180.0;
  const double cos_a = std::cos(angle);
  const double sin_a = std::sin(angle);
  const double cy = (static_cast<double>(in.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(in.width) - 1.0) / 2.0;
  for (std::size_t r = 0; r < in.height; ++r) {
    for (std::size_t c = 0; c < in.width; ++c) {
      const double dy = static_cast<double>(r) - cy;
      const double dx = static_cast<double>(c) - cx;
      // Inverse mapping from output to source coordinates.
      const double sy = cos_a * dy + sin_a * dx + cy;
      const double sx = -sin_a * dy + cos_a * dx + cx;
      const auto ry = static_cast<long>(std::lround(sy));
      const auto rx = static_cast<long>(std::lround(sx));
      const bool inside = ry >= 0 && rx >= 0 && ry < static_cast<long>(in.height) &&
                          rx < static_cast<long>(in.width);
      out.at(r, c) = inside ? in.at(static_cast<std::size_t>(ry), static_cast<std::size_t>(rx)) : 0.0;
    }
  }
  return out;
}

// Crops a (scale*H) x (scale*W) window at (top, left) and resizes it back
// to H x W with bilinear interpolation.
ImageSample crop_resize(const ImageSample& in, double scale, double top_frac, double left_frac) {
  ImageSample out = in;
  const double crop_h = scale * static_cast<double>(in.height);
  const double crop_w = scale * static_cast<double>(in.width);
  const double top = top_frac * (static_cast<double>(in.height) - crop_h);
  const double left = left_frac * (static_cast<double>(in.width) - crop_w);
  const auto max_r = static_cast<double>(in.height - 1);
  const auto max_c = static_cast<double>(in.width - 1);
  for (std::size_t r = 0; r < in.height; ++r) {
    for (std::size_t c = 0; c < in.width; ++c) {
      // Pixel centres of the output grid mapped into the crop window.
      const double sy = std::clamp(top + (static_cast<double>(r) + 0.5) * crop_h / static_cast<double>(in.height) - 0.5, 0.0, max_r);
      const double sx = std::clamp(left + (static_cast<double>(c) + 0.5) * crop_w / static_cast<double>(in.width) - 0.5, 0.0, max_c);
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t y1 = std::min(y0 + 1, in.height - 1);
      const std::size_t x1 = std::min(x0 + 1, in.width - 1);
      const double fy = sy - static_cast<double>(y0);
      const double fx = sx - static_cast<double>(x0);
      const double top_row = (1.0 - fx) * in.at(y0, x0) + fx * in.at(y0, x1);
      const double bottom_row = (1.0 - fx) * in.at(y1, x0) + fx * in.at(y1, x1);
      out.at(r, c) = (1.0 - fy) * top_row + fy * bottom_row;
    }
  }
  return out;
}

}  // namespace

ImageSample augment(const ImageSample& image, Rng& rng, const AugmentConfig& config) {
  // Every parameter is drawn up front so the stream consumption is fixed.
  const bool flip = rng.bernoulli(config.flip_prob);
  const double degrees = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  const double scale = rng.uniform(config.min_crop_scale, config.max_crop_scale);
  const double top_frac = rng.uniform();
  const double left_frac = rng.uniform();
  const double gamma = rng.uniform(config.min_gamma, config.max_gamma);

  ImageSample view = flip ? flip_horizontal(image) : image;
  view = rotate(view, degrees);
  view = crop_resize(view, scale, top_frac, left_frac);
  for (auto& p : view.pixels) p = std::pow(std::clamp(p, 0.0, 1.0), gamma);
  return view;
}

NegativeQueue::NegativeQueue(std::size_t capacity) : capacity_(capacity) { slots_.reserve(capacity); }

void NegativeQueue::push(FeatureVector key) {
  if (capacity_ == 0) return;
  if (size_ < capacity_) {
    slots_.push_back(std::move(key));
    ++size_;
  } else {
    slots_[next_] = std::move(key);
  }
  next_ = (next_ + 1) % capacity_;
}

void NegativeQueue::clear() {
  slots_.clear();
  size_ = 0;
  next_ = 0;
}

std::vector<FeatureVector> NegativeQueue::fifo_order() const {
  std::vector<FeatureVector> out;
  out.reserve(size_);
  const std::size_t start = size_ < capacity_ ? 0 : next_;
  for (std::size_t i = 0; i < size_; ++i) out.push_back(slots_[(start + i) % size_]);
  return out;
}

EncoderParams momentum_update(const EncoderParams& theta_d, const EncoderParams& theta_q, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw ArgumentError("key momentum must lie in [0, 1)");
  if (!theta_d.same_shape(theta_q)) throw ShapeError("query and key encoders differ in shape");
  if (m == 0.0) return theta_q;
  // Written as d + (1 - m)(q - d) so that d == q is an exact fixed point.
  EncoderParams out = theta_d;
  auto dst = out.values();
  const auto q = theta_q.values();
  const double step = 1.0 - m;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += step * (q[i] - dst[i]);
  return out;
}

void NodeTrainState::synchronize(const EncoderParams& theta) {
  theta_q = theta;
  theta_d = theta;
  velocity = EncoderParams::zeros(theta.shapes());
  queue.clear();
}

NodeTrainState make_node_state(const EncoderParams& theta, std::size_t queue_capacity,
                               std::uint64_t rng_seed) {
  NodeTrainState state{theta, theta, NegativeQueue(queue_capacity), rng_seed,
                       EncoderParams::zeros(theta.shapes())};
  return state;
}

double LocalUpdateResult::mean_loss() const {
  if (step_losses.empty()) return 0.0;
  return std::accumulate(step_losses.begin(), step_losses.end(), 0.0) /
         static_cast<double>(step_losses.size());
}

LocalUpdateResult local_update(NodeTrainState state, std::span<const ImageSample> shard,
                               std::span<const FeatureVector> synthetic_negatives,
                               const LocalHyperparams& hp) {
  if (shard.empty()) throw ArgumentError("local dataset shard is empty");
  if (hp.batch_size == 0) throw ArgumentError("batch size must be positive");
  if (!(hp.key_momentum >= 0.0 && hp.key_momentum < 1.0))
    throw ArgumentError("key momentum must lie in [0, 1)");
  if (!state.theta_q.same_shape(state.theta_d)) throw ShapeError("query and key encoders differ");
  if (state.velocity.empty()) state.velocity = EncoderParams::zeros(state.theta_q.shapes());

  Rng rng(state.rng_seed);
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_in_place(order, rng);

  LocalUpdateResult result;
  std::vector<ImageSample> queries;
  std::vector<FeatureVector> keys;
  for (std::size_t begin = 0; begin < order.size(); begin += hp.batch_size) {
    const std::size_t end = std::min(begin + hp.batch_size, order.size());
    queries.clear();
    keys.clear();
    for (std::size_t i = begin; i < end; ++i) {
      const auto& image = shard[order[i]];
      queries.push_back(augment(image, rng, hp.augment));
      keys.push_back(forward(state.theta_d, augment(image, rng, hp.augment)));
    }

    auto [loss, grad] = loss_and_grad(state.theta_q, queries, keys, state.queue.entries(),
                                      synthetic_negatives, hp.temperature);
    result.step_losses.push_back(loss);

    grad.axpy(hp.weight_decay, state.theta_q);
    state.velocity *= hp.sgd_momentum;
    state.velocity += grad;
    state.theta_q.axpy(-hp.learning_rate, state.velocity);

    state.theta_d = momentum_update(state.theta_d, state.theta_q, hp.key_momentum);
    for (auto& key : keys) state.queue.push(std::move(key));
  }
  state.rng_seed = rng.next_u64();
  result.state = std::move(state);
  return result;
}

}  // namespace fedmoco
