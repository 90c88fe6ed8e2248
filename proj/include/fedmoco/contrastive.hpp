#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedmoco/nn.hpp"
#include "fedmoco/rng.hpp"

namespace fedmoco {

// Ranges of the stochastic view transform. The contrast remap is a gamma
// curve standing in for randomized histogram equalization.
struct AugmentConfig {
  double flip_prob = 0.5;
  double max_rotation_deg = 15.0;
  double min_crop_scale = 0.7;
  double max_crop_scale = 1.0;
  double min_gamma = 0.7;
  double max_gamma = 1.4;
};

// Flip, rotate (nearest neighbour), crop-and-resize (bilinear) and gamma
// remap, each parameter drawn from `rng`. Output pixels are clamped to [0, 1].
ImageSample augment(const ImageSample& image, Rng& rng, const AugmentConfig& config = {});

// Fixed-capacity FIFO dictionary of key features.
class NegativeQueue {
 public:
  explicit NegativeQueue(std::size_t capacity = 0);

  // Appends a key, evicting the oldest one when full.
  void push(FeatureVector key);
  void clear();

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size_ == 0; }

  // Entries in storage order (not FIFO order); fine for the loss, which sums
  // over all of them.
  std::span<const FeatureVector> entries() const { return {slots_.data(), size_}; }

  // Oldest first.
  std::vector<FeatureVector> fifo_order() const;

 private:
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t next_ = 0;
  std::vector<FeatureVector> slots_;
};

// theta_d <- m * theta_d + (1 - m) * theta_q, with m in [0, 1).
EncoderParams momentum_update(const EncoderParams& theta_d, const EncoderParams& theta_q, double m);

struct NodeTrainState {
  EncoderParams theta_q;
  EncoderParams theta_d;
  NegativeQueue queue;
  std::uint64_t rng_seed = 0;
  EncoderParams velocity;  // SGD momentum buffer for theta_q

  // Both encoders set to `theta`, queue flushed, momentum buffer zeroed.
  void synchronize(const EncoderParams& theta);
};

NodeTrainState make_node_state(const EncoderParams& theta, std::size_t queue_capacity,
                               std::uint64_t rng_seed);

struct LocalHyperparams {
  std::size_t batch_size = 64;
  double key_momentum = 0.999;
  double temperature = 0.2;
  double learning_rate = 0.03;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  AugmentConfig augment;
};

struct LocalUpdateResult {
  NodeTrainState state;
  std::vector<double> step_losses;

  double mean_loss() const;
};

// One pass over the shard in shuffled minibatches. Each step encodes view 1
// with theta_q and view 2 with theta_d, contrasts against the queue plus the
// synthetic negatives, takes an SGD-with-momentum step on theta_q, moves
// theta_d towards theta_q and enqueues the new keys.
LocalUpdateResult local_update(NodeTrainState state, std::span<const ImageSample> shard,
                               std::span<const FeatureVector> synthetic_negatives,
                               const LocalHyperparams& hyperparams);

}  // namespace fedmoco
