#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fedmoco/contrastive.hpp"
#include "fedmoco/datagen.hpp"
#include "fedmoco/errors.hpp"
#include "fedmoco/rng.hpp"

namespace fedmoco {
namespace {

ImageSample gradient_image(std::size_t h, std::size_t w) {
  auto img = make_image(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      img.at(r, c) = static_cast<double>(r * w + c + 1) / static_cast<double>(h * w + 1);
  return img;
}

// Feature whose only non-zero coordinate is `slot`, used as a queue sentinel.
FeatureVector sentinel(std::size_t slot, std::size_t dim = 8) {
  std::vector<double> v(dim, 0.0);
  v[slot % dim] = 1.0 + static_cast<double>(slot);
  return FeatureVector::from_activations(v);
}

std::vector<ImageSample> toy_shard(std::size_t n, std::uint64_t seed) {
  std::vector<ImageSample> shard;
  for (std::size_t i = 0; i < n; ++i) {
    auto img = render_shape(static_cast<int>(i % 4), site_profiles()[0], 8, 8, derive_seed(seed, {i}));
    img.label.reset();
    shard.push_back(std::move(img));
  }
  return shard;
}

std::vector<LayerShape> toy_shapes() {
  const std::size_t widths[] = {64, 32, 16};
  return mlp_shapes(widths);
}

TEST(Augment, SameSeedGivesSameView) {
  const auto img = gradient_image(16, 16);
  Rng a(99), b(99);
  EXPECT_EQ(augment(img, a).pixels, augment(img, b).pixels);
}

TEST(Augment, IndependentDrawsDiffer) {
  const auto img = gradient_image(16, 16);
  Rng rng(7);
  int differ = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto v1 = augment(img, rng);
    const auto v2 = augment(img, rng);
    if (v1.pixels != v2.pixels) ++differ;
  }
  EXPECT_GE(differ, 990);
}

TEST(Augment, ZeroImageIsFixedPoint) {
  const auto img = make_image(16, 16, 0.0);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto view = augment(img, rng);
    for (double p : view.pixels) EXPECT_EQ(p, 0.0);
  }
}

TEST(Augment, OutputStaysInUnitRangeAndShape) {
  const auto img = gradient_image(12, 10);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto view = augment(img, rng);
    ASSERT_EQ(view.height, 12u);
    ASSERT_EQ(view.width, 10u);
    for (double p : view.pixels) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
}

TEST(Augment, IdentityConfigReturnsInput) {
  AugmentConfig identity{0.0, 0.0, 1.0, 1.0, 1.0, 1.0};
  const auto img = gradient_image(16, 16);
  Rng rng(1);
  const auto view = augment(img, rng, identity);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(view.pixels[i], img.pixels[i], 1e-15);
}

TEST(MomentumUpdate, ZeroMomentumCopiesQuery) {
  const auto q = init_params(toy_shapes(), 1);
  const auto d = init_params(toy_shapes(), 2);
  EXPECT_EQ(momentum_update(d, q, 0.0), q);
}

TEST(MomentumUpdate, EqualEncodersAreFixed) {
  const auto q = init_params(toy_shapes(), 1);
  for (double m : {0.0, 0.5, 0.999}) EXPECT_EQ(momentum_update(q, q, m), q);
}

TEST(MomentumUpdate, DirectSubstitution) {
  const std::vector<LayerShape> shapes{{2, 3, true}};
  const auto d = EncoderParams::zeros(shapes);
  EncoderParams q(shapes, std::vector<double>(8, 1.0));
  const auto out = momentum_update(d, q, 0.999);
  for (double v : out.values()) EXPECT_NEAR(v, 0.001, 1e-15);
}

TEST(MomentumUpdate, RejectsMomentumOutsideRange) {
  const auto q = init_params(toy_shapes(), 1);
  EXPECT_THROW(momentum_update(q, q, 1.0), ArgumentError);
  EXPECT_THROW(momentum_update(q, q, -0.1), ArgumentError);
}

TEST(NegativeQueue, KeepsFifoOrderAndEvictsOldest) {
  NegativeQueue queue(4);
  for (std::size_t i = 0; i < 6; ++i) queue.push(sentinel(i));
  ASSERT_EQ(queue.size(), 4u);
  const auto order = queue.fifo_order();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(order[i], sentinel(i + 2));
}

TEST(NegativeQueue, SaturatesAfterCeilNOverBatch) {
  const std::size_t capacity = 10, batch = 3;
  NegativeQueue queue(capacity);
  std::size_t pushed = 0;
  const std::size_t batches = (capacity + batch - 1) / batch;
  for (std::size_t b = 0; b < batches; ++b)
    for (std::size_t i = 0; i < batch; ++i) queue.push(sentinel(pushed++));
  EXPECT_EQ(queue.size(), capacity);
  for (std::size_t b = 0; b < 5; ++b)
    for (std::size_t i = 0; i < batch; ++i) queue.push(sentinel(pushed++));
  EXPECT_EQ(queue.size(), capacity);
  EXPECT_EQ(queue.fifo_order().back(), sentinel(pushed - 1));
  EXPECT_EQ(queue.fifo_order().front(), sentinel(pushed - capacity));
}

TEST(NegativeQueue, ZeroCapacityStaysEmpty) {
  NegativeQueue queue(0);
  queue.push(sentinel(1));
  EXPECT_TRUE(queue.empty());
}

TEST(NodeTrainState, SynchronizeResetsEverything) {
  auto state = make_node_state(init_params(toy_shapes(), 1), 8, 5);
  state.queue.push(sentinel(0));
  state.velocity.values()[0] = 3.0;
  state.theta_d = init_params(toy_shapes(), 2);
  const auto theta = init_params(toy_shapes(), 3);
  state.synchronize(theta);
  EXPECT_EQ(state.theta_q, theta);
  EXPECT_EQ(state.theta_d, theta);
  EXPECT_TRUE(state.queue.empty());
  for (double v : state.velocity.values()) EXPECT_EQ(v, 0.0);
}

TEST(LocalUpdate, ZeroLearningRateStillMovesKeyEncoder) {
  auto state = make_node_state(init_params(toy_shapes(), 1), 32, 11);
  state.theta_d = init_params(toy_shapes(), 2);
  const auto theta_q = state.theta_q;
  const auto theta_d = state.theta_d;
  LocalHyperparams hp;
  hp.learning_rate = 0.0;
  hp.batch_size = 8;
  hp.key_momentum = 0.9;
  const auto shard = toy_shard(8, 1);
  const auto result = local_update(state, shard, {}, hp);
  EXPECT_EQ(result.state.theta_q, theta_q);
  EXPECT_EQ(result.state.theta_d, momentum_update(theta_d, theta_q, 0.9));
  EXPECT_EQ(result.state.queue.size(), 8u);
}

// One step written out from the MoCo update equations, used as the reference
// for a local update with no synthetic negatives.
TEST(LocalUpdate, EmptySyntheticMatchesPlainMocoStep) {
  const auto shard = toy_shard(6, 2);
  auto state = make_node_state(init_params(toy_shapes(), 4), 16, 21);
  for (std::size_t i = 0; i < 5; ++i) state.queue.push(forward(state.theta_q, shard[i]));
  LocalHyperparams hp;
  hp.batch_size = 6;
  hp.key_momentum = 0.99;

  Rng rng(state.rng_seed);
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_in_place(order, rng);
  std::vector<ImageSample> queries;
  std::vector<FeatureVector> keys;
  for (auto i : order) {
    queries.push_back(augment(shard[i], rng, hp.augment));
    keys.push_back(forward(state.theta_d, augment(shard[i], rng, hp.augment)));
  }
  const auto negatives = state.queue.fifo_order();
  const auto [loss, grad] = loss_and_grad(state.theta_q, queries, keys, negatives, {}, hp.temperature);
  EncoderParams expected_q = state.theta_q;
  const auto gq = grad.values();
  const auto q0 = state.theta_q.values();
  for (std::size_t i = 0; i < expected_q.size(); ++i)
    expected_q.values()[i] = q0[i] - hp.learning_rate * (gq[i] + hp.weight_decay * q0[i]);
  const auto expected_d = momentum_update(state.theta_d, expected_q, hp.key_momentum);

  const auto result = local_update(state, shard, {}, hp);
  ASSERT_EQ(result.step_losses.size(), 1u);
  EXPECT_NEAR(result.step_losses[0], loss, 1e-12);
  for (std::size_t i = 0; i < expected_q.size(); ++i) {
    EXPECT_NEAR(result.state.theta_q.values()[i], expected_q.values()[i], 1e-14);
    EXPECT_NEAR(result.state.theta_d.values()[i], expected_d.values()[i], 1e-14);
  }
  EXPECT_EQ(result.state.queue.size(), 11u);
}

TEST(LocalUpdate, KeysComeFromMomentumEncoder) {
  // With theta_d = 0 every key is the zero feature, so the queue fills with zeros.
  auto state = make_node_state(init_params(toy_shapes(), 1), 64, 3);
  state.theta_d = EncoderParams::zeros(toy_shapes());
  LocalHyperparams hp;
  hp.batch_size = 4;
  hp.key_momentum = 0.5;
  const auto shard = toy_shard(4, 3);
  const auto result = local_update(state, shard, {}, hp);
  ASSERT_EQ(result.state.queue.size(), 4u);
  for (const auto& key : result.state.queue.entries()) EXPECT_TRUE(key.is_zero());
}

TEST(LocalUpdate, IsDeterministic) {
  const auto shard = toy_shard(20, 4);
  const auto state = make_node_state(init_params(toy_shapes(), 9), 16, 77);
  LocalHyperparams hp;
  hp.batch_size = 8;
  const auto a = local_update(state, shard, {}, hp);
  const auto b = local_update(state, shard, {}, hp);
  EXPECT_EQ(a.state.theta_q, b.state.theta_q);
  EXPECT_EQ(a.state.theta_d, b.state.theta_d);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(a.state.rng_seed, b.state.rng_seed);
  EXPECT_NE(a.state.rng_seed, state.rng_seed);
}

TEST(LocalUpdate, StepLossDecreasesOnFixedShard) {
  // Median over 5 seeds of (loss at step 1) - (loss at step 50). The queue is
  // primed with keys of the shard so that step 1 already has negatives.
  const auto shard = toy_shard(64, 5);
  std::vector<double> improvements;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto state = make_node_state(init_params(toy_shapes(), seed), 64, seed + 100);
    Rng prime(seed);
    for (const auto& image : shard) state.queue.push(forward(state.theta_d, augment(image, prime)));
    LocalHyperparams hp;
    hp.batch_size = 16;
    std::vector<double> losses;
    while (losses.size() < 50) {
      auto result = local_update(std::move(state), shard, {}, hp);
      losses.insert(losses.end(), result.step_losses.begin(), result.step_losses.end());
      state = std::move(result.state);
    }
    improvements.push_back(losses[0] - losses[49]);
  }
  std::sort(improvements.begin(), improvements.end());
  EXPECT_GT(improvements[2], 0.0);
}

TEST(LocalUpdate, RejectsEmptyShard) {
  const auto state = make_node_state(init_params(toy_shapes(), 1), 4, 1);
  EXPECT_THROW(local_update(state, {}, {}, LocalHyperparams{}), ArgumentError);
}

}  // namespace
}  // namespace fedmoco
