#include <numeric>

#include <gtest/gtest.h>

#include "fedmoco/errors.hpp"
#include "fedmoco/experiment.hpp"
#include "fedmoco/federation.hpp"

namespace fedmoco {
namespace {

ExperimentConfig tiny(std::size_t nodes = 3) {
  ExperimentConfig c;
  c.num_nodes = nodes;
  c.rounds = 4;
  c.warmup_rounds = 2;
  c.queue_size = 32;
  c.eta = 0.25;
  c.key_momentum = 0.99;
  c.batch_size = 8;
  c.encoder_widths = {64, 16, 8};
  c.probe_size = 12;
  c.lr.milestones = {{3, 0.1}};
  c.scenario.base_size = 24;
  c.scenario.height = 8;
  c.scenario.width = 8;
  c.scenario.eval_size = 20;
  c.seed = 5;
  return c;
}

std::size_t count_kind(const MessageLog& log, MessageKind kind, int round) {
  std::size_t n = 0;
  for (const auto& r : log)
    if (r.kind == kind && r.round == round) ++n;
  return n;
}

TEST(LrSchedule, DropsAfterMilestoneRounds) {
  LrSchedule lr;
  EXPECT_DOUBLE_EQ(lr.at(1), 0.03);
  EXPECT_DOUBLE_EQ(lr.at(120), 0.03);
  EXPECT_DOUBLE_EQ(lr.at(121), 0.003);
  EXPECT_DOUBLE_EQ(lr.at(161), 0.0003);
}

TEST(Training, WarmupRoundsCarryNoMetadata) {
  const auto result = run_training(tiny());
  for (int t = 1; t <= 2; ++t) {
    EXPECT_EQ(count_kind(result.message_log, MessageKind::metadata_up, t), 0u);
    EXPECT_EQ(count_kind(result.message_log, MessageKind::metadata_down, t), 0u);
    EXPECT_FALSE(result.metrics[t - 1].metadata_round);
  }
  for (int t = 3; t <= 4; ++t) {
    EXPECT_EQ(count_kind(result.message_log, MessageKind::metadata_up, t), 3u);
    EXPECT_EQ(count_kind(result.message_log, MessageKind::metadata_down, t), 3u);
  }
}

TEST(Training, FirstMetadataRoundHasEmptyStore) {
  // Metadata gathered in round t is only served in round t + 1.
  const auto result = run_training(tiny());
  for (const auto& r : result.message_log) {
    if (r.kind != MessageKind::metadata_down) continue;
    if (r.round == 3) {
      EXPECT_EQ(r.payload_values, 0u);
    } else {
      EXPECT_GT(r.payload_values, 0u);
    }
  }
  EXPECT_EQ(result.metrics[2].synthetic_negatives, (std::vector<std::size_t>{0, 0, 0}));
  // quota: floor(0.25 * 32 / 2) = 4 from each of the 2 other nodes
  EXPECT_EQ(result.metrics[3].synthetic_negatives, (std::vector<std::size_t>{8, 8, 8}));
}

TEST(Training, LogOrderIsPhaseThenNode) {
  const auto result = run_training(tiny());
  std::vector<MessageKind> round4;
  std::vector<int> nodes;
  for (const auto& r : result.message_log)
    if (r.round == 4) {
      round4.push_back(r.kind);
      nodes.push_back(r.kind == MessageKind::params_down || r.kind == MessageKind::metadata_down ? r.receiver : r.sender);
    }
  const std::vector<MessageKind> phases{MessageKind::params_down, MessageKind::metadata_down,
                                        MessageKind::metadata_up, MessageKind::params_up};
  ASSERT_EQ(round4.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(round4[i], phases[i / 3]);
    EXPECT_EQ(nodes[i], static_cast<int>(i % 3));
  }
}

TEST(Training, ParamsDownCarriesPreviousAggregate) {
  const auto result = run_training(tiny());
  for (const auto& r : result.message_log)
    if (r.kind == MessageKind::params_down && r.round > 1) {
      EXPECT_EQ(r.payload_digest, result.metrics[r.round - 2].theta_digest);
    }
}

TEST(Training, SingleNodeTracksLocalMocoUpdates) {
  auto config = tiny(1);
  const auto result = run_training(config, true);
  const auto datasets = training_datasets(config);
  const auto data = strip_labels(datasets[0]);
  // Seed label of the per-round local stream used by the trainer.
  constexpr std::uint64_t kLocalStream = 1;
  auto theta = initial_params(config);
  for (int t = 1; t <= config.rounds; ++t) {
    auto state = make_node_state(theta, config.queue_size, 0);
    state.rng_seed = derive_seed(config.node_seed(0), {static_cast<std::uint64_t>(t), kLocalStream});
    LocalHyperparams hp;
    hp.batch_size = config.batch_size;
    hp.key_momentum = config.key_momentum;
    hp.temperature = config.temperature;
    hp.learning_rate = config.lr.at(t);
    theta = local_update(state, data, {}, hp).state.theta_q;
    EXPECT_EQ(result.metrics[t - 1].weights, (std::vector<double>{1.0}));
    ASSERT_EQ(result.round_thetas[t - 1], theta) << "round " << t;
  }
}

TEST(Training, OracleArmTrainsOnPooledData) {
  const auto config = apply_arm(tiny(), "Oracle");
  EXPECT_EQ(config.training_nodes(), 1u);
  const auto result = run_training(config);
  EXPECT_EQ(count_kind(result.message_log, MessageKind::params_up, 1), 1u);
  auto k1 = config;
  k1.centralized = false;
  k1.num_nodes = 1;
  const auto manual = run_training(k1, training_datasets(config));
  EXPECT_EQ(manual.theta0, result.theta0);
}

TEST(Training, AggregationModesShareFirstRoundLocalUpdates) {
  auto a = apply_arm(tiny(), "FedAvg");
  auto b = apply_arm(tiny(), "FedMoCo-S");
  const auto ra = run_training(a, true);
  const auto rb = run_training(b, true);
  std::vector<std::string> ups_a, ups_b;
  for (const auto& r : ra.message_log)
    if (r.kind == MessageKind::params_up && r.round == 1) ups_a.push_back(r.payload_digest);
  for (const auto& r : rb.message_log)
    if (r.kind == MessageKind::params_up && r.round == 1) ups_b.push_back(r.payload_digest);
  EXPECT_EQ(ups_a, ups_b);
  if (ra.metrics[0].weights == rb.metrics[0].weights)
    EXPECT_EQ(ra.round_thetas[0], rb.round_thetas[0]);
  else
    EXPECT_NE(ra.round_thetas[0], rb.round_thetas[0]);
}

TEST(Training, ZeroEtaFedAvgMatchesFedAvgArm) {
  auto base = apply_arm(tiny(), "FedMoCo");
  base.eta = 0.0;
  base.aggregation = AggregationMode::fedavg;
  const auto fedmoco = run_training(base, true);
  const auto fedavg = run_training(apply_arm(tiny(), "FedAvg"), true);
  ASSERT_EQ(fedmoco.round_thetas.size(), fedavg.round_thetas.size());
  for (std::size_t t = 0; t < fedavg.round_thetas.size(); ++t)
    EXPECT_EQ(fedmoco.round_thetas[t], fedavg.round_thetas[t]) << "round " << t + 1;
}

TEST(Training, ZeroRoundsReturnInitialParams) {
  auto config = tiny();
  config.rounds = 0;
  config.warmup_rounds = 0;
  const auto result = run_training(config);
  EXPECT_EQ(result.theta0, initial_params(config));
  EXPECT_TRUE(result.message_log.empty());
}

TEST(Training, IsDeterministic) {
  const auto a = run_training(tiny());
  const auto b = run_training(tiny());
  EXPECT_EQ(a.theta0, b.theta0);
  EXPECT_EQ(a.message_log, b.message_log);
  for (std::size_t t = 0; t < a.metrics.size(); ++t) {
    EXPECT_EQ(a.metrics[t].node_loss, b.metrics[t].node_loss);
    EXPECT_EQ(a.metrics[t].rsa_scores, b.metrics[t].rsa_scores);
    EXPECT_EQ(a.metrics[t].theta_digest, b.metrics[t].theta_digest);
  }
}

TEST(Training, ParallelNodesMatchSequential) {
  auto parallel = tiny();
  parallel.parallel_nodes = true;
  const auto a = run_training(tiny());
  const auto b = run_training(parallel);
  EXPECT_EQ(a.theta0, b.theta0);
  EXPECT_EQ(a.message_log, b.message_log);
}

TEST(Training, WeightsStayOnSimplex) {
  for (const auto& m : run_training(tiny()).metrics) {
    const double sum = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (double w : m.weights) EXPECT_GE(w, 0.0);
    for (double r : m.rsa_scores) {
      EXPECT_GE(r, -1.0);
      EXPECT_LE(r, 1.0);
    }
  }
}

TEST(Audit, FullRunPassesWithExpectedCounts) {
  const auto config = tiny();
  const auto result = run_training(config);
  const auto report = audit_privacy(result.message_log);
  EXPECT_TRUE(report.passed);
  const auto expected = expected_message_counts(config);
  EXPECT_EQ(expected.at(MessageKind::params_down), 12u);
  EXPECT_EQ(expected.at(MessageKind::metadata_up), 6u);
  for (const auto& [kind, count] : expected) EXPECT_EQ(report.counts.at(kind), count);
  EXPECT_EQ(report.counts.size(), expected.size());
}

TEST(Audit, ForgedImagePayloadIsFlagged) {
  auto log = run_training(tiny()).message_log;
  LogRecord forged = log[5];
  forged.payload_type = "ImageSample";
  log.insert(log.begin() + 7, forged);
  const auto report = audit_privacy(log);
  EXPECT_FALSE(report.passed);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].index, 7u);
}

TEST(Audit, MismatchedKindIsFlagged) {
  LogRecord r;
  r.kind = MessageKind::params_up;
  r.payload_type = "NodeMetadata";
  EXPECT_FALSE(audit_privacy({r}).passed);
}

TEST(Audit, EmptyLogPasses) {
  const auto report = audit_privacy({});
  EXPECT_TRUE(report.passed);
  EXPECT_TRUE(report.counts.empty());
}

TEST(Messages, PayloadMustMatchKind) {
  Message m{MessageKind::params_up, 0, kServerId, 1, NodeMetadata{}, {}};
  EXPECT_THROW(check_message(m), ProtocolError);
  m.payload = EncoderParams::zeros({{1, 1, false}});
  EXPECT_NO_THROW(check_message(m));
}

TEST(Config, InvalidFieldsAreNamed) {
  auto c = tiny();
  c.encoder_widths = {63, 8};
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.widths"), std::string::npos);
  }
  c = tiny();
  c.warmup_rounds = 9;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace fedmoco
