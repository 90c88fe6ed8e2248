#include "fedmoco/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <numeric>
#include <thread>

#include "fedmoco/digest.hpp"
#include "fedmoco/errors.hpp"
#include "fedmoco/rng.hpp"

namespace fedmoco {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;
constexpr std::uint64_t kDataStream = 0x64617461;
constexpr std::uint64_t kNodeSeedStream = 0x6e736564;
constexpr std::uint64_t kLocalStream = 1;
constexpr std::uint64_t kSyntheticStream = 2;
constexpr std::uint64_t kProbeStream = 3;

const char* const kNumSamples = "num_samples";
const char* const kRsaScore = "rsa_score";

}  // namespace

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string digest_values(std::span<const double> values) { return to_hex(fnv1a64(values)); }

std::string to_string(AggregationMode mode) {
  return mode == AggregationMode::self_adaptive ? "self_adaptive" : "fedavg";
}

AggregationMode aggregation_mode_from_string(const std::string& name) {
  if (name == "self_adaptive") return AggregationMode::self_adaptive;
  if (name == "fedavg") return AggregationMode::fedavg;
  throw ConfigError("unknown aggregation mode '" + name + "'");
}

double LrSchedule::at(int round) const {
  double factor = 1.0;
  for (const auto& [milestone, f] : milestones)
    if (round > milestone) factor = f;
  return base * factor;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (num_nodes == 0) fail("nodes", "must be at least 1");
  if (rounds < 0) fail("rounds", "must be non-negative");
  if (warmup_rounds < 0 || warmup_rounds > rounds) fail("warmup_rounds", "must lie in [0, rounds]");
  if (!(eta >= 0.0)) fail("eta", "must be non-negative");
  if (!(key_momentum >= 0.0 && key_momentum < 1.0)) fail("key_momentum", "must lie in [0, 1)");
  if (!(temperature > 0.0)) fail("temperature", "must be positive");
  if (!(covariance_jitter >= 0.0)) fail("covariance_jitter", "must be non-negative");
  if (!(lr.base >= 0.0)) fail("lr.base", "must be non-negative");
  for (std::size_t i = 1; i < lr.milestones.size(); ++i)
    if (lr.milestones[i].first <= lr.milestones[i - 1].first) fail("lr.milestones", "must be increasing");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (local_epochs == 0) fail("local_epochs", "must be positive");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) fail("sgd_momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be non-negative");
  if (probe_size < 3) fail("probe_size", "must be at least 3");
  if (encoder_widths.size() < 2) fail("encoder.widths", "needs an input and an output width");
  if (encoder_widths.front() != scenario.height * scenario.width)
    fail("encoder.widths", "input width must equal scenario height * width");
  if (!node_seeds.empty() && node_seeds.size() != training_nodes())
    fail("node_seeds", "must have one seed per training node");
  try {
    encoder_shapes();
    make_scenario(scenario, num_nodes);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("scenario/encoder: ") + e.what());
  }
}

std::vector<LayerShape> ExperimentConfig::encoder_shapes() const { return mlp_shapes(encoder_widths); }

std::uint64_t ExperimentConfig::node_seed(std::size_t node) const {
  if (!node_seeds.empty()) return node_seeds.at(node);
  return derive_seed(seed, {kNodeSeedStream, node});
}

std::string to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::params_down:
      return "ParamsDown";
    case MessageKind::params_up:
      return "ParamsUp";
    case MessageKind::metadata_up:
      return "MetadataUp";
    case MessageKind::metadata_down:
      return "MetadataDown";
    case MessageKind::control:
      return "Control";
  }
  return "Unknown";
}

MessageKind message_kind_from_string(const std::string& name) {
  for (auto kind : {MessageKind::params_down, MessageKind::params_up, MessageKind::metadata_up,
                    MessageKind::metadata_down, MessageKind::control})
    if (to_string(kind) == name) return kind;
  throw ProtocolError("unknown message kind '" + name + "'");
}

std::string payload_type_name(const Payload& payload) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, EncoderParams>) return "EncoderParams";
        else if constexpr (std::is_same_v<T, NodeMetadata>) return "NodeMetadata";
        else if constexpr (std::is_same_v<T, std::vector<NodeMetadata>>) return "NodeMetadataList";
        else return "Control";
      },
      payload);
}

namespace {

std::string expected_payload(MessageKind kind) {
  switch (kind) {
    case MessageKind::params_down:
    case MessageKind::params_up:
      return "EncoderParams";
    case MessageKind::metadata_up:
      return "NodeMetadata";
    case MessageKind::metadata_down:
      return "NodeMetadataList";
    case MessageKind::control:
      return "Control";
  }
  return "";
}

std::vector<double> flatten(const NodeMetadata& m) {
  std::vector<double> out(m.mu);
  out.insert(out.end(), m.sigma.begin(), m.sigma.end());
  return out;
}

}  // namespace

void check_message(const Message& message) {
  const auto actual = payload_type_name(message.payload);
  if (actual != expected_payload(message.kind))
    throw ProtocolError(to_string(message.kind) + " message carries a " + actual + " payload");
}

LogRecord describe(const Message& message) {
  LogRecord record;
  record.kind = message.kind;
  record.sender = message.sender;
  record.receiver = message.receiver;
  record.round = message.round;
  record.payload_type = payload_type_name(message.payload);
  record.annotations = message.annotations;
  std::vector<double> flat;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, EncoderParams>) {
          flat.assign(p.values().begin(), p.values().end());
        } else if constexpr (std::is_same_v<T, NodeMetadata>) {
          flat = flatten(p);
        } else if constexpr (std::is_same_v<T, std::vector<NodeMetadata>>) {
          for (const auto& m : p) {
            const auto part = flatten(m);
            flat.insert(flat.end(), part.begin(), part.end());
          }
        }
      },
      message.payload);
  record.payload_values = flat.size();
  record.payload_digest = digest_values(flat);
  return record;
}

AuditReport audit_privacy(const MessageLog& log) {
  AuditReport report;
  static const std::vector<std::string> allowed = {"EncoderParams", "NodeMetadata",
                                                   "NodeMetadataList", "Control"};
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& record = log[i];
    report.counts[record.kind] += 1;
    if (std::find(allowed.begin(), allowed.end(), record.payload_type) == allowed.end()) {
      report.violations.push_back({i, "forbidden payload type " + record.payload_type});
    } else if (record.payload_type != expected_payload(record.kind)) {
      report.violations.push_back({i, to_string(record.kind) + " carries " + record.payload_type});
    }
  }
  report.passed = report.violations.empty();
  return report;
}

std::map<MessageKind, std::size_t> expected_message_counts(const ExperimentConfig& config) {
  const auto k = config.training_nodes();
  const auto t = static_cast<std::size_t>(config.rounds);
  std::map<MessageKind, std::size_t> counts;
  counts[MessageKind::params_down] = k * t;
  counts[MessageKind::params_up] = k * t;
  if (config.metadata_enabled && config.rounds > config.warmup_rounds) {
    const auto post_warmup = static_cast<std::size_t>(config.rounds - config.warmup_rounds);
    counts[MessageKind::metadata_down] = k * post_warmup;
    counts[MessageKind::metadata_up] = k * post_warmup;
  }
  return counts;
}

EncoderParams initial_params(const ExperimentConfig& config) {
  return init_params(config.encoder_shapes(), derive_seed(config.seed, {kInitStream}));
}

ServerState make_server(const ExperimentConfig& config) {
  ServerState server;
  server.theta0 = initial_params(config);
  return server;
}

std::vector<Node> make_nodes(const ExperimentConfig& config, std::vector<std::vector<ImageSample>> datasets) {
  if (datasets.size() != config.training_nodes())
    throw ConfigError("expected " + std::to_string(config.training_nodes()) + " node datasets, got " +
                      std::to_string(datasets.size()));
  const auto theta = initial_params(config);
  std::vector<Node> nodes;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    if (datasets[k].empty()) throw ConfigError("node " + std::to_string(k) + " has no data");
    Node node;
    node.id = static_cast<int>(k);
    node.data = strip_labels(std::move(datasets[k]));
    node.state = make_node_state(theta, config.queue_size, config.node_seed(k));
    nodes.push_back(std::move(node));
  }
  return nodes;
}

std::vector<std::vector<ImageSample>> training_datasets(const ExperimentConfig& config) {
  const auto spec = make_scenario(config.scenario, config.num_nodes);
  const auto data_seed = derive_seed(config.seed, {kDataStream});
  std::vector<std::vector<ImageSample>> datasets;
  if (config.centralized) {
    datasets.push_back(generate_pooled_dataset(spec, data_seed));
  } else {
    for (std::size_t k = 0; k < spec.num_nodes; ++k) datasets.push_back(generate_node_dataset(spec, k, data_seed));
  }
  return datasets;
}

namespace {

struct NodeRoundOutput {
  std::optional<Message> metadata_up;
  Message params_up;
  double loss = 0.0;
  double rsa = 1.0;
  std::size_t synthetic = 0;
};

std::vector<ImageSample> sample_probe(const std::vector<ImageSample>& data, std::size_t probe_size,
                                      std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle_in_place(order, rng);
  order.resize(std::min(probe_size, data.size()));
  std::vector<ImageSample> probe;
  probe.reserve(order.size());
  for (auto i : order) probe.push_back(data[i]);
  return probe;
}

NodeRoundOutput node_round(Node& node, const Message& params_down,
                           const std::optional<Message>& metadata_down,
                           const ExperimentConfig& config, int round) {
  check_message(params_down);
  const auto& theta_prev = std::get<EncoderParams>(params_down.payload);
  node.state.synchronize(theta_prev);
  const auto node_seed = config.node_seed(static_cast<std::size_t>(node.id));
  const auto round_key = static_cast<std::uint64_t>(round);

  NodeRoundOutput out;
  std::vector<FeatureVector> synthetic;
  std::optional<NodeMetadata> metadata;
  auto extract_metadata = [&] {
    metadata = compute_metadata(forward_all(node.state.theta_q, node.data), config.boxcox_lambda,
                                config.covariance_jitter, node.id, round);
  };

  if (metadata_down) {
    check_message(*metadata_down);
    const auto quota = synthetic_quota(config.queue_size, config.eta, config.training_nodes());
    Rng rng(derive_seed(node_seed, {round_key, kSyntheticStream}));
    for (const auto& remote : std::get<std::vector<NodeMetadata>>(metadata_down->payload)) {
      if (remote.node_id == node.id) throw ProtocolError("node received its own metadata");
      auto draws = sample_synthetic(remote, quota.per_node, rng);
      synthetic.insert(synthetic.end(), std::make_move_iterator(draws.begin()),
                       std::make_move_iterator(draws.end()));
    }
    if (!config.metadata_after_update) extract_metadata();
  }

  LocalHyperparams hp;
  hp.batch_size = config.batch_size;
  hp.key_momentum = config.key_momentum;
  hp.temperature = config.temperature;
  hp.learning_rate = config.lr.at(round);
  hp.sgd_momentum = config.sgd_momentum;
  hp.weight_decay = config.weight_decay;
  hp.augment = config.augment;

  node.state.rng_seed = derive_seed(node_seed, {round_key, kLocalStream});
  double loss = 0.0;
  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    auto result = local_update(std::move(node.state), node.data, synthetic, hp);
    loss = result.mean_loss();
    node.state = std::move(result.state);
  }
  out.loss = loss;
  out.synthetic = synthetic.size();

  if (metadata_down) {
    if (config.metadata_after_update) extract_metadata();
    out.metadata_up = Message{MessageKind::metadata_up, node.id, kServerId, round, *metadata, {}};
  }

  const auto probe = sample_probe(node.data, config.probe_size, derive_seed(node_seed, {round_key, kProbeStream}));
  out.rsa = rsa_score(theta_prev, node.state.theta_q, probe);
  out.params_up = Message{MessageKind::params_up,
                          node.id,
                          kServerId,
                          round,
                          node.state.theta_q,
                          {{kNumSamples, static_cast<double>(node.data.size())}, {kRsaScore, out.rsa}}};
  return out;
}

void check_route(const Message& message, MessageKind kind, int sender, int round) {
  check_message(message);
  if (message.kind != kind || message.sender != sender || message.receiver != kServerId ||
      message.round != round)
    throw ProtocolError("unexpected " + to_string(message.kind) + " from node " +
                        std::to_string(message.sender) + " in round " + std::to_string(message.round));
}

}  // namespace

RoundMetrics run_round(ServerState& server, std::vector<Node>& nodes, const ExperimentConfig& config,
                       int round, MessageLog& log) {
  if (round < 1 || round > config.rounds)
    throw ArgumentError("round " + std::to_string(round) + " outside [1, " + std::to_string(config.rounds) + "]");
  const auto started = std::chrono::steady_clock::now();
  const std::size_t k_nodes = nodes.size();
  const bool metadata_round = config.metadata_enabled && round > config.warmup_rounds;

  std::vector<Message> params_down;
  std::vector<std::optional<Message>> metadata_down(k_nodes);
  for (const auto& node : nodes) {
    params_down.push_back(Message{MessageKind::params_down, kServerId, node.id, round, server.theta0, {}});
    if (metadata_round) {
      std::vector<NodeMetadata> others;
      for (const auto& [id, meta] : server.metadata_store)
        if (id != node.id) others.push_back(meta);
      metadata_down[static_cast<std::size_t>(node.id)] =
          Message{MessageKind::metadata_down, kServerId, node.id, round, std::move(others), {}};
    }
  }

  std::vector<NodeRoundOutput> outputs(k_nodes);
  if (config.parallel_nodes && k_nodes > 1) {
    std::vector<std::exception_ptr> errors(k_nodes);
    std::vector<std::thread> workers;
    for (std::size_t k = 0; k < k_nodes; ++k) {
      workers.emplace_back([&, k] {
        try {
          outputs[k] = node_round(nodes[k], params_down[k], metadata_down[k], config, round);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t k = 0; k < k_nodes; ++k)
      outputs[k] = node_round(nodes[k], params_down[k], metadata_down[k], config, round);
  }

  // Log order: phase, then node id.
  for (const auto& m : params_down) log.push_back(describe(m));
  for (const auto& m : metadata_down)
    if (m) log.push_back(describe(*m));
  for (const auto& out : outputs)
    if (out.metadata_up) log.push_back(describe(*out.metadata_up));
  for (const auto& out : outputs) log.push_back(describe(out.params_up));

  RoundMetrics metrics;
  metrics.round = round;
  metrics.learning_rate = config.lr.at(round);
  metrics.metadata_round = metadata_round;

  std::vector<EncoderParams> thetas;
  std::vector<std::size_t> counts;
  std::vector<double> scores;
  for (std::size_t k = 0; k < k_nodes; ++k) {
    const auto& out = outputs[k];
    const int id = nodes[k].id;
    check_route(out.params_up, MessageKind::params_up, id, round);
    if (metadata_round) {
      if (!out.metadata_up) throw ProtocolError("node " + std::to_string(id) + " sent no metadata");
      check_route(*out.metadata_up, MessageKind::metadata_up, id, round);
      server.metadata_store[id] = std::get<NodeMetadata>(out.metadata_up->payload);
    }
    thetas.push_back(std::get<EncoderParams>(out.params_up.payload));
    counts.push_back(static_cast<std::size_t>(out.params_up.annotations.at(kNumSamples)));
    scores.push_back(out.params_up.annotations.at(kRsaScore));
    metrics.node_loss.push_back(out.loss);
    metrics.synthetic_negatives.push_back(out.synthetic);
  }

  const auto weights = config.aggregation == AggregationMode::fedavg ? fedavg_weights(counts)
                                                                      : self_adaptive_weights(scores);
  server.theta0 = aggregate(thetas, weights);
  server.round = round;
  server.weight_history.push_back(weights);

  metrics.rsa_scores = std::move(scores);
  metrics.weights.assign(weights.values().begin(), weights.values().end());
  metrics.theta_digest = digest_values(server.theta0.values());
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return metrics;
}

TrainingResult run_training(const ExperimentConfig& config, bool keep_round_thetas) {
  config.validate();
  return run_training(config, training_datasets(config), keep_round_thetas);
}

TrainingResult run_training(const ExperimentConfig& config, std::vector<std::vector<ImageSample>> datasets,
                            bool keep_round_thetas) {
  config.validate();
  auto server = make_server(config);
  auto nodes = make_nodes(config, std::move(datasets));
  TrainingResult result;
  for (int t = 1; t <= config.rounds; ++t) {
    result.metrics.push_back(run_round(server, nodes, config, t, result.message_log));
    if (keep_round_thetas) result.round_thetas.push_back(server.theta0);
  }
  result.theta0 = std::move(server.theta0);
  return result;
}

}  // namespace fedmoco
