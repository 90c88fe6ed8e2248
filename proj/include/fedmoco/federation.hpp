#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedmoco/contrastive.hpp"
#include "fedmoco/datagen.hpp"
#include "fedmoco/metadata.hpp"
#include "fedmoco/nn.hpp"
#include "fedmoco/rsa.hpp"

namespace fedmoco {

enum class AggregationMode { self_adaptive, fedavg };

std::string to_string(AggregationMode mode);
AggregationMode aggregation_mode_from_string(const std::string& name);

// Learning rate for round t (1-based): base times the factor of the last
// milestone m with t > m, i.e. the drop happens after m rounds completed.
struct LrSchedule {
  double base = 0.03;
  std::vector<std::pair<int, double>> milestones = {{120, 0.1}, {160, 0.01}};

  double at(int round) const;
};

struct ExperimentConfig {
  std::size_t num_nodes = 3;
  int rounds = 200;
  int warmup_rounds = 50;
  std::size_t queue_size = 1024;
  double eta = 0.05;
  double key_momentum = 0.999;
  double temperature = 0.2;
  double boxcox_lambda = 0.5;
  double covariance_jitter = kDefaultCovarianceJitter;
  LrSchedule lr;
  std::size_t batch_size = 64;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t local_epochs = 1;
  std::vector<std::size_t> encoder_widths = {256, 64, 32};
  AggregationMode aggregation = AggregationMode::self_adaptive;
  bool metadata_enabled = true;
  // Extract metadata features after the local update instead of right after
  // synchronization.
  bool metadata_after_update = false;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> node_seeds;  // empty: derived from `seed`
  std::size_t probe_size = 100;
  // Train a single node on the pooled data of the scenario (the Oracle arm).
  bool centralized = false;
  bool parallel_nodes = false;
  ScenarioConfig scenario;
  AugmentConfig augment;

  // Throws ConfigError naming the offending field.
  void validate() const;

  std::size_t training_nodes() const { return centralized ? 1 : num_nodes; }
  std::vector<LayerShape> encoder_shapes() const;
  std::uint64_t node_seed(std::size_t node) const;
};

enum class MessageKind { params_down, params_up, metadata_up, metadata_down, control };

std::string to_string(MessageKind kind);
MessageKind message_kind_from_string(const std::string& name);

inline constexpr int kServerId = -1;

struct ControlToken {
  std::string token;
  friend bool operator==(const ControlToken&, const ControlToken&) = default;
};

using Payload = std::variant<EncoderParams, NodeMetadata, std::vector<NodeMetadata>, ControlToken>;

// Envelope on the server/node channel. The payload variant has no
// alternative able to hold images or per-sample features.
struct Message {
  MessageKind kind = MessageKind::control;
  int sender = kServerId;
  int receiver = kServerId;
  int round = 0;
  Payload payload;
  // Scalar side information on ParamsUp: local sample count and RSA score.
  std::map<std::string, double> annotations;
};

// Throws ProtocolError when the payload type does not match the kind.
void check_message(const Message& message);

std::string payload_type_name(const Payload& payload);

// What the audit trail keeps of a message: routing, payload type and digest.
struct LogRecord {
  MessageKind kind = MessageKind::control;
  int sender = kServerId;
  int receiver = kServerId;
  int round = 0;
  std::string payload_type;
  std::string payload_digest;
  std::size_t payload_values = 0;
  std::map<std::string, double> annotations;

  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

LogRecord describe(const Message& message);

using MessageLog = std::vector<LogRecord>;

struct AuditViolation {
  std::size_t index = 0;
  std::string reason;
};

struct AuditReport {
  bool passed = true;
  std::map<MessageKind, std::size_t> counts;
  std::vector<AuditViolation> violations;
};

// Flags any record whose payload is not parameters, metadata or a control
// token, or whose payload type does not match its kind.
AuditReport audit_privacy(const MessageLog& log);

// Per-kind message counts implied by the training loop for a config.
std::map<MessageKind, std::size_t> expected_message_counts(const ExperimentConfig& config);

struct RoundMetrics {
  int round = 0;
  double learning_rate = 0.0;
  bool metadata_round = false;
  std::vector<double> node_loss;
  std::vector<double> rsa_scores;
  std::vector<double> weights;
  std::vector<std::size_t> synthetic_negatives;
  std::string theta_digest;
  double wall_seconds = 0.0;  // excluded from the deterministic metrics stream
};

struct ServerState {
  EncoderParams theta0;
  int round = 0;
  std::map<int, NodeMetadata> metadata_store;
  std::vector<AggregationWeights> weight_history;
};

struct Node {
  int id = 0;
  std::vector<ImageSample> data;  // unlabelled
  NodeTrainState state;
};

// theta_0^0 for a config (shared by every arm with the same seed).
EncoderParams initial_params(const ExperimentConfig& config);

ServerState make_server(const ExperimentConfig& config);

// One node per dataset, labels stripped.
std::vector<Node> make_nodes(const ExperimentConfig& config, std::vector<std::vector<ImageSample>> datasets);

// Datasets the config trains on: one per node, or the pooled data when
// centralized.
std::vector<std::vector<ImageSample>> training_datasets(const ExperimentConfig& config);

// One synchronization round: broadcast, (metadata exchange,) local updates,
// upload and aggregation. Messages are appended to `log` ordered by
// (phase, node).
RoundMetrics run_round(ServerState& server, std::vector<Node>& nodes,
                       const ExperimentConfig& config, int round, MessageLog& log);

struct TrainingResult {
  EncoderParams theta0;
  std::vector<RoundMetrics> metrics;
  MessageLog message_log;
  std::vector<EncoderParams> round_thetas;  // theta_0^t for t = 1..T when kept
};

TrainingResult run_training(const ExperimentConfig& config, bool keep_round_thetas = false);
TrainingResult run_training(const ExperimentConfig& config,
                            std::vector<std::vector<ImageSample>> datasets,
                            bool keep_round_thetas = false);

// FNV-1a over the little-endian bytes of the values, as 16 hex digits.
std::string digest_values(std::span<const double> values);

}  // namespace fedmoco
