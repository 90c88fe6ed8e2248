#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedmoco/eval.hpp"
#include "fedmoco/federation.hpp"
#include "fedmoco/nn.hpp"

#include <json.hpp>

namespace fedmoco {

// Checkpoint layout: the 8-byte magic "FMCKPT01", a little-endian u64 header
// length, a JSON header {"format", "version", "layers": [[rows, cols,
// has_bias], ...], "feature_dim", "count"}, then `count` little-endian f64.
std::string encode_checkpoint(const EncoderParams& params);
EncoderParams decode_checkpoint(const std::string& bytes);
void write_checkpoint(const std::filesystem::path& path, const EncoderParams& params);
EncoderParams read_checkpoint(const std::filesystem::path& path);

// Message log: one JSON object per line with kind, sender, receiver, round,
// payload_type, payload_digest, payload_values and annotations.
nlohmann::json to_json(const LogRecord& record);
LogRecord log_record_from_json(const nlohmann::json& j);
std::string encode_message_log(const MessageLog& log);
MessageLog decode_message_log(const std::string& text);
MessageLog read_message_log(const std::filesystem::path& path);

// Deterministic metrics stream: one record per round per node.
std::string encode_metrics(const std::vector<RoundMetrics>& metrics);
std::string encode_timings(const std::vector<RoundMetrics>& metrics);

nlohmann::json to_json(const ClassificationReport& report);

// Dataset export: little-endian u64 count, height, width, then count*H*W
// f64 pixels row-major; labels go to a sidecar text file (one integer per
// line, -1 when unlabelled).
void export_dataset(const std::filesystem::path& data_path, const std::filesystem::path& labels_path,
                    std::span<const ImageSample> images);
std::vector<ImageSample> import_dataset(const std::filesystem::path& data_path,
                                        const std::filesystem::path& labels_path);

// Writes to a temporary sibling then renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace fedmoco
