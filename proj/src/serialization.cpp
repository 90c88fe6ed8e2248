#include "fedmoco/serialization.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "fedmoco/errors.hpp"

namespace fedmoco {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[] = "FMCKPT01";
constexpr std::size_t kMagicSize = 8;

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffU));
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw ShapeError("truncated binary data");
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  pos += 8;
  return v;
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

double get_f64(const std::string& in, std::size_t& pos) { return std::bit_cast<double>(get_u64(in, pos)); }

}  // namespace

std::string encode_checkpoint(const EncoderParams& params) {
  json header;
  header["format"] = "fedmoco-encoder";
  header["version"] = 1;
  header["layers"] = json::array();
  for (const auto& s : params.shapes()) header["layers"].push_back({s.rows, s.cols, s.has_bias});
  header["feature_dim"] = params.feature_dim();
  header["count"] = params.size();
  const auto text = header.dump();

  std::string out(kCheckpointMagic, kMagicSize);
  put_u64(out, text.size());
  out += text;
  for (double v : params.values()) put_f64(out, v);
  return out;
}

EncoderParams decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicSize || bytes.compare(0, kMagicSize, kCheckpointMagic) != 0)
    throw ShapeError("not an encoder checkpoint");
  std::size_t pos = kMagicSize;
  const auto header_size = get_u64(bytes, pos);
  if (pos + header_size > bytes.size()) throw ShapeError("truncated checkpoint header");
  const auto header = json::parse(bytes.substr(pos, header_size));
  pos += header_size;

  std::vector<LayerShape> shapes;
  for (const auto& layer : header.at("layers"))
    shapes.push_back({layer.at(0).get<std::size_t>(), layer.at(1).get<std::size_t>(), layer.at(2).get<bool>()});
  const auto count = header.at("count").get<std::size_t>();
  if (bytes.size() - pos != count * 8) throw ShapeError("checkpoint payload size does not match header");
  std::vector<double> values(count);
  for (auto& v : values) v = get_f64(bytes, pos);
  return EncoderParams(std::move(shapes), std::move(values));
}

void write_checkpoint(const std::filesystem::path& path, const EncoderParams& params) {
  write_file_atomic(path, encode_checkpoint(params));
}

EncoderParams read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

json to_json(const LogRecord& record) {
  json j;
  j["kind"] = to_string(record.kind);
  j["sender"] = record.sender;
  j["receiver"] = record.receiver;
  j["round"] = record.round;
  j["payload_type"] = record.payload_type;
  j["payload_digest"] = record.payload_digest;
  j["payload_values"] = record.payload_values;
  j["annotations"] = record.annotations;
  return j;
}

LogRecord log_record_from_json(const json& j) {
  LogRecord record;
  record.kind = message_kind_from_string(j.at("kind").get<std::string>());
  record.sender = j.at("sender").get<int>();
  record.receiver = j.at("receiver").get<int>();
  record.round = j.at("round").get<int>();
  record.payload_type = j.at("payload_type").get<std::string>();
  record.payload_digest = j.value("payload_digest", "");
  record.payload_values = j.value("payload_values", std::size_t{0});
  if (j.contains("annotations")) record.annotations = j.at("annotations").get<std::map<std::string, double>>();
  return record;
}

std::string encode_message_log(const MessageLog& log) {
  std::string out;
  for (const auto& record : log) out += to_json(record).dump() + "\n";
  return out;
}

MessageLog decode_message_log(const std::string& text) {
  MessageLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      log.push_back(log_record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ProtocolError("message log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

MessageLog read_message_log(const std::filesystem::path& path) { return decode_message_log(read_file(path)); }

std::string encode_metrics(const std::vector<RoundMetrics>& metrics) {
  std::string out;
  for (const auto& m : metrics) {
    for (std::size_t k = 0; k < m.node_loss.size(); ++k) {
      json j;
      j["round"] = m.round;
      j["node"] = k;
      j["learning_rate"] = m.learning_rate;
      j["metadata_round"] = m.metadata_round;
      j["loss"] = m.node_loss[k];
      j["rsa_score"] = m.rsa_scores[k];
      j["weight"] = m.weights[k];
      j["synthetic_negatives"] = m.synthetic_negatives[k];
      j["theta_digest"] = m.theta_digest;
      out += j.dump() + "\n";
    }
  }
  return out;
}

std::string encode_timings(const std::vector<RoundMetrics>& metrics) {
  std::string out;
  for (const auto& m : metrics) out += json{{"round", m.round}, {"wall_seconds", m.wall_seconds}}.dump() + "\n";
  return out;
}

json to_json(const ClassificationReport& report) {
  json j;
  j["accuracy"] = report.accuracy;
  j["best_epoch_accuracy"] = report.best_epoch_accuracy;
  j["best_epoch"] = report.best_epoch;
  j["class_ids"] = report.class_ids;
  j["train_size"] = report.train_size;
  j["test_size"] = report.test_size;
  json per_class = json::array();
  for (const auto& acc : report.per_class_accuracy) per_class.push_back(acc ? json(*acc) : json(nullptr));
  j["per_class_accuracy"] = per_class;
  j["confusion"] = report.confusion;
  j["missing_from_train"] = report.missing_from_train;
  return j;
}

void export_dataset(const std::filesystem::path& data_path, const std::filesystem::path& labels_path,
                    std::span<const ImageSample> images) {
  const std::size_t h = images.empty() ? 0 : images.front().height;
  const std::size_t w = images.empty() ? 0 : images.front().width;
  std::string bytes;
  put_u64(bytes, images.size());
  put_u64(bytes, h);
  put_u64(bytes, w);
  std::string labels;
  for (const auto& image : images) {
    if (image.height != h || image.width != w) throw ShapeError("dataset images differ in size");
    for (double p : image.pixels) put_f64(bytes, p);
    labels += std::to_string(image.label.value_or(-1)) + "\n";
  }
  write_file_atomic(data_path, bytes);
  write_file_atomic(labels_path, labels);
}

std::vector<ImageSample> import_dataset(const std::filesystem::path& data_path,
                                        const std::filesystem::path& labels_path) {
  const auto bytes = read_file(data_path);
  std::size_t pos = 0;
  const auto count = get_u64(bytes, pos);
  const auto h = get_u64(bytes, pos);
  const auto w = get_u64(bytes, pos);
  if (bytes.size() - pos != count * h * w * 8) throw ShapeError("dataset body size does not match header");
  std::istringstream labels(read_file(labels_path));
  std::vector<ImageSample> images;
  images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ImageSample image = make_image(h, w);
    for (auto& p : image.pixels) p = get_f64(bytes, pos);
    int label = -1;
    if (!(labels >> label)) throw ShapeError("label sidecar is shorter than the dataset");
    if (label >= 0) image.label = label;
    images.push_back(std::move(image));
  }
  return images;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace fedmoco
