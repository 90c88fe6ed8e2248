#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedmoco/nn.hpp"

namespace fedmoco {

// Shape classes of the toy images. The first four appear in pre-training
// data; the last two are held back for the downstream evaluation task.
enum class ShapeClass : int { blob = 0, hbar = 1, vbar = 2, ring = 3, cross = 4, frame = 5 };

inline constexpr int kNumShapeClasses = 6;
inline constexpr int kHealthyClass = 0;
inline const std::vector<int> kPretrainClasses = {0, 1, 2, 3};
inline const std::vector<int> kDiseaseClasses = {1, 2, 3};
inline const std::vector<int> kDownstreamClasses = {4, 5};

std::string shape_class_name(int label);

enum class ScenarioKind { equal, size_skew, label_skew };

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& name);

// Acquisition parameters of one simulated site.
struct DomainShift {
  double intensity_offset = 0.0;
  double noise_level = 0.03;
  double texture_freq = 0.0;
  double texture_amp = 0.0;
  double contrast = 1.0;
};

// The built-in site profiles; node k of K uses profile floor(3k / K).
const std::vector<DomainShift>& site_profiles();

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::equal;
  std::size_t base_size = 10000;
  double gamma_percent = 10.0;  // size_skew only
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t eval_size = 2000;
};

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::equal;
  std::size_t num_nodes = 0;
  std::size_t height = 16;
  std::size_t width = 16;
  std::vector<std::size_t> counts;
  std::vector<std::vector<int>> palettes;
  std::vector<DomainShift> shifts;
  std::size_t eval_size = 2000;

  // Throws ConfigError when counts, palettes or shifts are inconsistent.
  void validate() const;
};

// size_skew: every node but the last keeps gamma% of base_size.
// label_skew: every node but the last only sees the healthy class, the last
// node only the disease classes.
ScenarioSpec make_scenario(const ScenarioConfig& config, std::size_t num_nodes);

// Renders one labelled image of the given class under a site profile.
ImageSample render_shape(int label, const DomainShift& shift, std::size_t height,
                         std::size_t width, std::uint64_t seed);

// Labelled node dataset (labels are stripped by the trainer).
std::vector<ImageSample> generate_node_dataset(const ScenarioSpec& spec, std::size_t node_id,
                                               std::uint64_t seed);

// Union of every node dataset, in node order.
std::vector<ImageSample> generate_pooled_dataset(const ScenarioSpec& spec, std::uint64_t seed);

std::vector<ImageSample> strip_labels(std::vector<ImageSample> images);

struct EvalSplit {
  std::vector<ImageSample> train;
  std::vector<ImageSample> test;
};

// Downstream-only classes drawn across all site profiles, split 50/50 per class.
EvalSplit make_eval_split(const ScenarioSpec& spec, std::uint64_t seed);

// FNV-1a over the pixel bytes.
std::uint64_t fingerprint(const ImageSample& image);

double mean_intensity(std::span<const ImageSample> images);

}  // namespace fedmoco
