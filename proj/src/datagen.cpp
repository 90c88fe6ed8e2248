#include "fedmoco/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fedmoco/digest.hpp"
#include "fedmoco/errors.hpp"
#include "fedmoco/rng.hpp"

namespace fedmoco {

namespace {

constexpr std::uint64_t kNodeStream = 0x6e6f6465;  // "node"
constexpr std::uint64_t kEvalStream = 0x6576616c;  // "eval"

// 1 inside |x| <= half_width, 0 beyond half_width + 1, linear in between.
double inside(double x, double half_width) { return std::clamp(half_width + 1.0 - x, 0.0, 1.0); }

double shape_mask(int label, double dy, double dx) {
  const double r = std::hypot(dy, dx);
  const double hbar = std::min(inside(std::abs(dy), 0.8), inside(std::abs(dx), 5.0));
  const double vbar = std::min(inside(std::abs(dx), 0.8), inside(std::abs(dy), 5.0));
  switch (static_cast<ShapeClass>(label)) {
    case ShapeClass::blob:
      return std::exp(-(r * r) / (2.0 * 2.2 * 2.2));
    case ShapeClass::hbar:
      return hbar;
    case ShapeClass::vbar:
      return vbar;
    case ShapeClass::ring:
      return inside(std::abs(r - 4.5), 0.6);
    case ShapeClass::cross:
      return std::max(hbar, vbar);
    case ShapeClass::frame:
      return inside(std::abs(std::max(std::abs(dx), std::abs(dy)) - 4.5), 0.6);
  }
  throw ArgumentError("unknown shape class " + std::to_string(label));
}

}  // namespace

std::string shape_class_name(int label) {
  static const char* names[] = {"blob", "hbar", "vbar", "ring", "cross", "frame"};
  if (label < 0 || label >= kNumShapeClasses) return "unknown";
  return names[label];
}

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::equal:
      return "equal";
    case ScenarioKind::size_skew:
      return "size_skew";
    case ScenarioKind::label_skew:
      return "label_skew";
  }
  return "unknown";
}

ScenarioKind scenario_kind_from_string(const std::string& name) {
  if (name == "equal") return ScenarioKind::equal;
  if (name == "size_skew") return ScenarioKind::size_skew;
  if (name == "label_skew") return ScenarioKind::label_skew;
  throw ConfigError("unknown scenario kind '" + name + "'");
}

const std::vector<DomainShift>& site_profiles() {
  static const std::vector<DomainShift> profiles = {
      {0.00, 0.03, 0.0, 0.00, 1.00},
      {0.15, 0.06, 2.0, 0.08, 0.90},
      {0.05, 0.10, 4.0, 0.05, 0.75},
  };
  return profiles;
}

void ScenarioSpec::validate() const {
  if (num_nodes == 0) throw ConfigError("scenario needs at least one node");
  if (height == 0 || width == 0) throw ConfigError("image size must be positive");
  if (counts.size() != num_nodes || palettes.size() != num_nodes || shifts.size() != num_nodes)
    throw ConfigError("scenario tables must have one entry per node");
  for (std::size_t k = 0; k < num_nodes; ++k) {
    if (counts[k] == 0) throw ConfigError("node " + std::to_string(k) + " has no samples");
    if (palettes[k].empty()) throw ConfigError("node " + std::to_string(k) + " has no classes");
    for (int c : palettes[k])
      if (std::find(kPretrainClasses.begin(), kPretrainClasses.end(), c) == kPretrainClasses.end())
        throw ConfigError("class " + std::to_string(c) + " is not a pre-training class");
  }
  if (eval_size < 2 * kDownstreamClasses.size())
    throw ConfigError("eval_size must allow at least one train and one test image per class");
}

ScenarioSpec make_scenario(const ScenarioConfig& config, std::size_t num_nodes) {
  if (num_nodes == 0) throw ConfigError("scenario needs at least one node");
  if (config.base_size == 0) throw ConfigError("scenario base_size must be positive");
  ScenarioSpec spec;
  spec.kind = config.kind;
  spec.num_nodes = num_nodes;
  spec.height = config.height;
  spec.width = config.width;
  spec.eval_size = config.eval_size;
  const auto& profiles = site_profiles();
  for (std::size_t k = 0; k < num_nodes; ++k) {
    const bool last = k + 1 == num_nodes;
    std::size_t count = config.base_size;
    std::vector<int> palette = kPretrainClasses;
    switch (config.kind) {
      case ScenarioKind::equal:
        break;
      case ScenarioKind::size_skew:
        if (!(config.gamma_percent > 0.0 && config.gamma_percent <= 100.0))
          throw ConfigError("gamma_percent must lie in (0, 100]");
        if (!last)
          count = static_cast<std::size_t>(
              std::llround(static_cast<double>(config.base_size) * config.gamma_percent / 100.0));
        break;
      case ScenarioKind::label_skew:
        palette = last && num_nodes > 1 ? kDiseaseClasses : std::vector<int>{kHealthyClass};
        if (num_nodes == 1) palette = kPretrainClasses;
        break;
    }
    spec.counts.push_back(count);
    spec.palettes.push_back(std::move(palette));
    spec.shifts.push_back(profiles[k * profiles.size() / num_nodes]);
  }
  spec.validate();
  return spec;
}

ImageSample render_shape(int label, const DomainShift& shift, std::size_t height,
                         std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0 + rng.uniform(-3.0, 3.0);
  const double cx = (static_cast<double>(width) - 1.0) / 2.0 + rng.uniform(-3.0, 3.0);
  const double scale = rng.uniform(0.7, 1.3);
  const double amplitude = rng.uniform(0.3, 0.9) * shift.contrast;
  const double background = 0.15 + shift.intensity_offset + rng.uniform(-0.03, 0.03);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double orientation = rng.uniform(0.0, std::numbers::pi);
  const double kx = std::cos(orientation) * 2.0 * std::numbers::pi * shift.texture_freq / static_cast<double>(width);
  const double ky = std::sin(orientation) * 2.0 * std::numbers::pi * shift.texture_freq / static_cast<double>(height);

  ImageSample image = make_image(height, width);
  image.label = label;
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double dy = (static_cast<double>(r) - cy) / scale;
      const double dx = (static_cast<double>(c) - cx) / scale;
      double v = background + amplitude * shape_mask(label, dy, dx);
      v += shift.texture_amp * std::sin(kx * static_cast<double>(c) + ky * static_cast<double>(r) + phase);
      v += shift.noise_level * rng.normal();
      image.at(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return image;
}

std::vector<ImageSample> generate_node_dataset(const ScenarioSpec& spec, std::size_t node_id,
                                               std::uint64_t seed) {
  spec.validate();
  if (node_id >= spec.num_nodes)
    throw ConfigError("node " + std::to_string(node_id) + " outside scenario of " +
                      std::to_string(spec.num_nodes) + " nodes");
  const auto& palette = spec.palettes[node_id];
  std::vector<ImageSample> images;
  images.reserve(spec.counts[node_id]);
  for (std::size_t i = 0; i < spec.counts[node_id]; ++i) {
    const auto image_seed = derive_seed(seed, {kNodeStream, node_id, i});
    Rng pick(image_seed ^ 0x5bd1e995ULL);
    const int label = palette[pick.below(palette.size())];
    images.push_back(render_shape(label, spec.shifts[node_id], spec.height, spec.width, image_seed));
  }
  return images;
}

std::vector<ImageSample> generate_pooled_dataset(const ScenarioSpec& spec, std::uint64_t seed) {
  std::vector<ImageSample> pooled;
  for (std::size_t k = 0; k < spec.num_nodes; ++k) {
    auto part = generate_node_dataset(spec, k, seed);
    pooled.insert(pooled.end(), std::make_move_iterator(part.begin()),
                  std::make_move_iterator(part.end()));
  }
  return pooled;
}

std::vector<ImageSample> strip_labels(std::vector<ImageSample> images) {
  for (auto& image : images) image.label.reset();
  return images;
}

EvalSplit make_eval_split(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& profiles = site_profiles();
  const std::size_t num_classes = kDownstreamClasses.size();
  std::vector<std::vector<ImageSample>> by_class(num_classes);
  for (std::size_t i = 0; i < spec.eval_size; ++i) {
    const std::size_t cls = i % num_classes;
    const auto& shift = profiles[(i / num_classes) % profiles.size()];
    by_class[cls].push_back(render_shape(kDownstreamClasses[cls], shift, spec.height, spec.width,
                                         derive_seed(seed, {kEvalStream, i})));
  }
  EvalSplit split;
  Rng rng(derive_seed(seed, {kEvalStream, 0x73706c6974}));
  for (auto& group : by_class) {
    shuffle_in_place(group, rng);
    const std::size_t train_count = (group.size() + 1) / 2;
    for (std::size_t i = 0; i < group.size(); ++i)
      (i < train_count ? split.train : split.test).push_back(std::move(group[i]));
  }
  return split;
}

std::uint64_t fingerprint(const ImageSample& image) { return fnv1a64(image.pixels); }

double mean_intensity(std::span<const ImageSample> images) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& image : images) {
    sum += std::accumulate(image.pixels.begin(), image.pixels.end(), 0.0);
    n += image.pixels.size();
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace fedmoco
