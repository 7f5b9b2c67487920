#pragma once

// Point/label file codecs (SemanticKITTI layout) and the synthetic scene
// generator used for desk-scale training and evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace iaseg {

struct Point {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float intensity = 0.0f;

  bool operator==(const Point&) const = default;
};

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct Label {
  std::uint16_t semantic_id = 0;
  std::uint16_t instance_id = 0;  // 0 = no instance

  bool operator==(const Label&) const = default;
};

struct LabelArray {
  std::vector<Label> labels;

  std::size_t size() const { return labels.size(); }
};

using Bytes = std::vector<std::uint8_t>;

/// Decodes packed little-endian float32 x4 records. Throws MalformedFile when
/// the length is not a multiple of 16 or any value is non-finite.
PointCloud read_point_bin(std::span<const std::uint8_t> bytes);
Bytes write_point_bin(const PointCloud& cloud);

/// Decodes packed little-endian uint32 words: low 16 bits semantic id, high
/// 16 bits instance id.
LabelArray read_label_bin(std::span<const std::uint8_t> bytes);
Bytes write_label_bin(const LabelArray& labels);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

enum class Primitive { kPlane, kBox, kCylinder, kEllipsoid };

std::string to_string(Primitive p);
Primitive primitive_from_string(const std::string& name);

struct ClassEntry {
  std::uint16_t class_id = 0;
  std::string name;
  Primitive shape = Primitive::kBox;
  bool is_instance_class = false;
  // Characteristic size in meters: box length, cylinder height, ellipsoid
  // height. The remaining dimensions follow fixed aspect ratios.
  double size_min = 0.0;
  double size_max = 0.0;
  int count_min = 0;
  int count_max = 0;
};

struct SceneSpec {
  std::vector<ClassEntry> class_table;
  double extent = 30.0;  // side of the square scene footprint, meters
  int points_per_object_min = 150;
  int points_per_object_max = 300;
  double noise_sigma = 0.01;
  bool ground_plane = true;
  int ground_points = 1500;
  double min_spacing = 3.0;  // minimum horizontal distance between object centers

  /// Throws ArgumentError when ranges are unordered or non-positive.
  void validate() const;

  const ClassEntry* find_class(std::uint16_t id) const;
  std::size_t num_classes() const;  // max class id + 1
  std::vector<std::uint16_t> instance_classes() const;

  std::string serialize() const;
  static SceneSpec parse(const std::string& text);
  static SceneSpec load(const std::filesystem::path& path);

  /// Five-class outdoor-like table: ground, car, truck, pedestrian, pole.
  static SceneSpec default_spec();
};

struct LabeledScene {
  PointCloud cloud;
  LabelArray labels;
  std::string spec_fingerprint;  // empty for real data

  std::size_t size() const { return cloud.size(); }
};

/// Deterministic in (spec, seed). Throws GenerationError when objects cannot
/// be placed without violating the spacing constraint.
LabeledScene generate_scene(const SceneSpec& spec, std::uint64_t seed);

std::string spec_fingerprint(const SceneSpec& spec, std::uint64_t seed);

// A directory of NNNN.bin / NNNN.label pairs plus manifest.txt listing
// "<split> <stem>" per line.
struct ManifestEntry {
  std::string split;
  std::string stem;
};

struct SceneDirectory {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  static SceneDirectory open(const std::filesystem::path& root);
  std::vector<std::string> stems(const std::string& split) const;
  LabeledScene load(const std::string& stem) const;
};

void save_scene(const std::filesystem::path& dir, const std::string& stem, const LabeledScene& scene);
void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries,
                    const std::string& comment);

}  // namespace iaseg
