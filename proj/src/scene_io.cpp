#include "iaseg/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "iaseg/errors.hpp"
#include "iaseg/key_value.hpp"
#include "iaseg/rng.hpp"

namespace iaseg {
namespace {

std::uint32_t load_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32(std::uint32_t v, Bytes& out) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

float load_f32(const std::uint8_t* p) { return std::bit_cast<float>(load_u32(p)); }

}  // namespace

PointCloud read_point_bin(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0) {
    throw MalformedFile("point file length " + std::to_string(bytes.size()) +
                        " is not a multiple of 16");
  }
  PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const std::uint8_t* rec = bytes.data() + 16 * i;
    Point& p = cloud.points[i];
    p.x = load_f32(rec);
    p.y = load_f32(rec + 4);
    p.z = load_f32(rec + 8);
    p.intensity = load_f32(rec + 12);
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
        !std::isfinite(p.intensity)) {
      throw MalformedFile("non-finite value in point record " + std::to_string(i));
    }
  }
  return cloud;
}

Bytes write_point_bin(const PointCloud& cloud) {
  Bytes out;
  out.reserve(cloud.size() * 16);
  for (const Point& p : cloud.points) {
    store_u32(std::bit_cast<std::uint32_t>(p.x), out);
    store_u32(std::bit_cast<std::uint32_t>(p.y), out);
    store_u32(std::bit_cast<std::uint32_t>(p.z), out);
    store_u32(std::bit_cast<std::uint32_t>(p.intensity), out);
  }
  return out;
}

LabelArray read_label_bin(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) {
    throw MalformedFile("label file length " + std::to_string(bytes.size()) +
                        " is not a multiple of 4");
  }
  LabelArray out;
  out.labels.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const std::uint32_t w = load_u32(bytes.data() + 4 * i);
    out.labels[i].semantic_id = static_cast<std::uint16_t>(w & 0xFFFFu);
    out.labels[i].instance_id = static_cast<std::uint16_t>(w >> 16);
  }
  return out;
}

Bytes write_label_bin(const LabelArray& labels) {
  Bytes out;
  out.reserve(labels.size() * 4);
  for (const Label& l : labels.labels) {
    store_u32(static_cast<std::uint32_t>(l.semantic_id) |
                  (static_cast<std::uint32_t>(l.instance_id) << 16),
              out);
  }
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

std::string to_string(Primitive p) {
  switch (p) {
    case Primitive::kPlane: return "plane";
    case Primitive::kBox: return "box";
    case Primitive::kCylinder: return "cylinder";
    case Primitive::kEllipsoid: return "ellipsoid";
  }
  return "?";
}

Primitive primitive_from_string(const std::string& name) {
  if (name == "plane") return Primitive::kPlane;
  if (name == "box") return Primitive::kBox;
  if (name == "cylinder") return Primitive::kCylinder;
  if (name == "ellipsoid") return Primitive::kEllipsoid;
  throw ArgumentError("unknown primitive '" + name + "'");
}

void SceneSpec::validate() const {
  if (class_table.empty()) throw ArgumentError("scene spec: empty class table");
  if (!(extent > 0.0)) throw ArgumentError("scene spec: extent must be positive");
  if (points_per_object_min < 1 || points_per_object_max < points_per_object_min) {
    throw ArgumentError("scene spec: points_per_object range must satisfy 1 <= min <= max");
  }
  if (noise_sigma < 0.0) throw ArgumentError("scene spec: noise_sigma must be >= 0");
  if (min_spacing < 0.0) throw ArgumentError("scene spec: min_spacing must be >= 0");
  if (ground_points < 0) throw ArgumentError("scene spec: ground_points must be >= 0");
  std::vector<std::uint16_t> ids;
  bool has_plane = false;
  for (const auto& c : class_table) {
    ids.push_back(c.class_id);
    if (c.shape == Primitive::kPlane) {
      has_plane = true;
      if (c.is_instance_class) throw ArgumentError("scene spec: plane class cannot be an instance class");
      continue;
    }
    if (!(c.size_min > 0.0) || c.size_max < c.size_min) {
      throw ArgumentError("scene spec: class '" + c.name + "' size range must satisfy 0 < min <= max");
    }
    if (c.count_min < 0 || c.count_max < c.count_min) {
      throw ArgumentError("scene spec: class '" + c.name + "' count range must satisfy 0 <= min <= max");
    }
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ArgumentError("scene spec: duplicate class id");
  }
  if (ground_plane && !has_plane) throw ArgumentError("scene spec: ground_plane requires a plane class");
}

const ClassEntry* SceneSpec::find_class(std::uint16_t id) const {
  for (const auto& c : class_table) {
    if (c.class_id == id) return &c;
  }
  return nullptr;
}

std::size_t SceneSpec::num_classes() const {
  std::size_t n = 0;
  for (const auto& c : class_table) n = std::max<std::size_t>(n, c.class_id + 1u);
  return n;
}

std::vector<std::uint16_t> SceneSpec::instance_classes() const {
  std::vector<std::uint16_t> out;
  for (const auto& c : class_table) {
    if (c.is_instance_class) out.push_back(c.class_id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string SceneSpec::serialize() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "extent = " << extent << "\n";
  out << "points_per_object = " << points_per_object_min << " " << points_per_object_max << "\n";
  out << "noise_sigma = " << noise_sigma << "\n";
  out << "ground_plane = " << (ground_plane ? "true" : "false") << "\n";
  out << "ground_points = " << ground_points << "\n";
  out << "min_spacing = " << min_spacing << "\n";
  out << "# class = id name shape is_instance size_min size_max count_min count_max\n";
  for (const auto& c : class_table) {
    out << "class = " << c.class_id << " " << c.name << " " << to_string(c.shape) << " "
        << (c.is_instance_class ? "true" : "false") << " " << c.size_min << " " << c.size_max
        << " " << c.count_min << " " << c.count_max << "\n";
  }
  return out.str();
}

SceneSpec SceneSpec::parse(const std::string& text) {
  const auto kv = KeyValueFile::parse(text);
  SceneSpec spec;
  spec.extent = kv.get_double("extent", spec.extent);
  if (const auto* ppo = kv.find("points_per_object")) {
    const auto parts = split_whitespace(*ppo);
    if (parts.size() != 2) throw ArgumentError("points_per_object: expected 'min max'");
    spec.points_per_object_min = static_cast<int>(parse_int(parts[0], "points_per_object"));
    spec.points_per_object_max = static_cast<int>(parse_int(parts[1], "points_per_object"));
  }
  spec.noise_sigma = kv.get_double("noise_sigma", spec.noise_sigma);
  spec.ground_plane = kv.get_bool("ground_plane", spec.ground_plane);
  spec.ground_points = static_cast<int>(kv.get_int("ground_points", spec.ground_points));
  spec.min_spacing = kv.get_double("min_spacing", spec.min_spacing);
  for (const auto& line : kv.all("class")) {
    const auto f = split_whitespace(line);
    if (f.size() != 8) {
      throw ArgumentError("class: expected 'id name shape is_instance size_min size_max count_min count_max'");
    }
    ClassEntry c;
    const long long id = parse_int(f[0], "class id");
    if (id < 0 || id > 0xFFFF) throw ArgumentError("class id out of 16-bit range");
    c.class_id = static_cast<std::uint16_t>(id);
    c.name = f[1];
    c.shape = primitive_from_string(f[2]);
    c.is_instance_class = parse_bool(f[3], "class is_instance");
    c.size_min = parse_double(f[4], "class size_min");
    c.size_max = parse_double(f[5], "class size_max");
    c.count_min = static_cast<int>(parse_int(f[6], "class count_min"));
    c.count_max = static_cast<int>(parse_int(f[7], "class count_max"));
    spec.class_table.push_back(std::move(c));
  }
  spec.validate();
  return spec;
}

SceneSpec SceneSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene spec " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

SceneSpec SceneSpec::default_spec() {
  SceneSpec spec;
  spec.class_table = {
      {0, "ground", Primitive::kPlane, false, 0.0, 0.0, 0, 0},
      {1, "car", Primitive::kBox, true, 0.9, 1.2, 3, 5},
      {2, "truck", Primitive::kBox, true, 1.4, 1.6, 1, 3},
      {3, "pedestrian", Primitive::kEllipsoid, true, 0.7, 0.9, 3, 5},
      {4, "pole", Primitive::kCylinder, true, 0.8, 1.0, 2, 4},
  };
  return spec;
}

namespace {

struct Placed {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;  // horizontal bounding radius
};

// Box: length L, width 0.55 L, height 0.5 L. Cylinder: height H, radius 0.08 H.
// Ellipsoid: height H, horizontal semi-axes 0.25 H.
double horizontal_radius(Primitive shape, double size) {
  switch (shape) {
    case Primitive::kBox: return 0.5 * size * std::hypot(1.0, 0.55);
    case Primitive::kCylinder: return 0.08 * size;
    case Primitive::kEllipsoid: return 0.25 * size;
    case Primitive::kPlane: return 0.0;
  }
  return 0.0;
}

struct Vec3 {
  double x, y, z;
};

// Surface sample in the object's local frame, z measured from the ground.
Vec3 sample_surface(Primitive shape, double size, Rng& rng) {
  switch (shape) {
    case Primitive::kBox: {
      const double l = size, w = 0.55 * size, h = 0.5 * size;
      // top, +-x ends, +-y sides; no bottom face
      const double a_top = l * w, a_end = w * h, a_side = l * h;
      const double total = a_top + 2 * a_end + 2 * a_side;
      const double pick = rng.uniform() * total;
      const double u = rng.uniform() - 0.5, v = rng.uniform() - 0.5;
      if (pick < a_top) return {u * l, v * w, h};
      if (pick < a_top + a_end) return {0.5 * l, u * w, (v + 0.5) * h};
      if (pick < a_top + 2 * a_end) return {-0.5 * l, u * w, (v + 0.5) * h};
      if (pick < a_top + 2 * a_end + a_side) return {u * l, 0.5 * w, (v + 0.5) * h};
      return {u * l, -0.5 * w, (v + 0.5) * h};
    }
    case Primitive::kCylinder: {
      const double height = size, r = 0.08 * size;
      const double a_side = 2.0 * std::numbers::pi * r * height;
      const double a_top = std::numbers::pi * r * r;
      const double pick = rng.uniform() * (a_side + a_top);
      const double theta = 2.0 * std::numbers::pi * rng.uniform();
      if (pick < a_side) return {r * std::cos(theta), r * std::sin(theta), rng.uniform() * height};
      const double rr = r * std::sqrt(rng.uniform());
      return {rr * std::cos(theta), rr * std::sin(theta), height};
    }
    case Primitive::kEllipsoid: {
      const double c = 0.5 * size, a = 0.25 * size;
      double gx, gy, gz, n;
      do {
        gx = rng.normal();
        gy = rng.normal();
        gz = rng.normal();
        n = std::sqrt(gx * gx + gy * gy + gz * gz);
      } while (n < 1e-12);
      return {a * gx / n, a * gy / n, c + c * gz / n};
    }
    case Primitive::kPlane: break;
  }
  return {0.0, 0.0, 0.0};
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string spec_fingerprint(const SceneSpec& spec, std::uint64_t seed) {
  const std::uint64_t h = fnv1a(spec.serialize() + "#seed=" + std::to_string(seed));
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

LabeledScene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  LabeledScene scene;
  scene.spec_fingerprint = spec_fingerprint(spec, seed);
  const double half = 0.5 * spec.extent;

  auto emit = [&](double x, double y, double z, std::uint16_t sem, std::uint16_t inst) {
    Point p;
    p.x = static_cast<float>(x + spec.noise_sigma * rng.normal());
    p.y = static_cast<float>(y + spec.noise_sigma * rng.normal());
    p.z = static_cast<float>(z + spec.noise_sigma * rng.normal());
    p.intensity = static_cast<float>(rng.uniform());
    scene.cloud.points.push_back(p);
    scene.labels.labels.push_back({sem, inst});
  };

  if (spec.ground_plane) {
    const ClassEntry* ground = nullptr;
    for (const auto& c : spec.class_table) {
      if (c.shape == Primitive::kPlane) {
        ground = &c;
        break;
      }
    }
    for (int i = 0; i < spec.ground_points; ++i) {
      const double x = rng.uniform(-half, half);
      const double y = rng.uniform(-half, half);
      emit(x, y, 0.0, ground->class_id, 0);
    }
  }

  constexpr int kMaxTries = 1000;
  std::vector<Placed> placed;
  std::uint32_t next_instance = 1;
  for (const auto& cls : spec.class_table) {
    if (cls.shape == Primitive::kPlane) continue;
    const auto count = rng.between(cls.count_min, cls.count_max);
    for (std::int64_t k = 0; k < count; ++k) {
      const double size = rng.uniform(cls.size_min, cls.size_max);
      const double radius = horizontal_radius(cls.shape, size);
      if (radius >= half) throw GenerationError("object of class '" + cls.name + "' does not fit the scene");
      Placed obj{0.0, 0.0, radius};
      bool ok = false;
      for (int attempt = 0; attempt < kMaxTries && !ok; ++attempt) {
        obj.cx = rng.uniform(-half + radius, half - radius);
        obj.cy = rng.uniform(-half + radius, half - radius);
        ok = std::all_of(placed.begin(), placed.end(), [&](const Placed& o) {
          const double need = std::max(o.radius + obj.radius, spec.min_spacing);
          return std::hypot(o.cx - obj.cx, o.cy - obj.cy) >= need;
        });
      }
      if (!ok) {
        throw GenerationError("cannot place object " + std::to_string(k + 1) + " of class '" +
                              cls.name + "' without overlap");
      }
      placed.push_back(obj);
      std::uint16_t inst = 0;
      if (cls.is_instance_class) {
        if (next_instance > 0xFFFF) throw GenerationError("too many instances for 16-bit ids");
        inst = static_cast<std::uint16_t>(next_instance++);
      }
      const double yaw = 2.0 * std::numbers::pi * rng.uniform();
      const double cs = std::cos(yaw), sn = std::sin(yaw);
      const auto n = rng.between(spec.points_per_object_min, spec.points_per_object_max);
      for (std::int64_t i = 0; i < n; ++i) {
        const Vec3 local = sample_surface(cls.shape, size, rng);
        emit(obj.cx + cs * local.x - sn * local.y, obj.cy + sn * local.x + cs * local.y, local.z,
             cls.class_id, inst);
      }
    }
  }
  return scene;
}

SceneDirectory SceneDirectory::open(const std::filesystem::path& root) {
  SceneDirectory dir;
  dir.root = root;
  std::ifstream in(root / "manifest.txt");
  if (!in) throw DataError("missing manifest.txt in " + root.string());
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto f = split_whitespace(line);
    if (f.empty()) continue;
    if (f.size() != 2) throw DataError("manifest line must be '<split> <stem>': " + line);
    dir.entries.push_back({f[0], f[1]});
  }
  return dir;
}

std::vector<std::string> SceneDirectory::stems(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e.stem);
  }
  return out;
}

LabeledScene SceneDirectory::load(const std::string& stem) const {
  LabeledScene scene;
  scene.cloud = read_point_bin(read_file(root / (stem + ".bin")));
  scene.labels = read_label_bin(read_file(root / (stem + ".label")));
  if (scene.cloud.size() != scene.labels.size()) {
    throw DataError("scene " + stem + ": point and label counts differ");
  }
  return scene;
}

void save_scene(const std::filesystem::path& dir, const std::string& stem, const LabeledScene& scene) {
  write_file(dir / (stem + ".bin"), write_point_bin(scene.cloud));
  write_file(dir / (stem + ".label"), write_label_bin(scene.labels));
}

void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries,
                    const std::string& comment) {
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  if (!comment.empty()) out << "# " << comment << "\n";
  for (const auto& e : entries) out << e.split << " " << e.stem << "\n";
}

}  // namespace iaseg
