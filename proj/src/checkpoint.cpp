#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "iaseg/errors.hpp"
#include "iaseg/trainer.hpp"

namespace iaseg {

namespace {

constexpr char kMagic[8] = {'I', 'A', 'S', 'E', 'G', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void i32(int v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void matrix_body(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }
  void matrix(const Matrix& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    matrix_body(m);
  }
  void indices(const std::vector<std::uint32_t>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (auto x : v) u32(x);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return in_[need(1)]; }
  std::uint32_t u32() {
    const auto at = need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[at + i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto at = need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[at + i]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  int i32() { return static_cast<int>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    const auto at = need(n);
    return std::string(reinterpret_cast<const char*>(in_.data() + at), n);
  }
  void matrix_body(Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  }
  Matrix matrix() {
    const auto r = u32();
    const auto c = u32();
    if (static_cast<std::uint64_t>(r) * c * 8 > remaining()) throw MalformedFile("checkpoint: truncated matrix");
    Matrix m(r, c);
    matrix_body(m);
    return m;
  }
  std::vector<std::uint32_t> indices() {
    const auto n = u32();
    if (static_cast<std::uint64_t>(n) * 4 > remaining()) throw MalformedFile("checkpoint: truncated index list");
    std::vector<std::uint32_t> v(n);
    for (auto& x : v) x = u32();
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::size_t need(std::size_t n) {
    if (in_.size() - pos_ < n) throw MalformedFile("checkpoint: unexpected end of data");
    const auto at = pos_;
    pos_ += n;
    return at;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const ModelConfig& c) {
  w.i32(c.backbone.d0);
  w.u32(static_cast<std::uint32_t>(c.backbone.hidden_dims.size()));
  for (int h : c.backbone.hidden_dims) w.i32(h);
  w.i32(c.backbone.descriptor_dim);
  w.i32(c.backbone.num_classes);
  w.f64(c.backbone.neighbor_radius);
  w.i32(c.backbone.pooling_levels);
  w.i32(c.heads.descriptor_dim);
  w.i32(c.heads.num_classes);
  w.i32(c.heads.cls_hidden);
  w.i32(c.heads.recon_hidden);
  w.i32(c.heads.latent_dim);
  w.i32(c.heads.recon_points);
  w.f64(c.heads.keep_fraction);
  w.f64(c.voxel_size);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.backbone.d0 = r.i32();
  const auto n = r.u32();
  if (n > 64) throw MalformedFile("checkpoint: implausible layer count");
  c.backbone.hidden_dims.resize(n);
  for (auto& h : c.backbone.hidden_dims) h = r.i32();
  c.backbone.descriptor_dim = r.i32();
  c.backbone.num_classes = r.i32();
  c.backbone.neighbor_radius = r.f64();
  c.backbone.pooling_levels = r.i32();
  c.heads.descriptor_dim = r.i32();
  c.heads.num_classes = r.i32();
  c.heads.cls_hidden = r.i32();
  c.heads.recon_hidden = r.i32();
  c.heads.latent_dim = r.i32();
  c.heads.recon_points = r.i32();
  c.heads.keep_fraction = r.f64();
  c.voxel_size = r.f64();
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state) {
  Writer w;
  for (char ch : kMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(kVersion);
  write_config(w, state.model.config);

  const auto& params = state.model.params;
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.str(params.name(i));
    w.u32(static_cast<std::uint32_t>(params.value(i).rows()));
    w.u32(static_cast<std::uint32_t>(params.value(i).cols()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) w.matrix_body(params.value(i));

  w.i64(state.step);
  w.i32(state.epochs_done);
  const auto& opt = state.optimizer;
  w.f64(opt.hp.beta1);
  w.f64(opt.hp.beta2);
  w.f64(opt.hp.eps);
  w.i64(opt.step);
  w.u32(static_cast<std::uint32_t>(opt.first_moment.size()));
  for (std::size_t i = 0; i < opt.first_moment.size(); ++i) {
    w.matrix(opt.first_moment[i]);
    w.matrix(opt.second_moment[i]);
  }
  w.str(state.shuffle_rng.save());
  w.str(state.head_rng.save());

  w.u8(state.cache_built ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(state.cache.size()));
  for (const auto& set : state.cache) {
    w.u32(static_cast<std::uint32_t>(set.instances.size()));
    for (const auto& inst : set.instances) {
      w.u32(inst.class_id);
      w.indices(inst.point_indices);
      w.indices(inst.voxel_indices);
    }
    w.u32(static_cast<std::uint32_t>(set.assignment.size()));
    for (int a : set.assignment) w.i32(a);
  }
  return w.take();
}

TrainState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw MalformedFile("checkpoint: bad magic");
  }
  Reader r(bytes.subspan(sizeof(kMagic)));
  if (r.u32() != kVersion) throw MalformedFile("checkpoint: unsupported version");
  const ModelConfig config = read_config(r);
  try {
    config.validate();
  } catch (const ArgumentError& e) {
    throw MalformedFile(std::string("checkpoint: invalid model dims: ") + e.what());
  }

  TrainState state;
  state.model = Model(config, 0);
  auto& params = state.model.params;
  if (r.u32() != params.size()) throw MalformedFile("checkpoint: parameter count does not match the model dims");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (name != params.name(i) || rows != params.value(i).rows() || cols != params.value(i).cols()) {
      throw MalformedFile("checkpoint: layer '" + name + "' does not match the model layout");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) r.matrix_body(params.value(i));

  state.step = r.i64();
  state.epochs_done = r.i32();
  auto& opt = state.optimizer;
  opt.hp.beta1 = r.f64();
  opt.hp.beta2 = r.f64();
  opt.hp.eps = r.f64();
  opt.step = r.i64();
  const auto n_moments = r.u32();
  if (n_moments != params.size()) throw MalformedFile("checkpoint: optimizer state does not match the parameters");
  for (std::size_t i = 0; i < n_moments; ++i) {
    opt.first_moment.push_back(r.matrix());
    opt.second_moment.push_back(r.matrix());
  }
  try {
    state.shuffle_rng.restore(r.str());
    state.head_rng.restore(r.str());
  } catch (const std::exception& e) {
    throw MalformedFile(std::string("checkpoint: bad generator state: ") + e.what());
  }

  state.cache_built = r.u8() != 0;
  const auto n_sets = r.u32();
  for (std::uint32_t s = 0; s < n_sets; ++s) {
    InstanceSet set;
    const auto n_inst = r.u32();
    for (std::uint32_t k = 0; k < n_inst; ++k) {
      Instance inst;
      inst.class_id = static_cast<std::uint16_t>(r.u32());
      inst.point_indices = r.indices();
      inst.voxel_indices = r.indices();
      set.instances.push_back(std::move(inst));
    }
    const auto n_assign = r.u32();
    if (static_cast<std::uint64_t>(n_assign) * 4 > r.remaining()) throw MalformedFile("checkpoint: truncated cache");
    set.assignment.resize(n_assign);
    for (auto& a : set.assignment) a = r.i32();
    state.cache.push_back(std::move(set));
  }
  if (r.remaining() != 0) throw MalformedFile("checkpoint: trailing bytes");
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const auto bytes = encode_checkpoint(state);
  write_file(path, bytes);
}

TrainState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace iaseg
