#include "voxsurf/checkpoint.hpp"

#include "voxsurf/bytes.hpp"
#include "voxsurf/error.hpp"

#include <json.hpp>

#include <cstring>
#include <map>
#include <fstream>
#include <iterator>

namespace voxsurf {

namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void magic(const char* m) { bytes_.insert(bytes_.end(), m, m + 4); }
  void u32(std::uint32_t v) { raw(to_little(v)); }
  void u64(std::uint64_t v) { raw(to_little(v)); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void floats(std::span<const float> v) {
    for (float x : v) f32(x);
  }
  void block(std::span<const std::uint8_t> b) {
    u64(b.size());
    bytes_.insert(bytes_.end(), b.begin(), b.end());
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  template <typename T>
  void raw(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const char* what) : bytes_(bytes), what_(what) {}

  void magic(const char* m) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, m, 4) != 0) throw IoError(std::string(what_) + ": bad magic");
    pos_ += 4;
  }
  void version() {
    if (u32() != kVersion) throw IoError(std::string(what_) + ": unsupported version");
  }
  std::uint32_t u32() { return to_little(raw<std::uint32_t>()); }
  std::uint64_t u64() { return to_little(raw<std::uint64_t>()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  void floats(std::span<float> out) {
    need(out.size() * 4);
    for (auto& x : out) x = f32();
  }
  std::span<const std::uint8_t> block() {
    const std::uint64_t n = u64();
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void finish() const {
    if (pos_ != bytes_.size()) throw IoError(std::string(what_) + ": trailing bytes");
  }
  /// Guards size fields before allocating.
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw IoError(std::string(what_) + ": truncated");
  }
  void need(std::uint64_t count, std::uint64_t item) const {
    if (item != 0 && count > (bytes_.size() - pos_) / item) throw IoError(std::string(what_) + ": truncated");
  }

 private:
  template <typename T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_grid(const VoxelGrid& grid) {
  Writer w;
  w.magic("VXSG");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(grid.level()));
  w.u64(grid.voxel_count());
  w.u64(grid.vertex_count());
  w.u32(static_cast<std::uint32_t>(grid.embedding_dim()));
  for (int a = 0; a < 3; ++a) w.f64(grid.origin()[a]);
  w.f64(grid.voxel_size());
  for (const auto& v : grid.voxels()) {
    w.i32(v.x);
    w.i32(v.y);
    w.i32(v.z);
  }
  for (std::uint32_t v = 0; v < grid.vertex_count(); ++v) {
    const Lattice& k = grid.vertex_keys()[v];
    w.i32(k.x);
    w.i32(k.y);
    w.i32(k.z);
    w.floats(grid.embedding(v));
  }
  return w.take();
}

VoxelGrid decode_grid(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "grid");
  r.magic("VXSG");
  r.version();
  const int level = static_cast<int>(r.u32());
  const std::uint64_t voxels = r.u64();
  const std::uint64_t vertices = r.u64();
  const int dim = static_cast<int>(r.u32());
  if (dim <= 0) throw IoError("grid: bad embedding dimension");
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = r.f64();
  const double size = r.f64();
  r.need(voxels, 12);
  std::vector<Lattice> lattice(voxels);
  for (auto& v : lattice) {
    v.x = r.i32();
    v.y = r.i32();
    v.z = r.i32();
  }
  VoxelGrid grid = VoxelGrid::from_voxels(origin, size, level, dim, std::move(lattice));
  if (grid.vertex_count() != vertices) throw IoError("grid: vertex count mismatch");
  r.need(vertices, 12 + 4 * static_cast<std::uint64_t>(dim));
  for (std::uint64_t i = 0; i < vertices; ++i) {
    Lattice k;
    k.x = r.i32();
    k.y = r.i32();
    k.z = r.i32();
    const auto v = grid.find_vertex(k);
    if (!v) throw IoError("grid: unknown vertex key");
    r.floats(grid.embedding(*v));
  }
  r.finish();
  return grid;
}

std::vector<std::uint8_t> encode_field(const FieldModel& model) {
  const FieldConfig& c = model.config();
  Writer w;
  w.magic("VXSF");
  w.u32(kVersion);
  for (int v : {c.embedding_dim, c.feature_dim, c.geometry_hidden, c.geometry_layers, c.appearance_hidden,
                c.appearance_layers, c.embedding_freqs, c.direction_freqs})
    w.u32(static_cast<std::uint32_t>(v));
  w.f64(c.softplus_beta);
  const auto params = model.params();
  w.u64(params.size() - 1);
  w.floats(params.first(params.size() - 1));
  w.f32(model.log_s());
  return w.take();
}

FieldModel decode_field(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "field");
  r.magic("VXSF");
  r.version();
  FieldConfig c;
  for (int* v : {&c.embedding_dim, &c.feature_dim, &c.geometry_hidden, &c.geometry_layers, &c.appearance_hidden,
                 &c.appearance_layers, &c.embedding_freqs, &c.direction_freqs}) {
    const std::uint32_t x = r.u32();
    if (x > 1u << 20) throw IoError("field: implausible network shape");
    *v = static_cast<int>(x);
  }
  c.softplus_beta = r.f64();
  const std::uint64_t count = r.u64();
  r.need(count, 4);
  FieldModel model(c, 0);
  if (count + 1 != model.params().size()) throw IoError("field: parameter count mismatch");
  r.floats(model.params().first(count));
  model.set_log_s(r.f32());
  r.finish();
  return model;
}

void save_grid(const VoxelGrid& grid, const std::filesystem::path& path) { write_file(path, encode_grid(grid)); }
VoxelGrid load_grid(const std::filesystem::path& path) { return decode_grid(read_file(path)); }
void save_field(const FieldModel& model, const std::filesystem::path& path) { write_file(path, encode_field(model)); }
FieldModel load_field(const std::filesystem::path& path) { return decode_field(read_file(path)); }

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  Writer w;
  w.magic("VXSC");
  w.u32(kVersion);
  w.u64(state.iteration);
  w.block(encode_grid(state.grid));
  w.block(encode_field(state.model));
  w.u64(state.param_m.size());
  w.floats(state.param_m);
  w.floats(state.param_v);
  w.u64(state.embedding_m.size());
  w.floats(state.embedding_m);
  w.floats(state.embedding_v);
  write_file(path, w.take());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes, "checkpoint");
  r.magic("VXSC");
  r.version();
  TrainState s;
  s.iteration = r.u64();
  s.grid = decode_grid(r.block());
  s.model = decode_field(r.block());
  const std::uint64_t np = r.u64();
  if (np != s.model.params().size()) throw IoError("checkpoint: optimizer size mismatch");
  r.need(np, 8);
  s.param_m.resize(np);
  s.param_v.resize(np);
  r.floats(s.param_m);
  r.floats(s.param_v);
  const std::uint64_t ne = r.u64();
  if (ne != s.grid.embeddings().size()) throw IoError("checkpoint: optimizer size mismatch");
  r.need(ne, 8);
  s.embedding_m.resize(ne);
  s.embedding_v.resize(ne);
  r.floats(s.embedding_m);
  r.floats(s.embedding_v);
  r.finish();
  return s;
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("scene: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void save_scene(std::span<const SceneEntry> entries, const std::filesystem::path& path) {
  nlohmann::json scene;
  scene["format"] = "voxsurf-scene";
  scene["version"] = 1;
  scene["instances"] = nlohmann::json::array();
  const auto dir = path.parent_path();
  const std::string stem = path.stem().string();
  std::map<const FieldModel*, std::string> fields;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const SceneEntry& e = entries[i];
    if (!e.grid || !e.model) throw IoError("scene: instance without grid or field");
    const std::string grid_name = stem + "_" + std::to_string(i) + ".vxsg";
    save_grid(*e.grid, dir / grid_name);
    auto [it, fresh] = fields.emplace(e.model.get(), stem + "_field" + std::to_string(fields.size()) + ".vxsf");
    if (fresh) save_field(*e.model, dir / it->second);
    nlohmann::json rot = nlohmann::json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot.push_back(e.transform.rotation(r, c));
    scene["instances"].push_back({{"grid", grid_name},
                                  {"field", it->second},
                                  {"rotation", rot},
                                  {"translation", vec_json(e.transform.translation)},
                                  {"scale", e.transform.scale}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << scene.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SceneEntry> load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const auto dir = path.parent_path();
  std::vector<SceneEntry> entries;
  std::map<std::string, std::shared_ptr<const FieldModel>> fields;
  try {
    const auto scene = nlohmann::json::parse(in);
    for (const auto& j : scene.at("instances")) {
      SceneEntry e;
      e.grid = std::make_shared<const VoxelGrid>(load_grid(dir / j.at("grid").get<std::string>()));
      const std::string field = j.at("field").get<std::string>();
      auto it = fields.find(field);
      if (it == fields.end()) it = fields.emplace(field, std::make_shared<const FieldModel>(load_field(dir / field))).first;
      e.model = it->second;
      const auto& rot = j.at("rotation");
      if (rot.size() != 9) throw IoError("scene: rotation needs 9 entries");
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) e.transform.rotation(r, c) = rot[r * 3 + c].get<double>();
      e.transform.translation = json_vec(j.at("translation"));
      e.transform.scale = j.at("scale").get<double>();
      entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad scene file: ") + e.what());
  }
  return entries;
}

SceneGrid build_scene(std::span<const SceneEntry> entries) {
  std::map<const FieldModel*, std::shared_ptr<const RadianceField>> fields;
  std::vector<Instance> instances;
  for (const auto& e : entries) {
    auto& f = fields[e.model.get()];
    if (!f) f = std::make_shared<NeuralField>(*e.model);
    instances.push_back({e.grid, e.transform, f});
  }
  return compose(std::move(instances));
}

}  // namespace voxsurf
