#include "voxsurf/config.hpp"

#include "voxsurf/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace voxsurf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw Error("bad value for " + key + ": " + value);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw Error("bad value for " + key + ": " + value);
}

std::vector<std::uint64_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::uint64_t> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<std::uint64_t>(key, item));
  }
  return out;
}

Vec3 parse_vec3(const std::string& key, const std::string& value) {
  std::vector<double> v;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) v.push_back(parse_number<double>(key, trim(item)));
  if (v.size() != 3) throw Error("bad value for " + key + ": expected three comma-separated numbers");
  return {v[0], v[1], v[2]};
}

template <typename T>
std::string show(const T& v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::string show_list(const std::vector<std::uint64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Setting {
  const char* key;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define VX_NUM(name, field, type)                                                                        \
  Setting {                                                                                              \
    name, [](TrainConfig& c, const std::string& k, const std::string& v) { c.field = parse_number<type>(k, v); }, \
        [](const TrainConfig& c) { return show(c.field); }                                               \
  }
#define VX_BOOL(name, field)                                                                        \
  Setting {                                                                                         \
    name, [](TrainConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }, \
        [](const TrainConfig& c) { return std::string(c.field ? "true" : "false"); }                \
  }
#define VX_LIST(name, field)                                                                         \
  Setting {                                                                                          \
    name, [](TrainConfig& c, const std::string& k, const std::string& v) { c.field = parse_list(k, v); }, \
        [](const TrainConfig& c) { return show_list(c.field); }                                      \
  }

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = {
      VX_NUM("learning_rate", learning_rate, double),
      VX_NUM("batch_rays", batch_rays, std::size_t),
      VX_NUM("step_size", step_size, double),
      VX_NUM("tau", tau, double),
      VX_NUM("iterations", iterations, std::uint64_t),
      VX_NUM("prune_period", prune_period, std::uint64_t),
      VX_LIST("prune_at", prune_at),
      VX_LIST("split_at", split_at),
      VX_BOOL("split_first", split_first),
      VX_NUM("full_surface_at", full_surface_at, std::uint64_t),
      VX_NUM("first_surface_at", first_surface_at, std::uint64_t),
      VX_NUM("lambda_color", lambda_color, double),
      VX_NUM("lambda_eikonal", lambda_eikonal, double),
      VX_NUM("lambda_depth", lambda_depth, double),
      VX_BOOL("use_depth", use_depth),
      VX_NUM("depth_tolerance", depth_tolerance, double),
      VX_NUM("depth_inside_range", depth_inside_range, double),
      VX_NUM("occupancy_scale", occupancy_scale, double),
      VX_BOOL("depth_loss_paper_literal", depth_loss_paper_literal),
      VX_NUM("seed", seed, std::uint64_t),
      VX_NUM("voxel_size", voxel_size, double),
      VX_NUM("embedding_init", embedding_init, double),
      VX_NUM("prune_samples", prune_samples, int),
      VX_NUM("reg_points_per_voxel", reg_points_per_voxel, int),
      VX_BOOL("eikonal_on_samples", eikonal_on_samples),
      VX_NUM("max_hits", max_hits, std::size_t),
      VX_NUM("boost", boost, double),
      Setting{"background",
              [](TrainConfig& c, const std::string& k, const std::string& v) { c.background = parse_vec3(k, v); },
              [](const TrainConfig& c) {
                return show(c.background.x()) + "," + show(c.background.y()) + "," + show(c.background.z());
              }},
      VX_NUM("initial_log_s", initial_log_s, double),
      VX_BOOL("double_precision", double_precision),
      VX_NUM("chunk_rays", chunk_rays, std::size_t),
      VX_NUM("holdout_every", holdout_every, std::size_t),
      VX_NUM("eval_every", eval_every, std::uint64_t),
      VX_NUM("log_every", log_every, std::uint64_t),
      VX_NUM("checkpoint_every", checkpoint_every, std::uint64_t),
      VX_NUM("embedding_dim", field.embedding_dim, int),
      VX_NUM("feature_dim", field.feature_dim, int),
      VX_NUM("geometry_hidden", field.geometry_hidden, int),
      VX_NUM("geometry_layers", field.geometry_layers, int),
      VX_NUM("appearance_hidden", field.appearance_hidden, int),
      VX_NUM("appearance_layers", field.appearance_layers, int),
      VX_NUM("embedding_freqs", field.embedding_freqs, int),
      VX_NUM("direction_freqs", field.direction_freqs, int),
      VX_NUM("softplus_beta", field.softplus_beta, double),
  };
  return table;
}

#undef VX_NUM
#undef VX_BOOL
#undef VX_LIST

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error("config line " + std::to_string(number) + ": empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_setting(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& s : settings()) {
    if (key == s.key) {
      s.set(config, key, value);
      return;
    }
  }
  throw Error("unknown config key: " + key);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  TrainConfig config;
  for (const auto& [k, v] : parse_key_values(buf.str())) apply_setting(config, k, v);
  return config;
}

std::string dump_train_config(const TrainConfig& config) {
  std::string out;
  for (const auto& s : settings()) out += std::string(s.key) + " = " + s.get(config) + "\n";
  return out;
}

}  // namespace voxsurf
