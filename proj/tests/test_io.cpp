#include "doctest.h"
#include "test_support.hpp"

#include "voxsurf/checkpoint.hpp"
#include "voxsurf/config.hpp"
#include "voxsurf/error.hpp"
#include "voxsurf/image_io.hpp"

#include <fstream>
#include <iterator>

using namespace voxsurf;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainState trained_state() {
  TrainConfig c;
  c.voxel_size = 0.5;
  c.field.embedding_dim = 3;
  c.field.feature_dim = 3;
  c.field.geometry_hidden = 8;
  c.field.geometry_layers = 3;
  c.field.appearance_hidden = 8;
  c.field.appearance_layers = 2;
  c.field.embedding_freqs = 2;
  c.field.direction_freqs = 1;
  TrainState s = TrainState::create({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, c);
  split_state(s);
  // fill the moments with recognisable values
  for (std::size_t i = 0; i < s.param_m.size(); ++i) {
    s.param_m[i] = 0.001f * static_cast<float>(i);
    s.param_v[i] = 1e-6f * static_cast<float>(i);
  }
  for (std::size_t i = 0; i < s.embedding_m.size(); ++i) s.embedding_m[i] = -0.5f / static_cast<float>(i + 1);
  s.iteration = 1234567;
  s.model.set_log_s(2.5f);
  return s;
}

}  // namespace

TEST_CASE("checkpoint round trip is exact") {
  const auto dir = testing::temp_dir("checkpoint");
  const TrainState s = trained_state();
  save_checkpoint(s, dir / "a.vxsc");
  const TrainState t = load_checkpoint(dir / "a.vxsc");
  save_checkpoint(t, dir / "b.vxsc");
  CHECK(slurp(dir / "a.vxsc") == slurp(dir / "b.vxsc"));

  CHECK(t.iteration == s.iteration);
  CHECK(t.grid.level() == s.grid.level());
  CHECK(t.grid.voxels() == s.grid.voxels());
  CHECK(t.grid.vertex_keys() == s.grid.vertex_keys());
  CHECK(std::equal(t.grid.embeddings().begin(), t.grid.embeddings().end(), s.grid.embeddings().begin()));
  CHECK(t.grid.origin() == s.grid.origin());
  CHECK(t.grid.voxel_size() == s.grid.voxel_size());
  CHECK(std::equal(t.model.params().begin(), t.model.params().end(), s.model.params().begin()));
  CHECK(t.param_m == s.param_m);
  CHECK(t.param_v == s.param_v);
  CHECK(t.embedding_m == s.embedding_m);
  CHECK(t.embedding_v == s.embedding_v);

  // identical renders
  Camera cam;
  cam.width = cam.height = 6;
  cam.fx = cam.fy = 5.0;
  cam.cx = cam.cy = 3.0;
  cam.position = Vec3(0.1, 0.0, -2.5);
  RenderConfig rc;
  auto render = [&](const TrainState& st) {
    auto grid = std::make_shared<const VoxelGrid>(st.grid);
    return render_image(single_instance(grid, std::make_shared<NeuralField>(st.model)), cam, rc);
  };
  const auto ia = render(s);
  const auto ib = render(t);
  CHECK(ia.rgb == ib.rgb);
  CHECK(ia.depth == ib.depth);
}

TEST_CASE("damaged checkpoints fail cleanly") {
  const auto dir = testing::temp_dir("checkpoint_bad");
  save_checkpoint(trained_state(), dir / "good.vxsc");
  const auto bytes = slurp(dir / "good.vxsc");
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VXSC");

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    spit(dir / "cut.vxsc", std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)));
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.vxsc"), IoError);
  }
  auto bad = bytes;
  bad[0] = 'X';
  spit(dir / "magic.vxsc", bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "magic.vxsc"), doctest::Contains("bad magic"), IoError);
  bad = bytes;
  bad[4] = 99;
  spit(dir / "version.vxsc", bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "version.vxsc"), doctest::Contains("version"), IoError);
  bad = bytes;
  bad.push_back(0);
  spit(dir / "long.vxsc", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "long.vxsc"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.vxsc"), IoError);
}

TEST_CASE("grid and field sections") {
  const TrainState s = trained_state();
  const auto gb = encode_grid(s.grid);
  CHECK(std::string(gb.begin(), gb.begin() + 4) == "VXSG");
  const VoxelGrid g = decode_grid(gb);
  CHECK(encode_grid(g) == gb);
  const auto fb = encode_field(s.model);
  CHECK(std::string(fb.begin(), fb.begin() + 4) == "VXSF");
  const FieldModel m = decode_field(fb);
  CHECK(encode_field(m) == fb);
  CHECK(m.log_s() == 2.5f);
  CHECK(m.config().geometry_hidden == 8);
  CHECK_THROWS_AS(decode_field(gb), IoError);
  CHECK_THROWS_AS(decode_grid(std::span<const std::uint8_t>(gb.data(), gb.size() - 3)), IoError);
}

TEST_CASE("scene files") {
  const auto dir = testing::temp_dir("scene");
  const TrainState s = trained_state();
  auto grid = std::make_shared<const VoxelGrid>(s.grid);
  auto model = std::make_shared<const FieldModel>(s.model);
  Similarity moved;
  moved.translation = Vec3(2.0, 0.0, 0.0);
  moved.scale = 0.5;
  const std::vector<SceneEntry> entries{{grid, Similarity{}, model}, {grid, moved, model}};
  save_scene(entries, dir / "scene.json");
  const auto back = load_scene(dir / "scene.json");
  REQUIRE(back.size() == 2);
  CHECK(back[1].transform.translation == moved.translation);
  CHECK(back[1].transform.scale == 0.5);
  CHECK(back[0].grid->voxels() == grid->voxels());
  const auto scene = build_scene(back);
  CHECK(scene.size() == 2);
  CHECK_THROWS_AS(load_scene(dir / "nope.json"), IoError);
}

TEST_CASE("config parsing") {
  const auto kv = parse_key_values("# comment\n a = 1 \n\nb=two # trailing\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"a", "1"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"b", "two"});
  CHECK_THROWS_AS(parse_key_values("novalue\n"), Error);

  TrainConfig c;
  apply_setting(c, "learning_rate", "5e-3");
  apply_setting(c, "split_at", "10,20");
  apply_setting(c, "use_depth", "true");
  apply_setting(c, "background", "1,0.5,0");
  apply_setting(c, "geometry_hidden", "32");
  CHECK(c.learning_rate == 5e-3);
  CHECK(c.split_at == std::vector<std::uint64_t>{10, 20});
  CHECK(c.use_depth);
  CHECK(c.background == Vec3(1, 0.5, 0));
  CHECK(c.field.geometry_hidden == 32);
  CHECK_THROWS_WITH_AS(apply_setting(c, "learnin_rate", "1"), "unknown config key: learnin_rate", Error);
  CHECK_THROWS_AS(apply_setting(c, "batch_rays", "many"), Error);
  CHECK_THROWS_AS(apply_setting(c, "use_depth", "perhaps"), Error);

  // dump then reload reproduces every value
  const auto dir = testing::temp_dir("config");
  {
    std::ofstream out(dir / "c.cfg");
    out << dump_train_config(c);
  }
  const TrainConfig d = load_train_config(dir / "c.cfg");
  CHECK(dump_train_config(d) == dump_train_config(c));
  {
    std::ofstream out(dir / "bad.cfg");
    out << "iterations = 10\nmystery = 3\n";
  }
  CHECK_THROWS_WITH_AS(load_train_config(dir / "bad.cfg"), "unknown config key: mystery", Error);
}

TEST_CASE("image files") {
  const auto dir = testing::temp_dir("images");
  Image img;
  img.width = 3;
  img.height = 2;
  img.channels = 3;
  for (int i = 0; i < 18; ++i) img.data.push_back(static_cast<float>(i) / 17.0f);
  write_png(dir / "a.png", img);
  const Image back = read_png(dir / "a.png");
  REQUIRE(back.width == 3);
  REQUIRE(back.height == 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 255.0f + 1e-6f);

  Image depth;
  depth.width = 2;
  depth.height = 3;
  depth.channels = 1;
  depth.data = {0.0f, 1.5f, 2.25f, -3.0f, 1e-7f, 1e9f};
  write_pfm(dir / "d.pfm", depth);
  const Image d = read_pfm(dir / "d.pfm");
  CHECK(d.width == 2);
  CHECK(d.height == 3);
  CHECK(d.data == depth.data);
  CHECK(d.at(1, 0, 0) == 1.5f);

  CHECK_THROWS_AS(read_png(dir / "d.pfm"), IoError);
  CHECK_THROWS_AS(read_pfm(dir / "a.png"), IoError);
}
