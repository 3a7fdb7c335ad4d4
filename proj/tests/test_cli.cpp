#include "doctest.h"
#include "test_support.hpp"

#include "voxsurf/checkpoint.hpp"
#include "voxsurf/mesher.hpp"
#include "voxsurf/metrics.hpp"

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <iterator>

using namespace voxsurf;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(VOXSURF_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const std::filesystem::path& cli_dataset() {
  static const std::filesystem::path dir = [] {
    auto d = testing::temp_dir("cli_ds");
    const auto r = run("gen-dataset --scene sphere --views 4 --size 10 --out " + (d / "ds").string() + " --seed 3");
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

const char* kTinyConfig =
    "iterations = 3\nbatch_rays = 32\nvoxel_size = 1.0\nembedding_dim = 3\nfeature_dim = 3\n"
    "geometry_hidden = 8\ngeometry_layers = 3\nappearance_hidden = 8\nappearance_layers = 2\n"
    "direction_freqs = 1\nembedding_freqs = 1\nholdout_every = 0\n";

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("eval --mesh").code == 1);
  CHECK(run("train --dataset x --out y --bogus").code == 1);
  CHECK(run("--help").code == 0);
}

TEST_CASE("runtime errors") {
  const auto dir = testing::temp_dir("cli_err");
  CHECK(run("eval --mesh " + (dir / "none.ply").string() + " --gt " + (dir / "none.ply").string()).code == 2);
  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "no_such_key = 1\n";
  }
  const auto r = run("train --dataset " + (cli_dataset() / "ds").string() + " --config " + (dir / "bad.cfg").string() +
                     " --out " + (dir / "o").string());
  CHECK(r.code == 2);
}

TEST_CASE("eval prints chamfer and f-score") {
  const auto dir = testing::temp_dir("cli_eval");
  TriangleMesh a, b;
  a.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  a.triangles = {{0, 1, 2}};
  b.vertices = {Vec3(0, 0, 0.02), Vec3(1, 0, 0.02), Vec3(0, 1, 0.2)};
  b.triangles = {{0, 1, 2}};
  write_ply(a, dir / "a.ply");
  write_ply(b, dir / "b.ply");
  const auto r = run("eval --mesh " + (dir / "a.ply").string() + " --gt " + (dir / "b.ply").string() +
                     " --threshold 0.05");
  REQUIRE(r.code == 0);
  const auto nl = r.out.find('\n');
  CHECK(r.out.substr(0, nl) == "chamfer,f_score");
  double c = 0.0, f = 0.0;
  REQUIRE(std::sscanf(r.out.c_str() + nl + 1, "%lf,%lf", &c, &f) == 2);
  CHECK(c == doctest::Approx(chamfer(a.vertices, b.vertices)).epsilon(1e-8));
  CHECK(f == doctest::Approx(f_score(a.vertices, b.vertices, 0.05)).epsilon(1e-8));
  CHECK(f == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("train with a seed is reproducible") {
  const auto dir = testing::temp_dir("cli_train");
  {
    std::ofstream cfg(dir / "tiny.cfg");
    cfg << kTinyConfig;
  }
  const std::string base =
      "train --dataset " + (cli_dataset() / "ds").string() + " --config " + (dir / "tiny.cfg").string() + " --seed 7";
  REQUIRE(run(base + " --out " + (dir / "a").string()).code == 0);
  REQUIRE(run(base + " --out " + (dir / "b").string()).code == 0);
  const auto ca = slurp(dir / "a" / "final.vxsc");
  CHECK(!ca.empty());
  CHECK(ca == slurp(dir / "b" / "final.vxsc"));
  CHECK(std::filesystem::exists(dir / "a" / "metrics.csv"));

  REQUIRE(run("train --dataset " + (cli_dataset() / "ds").string() + " --config " + (dir / "tiny.cfg").string() +
              " --seed 8 --out " + (dir / "c").string())
              .code == 0);
  CHECK(ca != slurp(dir / "c" / "final.vxsc"));

  // the downstream commands accept the checkpoint
  const auto ck = (dir / "a" / "final.vxsc").string();
  CHECK(run("split --checkpoint " + ck + " --out " + (dir / "split.vxsc").string()).code == 0);
  CHECK(load_checkpoint(dir / "split.vxsc").grid.voxel_count() == 8 * load_checkpoint(ck).grid.voxel_count());
  const auto rendered = run("render --checkpoint " + ck + " --dataset " + (cli_dataset() / "ds").string() +
                            " --view 1 --out " + (dir / "r").string());
  CHECK(rendered.code == 0);
  CHECK(rendered.out.rfind("view,psnr,seconds\n1,", 0) == 0);
  CHECK(std::filesystem::exists(dir / "r" / "001.png"));
  CHECK(run("extract-mesh --checkpoint " + ck + " --cells 2 --out " + (dir / "m.ply").string()).code == 0);
  CHECK(run("edit --checkpoint " + ck + " --box -2,-2,-2,0,2,2 --op translate --offset -2,0,0 --out " +
            (dir / "e.json").string())
            .code == 0);
  CHECK(run("compose --instance " + ck + " --instance " + ck + ":0.5,0,0 --out " + (dir / "c.json").string()).code ==
        0);
  const auto hit = run("collide --scene " + (dir / "c.json").string());
  CHECK(hit.code == 0);
  CHECK(hit.out.rfind("colliding,pairs\n1,", 0) == 0);
  CHECK(run("edit --checkpoint " + ck + " --box -2,-2,-2,0,2,2 --op spin --out " + (dir / "x.json").string()).code ==
        1);
}
