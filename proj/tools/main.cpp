#include "voxsurf/checkpoint.hpp"
#include "voxsurf/config.hpp"
#include "voxsurf/error.hpp"
#include "voxsurf/mesher.hpp"
#include "voxsurf/metrics.hpp"
#include "voxsurf/synth.hpp"
#include "voxsurf/trainer.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using namespace voxsurf;

namespace {

Vec3 parse_vec3(const std::string& text) {
  std::vector<double> v;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) v.push_back(std::stod(item));
  if (v.size() != 3) throw Error("expected x,y,z: " + text);
  return {v[0], v[1], v[2]};
}

Aabb parse_box(const std::string& text) {
  std::vector<double> v;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) v.push_back(std::stod(item));
  if (v.size() != 6) throw Error("expected x0,y0,z0,x1,y1,z1: " + text);
  return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
}

AnalyticScene scene_from_arg(const std::string& arg) {
  if (arg.ends_with(".json")) {
    std::ifstream in(arg);
    if (!in) throw IoError("cannot open " + arg);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scene(buf.str());
  }
  return builtin_scene(arg);
}

RenderConfig render_config(const TrainConfig& c, std::uint64_t iteration) {
  RenderConfig rc;
  rc.step_size = c.step_size;
  rc.max_hits = c.max_hits;
  rc.background = c.background;
  rc.seed = c.seed;
  rc.jitter = false;
  rc.phase = phase_at(c, iteration);
  rc.boost = c.boost;
  return rc;
}

TrainConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig c = path.empty() ? TrainConfig{} : load_train_config(path);
  for (const auto& o : overrides) {
    const auto kv = parse_key_values(o);
    if (kv.size() != 1) throw Error("override must be key=value: " + o);
    apply_setting(c, kv[0].first, kv[0].second);
  }
  return c;
}

void save_image(const RenderedImage& img, const std::filesystem::path& png, const std::filesystem::path& pfm) {
  write_png(png, {img.width, img.height, 3, img.rgb});
  write_pfm(pfm, {img.width, img.height, 1, img.depth});
}

std::vector<SceneEntry> scene_of_checkpoint(const TrainState& s) {
  return {SceneEntry{std::make_shared<const VoxelGrid>(s.grid), Similarity{},
                     std::make_shared<const FieldModel>(s.model)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-voxel neural implicit surfaces: dataset synthesis, training, rendering and meshing"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: runtime default)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random choice");

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "Render a synthetic RGB-D dataset from an analytic scene");
  std::string scene_arg = "sphere";
  std::string out_dir;
  DatasetOptions dopt;
  int size = 0;
  gen->add_option("--scene", scene_arg, "Builtin scene (sphere, torus, csg) or a JSON scene file");
  gen->add_option("--views", dopt.views, "Number of views");
  gen->add_option("--size", size, "Square image size (overrides width/height)");
  gen->add_option("--width", dopt.width, "Image width");
  gen->add_option("--height", dopt.height, "Image height");
  gen->add_option("--radius", dopt.radius, "Camera distance from the scene centre");
  gen->add_option("--fov", dopt.fov_y_degrees, "Vertical field of view in degrees");
  gen->add_option("--out", out_dir, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a field on a dataset");
  std::string dataset_dir, config_path;
  std::vector<std::string> overrides;
  train->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  train->add_option("--config", config_path, "Flat key = value config file");
  train->add_option("--set", overrides, "Config override key=value (repeatable)");
  train->add_option("--out", out_dir, "Output directory for checkpoints and metrics.csv")->required();
  std::string resume_path;
  train->add_option("--resume", resume_path, "Continue from a checkpoint");
  bool dump_config = false;
  train->add_flag("--print-config", dump_config, "Print the effective config before training");

  // render
  auto* render = app.add_subcommand("render", "Render views of a checkpoint or scene file");
  std::string checkpoint, scene_path;
  std::vector<int> render_views;
  render->add_option("--checkpoint", checkpoint, "Checkpoint (.vxsc)");
  render->add_option("--scene", scene_path, "Scene file written by edit or compose");
  render->add_option("--dataset", dataset_dir, "Dataset providing cameras (and images for PSNR)")->required();
  render->add_option("--view", render_views, "View indices (default: all)");
  render->add_option("--config", config_path, "Config for render settings");
  render->add_option("--set", overrides, "Config override key=value");
  render->add_option("--out", out_dir, "Output directory")->required();

  // extract-mesh
  auto* mesh_cmd = app.add_subcommand("extract-mesh", "Marching cubes over the retained voxels");
  std::string mesh_out;
  int cells = 8;
  bool no_attributes = false;
  mesh_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (.vxsc)")->required();
  mesh_cmd->add_option("--cells", cells, "Marching-cubes cells per voxel edge");
  mesh_cmd->add_flag("--no-attributes", no_attributes, "Skip normals and colours");
  mesh_cmd->add_option("--out", mesh_out, "Output mesh (.ply or .obj)")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Chamfer distance and F-score between two meshes");
  std::string mesh_a, mesh_b;
  double threshold = 0.05;
  std::size_t samples = 0;
  bool squared = false;
  eval->add_option("--mesh", mesh_a, "Reconstructed mesh")->required();
  eval->add_option("--gt", mesh_b, "Ground-truth mesh")->required();
  eval->add_option("--threshold", threshold, "F-score distance threshold");
  eval->add_option("--samples", samples, "Surface samples per mesh (0: use vertices)");
  eval->add_flag("--squared", squared, "Squared Chamfer variant");

  // prune / split
  auto* prune_cmd = app.add_subcommand("prune", "Drop voxels far from the zero level set");
  double tau = 0.01;
  int prune_samples = 512;
  std::string out_file;
  prune_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (.vxsc)")->required();
  prune_cmd->add_option("--tau", tau, "Distance threshold");
  prune_cmd->add_option("--samples", prune_samples, "Samples per voxel");
  prune_cmd->add_option("--out", out_file, "Output checkpoint")->required();
  auto* split_cmd = app.add_subcommand("split", "Subdivide every voxel into eight");
  split_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (.vxsc)")->required();
  split_cmd->add_option("--out", out_file, "Output checkpoint")->required();

  // edit
  auto* edit = app.add_subcommand("edit", "Translate, scale, duplicate or delete a box of voxels");
  std::string box_arg, op_name, offset_arg = "0,0,0", pivot_arg = "0,0,0";
  double factor = 1.0;
  bool allow_overlap = false;
  edit->add_option("--checkpoint", checkpoint, "Checkpoint (.vxsc)")->required();
  edit->add_option("--box", box_arg, "Selection box x0,y0,z0,x1,y1,z1 (voxel centres inside)")->required();
  edit->add_option("--op", op_name, "translate | scale | duplicate | delete")
      ->required()
      ->check(CLI::IsMember({"translate", "scale", "duplicate", "delete"}));
  edit->add_option("--offset", offset_arg, "Offset x,y,z for translate/duplicate");
  edit->add_option("--factor", factor, "Scale factor");
  edit->add_option("--pivot", pivot_arg, "Scale pivot x,y,z");
  edit->add_flag("--allow-overlap", allow_overlap, "Permit moved voxels to land on occupied ones");
  edit->add_option("--out", out_file, "Output scene file (.json)")->required();

  // compose
  auto* compose_cmd = app.add_subcommand("compose", "Place several checkpoints in one scene");
  std::vector<std::string> instance_args;
  compose_cmd->add_option("--instance", instance_args,
                          "checkpoint[:tx,ty,tz[:scale]] (repeatable)")
      ->required();
  compose_cmd->add_option("--out", out_file, "Output scene file (.json)")->required();

  // collide
  auto* collide = app.add_subcommand("collide", "Voxel-level collision between two scene instances");
  std::size_t inst_a = 0, inst_b = 1;
  collide->add_option("--scene", scene_path, "Scene file")->required();
  collide->add_option("--a", inst_a, "First instance index");
  collide->add_option("--b", inst_b, "Second instance index");

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  seed_given = seed_opt->count() > 0;
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*gen) {
      if (size > 0) dopt.width = dopt.height = size;
      const auto ds = gen_dataset(scene_from_arg(scene_arg), dopt, out_dir, seed);
      std::cout << "wrote " << ds.views.size() << " views to " << out_dir << "\n";
    } else if (*train) {
      TrainConfig cfg = config_from(config_path, overrides);
      if (seed_given) cfg.seed = seed;
      if (dump_config) std::cout << dump_train_config(cfg);
      const auto ds = load_dataset(dataset_dir);
      TrainOptions opts;
      opts.out_dir = out_dir;
      opts.on_log = [](const LogRow& r) {
        if (r.event == "step")
          std::printf("it %llu loss %.5f color %.5f eik %.5f depth %.5f voxels %zu s %.2f (%.0fs)\n",
                      static_cast<unsigned long long>(r.iteration), r.loss, r.color, r.eikonal, r.depth, r.voxels,
                      r.s, r.seconds);
        else if (r.event == "eval")
          std::printf("it %llu psnr %.3f\n", static_cast<unsigned long long>(r.iteration), r.psnr);
        else
          std::printf("it %llu %s voxels %zu level %d phase %s\n", static_cast<unsigned long long>(r.iteration),
                      r.event.c_str(), r.voxels, r.level, r.phase.c_str());
        std::fflush(stdout);
      };
      std::optional<TrainState> resumed;
      if (!resume_path.empty()) {
        resumed = load_checkpoint(resume_path);
        opts.resume = &*resumed;
      }
      const auto result = run_training(ds, cfg, opts);
      std::printf("final held-out psnr %.3f\n", result.holdout_psnr);
    } else if (*render) {
      if (checkpoint.empty() == scene_path.empty()) throw Error("render needs exactly one of --checkpoint or --scene");
      TrainConfig cfg = config_from(config_path, overrides);
      if (seed_given) cfg.seed = seed;
      std::vector<SceneEntry> entries;
      std::uint64_t iteration = 0;
      if (!checkpoint.empty()) {
        const TrainState s = load_checkpoint(checkpoint);
        iteration = s.iteration;
        entries = scene_of_checkpoint(s);
      } else {
        entries = load_scene(scene_path);
        iteration = std::numeric_limits<std::uint64_t>::max();
      }
      const SceneGrid scene = build_scene(entries);
      const auto ds = load_dataset(dataset_dir);
      std::filesystem::create_directories(out_dir);
      std::vector<int> views = render_views;
      if (views.empty())
        for (int i = 0; i < static_cast<int>(ds.views.size()); ++i) views.push_back(i);
      std::cout << "view,psnr,seconds\n";
      for (int v : views) {
        const auto img = render_image(scene, ds.views.at(static_cast<std::size_t>(v)).camera, render_config(cfg, iteration));
        char name[32];
        std::snprintf(name, sizeof name, "%03d", v);
        save_image(img, std::filesystem::path(out_dir) / (std::string(name) + ".png"),
                   std::filesystem::path(out_dir) / (std::string(name) + "_depth.pfm"));
        std::cout << v << ',' << psnr(img.rgb, ds.views[static_cast<std::size_t>(v)].rgb.data) << ',' << img.seconds
                  << "\n";
      }
    } else if (*mesh_cmd) {
      const TrainState s = load_checkpoint(checkpoint);
      const NeuralField field(s.model);
      TriangleMesh mesh = extract_mesh(s.grid, field, cells);
      if (!no_attributes) {
        const auto report = mesh_normals_and_colors(mesh, s.grid, s.model);
        if (report.clamped > 0)
          std::cerr << "warning: " << report.clamped << " vertices outside every voxel, shaded from the nearest\n";
      }
      if (std::filesystem::path(mesh_out).extension() == ".obj")
        write_obj(mesh, mesh_out);
      else
        write_ply(mesh, mesh_out);
      std::cout << "vertices " << mesh.vertices.size() << " triangles " << mesh.triangles.size() << "\n";
    } else if (*eval) {
      const TriangleMesh a = read_mesh(mesh_a);
      const TriangleMesh b = read_mesh(mesh_b);
      const auto pa = samples > 0 ? sample_surface(a, samples, seed) : a.vertices;
      const auto pb = samples > 0 ? sample_surface(b, samples, seed + 1) : b.vertices;
      const double c = chamfer(pa, pb, squared);
      const double f = f_score(pa, pb, threshold);
      std::printf("chamfer,f_score\n%.9g,%.9g\n", c, f);
    } else if (*prune_cmd) {
      TrainState s = load_checkpoint(checkpoint);
      TrainConfig cfg;
      cfg.tau = tau;
      cfg.prune_samples = prune_samples;
      cfg.seed = seed;
      const std::size_t before = s.grid.voxel_count();
      prune_state(s, cfg);
      save_checkpoint(s, out_file);
      std::cout << "voxels " << before << " -> " << s.grid.voxel_count() << "\n";
    } else if (*split_cmd) {
      TrainState s = load_checkpoint(checkpoint);
      const std::size_t before = s.grid.voxel_count();
      split_state(s);
      save_checkpoint(s, out_file);
      std::cout << "voxels " << before << " -> " << s.grid.voxel_count() << "\n";
    } else if (*edit) {
      const TrainState s = load_checkpoint(checkpoint);
      auto grid = std::make_shared<const VoxelGrid>(s.grid);
      auto model = std::make_shared<const FieldModel>(s.model);
      const auto selection = select_voxels(*grid, parse_box(box_arg));
      EditOp op = Delete{};
      if (op_name == "translate") op = Translate{parse_vec3(offset_arg)};
      if (op_name == "duplicate") op = Duplicate{parse_vec3(offset_arg)};
      if (op_name == "scale") op = Scale{factor, parse_vec3(pivot_arg)};
      const SceneGrid edited = edit_voxels(grid, std::make_shared<NeuralField>(*model), selection, op, allow_overlap);
      std::vector<SceneEntry> entries;
      for (const auto& inst : edited.instances()) entries.push_back({inst.grid, inst.transform, model});
      save_scene(entries, out_file);
      std::cout << "selected " << selection.voxels.size() << " voxels, " << entries.size() << " instances\n";
    } else if (*compose_cmd) {
      std::vector<SceneEntry> entries;
      for (const auto& arg : instance_args) {
        std::vector<std::string> parts;
        std::stringstream in(arg);
        std::string part;
        while (std::getline(in, part, ':')) parts.push_back(part);
        const TrainState s = load_checkpoint(parts.at(0));
        SceneEntry e = scene_of_checkpoint(s).front();
        if (parts.size() > 1) e.transform.translation = parse_vec3(parts[1]);
        if (parts.size() > 2) e.transform.scale = std::stod(parts[2]);
        entries.push_back(std::move(e));
      }
      build_scene(entries);
      save_scene(entries, out_file);
      std::cout << "instances " << entries.size() << "\n";
    } else if (*collide) {
      const auto entries = load_scene(scene_path);
      const SceneGrid scene = build_scene(entries);
      if (inst_a >= scene.size() || inst_b >= scene.size()) throw Error("instance index out of range");
      const auto result = collision_query(scene.instances()[inst_a], scene.instances()[inst_b]);
      std::cout << "colliding,pairs\n" << (result.colliding ? 1 : 0) << ',' << result.pairs.size() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
