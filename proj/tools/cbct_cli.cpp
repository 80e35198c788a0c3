// Command-line front end: phantom | simulate | fdk | sart | train | infer | eval.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "cbct/checkpoint.hpp"
#include "cbct/classical.hpp"
#include "cbct/io.hpp"
#include "cbct/manifest.hpp"
#include "cbct/metrics.hpp"
#include "cbct/phantom.hpp"
#include "cbct/training.hpp"

namespace fs = std::filesystem;
using namespace cbct;

namespace {

struct GeometryArgs {
  std::string manifest;
  int views = 20;
  double start_angle = 0;
  std::optional<double> step;
  double sod = 500;
  double odd = 200;
  int detector = 64;
  double pixel = 1.6;

  void add(CLI::App* app) {
    app->add_option("--manifest", manifest, "Acquisition manifest (JSON); overrides the orbit flags");
    app->add_option("--views", views, "Number of views")->check(CLI::PositiveNumber);
    app->add_option("--start-angle", start_angle, "First view angle, degrees")->check(CLI::Range(0.0, 359.999999));
    app->add_option("--step", step, "Angular step between views, degrees (default 360/views)");
    app->add_option("--sod", sod, "Source to isocenter distance, mm");
    app->add_option("--odd", odd, "Isocenter to detector distance, mm");
    app->add_option("--detector", detector, "Detector width and height, pixels")->check(CLI::PositiveNumber);
    app->add_option("--pixel", pixel, "Detector pixel pitch, mm");
  }

  ScanConfig scan() const {
    ScanConfig s;
    s.n_views = views;
    s.delta_theta = step.value_or(ScanConfig::full_orbit_step(views));
    s.start_angle = start_angle;
    s.source_to_object = sod;
    s.object_to_detector = odd;
    s.detector = {detector, detector};
    s.detector_spacing = {pixel, pixel};
    return s;
  }

  Manifest resolve(const GridSpec& grid) const {
    if (!manifest.empty()) return load_manifest(manifest);
    return circular_manifest(scan(), grid);
  }
};

struct GridArgs {
  int size = 64;
  double spacing = 1.0;
  std::string like;
  CLI::Option* size_opt = nullptr;
  CLI::Option* spacing_opt = nullptr;

  void add(CLI::App* app) {
    size_opt = app->add_option("--size", size, "Cubic volume size, voxels")->check(CLI::PositiveNumber);
    spacing_opt = app->add_option("--spacing", spacing, "Voxel spacing, mm")->check(CLI::PositiveNumber);
    app->add_option("--like", like, "Take the volume grid from this volume");
  }

  bool cube_requested() const { return (size_opt && size_opt->count()) || (spacing_opt && spacing_opt->count()); }

  GridSpec grid(const std::optional<Manifest>& manifest = std::nullopt) const {
    if (!like.empty()) return read_volume(like).grid();
    if (manifest && !cube_requested()) return manifest->volume;
    return GridSpec::cube(size, spacing);
  }
};

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << manifest_to_json(m) << '\n';
}

/// The explicit manifest, else the one `simulate` leaves beside the
/// projections.
std::optional<Manifest> manifest_if(const std::string& path, const fs::path& projections) {
  if (!path.empty()) return load_manifest(path);
  if (fs::exists(projections / "manifest.json")) return load_manifest(projections / "manifest.json");
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view cone-beam CT reconstruction toolkit"};
  app.require_subcommand(1);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Write a synthetic attenuation volume");
  std::string phantom_type = "sphere", phantom_out;
  double radius = 10, mu = 0.02;
  int count = 6;
  std::uint64_t seed = 0;
  GridArgs phantom_grid;
  phantom->add_option("--kind,--type", phantom_type, "sphere | ellipsoids | shepp-logan")
      ->check(CLI::IsMember({"sphere", "ellipsoids", "shepp-logan"}));
  phantom->add_option("--radius", radius, "Sphere radius, mm");
  phantom->add_option("--mu", mu, "Attenuation, 1/mm");
  phantom->add_option("--count", count, "Number of ellipsoids");
  phantom->add_option("--seed", seed, "Random seed");
  phantom->add_option("--out", phantom_out, "Output .raw volume")->required();
  phantom_grid.add(phantom);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Render projections of a volume");
  std::string sim_volume, sim_out;
  GeometryArgs sim_geom;
  std::optional<double> noise_i0;
  double noise_i1 = 0;
  simulate->add_option("--volume", sim_volume, "Input .raw volume")->required();
  simulate->add_option("--noise-i0", noise_i0, "Flat-field photon count; enables Poisson noise");
  simulate->add_option("--noise-i1", noise_i1, "Dark-field count");
  simulate->add_option("--seed", seed, "Noise seed");
  simulate->add_option("--out", sim_out, "Output projection directory")->required();
  sim_geom.add(simulate);

  // fdk
  auto* fdk = app.add_subcommand("fdk", "Filtered back projection (circular orbits)");
  std::string fdk_in, fdk_out, fdk_filter = "ram-lak", recon_manifest;
  GridArgs fdk_grid;
  fdk->add_option("--projections", fdk_in, "Projection directory")->required();
  fdk->add_option("--filter", fdk_filter, "ram-lak | shepp-logan")->check(CLI::IsMember({"ram-lak", "shepp-logan"}));
  fdk->add_option("--manifest", recon_manifest, "Manifest providing the volume grid (default: manifest.json beside the projections)");
  fdk->add_option("--out", fdk_out, "Output .raw volume")->required();
  fdk_grid.add(fdk);

  // sart
  auto* sart = app.add_subcommand("sart", "Iterative algebraic reconstruction");
  std::string sart_in, sart_out;
  int iterations = 30;
  double relaxation = 0.5;
  bool shuffle = false, allow_negative = false;
  GridArgs sart_grid;
  sart->add_option("--projections", sart_in, "Projection directory")->required();
  sart->add_option("--iterations", iterations, "Iterations")->check(CLI::PositiveNumber);
  sart->add_option("--relaxation", relaxation, "Relaxation factor");
  sart->add_flag("--shuffle", shuffle, "Visit views in a seeded random order");
  sart->add_flag("--allow-negative", allow_negative, "Disable the nonnegativity clamp");
  sart->add_option("--seed", seed, "View order seed");
  sart->add_option("--manifest", recon_manifest, "Manifest providing the volume grid (default: manifest.json beside the projections)");
  sart->add_option("--out", sart_out, "Output .raw volume")->required();
  sart_grid.add(sart);

  // train
  auto* trainer = app.add_subcommand("train", "Train the network on synthetic ellipsoid phantoms");
  std::string train_out, resume;
  GeometryArgs train_geom;
  GridArgs train_grid;
  train_grid.size = 32;
  train_geom.detector = 32;
  train_geom.views = 10;
  int phantoms = 40, downsample = 4, hidden = 16;
  std::vector<int> channels{8, 16, 32};
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.ray_batch = 256;
  double output_scale = 0.02;
  trainer->add_option("--phantoms", phantoms, "Number of training phantoms")->check(CLI::PositiveNumber);
  trainer->add_option("--downsample", downsample, "Feature volume downsampling rate (power of two)");
  trainer->add_option("--channels", channels, "Encoder channels per level");
  trainer->add_option("--hidden", hidden, "Decoder hidden channels");
  trainer->add_option("--output-scale", output_scale, "Decoder output scale");
  trainer->add_option("--epochs", tc.epochs, "Epochs");
  trainer->add_option("--steps", tc.max_steps, "Stop after this many steps (0 = all epochs)");
  trainer->add_option("--lr", tc.learning_rate, "Initial learning rate");
  trainer->add_option("--rays", tc.ray_batch, "Rays per projection-loss batch");
  trainer->add_option("--lambda-grad", tc.weights.lambda_grad, "Gradient loss weight");
  trainer->add_option("--lambda-proj", tc.weights.lambda_proj, "Projection loss weight");
  trainer->add_option("--seed", seed, "Seed for data, initialization and sampling");
  trainer->add_option("--resume", resume, "Continue from this checkpoint");
  trainer->add_option("--out", train_out, "Output checkpoint")->required();
  train_geom.add(trainer);
  train_grid.add(trainer);

  // infer
  auto* infer = app.add_subcommand("infer", "Reconstruct with a trained network");
  std::string infer_ckpt, infer_in, infer_out;
  GridArgs infer_grid;
  infer_grid.size = 32;
  infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required();
  infer->add_option("--projections", infer_in, "Projection directory")->required();
  infer->add_option("--manifest", recon_manifest, "Manifest providing the volume grid (default: manifest.json beside the projections)");
  infer->add_option("--out", infer_out, "Output .raw volume")->required();
  infer_grid.add(infer);

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR and SSIM of volumes against a reference");
  std::string eval_ref, eval_out;
  std::vector<std::string> eval_tests;
  std::optional<double> data_range;
  bool volumetric = false;
  int eval_views = 0;
  eval->add_option("--reference", eval_ref, "Reference volume")->required();
  eval->add_option("--test", eval_tests, "Volumes to score")->required();
  eval->add_option("--data-range", data_range, "Intensity range (default: reference max - min)");
  eval->add_flag("--volumetric", volumetric, "3D SSIM window instead of slice-averaged 2D");
  eval->add_option("--views", eval_views, "View count recorded with each row");
  eval->add_option("--out", eval_out, "CSV output (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*phantom) {
      const GridSpec grid = phantom_grid.grid();
      VolumeD v = phantom_type == "sphere"       ? sphere_phantom(grid, radius, mu)
                  : phantom_type == "ellipsoids" ? ellipsoid_phantom(grid, seed, count)
                                                 : shepp_logan_phantom(grid, mu);
      write_volume(phantom_out, v);
    } else if (*simulate) {
      const VolumeD v = read_volume(sim_volume);
      Manifest m = sim_geom.resolve(v.grid());
      m.volume = v.grid();
      ProjectionStack stack = render_stack(v, m.poses);
      if (noise_i0) {
        for (std::size_t i = 0; i < stack.size(); ++i) {
          ImageD& img = stack.views[i].image;
          img = flat_dark_correct(simulate_photon_counts(img, *noise_i0, noise_i1, PhotonNoise{seed, i}));
        }
      }
      write_projections(sim_out, stack);
      write_manifest(fs::path(sim_out) / "manifest.json", m);
    } else if (*fdk) {
      FdkOptions o;
      o.filter = fdk_filter == "ram-lak" ? RampFilter::RamLak : RampFilter::SheppLogan;
      const ProjectionStack stack = read_projections(fdk_in);
      write_volume(fdk_out, fdk_reconstruct(stack, fdk_grid.grid(manifest_if(recon_manifest, fdk_in)), o));
    } else if (*sart) {
      SartOptions o;
      o.iterations = iterations;
      o.relaxation = relaxation;
      o.view_order = shuffle ? ViewOrder::Shuffled : ViewOrder::Sequential;
      o.seed = seed;
      o.nonnegativity = !allow_negative;
      const ProjectionStack stack = read_projections(sart_in);
      const SartResult r = sart_reconstruct(stack, sart_grid.grid(manifest_if(recon_manifest, sart_in)), o);
      for (std::size_t i = 0; i < r.residual_trace.size(); ++i)
        std::printf("iteration %zu residual %.9g\n", i + 1, r.residual_trace[i]);
      write_volume(sart_out, r.volume);
    } else if (*trainer) {
      const GridSpec grid = train_grid.grid();
      const Manifest m = train_geom.resolve(grid);
      const auto cases = synthetic_cases(m.poses, grid, phantoms, seed);
      ModelState state;
      if (!resume.empty()) {
        state = load_checkpoint(resume);
      } else {
        ModelConfig mc = ModelConfig::desk(downsample);
        mc.encoder.channels = channels;
        mc.decoder.hidden_channels = hidden;
        mc.decoder.output_scale = output_scale;
        std::vector<const ProjectionStack*> stacks;
        for (const auto& c : cases) stacks.push_back(&c.projections);
        mc.normalization = m.normalization.value_or(projection_statistics(stacks));
        state = ModelState::initialize(mc, seed);
      }
      tc.seed = seed;
      train(state, cases, tc, [](int epoch, std::size_t idx, const StepReport& r) {
        std::printf("epoch %d case %zu step %lld loss %.6g recon %.6g grad %.6g proj %.6g lr %.3g\n", epoch, idx,
                    static_cast<long long>(r.step), r.losses.total, r.losses.recon, r.losses.grad, r.losses.proj,
                    r.learning_rate);
      });
      save_checkpoint(train_out, state);
    } else if (*infer) {
      const ModelState state = load_checkpoint(infer_ckpt);
      const ProjectionStack stack = read_projections(infer_in);
      write_volume(infer_out, predict(stack, infer_grid.grid(manifest_if(recon_manifest, infer_in)), state));
    } else if (*eval) {
      const VolumeD ref = read_volume(eval_ref);
      SsimOptions o;
      o.data_range = data_range;
      o.mode = volumetric ? SsimMode::Volumetric : SsimMode::SliceAverage;
      std::vector<MetricsRow> rows;
      for (const auto& t : eval_tests) rows.push_back({fs::path(t).stem().string(), eval_views, evaluate_metrics(ref, read_volume(t), o)});
      if (eval_out.empty())
        std::cout << metrics_csv(rows);
      else
        write_metrics_csv(eval_out, rows);
    }
  } catch (const cbct::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
