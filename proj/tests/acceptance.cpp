// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <string>

#include "cbct/checkpoint.hpp"
#include "cbct/classical.hpp"
#include "cbct/metrics.hpp"
#include "cbct/phantom.hpp"
#include "cbct/training.hpp"

using namespace cbct;
using Eigen::Vector3d;

namespace {

// Pinned tolerances and budgets.
constexpr double kRoundTripTol = 1e-9;
constexpr int kRoundTripPairs = 100000;
constexpr double kGeometrySeconds = 5;
constexpr double kCubeRelTol = 0.01;
constexpr double kHalvingLo = 2.0 * 0.8, kHalvingHi = 2.0 * 1.2;
constexpr double kDrrSeconds = 1;
constexpr double kLinearityTol = 1e-9;
constexpr int kLinearityVolumes = 100;
constexpr double kPhysicsTol = 1e-9;
constexpr double kFdkDenseDb = 25;
constexpr double kClassicalSeconds = 120;
constexpr double kSoftmaxTol = 1e-12;
constexpr double kPermutationTol = 1e-6;
constexpr double kGradientTol = 1e-4;
constexpr std::size_t kGradientSamples = 50;
constexpr double kGradientSeconds = 60;
constexpr double kTrendMarginDb = 1.0;
constexpr int kTrendSteps = 200;
constexpr double kTrendSeconds = 15 * 60;

int failures = 0;

void report(const char* name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ScanConfig orbit(int views, int detector, double pixel, double sod = 500, double odd = 200) {
  ScanConfig cfg;
  cfg.n_views = views;
  cfg.delta_theta = ScanConfig::full_orbit_step(views);
  cfg.source_to_object = sod;
  cfg.object_to_detector = odd;
  cfg.detector = {detector, detector};
  cfg.detector_spacing = {pixel, pixel};
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void geometry_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  CounterRng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < kRoundTripPairs; ++trial) {
    ScanConfig cfg = orbit(1 + static_cast<int>(rng.below(40)), 256, 1.0, rng.uniform(200, 1000), rng.uniform(0, 600));
    cfg.start_angle = rng.uniform(0, 360);
    cfg.detector = {1 + static_cast<int>(rng.below(512)), 1 + static_cast<int>(rng.below(512))};
    cfg.detector_spacing = {rng.uniform(0.1, 2), rng.uniform(0.1, 2)};
    const Pose pose = view_pose(cfg, 1 + static_cast<int>(rng.below(cfg.n_views)));
    const int m = static_cast<int>(rng.below(cfg.detector.width));
    const int n = static_cast<int>(rng.below(cfg.detector.height));
    const Eigen::Vector2d q = detector_point_to_pixel(pose, detector_pixel_center(pose, m, n));
    worst = std::max(worst, (q - Eigen::Vector2d(m, n)).cwiseAbs().maxCoeff());
  }

  const ScanConfig dental = orbit(20, 256, 1.0);
  double iso = 0, mag = 0;
  const double expected = (dental.source_to_object + dental.object_to_detector) / dental.source_to_object;
  for (const Pose& pose : circular_poses(dental)) {
    const Eigen::Vector2d c = project_point_to_pixel(pose, Vector3d::Zero().eval());
    iso = std::max(iso, (c - Eigen::Vector2d(127.5, 127.5)).cwiseAbs().maxCoeff());
    const Eigen::Vector2d dz = project_point_to_pixel(pose, Vector3d(0, 0, 5).eval()) - c;
    const Vector3d lateral = pose.u_basis.normalized() * 5;
    const Eigen::Vector2d du = project_point_to_pixel(pose, lateral) - c;
    mag = std::max({mag, std::abs(dz.y() * dental.detector_spacing.y() / 5 - expected),
                    std::abs(du.x() * dental.detector_spacing.x() / 5 - expected)});
  }
  const double secs = seconds_since(t0);
  report("geometry_oracle",
         worst < kRoundTripTol && iso < kRoundTripTol && mag < kRoundTripTol &&
             std::abs(expected - 1.4) < 1e-12 && secs < kGeometrySeconds,
         fmt("round trip max err %.2e over %d pairs; isocenter err %.2e; magnification %.12f (err %.2e); %.2f s",
             worst, kRoundTripPairs, iso, expected, mag, secs));
}

void drr_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const GridSpec g = GridSpec::cube(32, 1.0);
  VolumeD cube(g);
  for (int k = 0; k < 32; ++k)
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i)
        if (g.voxel_center(i, j, k).cwiseAbs().maxCoeff() < 10) cube.at(i, j, k) = 0.02;
  const Ray<double> ray{Vector3d(-100, 0, 0), Vector3d(1, 0, 0)};
  const double step = default_step(g);
  const double full = drr_ray_integral(cube, ray, step);
  const double half = drr_ray_integral(cube, ray, step / 2);
  const double err_full = std::abs(full - 0.4), err_half = std::abs(half - 0.4);
  const double ratio = err_full / err_half;
  const double secs = seconds_since(t0);
  report("drr_oracle",
         err_full <= kCubeRelTol * 0.4 && ratio >= kHalvingLo && ratio <= kHalvingHi && secs < kDrrSeconds,
         fmt("integral %.15f at step %.3g (err %.3e); step %.3g gives err %.3e; error ratio %.3g (need %.1f..%.1f); "
             "%.3f s",
             full, step, err_full, step / 2, err_half, ratio, kHalvingLo, kHalvingHi, secs));
}

void linearity() {
  const GridSpec g = GridSpec::cube(4, 2.0);
  const std::vector<Pose> poses = circular_poses(orbit(4, 8, 2.0));
  const Eigen::Index rows = 4 * 64, cols = 64;
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    VolumeD basis(g);
    basis.data()[c] = 1;
    const ProjectionStack s = render_stack(basis, poses);
    for (int v = 0; v < 4; ++v) a.block(v * 64, c, 64, 1) = s.views[static_cast<std::size_t>(v)].image.data();
  }
  CounterRng rng(77);
  double worst = 0;
  for (int trial = 0; trial < kLinearityVolumes; ++trial) {
    VolumeD vol(g);
    for (auto& x : vol.data()) x = rng.uniform(-1, 1);
    const ProjectionStack s = render_stack(vol, poses);
    Eigen::VectorXd direct(rows);
    for (int v = 0; v < 4; ++v) direct.segment(v * 64, 64) = s.views[static_cast<std::size_t>(v)].image.data();
    worst = std::max(worst, (a * vol.data() - direct).norm() / direct.norm());
  }
  report("linearity", worst < kLinearityTol,
         fmt("operator matrix %ldx%ld on 4^3 grid / 8x8 detector; max relative mismatch %.2e over %d volumes",
             static_cast<long>(rows), static_cast<long>(cols), worst, kLinearityVolumes));
}

void physics_round_trip() {
  CounterRng rng(5);
  ImageD p(64, 64);
  for (auto& x : p.data()) x = rng.uniform(0, 10);
  const ImageD back = flat_dark_correct(simulate_photon_counts(p, 1e5, 20, std::nullopt));
  const double round_trip = (back.data() - p.data()).cwiseAbs().maxCoeff();

  ImageD q(100, 100);
  q.data().setConstant(std::log(10.0));
  const PhotonRaster noisy = simulate_photon_counts(q, 1e5, 0, PhotonNoise{31, 0});
  const double mean = noisy.counts.data().mean();
  const double sigma = std::sqrt(1e4 / static_cast<double>(q.pixel_count()));
  report("physics_round_trip", round_trip < kPhysicsTol && std::abs(mean - 1e4) < 3 * sigma,
         fmt("noise-free round trip max err %.2e; Poisson mean %.3f over %zu pixels (expect 10000 +- %.2f)",
             round_trip, mean, q.pixel_count(), 3 * sigma));
}

void classical_baselines() {
  const auto t0 = std::chrono::steady_clock::now();
  const GridSpec g = GridSpec::cube(64, 1.0);
  const VolumeD truth = sphere_phantom(g, 20, 0.02);
  auto stack = [&](int views) { return render_stack(truth, circular_poses(orbit(views, 96, 1.0))); };
  const ProjectionStack s180 = stack(180), s20 = stack(20), s5 = stack(5);
  const double fdk180 = psnr(truth, fdk_reconstruct(s180, g)).db;
  const double fdk20 = psnr(truth, fdk_reconstruct(s20, g)).db;
  const double fdk5 = psnr(truth, fdk_reconstruct(s5, g)).db;
  SartOptions opts;
  opts.iterations = 10;
  opts.relaxation = 0.5;
  const SartResult sart = sart_reconstruct(s5, g, opts);
  bool decreasing = sart.residual_trace.front() < sart.initial_residual;
  for (std::size_t i = 1; i < sart.residual_trace.size(); ++i)
    decreasing = decreasing && sart.residual_trace[i] < sart.residual_trace[i - 1];
  const double sart5 = psnr(truth, sart.volume).db;
  const double secs = seconds_since(t0);
  report("classical_baselines",
         fdk180 > kFdkDenseDb && fdk180 > fdk20 && decreasing && sart5 > fdk5 && secs < kClassicalSeconds,
         fmt("FDK 180 views %.2f dB, 20 views %.2f dB; SART residual %.3e -> %.3e over 10 iterations (%s); "
             "5 views SART %.2f dB vs FDK %.2f dB; %.1f s",
             fdk180, fdk20, sart.residual_trace.front(), sart.residual_trace.back(),
             decreasing ? "strictly decreasing" : "NOT strictly decreasing", sart5, fdk5, secs));
}

void fusion_properties() {
  CounterRng rng(8);
  double sum_err = 0;
  bool single_exact = true;
  for (int views : {1, 2, 3, 5, 10, 20, 50}) {
    const FusionParams params = FusionParams::random(56, static_cast<std::uint64_t>(views));
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Eigen::VectorXd> f(static_cast<std::size_t>(views), Eigen::VectorXd(56));
      for (auto& v : f)
        for (auto& x : v) x = 3 * rng.normal();
      const FusionResult r = fuse_adaptive(f, params);
      sum_err = std::max(sum_err, std::abs(r.weights.sum() - 1));
      if (views == 1) single_exact = single_exact && r.weights[0] == 1.0;
    }
  }

  const GridSpec g = GridSpec::cube(16, 2.0);
  const std::vector<Pose> poses = circular_poses(orbit(5, 24, 1.6));
  const ProjectionStack s = render_stack(ellipsoid_phantom(g, 3, 6), poses);
  ModelConfig mc = ModelConfig::desk(4);
  mc.decoder.output_scale = 0.02;
  mc.normalization = projection_statistics({&s});
  const ModelState m = ModelState::initialize(mc, 1);
  const VolumeD base = predict(s, g, m);
  double perm_err = 0;
  const std::vector<std::vector<int>> orders = {{4, 3, 2, 1, 0}, {2, 0, 4, 1, 3}, {1, 2, 3, 4, 0}};
  for (const auto& order : orders) {
    ProjectionStack p;
    for (int i : order) p.views.push_back(s.views[static_cast<std::size_t>(i)]);
    const VolumeD out = predict(p, g, m);
    perm_err = std::max(perm_err, (out.data() - base.data()).norm() / base.data().norm());
  }
  report("fusion_properties", sum_err < kSoftmaxTol && single_exact && perm_err < kPermutationTol,
         fmt("max |sum(w) - 1| %.2e; N=1 weight exactly 1: %s; full forward pass (C=%d) permutation rel err %.2e",
             sum_err, single_exact ? "yes" : "no", mc.channels(), perm_err));
}

void gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  const GridSpec g = GridSpec::cube(8, 2.0);
  TrainingCase c = synthetic_cases(circular_poses(orbit(3, 16, 1.6)), g, 1, 0)[0];
  // A monotone ramp and out-of-range ray targets keep every L1 term off its
  // kink for the finite differences.
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) c.volume.at(i, j, k) = -1.0 - (i + j + k);
  ModelConfig mc = ModelConfig::desk(2);
  mc.encoder.channels = {4, 4};
  mc.decoder.hidden_channels = 4;
  mc.decoder.residual_blocks = 1;
  mc.decoder.output_scale = 0.02;
  const ModelState m = ModelState::initialize(mc, 1);
  TrainConfig tc;
  tc.ray_batch = 16;
  RayBatch batch = training_rays(c, tc, 0);
  for (auto& t : batch.targets) t = -5;
  GradientCheckReport r = gradient_check(m, c, batch, tc.weights, kGradientSamples, 3);
  VolumeD pred = c.volume;
  CounterRng rng(2);
  for (auto& x : pred.data()) x = 2 + rng.uniform();
  const GradientCheckReport lr = loss_gradient_check(c.volume, pred, batch, kGradientSamples, 4);
  r.modules.insert(r.modules.end(), lr.modules.begin(), lr.modules.end());
  bool pass = r.modules.size() == 6;
  std::string detail;
  for (const auto& e : r.modules) {
    pass = pass && e.checked >= kGradientSamples && e.max_relative_error < kGradientTol;
    detail += fmt("%s %zu/%zu max rel %.1e; ", e.module.c_str(), e.checked, e.parameters, e.max_relative_error);
  }
  const double secs = seconds_since(t0);
  report("gradient_checks", pass && secs < kGradientSeconds, detail + fmt("%.1f s", secs));
}

void learning_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  const GridSpec g = GridSpec::cube(32, 1.0);
  const std::vector<Pose> poses = circular_poses(orbit(10, 44, 1.6));
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto train_cases = synthetic_cases(poses, g, 40, seed);
    const auto test_cases = synthetic_cases(poses, g, 8, 1000 + seed);
    ModelConfig mc = ModelConfig::desk(4);
    mc.decoder.output_scale = 0.02;
    std::vector<const ProjectionStack*> stacks;
    for (const auto& c : train_cases) stacks.push_back(&c.projections);
    mc.normalization = projection_statistics(stacks);
    ModelState m = ModelState::initialize(mc, seed);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.ray_batch = 256;
    tc.max_steps = kTrendSteps;
    tc.seed = seed;
    const ModelGeometry geo = prepare_geometry(mc, poses, g);

    // Total loss over every training case with fixed per-case ray batches.
    auto training_loss = [&](const ModelState& state) {
      double total = 0;
      for (const auto& c : train_cases)
        total += evaluate_objective(state, c, geo, training_rays(c, tc, 0), tc.weights).total;
      return total / static_cast<double>(train_cases.size());
    };
    const double loss0 = training_loss(m);
    train(m, train_cases, tc);
    const double loss200 = training_loss(m);

    double model_db = 0, fdk_db = 0;
    for (const auto& c : test_cases) {
      model_db += psnr(c.volume, predict(c.projections, geo, m)).db / 8;
      fdk_db += psnr(c.volume, fdk_reconstruct(c.projections, g)).db / 8;
    }
    const bool seed_pass = loss200 < loss0 && model_db >= fdk_db + kTrendMarginDb;
    pass = pass && seed_pass && m.step == kTrendSteps;
    detail += fmt("seed %llu: loss %.5f -> %.5f, model %.2f dB vs FDK %.2f dB; ",
                  static_cast<unsigned long long>(seed), loss0, loss200, model_db, fdk_db);
  }
  const double secs = seconds_since(t0);
  report("learning_trend", pass && secs < kTrendSeconds, detail + fmt("%.0f s", secs));
}

void loss_defaults() {
  const LossWeights w;
  const TrainConfig tc;
  bool pass = w.lambda_grad == 1.0 && w.lambda_proj == 0.01 && tc.weights.lambda_grad == 1.0 &&
              tc.weights.lambda_proj == 0.01;

  const GridSpec g = GridSpec::cube(8, 2.0);
  const TrainingCase c = synthetic_cases(circular_poses(orbit(3, 16, 1.6)), g, 1, 9)[0];
  VolumeD pred = c.volume;
  CounterRng rng(3);
  for (auto& x : pred.data()) x = rng.uniform(0, 0.03);
  const RayBatch batch = sample_ray_batch(c.projections, 64, default_step(g), 1);
  const LossBreakdown l = evaluate_losses(c.volume, pred, batch, w);
  const double wired = l.recon + 1.0 * l.grad + 0.01 * l.proj;
  ad::Tape tape;
  const ad::Var p = tape.parameter(ad::Tensor({1, 8, 8, 8}, pred.data()));
  const double taped = tape.value(ad::training_losses(tape, p, c.volume, batch, w).total).item();
  pass = pass && std::abs(l.total - wired) < 1e-15 && std::abs(taped - wired) < 1e-12;

  std::string steps;
  for (int views : {5, 10, 20}) {
    const std::vector<Pose> poses = circular_poses(orbit(views, 16, 1.0));
    const double step = std::atan2(poses[1].source.y(), poses[1].source.x()) * 180 / std::numbers::pi;
    const double expected = views == 5 ? 72 : views == 10 ? 36 : 18;
    pass = pass && std::abs(step - expected) < 1e-9 && ScanConfig::full_orbit_step(views) == expected;
    steps += fmt("%d views -> %.6g deg; ", views, step);
  }
  report("loss_defaults", pass,
         fmt("lambda_grad %.3g, lambda_proj %.3g; total %.9f = recon + grad + 0.01 proj (%.9f, tape %.9f); ",
             w.lambda_grad, w.lambda_proj, l.total, wired, taped) +
             steps);
}

void determinism() {
  namespace fs = std::filesystem;
  const GridSpec g = GridSpec::cube(16, 2.0);
  const std::vector<Pose> poses = circular_poses(orbit(4, 24, 1.6));
  auto projections = [&] {
    const ProjectionStack clean = render_stack(ellipsoid_phantom(g, 12, 6), poses);
    ProjectionStack noisy = clean;
    for (std::size_t v = 0; v < noisy.size(); ++v)
      noisy.views[v].image =
          flat_dark_correct(simulate_photon_counts(clean.views[v].image, 1e4, 10, PhotonNoise{5, v}));
    return noisy;
  };
  const ProjectionStack a = projections(), b = projections();
  bool same_proj = true;
  for (std::size_t v = 0; v < a.size(); ++v) same_proj = same_proj && a.views[v].image.data() == b.views[v].image.data();

  SartOptions so;
  so.iterations = 3;
  so.view_order = ViewOrder::Shuffled;
  so.seed = 6;
  const bool same_recon = fdk_reconstruct(a, g).data() == fdk_reconstruct(b, g).data() &&
                          sart_reconstruct(a, g, so).volume.data() == sart_reconstruct(b, g, so).volume.data();

  const fs::path dir = fs::temp_directory_path() / "cbct_acceptance";
  fs::create_directories(dir);
  auto checkpoint = [&](const std::string& name) {
    const auto cases = synthetic_cases(poses, g, 3, 21);
    ModelConfig mc = ModelConfig::desk(4);
    mc.encoder.channels = {4, 8};
    mc.decoder.output_scale = 0.02;
    ModelState m = ModelState::initialize(mc, 21);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.ray_batch = 64;
    tc.epochs = 2;
    tc.seed = 21;
    train(m, cases, tc);
    save_checkpoint(dir / name, m);
    return std::pair{slurp(dir / name), predict(a, g, m)};
  };
  const auto [ckpt_a, pred_a] = checkpoint("a.ckpt");
  const auto [ckpt_b, pred_b] = checkpoint("b.ckpt");
  const bool same_ckpt = !ckpt_a.empty() && ckpt_a == ckpt_b;
  const bool same_pred = pred_a.data() == pred_b.data();
  report("determinism", same_proj && same_recon && same_ckpt && same_pred,
         fmt("noisy projections identical: %s; FDK/SART identical: %s; checkpoints (%zu bytes) identical: %s; "
             "network reconstructions identical: %s",
             same_proj ? "yes" : "no", same_recon ? "yes" : "no", ckpt_a.size(), same_ckpt ? "yes" : "no",
             same_pred ? "yes" : "no"));
}

void run(const char* name, const std::function<void()>& criterion) {
  try {
    criterion();
  } catch (const std::exception& e) {
    report(name, false, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main() {
  run("geometry_oracle", geometry_oracle);
  run("drr_oracle", drr_oracle);
  run("linearity", linearity);
  run("physics_round_trip", physics_round_trip);
  run("classical_baselines", classical_baselines);
  run("fusion_properties", fusion_properties);
  run("gradient_checks", gradient_checks);
  run("loss_defaults", loss_defaults);
  run("determinism", determinism);
  run("learning_trend", learning_trend);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
