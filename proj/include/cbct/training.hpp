#pragma once

// Supervised training: one Adam step per (phantom, projection stack) case,
// with step-decayed learning rate and finite-difference gradient checks.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbct/losses.hpp"
#include "cbct/network.hpp"

namespace cbct {

struct TrainingCase {
  VolumeD volume;
  ProjectionStack projections;
};

/// `count` ellipsoid phantoms on `grid` with noise-free projections over
/// `poses`. Case i is independent of `count`.
std::vector<TrainingCase> synthetic_cases(const std::vector<Pose>& poses, const GridSpec& grid, int count,
                                          std::uint64_t seed, int ellipsoids = 6);

struct TrainConfig {
  double learning_rate = 1e-4;
  double lr_decay = 0.5;
  int decay_every = 50;  // epochs
  int epochs = 200;
  /// Stop after this many optimizer steps; 0 runs every epoch.
  std::int64_t max_steps = 0;
  std::size_t ray_batch = 1024;
  /// Ray integration step; 0 selects half the smallest voxel spacing.
  double ray_step = 0;
  LossWeights weights;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  double learning_rate_at(int epoch) const;
};

struct StepReport {
  LossBreakdown losses;  // before the update
  double learning_rate = 0;
  std::int64_t step = 0;  // optimizer step count after the update
};

/// Rays for optimizer step `step`, sampled from the case's projections.
RayBatch training_rays(const TrainingCase& c, const TrainConfig& config, std::int64_t step);

struct ObjectiveGradient {
  LossBreakdown losses;
  std::vector<Eigen::VectorXd> grads;  // aligned with ModelState::params
};

ObjectiveGradient objective_gradient(const ModelState& state, const TrainingCase& c, const ModelGeometry& geometry,
                                     const RayBatch& batch, const LossWeights& weights);
LossBreakdown evaluate_objective(const ModelState& state, const TrainingCase& c, const ModelGeometry& geometry,
                                 const RayBatch& batch, const LossWeights& weights);

void adam_update(ModelState& state, const std::vector<Eigen::VectorXd>& grads, const TrainConfig& config,
                 double learning_rate);

/// Throws Divergence when any loss term is not finite.
StepReport train_step(ModelState& state, const TrainingCase& c, const ModelGeometry& geometry,
                      const TrainConfig& config, int epoch);
StepReport train_step(ModelState& state, const TrainingCase& c, const TrainConfig& config, int epoch);

using StepCallback = std::function<void(int epoch, std::size_t case_index, const StepReport&)>;

/// Visits the cases in a seeded shuffled order each epoch.
void train(ModelState& state, const std::vector<TrainingCase>& cases, const TrainConfig& config,
           const StepCallback& callback = {});

struct GradientCheckEntry {
  std::string module;
  std::size_t parameters = 0;  // scalar parameters in the module
  std::size_t checked = 0;
  double max_relative_error = 0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> modules;

  double max_relative_error() const;
};

/// |a - n| / max(|a|, |n|, floor) for analytic a and numeric n.
double gradient_relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences of the total objective against tape gradients for
/// `samples` scalar parameters of each of encoder, fusion and decoder.
GradientCheckReport gradient_check(const ModelState& state, const TrainingCase& c, const RayBatch& batch,
                                   const LossWeights& weights, std::size_t samples, std::uint64_t seed,
                                   double h = 1e-3);

/// Central differences of each loss term with respect to prediction voxels.
GradientCheckReport loss_gradient_check(const VolumeD& gt, const VolumeD& pred, const RayBatch& batch,
                                        std::size_t samples, std::uint64_t seed, double h = 1e-3);

}  // namespace cbct
