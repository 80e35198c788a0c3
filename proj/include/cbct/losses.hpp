#pragma once

// Training objective: voxel-wise L1, gradient L1, and projection L1 over a
// random ray batch, each normalized by its element count.

#include <cstdint>
#include <vector>

#include "cbct/autodiff.hpp"
#include "cbct/projector.hpp"

namespace cbct {

struct LossWeights {
  double lambda_grad = 1.0;
  double lambda_proj = 0.01;
};

struct LossBreakdown {
  double recon = 0;
  double grad = 0;
  double proj = 0;
  double total = 0;
};

/// Rays drawn from input-view pixels with their target line integrals.
struct RayBatch {
  std::vector<Ray<double>> rays;
  std::vector<double> targets;
  double step = 0;  // integration step, mm

  std::size_t size() const { return rays.size(); }
};

/// Draws `count` (view, pixel) pairs uniformly, with replacement, from the
/// stack. Targets are the stack's pixel values, which is the measured-data
/// form; for simulated data those values are the DRR of the ground truth.
RayBatch sample_ray_batch(const ProjectionStack& stack, std::size_t count, double step, std::uint64_t seed,
                          std::uint64_t stream = 0);

/// Replaces the batch targets with DRR integrals of `gt`.
void render_targets(RayBatch& batch, const VolumeD& gt);

double loss_recon(const VolumeD& gt, const VolumeD& pred);
/// Mean over the three axes of the mean |forward difference| mismatch.
double loss_grad(const VolumeD& gt, const VolumeD& pred);
double loss_proj(const VolumeD& pred, const RayBatch& batch);
double total_loss(double recon, double grad, double proj, const LossWeights& weights);
LossBreakdown evaluate_losses(const VolumeD& gt, const VolumeD& pred, const RayBatch& batch, const LossWeights& weights);

namespace ad {

/// volume [1, D, H, W] (or [D, H, W]) -> [B] discrete ray integrals.
Var ray_integrals(Tape& tape, Var volume, const std::vector<RayWeights>& rows);

struct LossVars {
  Var recon, grad, proj, total;
};

/// `pred` is a [1, D, H, W] volume on the grid of `gt`.
LossVars training_losses(Tape& tape, Var pred, const VolumeD& gt, const RayBatch& batch, const LossWeights& weights);

}  // namespace ad

}  // namespace cbct
