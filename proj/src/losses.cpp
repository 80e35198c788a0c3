#include "cbct/losses.hpp"

#include <cmath>

#include "cbct/random.hpp"

namespace cbct {

namespace {

ad::Tensor as_tensor(const VolumeD& v) {
  if (v.channels() != 1) throw ShapeMismatch("losses expect single-channel volumes");
  return ad::Tensor({v.shape()[2], v.shape()[1], v.shape()[0]}, v.data());
}

void check_same(const VolumeD& gt, const VolumeD& pred) {
  if (!gt.same_shape(pred)) throw ShapeMismatch("prediction and ground truth differ in shape");
}

}  // namespace

RayBatch sample_ray_batch(const ProjectionStack& stack, std::size_t count, double step, std::uint64_t seed,
                          std::uint64_t stream) {
  stack.validate();
  if (stack.empty()) throw InvalidArgument("cannot sample rays from an empty stack");
  if (!(step > 0)) throw InvalidArgument("ray batch integration step must be positive");
  const DetectorShape det = stack.detector();
  const std::uint64_t pixels = static_cast<std::uint64_t>(det.width) * det.height;
  CounterRng rng(seed, 0x4A75 ^ stream);
  RayBatch batch;
  batch.step = step;
  batch.rays.reserve(count);
  batch.targets.reserve(count);
  for (std::size_t b = 0; b < count; ++b) {
    const auto v = static_cast<std::size_t>(rng.below(stack.size()));
    const auto p = rng.below(pixels);
    const int m = static_cast<int>(p % det.width), n = static_cast<int>(p / det.width);
    batch.rays.push_back(ray_through_pixel(stack.views[v].pose, m, n));
    batch.targets.push_back(stack.views[v].image.at(m, n));
  }
  return batch;
}

void render_targets(RayBatch& batch, const VolumeD& gt) {
  for (std::size_t b = 0; b < batch.size(); ++b) batch.targets[b] = drr_ray_integral(gt, batch.rays[b], batch.step);
}

double loss_recon(const VolumeD& gt, const VolumeD& pred) {
  check_same(gt, pred);
  return (gt.data() - pred.data()).cwiseAbs().mean();
}

double loss_grad(const VolumeD& gt, const VolumeD& pred) {
  check_same(gt, pred);
  const ad::Tensor g = as_tensor(gt), p = as_tensor(pred);
  double total = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const ad::Tensor dg = ad::forward_difference(g, axis), dp = ad::forward_difference(p, axis);
    if (dg.size() > 0) total += (dg.data - dp.data).cwiseAbs().mean();
  }
  return total / 3.0;
}

double loss_proj(const VolumeD& pred, const RayBatch& batch) {
  if (batch.size() == 0) return 0.0;
  double total = 0;
  for (std::size_t b = 0; b < batch.size(); ++b)
    total += std::abs(drr_ray_integral(pred, batch.rays[b], batch.step) - batch.targets[b]);
  return total / static_cast<double>(batch.size());
}

double total_loss(double recon, double grad, double proj, const LossWeights& weights) {
  return recon + weights.lambda_grad * grad + weights.lambda_proj * proj;
}

LossBreakdown evaluate_losses(const VolumeD& gt, const VolumeD& pred, const RayBatch& batch,
                              const LossWeights& weights) {
  LossBreakdown l;
  l.recon = loss_recon(gt, pred);
  l.grad = loss_grad(gt, pred);
  l.proj = loss_proj(pred, batch);
  l.total = total_loss(l.recon, l.grad, l.proj, weights);
  return l;
}

namespace ad {

Var ray_integrals(Tape& tape, Var volume, const std::vector<RayWeights>& rows) {
  const Eigen::VectorXd& x = tape.value(volume).data;
  Tensor out({static_cast<int>(rows.size())});
  for (std::size_t b = 0; b < rows.size(); ++b) {
    for (std::size_t voxel : rows[b].voxels)
      if (voxel >= static_cast<std::size_t>(x.size())) throw ShapeMismatch("ray weights address voxels outside the volume");
    out.data[static_cast<Eigen::Index>(b)] = rows[b].dot(x);
  }
  return tape.record(std::move(out), tape.requires_grad(volume), [volume, rows](Tape& t, const Eigen::VectorXd& g) {
    Eigen::VectorXd& dst = t.grad_buffer(volume);
    for (std::size_t b = 0; b < rows.size(); ++b)
      for (std::size_t e = 0; e < rows[b].voxels.size(); ++e)
        dst[static_cast<Eigen::Index>(rows[b].voxels[e])] += rows[b].weights[e] * g[static_cast<Eigen::Index>(b)];
  });
}

LossVars training_losses(Tape& tape, Var pred, const VolumeD& gt, const RayBatch& batch, const LossWeights& weights) {
  const Tensor g = as_tensor(gt);
  const Shape& ps = tape.shape(pred);
  const int offset = static_cast<int>(ps.size()) - 3;
  if (offset < 0 || element_count(ps) != g.size() || ps[offset] != g.dim(0) || ps[offset + 1] != g.dim(1) ||
      ps[offset + 2] != g.dim(2))
    throw ShapeMismatch("prediction " + to_string(ps) + " does not match ground truth " + to_string(g.shape));

  LossVars l;
  l.recon = l1_mean(tape, pred, Tensor(ps, g.data));
  std::vector<Var> diffs;
  for (int axis = 0; axis < 3; ++axis) {
    const Tensor dg = forward_difference(g, axis);
    if (dg.size() == 0) {
      diffs.push_back(tape.constant(Tensor::scalar(0.0)));
      continue;
    }
    const Var dp = forward_difference(tape, pred, axis + offset);
    diffs.push_back(l1_mean(tape, dp, Tensor(tape.shape(dp), dg.data)));
  }
  l.grad = linear_combination(tape, diffs, {1.0 / 3, 1.0 / 3, 1.0 / 3});

  if (batch.size() == 0) {
    l.proj = tape.constant(Tensor::scalar(0.0));
    l.total = linear_combination(tape, {l.recon, l.grad, l.proj}, {1.0, weights.lambda_grad, weights.lambda_proj});
    return l;
  }
  std::vector<RayWeights> rows;
  rows.reserve(batch.size());
  for (const auto& ray : batch.rays) rows.push_back(ray_weights(gt.grid(), ray, batch.step));
  const Var integrals = ray_integrals(tape, pred, rows);
  l.proj = l1_mean(tape, integrals, Tensor({static_cast<int>(batch.size())},
                                           Eigen::Map<const Eigen::VectorXd>(batch.targets.data(),
                                                                             static_cast<Eigen::Index>(batch.size()))));
  l.total = linear_combination(tape, {l.recon, l.grad, l.proj}, {1.0, weights.lambda_grad, weights.lambda_proj});
  return l;
}

}  // namespace ad

}  // namespace cbct
