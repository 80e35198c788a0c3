#include "cbct/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "cbct/phantom.hpp"
#include "cbct/random.hpp"

namespace cbct {

namespace {

VolumeD as_volume(const ad::Tape& tape, ad::Var v, const GridSpec& grid) { return VolumeD(grid, 1, tape.value(v).data); }

bool same_pose(const Pose& a, const Pose& b) {
  return a.detector.width == b.detector.width && a.detector.height == b.detector.height && a.source == b.source &&
         a.detector_center == b.detector_center && a.u_basis == b.u_basis && a.v_basis == b.v_basis;
}

bool same_geometry(const ModelGeometry& g, const TrainingCase& c) {
  if (!(g.grid == c.volume.grid()) || g.poses.size() != c.projections.size()) return false;
  for (std::size_t v = 0; v < g.poses.size(); ++v)
    if (!same_pose(g.poses[v], c.projections.views[v].pose)) return false;
  return true;
}

LossBreakdown read_losses(const ad::Tape& tape, const ad::LossVars& l) {
  return {tape.value(l.recon).item(), tape.value(l.grad).item(), tape.value(l.proj).item(), tape.value(l.total).item()};
}

std::string module_of(const std::string& name) {
  if (name.rfind("enc", 0) == 0) return "encoder";
  if (name.rfind("fusion", 0) == 0) return "fusion";
  return "decoder";
}

/// `count` distinct indices of [0, n), drawn by partial Fisher-Yates.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, CounterRng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  count = std::min(count, n);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(count);
  return idx;
}

}  // namespace

std::vector<TrainingCase> synthetic_cases(const std::vector<Pose>& poses, const GridSpec& grid, int count,
                                          std::uint64_t seed, int ellipsoids) {
  if (count < 0) throw InvalidArgument("case count must be non-negative");
  std::vector<TrainingCase> cases;
  cases.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    VolumeD v = ellipsoid_phantom(grid, splitmix64(seed ^ (0xCA5Eull + static_cast<std::uint64_t>(i))), ellipsoids);
    ProjectionStack s = render_stack(v, poses);
    cases.push_back({std::move(v), std::move(s)});
  }
  return cases;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning rate must be >= 0");
  if (!(lr_decay > 0) || decay_every < 1) throw InvalidArgument("learning-rate schedule is invalid");
  if (epochs < 0 || max_steps < 0) throw InvalidArgument("epoch and step limits must be non-negative");
  if (ray_step < 0) throw InvalidArgument("ray step must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0))
    throw InvalidArgument("Adam hyperparameters are out of range");
  if (weights.lambda_grad < 0 || weights.lambda_proj < 0) throw InvalidArgument("loss weights must be non-negative");
}

double TrainConfig::learning_rate_at(int epoch) const {
  return learning_rate * std::pow(lr_decay, std::max(epoch, 0) / decay_every);
}

RayBatch training_rays(const TrainingCase& c, const TrainConfig& config, std::int64_t step) {
  const double s = config.ray_step > 0 ? config.ray_step : default_step(c.volume.grid());
  return sample_ray_batch(c.projections, config.ray_batch, s, config.seed, static_cast<std::uint64_t>(step));
}

ObjectiveGradient objective_gradient(const ModelState& state, const TrainingCase& c, const ModelGeometry& geometry,
                                     const RayBatch& batch, const LossWeights& weights) {
  ad::Tape tape;
  const auto vars = ad::bind_parameters(tape, state, true);
  const ad::Var pred = ad::predict(tape, vars, c.projections, geometry);
  const ad::LossVars l = ad::training_losses(tape, pred, c.volume, batch, weights);
  tape.backward(l.total);
  ObjectiveGradient out{read_losses(tape, l), {}};
  out.grads.reserve(vars.params.size());
  for (const ad::Var v : vars.params) out.grads.push_back(tape.grad(v));
  return out;
}

LossBreakdown evaluate_objective(const ModelState& state, const TrainingCase& c, const ModelGeometry& geometry,
                                 const RayBatch& batch, const LossWeights& weights) {
  ad::Tape tape;
  const auto vars = ad::bind_parameters(tape, state, false);
  const ad::Var pred = ad::predict(tape, vars, c.projections, geometry);
  return evaluate_losses(c.volume, as_volume(tape, pred, geometry.grid), batch, weights);
}

void adam_update(ModelState& state, const std::vector<Eigen::VectorXd>& grads, const TrainConfig& config,
                 double learning_rate) {
  if (grads.size() != state.params.size()) throw ShapeMismatch("one gradient per parameter is required");
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(config.beta1, t), c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Parameter& p = state.params[i];
    if (grads[i].size() != p.value.size()) throw ShapeMismatch("gradient of '" + p.name + "' has the wrong length");
    auto m = p.first_moment.data.array();
    auto v = p.second_moment.data.array();
    m = config.beta1 * m + (1.0 - config.beta1) * grads[i].array();
    v = config.beta2 * v + (1.0 - config.beta2) * grads[i].array().square();
    p.value.data.array() -= learning_rate * (m / c1) / ((v / c2).sqrt() + config.epsilon);
  }
  ++state.step;
}

StepReport train_step(ModelState& state, const TrainingCase& c, const ModelGeometry& geometry,
                      const TrainConfig& config, int epoch) {
  config.validate();
  const RayBatch batch = training_rays(c, config, state.step);
  ObjectiveGradient g = objective_gradient(state, c, geometry, batch, config.weights);
  const LossBreakdown& l = g.losses;
  if (!std::isfinite(l.recon) || !std::isfinite(l.grad) || !std::isfinite(l.proj) || !std::isfinite(l.total))
    throw Divergence("non-finite loss at step " + std::to_string(state.step) + ": recon=" + std::to_string(l.recon) +
                     " grad=" + std::to_string(l.grad) + " proj=" + std::to_string(l.proj));
  for (std::size_t i = 0; i < g.grads.size(); ++i)
    if (!g.grads[i].allFinite())
      throw Divergence("non-finite gradient of '" + state.params[i].name + "' at step " + std::to_string(state.step));
  const double lr = config.learning_rate_at(epoch);
  adam_update(state, g.grads, config, lr);
  return {l, lr, state.step};
}

StepReport train_step(ModelState& state, const TrainingCase& c, const TrainConfig& config, int epoch) {
  return train_step(state, c, prepare_geometry(state.config, c.projections.poses(), c.volume.grid()), config, epoch);
}

void train(ModelState& state, const std::vector<TrainingCase>& cases, const TrainConfig& config,
           const StepCallback& callback) {
  config.validate();
  if (cases.empty()) throw InvalidArgument("training needs at least one case");
  std::optional<ModelGeometry> geometry;
  std::int64_t steps = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(cases.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(config.seed, 0x5EED, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t idx : order) {
      if (config.max_steps > 0 && steps >= config.max_steps) return;
      const TrainingCase& c = cases[idx];
      if (!geometry || !same_geometry(*geometry, c))
        geometry = prepare_geometry(state.config, c.projections.poses(), c.volume.grid());
      const StepReport r = train_step(state, c, *geometry, config, epoch);
      ++steps;
      if (callback) callback(epoch, idx, r);
    }
  }
}

double GradientCheckReport::max_relative_error() const {
  double m = 0;
  for (const auto& e : modules) m = std::max(m, e.max_relative_error);
  return m;
}

double gradient_relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradientCheckReport gradient_check(const ModelState& state, const TrainingCase& c, const RayBatch& batch,
                                   const LossWeights& weights, std::size_t samples, std::uint64_t seed, double h) {
  const ModelGeometry geometry = prepare_geometry(state.config, c.projections.poses(), c.volume.grid());
  const ObjectiveGradient analytic = objective_gradient(state, c, geometry, batch, weights);
  GradientCheckReport report;
  std::uint64_t stream = 0;
  for (const std::string module : {"encoder", "fusion", "decoder"}) {
    std::vector<std::pair<std::size_t, Eigen::Index>> pool;
    for (std::size_t i = 0; i < state.params.size(); ++i)
      if (module_of(state.params[i].name) == module)
        for (Eigen::Index e = 0; e < state.params[i].value.size(); ++e) pool.emplace_back(i, e);
    CounterRng rng(seed, 0x6C4C, stream++);
    GradientCheckEntry entry{module, pool.size(), 0, 0};
    ModelState probe = state;
    for (std::size_t k : sample_indices(pool.size(), samples, rng)) {
      const auto [i, e] = pool[k];
      double& x = probe.params[i].value.data[e];
      const double x0 = x;
      x = x0 + h;
      const double fp = evaluate_objective(probe, c, geometry, batch, weights).total;
      x = x0 - h;
      const double fm = evaluate_objective(probe, c, geometry, batch, weights).total;
      x = x0;
      const double numeric = (fp - fm) / (2 * h);
      entry.max_relative_error =
          std::max(entry.max_relative_error, gradient_relative_error(analytic.grads[i][e], numeric));
      ++entry.checked;
    }
    report.modules.push_back(entry);
  }
  return report;
}

GradientCheckReport loss_gradient_check(const VolumeD& gt, const VolumeD& pred, const RayBatch& batch,
                                        std::size_t samples, std::uint64_t seed, double h) {
  const ad::Tensor start({1, pred.shape()[2], pred.shape()[1], pred.shape()[0]}, pred.data());
  struct Term {
    const char* name;
    ad::Var ad::LossVars::*var;
    std::function<double(const VolumeD&)> eval;
  };
  const std::vector<Term> terms{
      {"loss_recon", &ad::LossVars::recon, [&](const VolumeD& v) { return loss_recon(gt, v); }},
      {"loss_grad", &ad::LossVars::grad, [&](const VolumeD& v) { return loss_grad(gt, v); }},
      {"loss_proj", &ad::LossVars::proj, [&](const VolumeD& v) { return loss_proj(v, batch); }},
  };
  GradientCheckReport report;
  std::uint64_t stream = 0;
  for (const Term& term : terms) {
    ad::Tape t;
    const ad::Var q = t.parameter(start);
    const ad::LossVars lq = ad::training_losses(t, q, gt, batch, LossWeights{});
    t.backward(lq.*term.var);
    const Eigen::VectorXd analytic = t.grad(q);

    CounterRng rng(seed, 0x1055, stream++);
    GradientCheckEntry entry{term.name, static_cast<std::size_t>(pred.data().size()), 0, 0};
    VolumeD probe = pred;
    for (std::size_t k : sample_indices(static_cast<std::size_t>(pred.data().size()), samples, rng)) {
      const auto e = static_cast<Eigen::Index>(k);
      const double x0 = probe.data()[e];
      probe.data()[e] = x0 + h;
      const double fp = term.eval(probe);
      probe.data()[e] = x0 - h;
      const double fm = term.eval(probe);
      probe.data()[e] = x0;
      entry.max_relative_error =
          std::max(entry.max_relative_error, gradient_relative_error(analytic[e], (fp - fm) / (2 * h)));
      ++entry.checked;
    }
    report.modules.push_back(entry);
  }
  return report;
}

}  // namespace cbct
