#include "cbct/network.hpp"

#include <cmath>

#include "cbct/random.hpp"

namespace cbct {

namespace {

int conv_out(int n) { return (n + 2 - 3) / 2 + 1; }

std::string level_name(int l, const char* part) { return "enc" + std::to_string(l) + "." + part; }

}  // namespace

EncoderConfig EncoderConfig::doubling(int levels, int base_channels) {
  if (levels < 1 || base_channels < 1) throw InvalidArgument("encoder needs at least one level and channel");
  EncoderConfig e;
  e.channels.clear();
  for (int l = 0; l < levels; ++l) e.channels.push_back(base_channels << l);
  return e;
}

int EncoderConfig::output_channels() const {
  int c = 0;
  for (int v : channels) c += v;
  return c;
}

void EncoderConfig::validate() const {
  if (channels.empty()) throw InvalidArgument("encoder needs at least one level");
  for (int c : channels)
    if (c < 1) throw InvalidArgument("encoder channel counts must be positive");
}

void DecoderConfig::validate() const {
  if (hidden_channels < 1) throw InvalidArgument("decoder hidden channels must be positive");
  if (residual_blocks < 0 || upsample_blocks < 0) throw InvalidArgument("decoder block counts must be non-negative");
  if (!(output_scale > 0) || !std::isfinite(output_scale)) throw InvalidArgument("decoder output scale must be positive");
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (downsample < 1 || (downsample & (downsample - 1)) != 0)
    throw InvalidArgument("downsampling rate must be a power of two");
  if ((1 << decoder.upsample_blocks) != downsample)
    throw InvalidArgument("decoder upsample blocks (" + std::to_string(decoder.upsample_blocks) +
                          ") do not undo downsampling rate " + std::to_string(downsample));
  if (!(normalization.std > 0) || !std::isfinite(normalization.mean))
    throw InvalidArgument("projection normalization needs a finite mean and positive std");
}

ModelConfig ModelConfig::desk(int downsample) {
  ModelConfig c;
  c.downsample = downsample;
  int blocks = 0;
  while ((1 << blocks) < downsample) ++blocks;
  c.decoder.upsample_blocks = blocks;
  return c;
}

ModelConfig ModelConfig::paper_scale(int downsample) {
  ModelConfig c = desk(downsample);
  c.encoder.channels = {64, 64, 128};
  c.decoder.hidden_channels = 64;
  c.decoder.residual_blocks = 6;
  return c;
}

ModelState ModelState::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState s;
  s.config = config;
  auto add = [&](std::string name, ad::Shape shape, int fan_in) {
    ad::Tensor value(shape);
    if (fan_in > 0) {
      CounterRng rng(seed, 0x1000 + s.params.size());
      const double bound = std::sqrt(3.0 / fan_in);
      for (Eigen::Index i = 0; i < value.size(); ++i) value.data[i] = rng.uniform(-bound, bound);
    }
    s.params.push_back({std::move(name), value, ad::Tensor(shape), ad::Tensor(shape)});
  };
  auto conv2 = [&](const std::string& name, int co, int ci) {
    add(name + ".w", {co, ci, 3, 3}, ci * 9);
    add(name + ".b", {co}, 0);
  };
  auto conv3 = [&](const std::string& name, int co, int ci, int k) {
    add(name + ".w", {co, ci, k, k, k}, ci * k * k * k);
    add(name + ".b", {co}, 0);
  };

  int in = 1;
  for (int l = 0; l < config.encoder.levels(); ++l) {
    const int c = config.encoder.channels[static_cast<std::size_t>(l)];
    conv2(level_name(l + 1, "down"), c, in);
    conv2(level_name(l + 1, "res"), c, c);
    in = c;
  }
  const int c = config.channels();
  add("fusion.phi1.w", {c + 1, 3 * c}, 3 * c);
  add("fusion.phi1.b", {c + 1}, 0);
  add("fusion.phi2.w", {c, c}, c);
  add("fusion.phi2.b", {c}, 0);

  const int h = config.decoder.hidden_channels;
  conv3("dec.stem", h, c, 3);
  for (int r = 0; r < config.decoder.residual_blocks; ++r) conv3("dec.res" + std::to_string(r + 1), h, h, 3);
  for (int u = 0; u < config.decoder.upsample_blocks; ++u) conv3("dec.up" + std::to_string(u + 1), h, h, 3);
  conv3("dec.head", 1, h, 1);
  return s;
}

const Parameter& ModelState::param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw InvalidArgument("unknown parameter '" + name + "'");
}

Parameter& ModelState::param(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const ModelState&>(*this).param(name));
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.value.size());
  return n;
}

FusionParams ModelState::fusion_params() const {
  auto matrix = [](const ad::Tensor& t) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
               t.data.data(), t.dim(0), t.dim(1))
        .eval();
  };
  FusionParams f;
  f.phi1_weight = matrix(param("fusion.phi1.w").value);
  f.phi1_bias = param("fusion.phi1.b").value.data;
  f.phi2_weight = matrix(param("fusion.phi2.w").value);
  f.phi2_bias = param("fusion.phi2.b").value.data;
  return f;
}

ModelGeometry prepare_geometry(const ModelConfig& config, const std::vector<Pose>& poses, const GridSpec& grid) {
  config.validate();
  grid.validate();
  if (poses.empty()) throw InvalidArgument("model geometry needs at least one view");
  const DetectorShape det = poses.front().detector;
  for (const auto& p : poses)
    if (p.detector.width != det.width || p.detector.height != det.height)
      throw ShapeMismatch("all views must share one detector shape");
  std::vector<LevelLayout> levels;
  int w = det.width, h = det.height;
  for (int l = 0; l < config.encoder.levels(); ++l) {
    w = conv_out(w);
    h = conv_out(h);
    levels.push_back({config.encoder.channels[static_cast<std::size_t>(l)], w, h, 1 << (l + 1)});
  }
  return {poses, grid, make_gather_plan(poses, sparse_query_points(grid, config.downsample), levels)};
}

namespace ad {

Var ModelVars::operator[](const std::string& name) const {
  for (std::size_t i = 0; i < state->params.size(); ++i)
    if (state->params[i].name == name) return params[i];
  throw InvalidArgument("unknown parameter '" + name + "'");
}

ModelVars bind_parameters(Tape& tape, const ModelState& state, bool trainable) {
  ModelVars vars;
  vars.state = &state;
  for (const auto& p : state.params)
    vars.params.push_back(trainable ? tape.parameter(p.value) : tape.constant(p.value));
  return vars;
}

std::vector<std::vector<Var>> encode(Tape& tape, const ModelVars& vars, const ProjectionStack& stack) {
  stack.validate();
  const ModelConfig& cfg = vars.state->config;
  const double mean = cfg.normalization.mean, inv_std = 1.0 / cfg.normalization.std;
  std::vector<std::vector<Var>> out;
  out.reserve(stack.size());
  for (const auto& view : stack.views) {
    const ImageD& img = view.image;
    Tensor input({1, img.height(), img.width()}, (img.data().array() - mean) * inv_std);
    Var x = tape.constant(std::move(input));
    std::vector<Var> pyramid;
    for (int l = 1; l <= cfg.encoder.levels(); ++l) {
      x = gelu(tape, conv2d(tape, x, vars[level_name(l, "down.w")], vars[level_name(l, "down.b")], 2, 1));
      x = add(tape, x, gelu(tape, conv2d(tape, x, vars[level_name(l, "res.w")], vars[level_name(l, "res.b")], 1, 1)));
      pyramid.push_back(x);
    }
    out.push_back(std::move(pyramid));
  }
  return out;
}

Var decode(Tape& tape, const ModelVars& vars, Var feature_grid) {
  const DecoderConfig& cfg = vars.state->config.decoder;
  Var h = gelu(tape, conv3d(tape, feature_grid, vars["dec.stem.w"], vars["dec.stem.b"], 1));
  for (int r = 1; r <= cfg.residual_blocks; ++r) {
    const std::string n = "dec.res" + std::to_string(r);
    h = add(tape, h, gelu(tape, conv3d(tape, h, vars[n + ".w"], vars[n + ".b"], 1)));
  }
  for (int u = 1; u <= cfg.upsample_blocks; ++u) {
    const std::string n = "dec.up" + std::to_string(u);
    h = gelu(tape, conv3d(tape, upsample_nearest3d(tape, h, 2), vars[n + ".w"], vars[n + ".b"], 1));
  }
  const Var head = conv3d(tape, h, vars["dec.head.w"], vars["dec.head.b"], 0);
  return scale(tape, softplus(tape, head), cfg.output_scale);
}

Var predict(Tape& tape, const ModelVars& vars, const ProjectionStack& stack, const ModelGeometry& geometry) {
  const ModelConfig& cfg = vars.state->config;
  if (static_cast<int>(stack.size()) != geometry.plan.views)
    throw ShapeMismatch("projection count differs from the prepared geometry");
  const auto maps = encode(tape, vars, stack);
  const Var gathered = gather_features(tape, maps, geometry.plan);
  const Var fused = fuse_adaptive(tape, gathered, {vars["fusion.phi1.w"], vars["fusion.phi1.b"],
                                                   vars["fusion.phi2.w"], vars["fusion.phi2.b"]});
  const Eigen::Array3i coarse = geometry.grid.shape / cfg.downsample;
  return decode(tape, vars, points_to_grid(tape, fused, {coarse[2], coarse[1], coarse[0]}));
}

}  // namespace ad

std::vector<std::vector<FeatureLevel>> encode(const ProjectionStack& stack, const ModelState& state) {
  ad::Tape tape;
  const auto vars = ad::bind_parameters(tape, state, false);
  const auto maps = ad::encode(tape, vars, stack);
  std::vector<std::vector<FeatureLevel>> out;
  for (const auto& view : maps) {
    std::vector<FeatureLevel> pyramid;
    for (std::size_t l = 0; l < view.size(); ++l) {
      const ad::Tensor& t = tape.value(view[l]);
      pyramid.push_back({ImageD(t.dim(2), t.dim(1), t.dim(0), t.data), 1 << (l + 1)});
    }
    out.push_back(std::move(pyramid));
  }
  return out;
}

VolumeD decode(const FeatureVolume& fv, const ModelState& state) {
  const GridSpec coarse = downsampled_grid(fv.fine_grid, fv.downsample);
  if (fv.downsample != state.config.downsample || !(fv.features.shape() == coarse.shape).all() ||
      fv.features.channels() != state.config.channels())
    throw ShapeMismatch("feature volume does not match the model configuration");
  ad::Tape tape;
  const auto vars = ad::bind_parameters(tape, state, false);
  const ad::Var grid = tape.constant(
      ad::Tensor({fv.features.channels(), coarse.shape[2], coarse.shape[1], coarse.shape[0]}, fv.features.data()));
  const ad::Var out = ad::decode(tape, vars, grid);
  return VolumeD(fv.fine_grid, 1, tape.value(out).data);
}

VolumeD predict(const ProjectionStack& stack, const ModelGeometry& geometry, const ModelState& state) {
  ad::Tape tape;
  const auto vars = ad::bind_parameters(tape, state, false);
  const ad::Var out = ad::predict(tape, vars, stack, geometry);
  return VolumeD(geometry.grid, 1, tape.value(out).data);
}

VolumeD predict(const ProjectionStack& stack, const GridSpec& grid, const ModelState& state) {
  return predict(stack, prepare_geometry(state.config, stack.poses(), grid), state);
}

Normalization projection_statistics(const std::vector<const ProjectionStack*>& stacks) {
  double sum = 0, sq = 0, n = 0;
  for (const auto* s : stacks)
    for (const auto& v : s->views) {
      sum += v.image.data().sum();
      sq += v.image.data().squaredNorm();
      n += static_cast<double>(v.image.data().size());
    }
  if (n == 0) throw InvalidArgument("no projection pixels to normalize over");
  const double mean = sum / n;
  const double var = std::max(0.0, sq / n - mean * mean);
  return {mean, var > 1e-24 ? std::sqrt(var) : 1.0};
}

}  // namespace cbct
