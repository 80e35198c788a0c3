#pragma once

// Desk-scale encoder-decoder: a shared 2D convolutional encoder produces a
// feature pyramid per projection, feature back projection with adaptive
// fusion assembles a low-resolution 3D feature volume, and a 3D
// convolutional decoder upsamples it to attenuation values.

#include <cstdint>
#include <string>
#include <vector>

#include "cbct/autodiff.hpp"
#include "cbct/fusion.hpp"
#include "cbct/projector.hpp"

namespace cbct {

struct EncoderConfig {
  /// Output channels per level; every level halves the resolution.
  std::vector<int> channels{8, 16, 32};

  static EncoderConfig doubling(int levels, int base_channels);

  int levels() const { return static_cast<int>(channels.size()); }
  /// Concatenated gather channel count C.
  int output_channels() const;
  void validate() const;
};

struct DecoderConfig {
  int hidden_channels = 16;
  int residual_blocks = 2;
  /// log2 of the downsampling rate.
  int upsample_blocks = 2;
  /// Multiplies the softplus output, so the untrained network starts near
  /// typical attenuation values.
  double output_scale = 1.0;

  void validate() const;
};

/// Affine map applied to projections before encoding.
struct Normalization {
  double mean = 0.0;
  double std = 1.0;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  int downsample = 4;
  Normalization normalization;

  int channels() const { return encoder.output_channels(); }
  /// Throws unless 2^upsample_blocks == downsample and sub-configs are sane.
  void validate() const;

  /// Desk defaults: 3 encoder levels (8+16+32 = 56 channels).
  static ModelConfig desk(int downsample = 4);
  /// Wider preset: 64+64+128 = 256 channels, 6 residual decoder blocks.
  static ModelConfig paper_scale(int downsample = 4);
};

/// A named parameter with its adaptive-moment buffers.
struct Parameter {
  std::string name;
  ad::Tensor value;
  ad::Tensor first_moment;
  ad::Tensor second_moment;
};

struct ModelState {
  ModelConfig config;
  std::vector<Parameter> params;
  std::int64_t step = 0;

  /// Fan-in scaled uniform weights, zero biases; deterministic in `seed`.
  static ModelState initialize(const ModelConfig& config, std::uint64_t seed);

  const Parameter& param(const std::string& name) const;
  Parameter& param(const std::string& name);
  std::size_t parameter_count() const;
  FusionParams fusion_params() const;
};

/// Geometry-dependent data shared by every forward pass over one
/// acquisition geometry and volume grid.
struct ModelGeometry {
  std::vector<Pose> poses;
  GridSpec grid;
  GatherPlan plan;
};

ModelGeometry prepare_geometry(const ModelConfig& config, const std::vector<Pose>& poses, const GridSpec& grid);

namespace ad {

/// Tape handles of every parameter, index-aligned with ModelState::params.
struct ModelVars {
  std::vector<Var> params;
  const ModelState* state = nullptr;

  Var operator[](const std::string& name) const;
};

ModelVars bind_parameters(Tape& tape, const ModelState& state, bool trainable);

/// Per view, the encoder pyramid [C_l, h_l, w_l] for l = 1..levels.
std::vector<std::vector<Var>> encode(Tape& tape, const ModelVars& vars, const ProjectionStack& stack);

/// feature grid [C, D/S, H/S, W/S] -> volume [1, D, H, W].
Var decode(Tape& tape, const ModelVars& vars, Var feature_grid);

/// Full forward pass: encode, gather and fuse, decode.
Var predict(Tape& tape, const ModelVars& vars, const ProjectionStack& stack, const ModelGeometry& geometry);

}  // namespace ad

std::vector<std::vector<FeatureLevel>> encode(const ProjectionStack& stack, const ModelState& state);
VolumeD decode(const FeatureVolume& fv, const ModelState& state);
VolumeD predict(const ProjectionStack& stack, const GridSpec& grid, const ModelState& state);
VolumeD predict(const ProjectionStack& stack, const ModelGeometry& geometry, const ModelState& state);

/// Mean and standard deviation over every pixel of the given stacks.
Normalization projection_statistics(const std::vector<const ProjectionStack*>& stacks);

}  // namespace cbct
