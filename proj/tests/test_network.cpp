#include <doctest.h>

#include <algorithm>

#include "cbct/network.hpp"
#include "cbct/phantom.hpp"

using namespace cbct;

namespace {

ScanConfig scan(int views, int detector = 16) {
  ScanConfig cfg;
  cfg.n_views = views;
  cfg.delta_theta = 360.0 / views;
  cfg.detector = {detector, detector};
  cfg.detector_spacing = {1.6, 1.6};
  return cfg;
}

ModelConfig tiny(int downsample = 2) {
  ModelConfig mc = ModelConfig::desk(downsample);
  mc.encoder.channels = {3, 4};
  mc.decoder.hidden_channels = 5;
  mc.decoder.residual_blocks = 1;
  mc.decoder.output_scale = 0.02;
  return mc;
}

ProjectionStack phantom_stack(const GridSpec& g, int views, std::uint64_t seed) {
  return render_stack(ellipsoid_phantom(g, seed, 4), circular_poses(scan(views)));
}

}  // namespace

TEST_CASE("configuration presets") {
  const ModelConfig desk = ModelConfig::desk();
  CHECK(desk.channels() == 56);
  CHECK(desk.downsample == 4);
  CHECK(desk.decoder.upsample_blocks == 2);
  CHECK(ModelConfig::desk(8).decoder.upsample_blocks == 3);
  CHECK(ModelConfig::paper_scale().channels() == 256);
  CHECK(ModelConfig::paper_scale().decoder.residual_blocks == 6);
  CHECK(EncoderConfig::doubling(3, 8).channels == std::vector<int>{8, 16, 32});
  ModelConfig bad = desk;
  bad.decoder.upsample_blocks = 1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = desk;
  bad.downsample = 3;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("initialization is seeded and fan-in bounded") {
  const ModelState a = ModelState::initialize(tiny(), 5);
  const ModelState b = ModelState::initialize(tiny(), 5);
  const ModelState c = ModelState::initialize(tiny(), 6);
  for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i].value.data == b.params[i].value.data);
  CHECK(a.param("enc1.down.w").value.data != c.param("enc1.down.w").value.data);
  const auto& w = a.param("enc2.res.w").value;
  CHECK(w.shape == ad::Shape{4, 4, 3, 3});
  CHECK(w.data.cwiseAbs().maxCoeff() <= std::sqrt(3.0 / 36));
  CHECK(a.param("dec.stem.b").value.data.isZero());
  CHECK(a.param("fusion.phi1.w").value.shape == ad::Shape{8, 21});
  CHECK_THROWS_AS(a.param("nope"), InvalidArgument);
}

TEST_CASE("encoder pyramid halves resolution per level and shares weights") {
  const GridSpec g = GridSpec::cube(8, 2);
  ProjectionStack s = phantom_stack(g, 3, 1);
  s.views[2].image = s.views[0].image;
  const ModelState m = ModelState::initialize(tiny(), 1);
  const auto pyr = encode(s, m);
  REQUIRE(pyr.size() == 3);
  REQUIRE(pyr[0].size() == 2);
  CHECK(pyr[0][0].map.width() == 8);
  CHECK(pyr[0][0].map.channels() == 3);
  CHECK(pyr[0][1].map.height() == 4);
  CHECK(pyr[0][1].stride == 4);
  for (int l = 0; l < 2; ++l) CHECK(pyr[0][l].map.data() == pyr[2][l].map.data());
}

TEST_CASE("decoder upsamples by S and reaches softplus of the head bias") {
  const GridSpec g = GridSpec::cube(8, 1);
  ModelState m = ModelState::initialize(tiny(4), 2);
  m.param("dec.head.w").value.data.setZero();
  m.param("dec.head.b").value.data.setConstant(0.3);
  FeatureVolume fv{g, 4, VolumeD(downsampled_grid(g, 4), m.config.channels())};
  fv.features.data().setRandom();
  const VolumeD out = decode(fv, m);
  CHECK((out.shape() == 8).all());
  CHECK((out.data().array() - 0.02 * std::log1p(std::exp(0.3))).abs().maxCoeff() < 1e-15);
  FeatureVolume wrong{g, 2, VolumeD(downsampled_grid(g, 2), m.config.channels())};
  CHECK_THROWS_AS(decode(wrong, m), ShapeMismatch);
}

TEST_CASE("tape pipeline agrees with the pointwise fusion path") {
  const GridSpec g = GridSpec::cube(8, 2);
  const ProjectionStack s = phantom_stack(g, 3, 4);
  ModelState m = ModelState::initialize(tiny(), 3);
  m.config.normalization = projection_statistics({&s});
  const FeatureVolume fv = build_feature_volume(encode(s, m), s.poses(), g, 2, m.fusion_params());
  const VolumeD direct = decode(fv, m);
  const VolumeD taped = predict(s, g, m);
  CHECK((direct.data() - taped.data()).cwiseAbs().maxCoeff() <= 1e-12 * taped.data().cwiseAbs().maxCoeff());
  CHECK(taped.data().minCoeff() >= 0);
}

TEST_CASE("prediction is invariant to view order") {
  const GridSpec g = GridSpec::cube(8, 2);
  const ProjectionStack s = phantom_stack(g, 4, 5);
  ProjectionStack p = s;
  std::reverse(p.views.begin(), p.views.end());
  std::swap(p.views[0], p.views[2]);
  const ModelState m = ModelState::initialize(tiny(), 4);
  const VolumeD a = predict(s, g, m), b = predict(p, g, m);
  CHECK((a.data() - b.data()).cwiseAbs().maxCoeff() <= 1e-12 * a.data().cwiseAbs().maxCoeff());
}

TEST_CASE("prepared geometry must match the stack") {
  const GridSpec g = GridSpec::cube(8, 2);
  const ProjectionStack s = phantom_stack(g, 3, 6);
  const ModelState m = ModelState::initialize(tiny(), 1);
  const ModelGeometry geo = prepare_geometry(m.config, circular_poses(scan(2)), g);
  CHECK_THROWS_AS(predict(s, geo, m), ShapeMismatch);
  CHECK_THROWS_AS(prepare_geometry(m.config, {}, g), InvalidArgument);
  CHECK_THROWS_AS(prepare_geometry(m.config, s.poses(), GridSpec::cube(7, 2)), InvalidArgument);
}

TEST_CASE("projection statistics") {
  ProjectionStack s;
  ImageD a(2, 1), b(2, 1);
  a.data() << 1, 3;
  b.data() << 5, 7;
  const Pose pose = view_pose(scan(1, 2), 1);
  s.views.push_back({pose, a});
  ProjectionStack t;
  t.views.push_back({pose, b});
  const Normalization n = projection_statistics({&s, &t});
  CHECK(n.mean == doctest::Approx(4));
  CHECK(n.std == doctest::Approx(std::sqrt(5.0)));
  ImageD flat(2, 1);
  flat.data().setConstant(2);
  ProjectionStack f;
  f.views.push_back({pose, flat});
  CHECK(projection_statistics({&f}).std == 1);
}
