#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cbct/io.hpp"
#include "cbct/manifest.hpp"
#include "cbct/phantom.hpp"
#include "cbct/random.hpp"

using namespace cbct;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cbct_test_io";
  fs::create_directories(dir);
  return dir / name;
}

VolumeD float_volume(const GridSpec& g, int channels, std::uint64_t seed) {
  VolumeD v(g, channels);
  CounterRng rng(seed);
  for (auto& x : v.data()) x = static_cast<float>(rng.normal());
  return v;
}

const char* kDental = R"({
  "detector": {"shape": [256, 256], "spacing": [1.0, 1.0]},
  "volume": {"shape": [64, 64, 64], "spacing": [1.0, 1.0, 1.0]},
  "circular": {"n_views": 20, "source_to_object": 500, "object_to_detector": 200}
})";

}  // namespace

TEST_CASE("volume round trip is bit exact") {
  const VolumeD v = float_volume(GridSpec(Eigen::Array3i(5, 3, 2), Eigen::Array3d(0.5, 1, 2.25)), 2, 1);
  const fs::path p = scratch("vol.raw");
  write_volume(p, v);
  const VolumeD r = read_volume(p);
  CHECK(r.data() == v.data());
  CHECK(r.grid() == v.grid());
  CHECK(r.channels() == 2);
  CHECK(sidecar_path(p) == scratch("vol.json"));
}

TEST_CASE("2x2x2 volume occupies 32 bytes") {
  const fs::path p = scratch("tiny.raw");
  write_volume(p, float_volume(GridSpec::cube(2, 1), 1, 2));
  CHECK(fs::file_size(p) == 32);
}

TEST_CASE("raw size must match the sidecar") {
  const fs::path p = scratch("short.raw");
  write_volume(p, float_volume(GridSpec::cube(3, 1), 1, 3));
  fs::resize_file(p, 27 * 4 - 2);
  CHECK_THROWS_AS(read_volume(p), IoError);
  fs::resize_file(p, 27 * 4 + 4);
  CHECK_THROWS_AS(read_volume(p), IoError);
  CHECK_THROWS_AS(read_volume(scratch("absent.raw")), IoError);
}

TEST_CASE("projection stack round trip") {
  ScanConfig scan;
  scan.n_views = 3;
  scan.delta_theta = 120;
  scan.start_angle = 7;
  scan.detector = {9, 6};
  scan.detector_spacing = {1.3, 0.7};
  ProjectionStack s = render_stack(ellipsoid_phantom(GridSpec::cube(8, 1.5), 2, 3), circular_poses(scan));
  for (auto& v : s.views) v.image.data() = v.image.data().cast<float>().cast<double>();
  const fs::path dir = scratch("stack");
  fs::remove_all(dir);
  write_projections(dir, s);
  CHECK(fs::exists(dir / "proj_0002.raw"));
  const ProjectionStack r = read_projections(dir);
  REQUIRE(r.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.views[i].image.data() == s.views[i].image.data());
    CHECK(r.views[i].pose.source == s.views[i].pose.source);
    CHECK(r.views[i].pose.origin_pixel_center == s.views[i].pose.origin_pixel_center);
  }
  SUBCASE("missing view") {
    fs::remove(dir / "proj_0001.raw");
    CHECK_THROWS_AS(read_projections(dir), IoError);
  }
  SUBCASE("inconsistent view shape") {
    std::ifstream is(dir / "proj_0001.json");
    std::string text((std::istreambuf_iterator<char>(is)), {});
    is.close();
    const auto at = text.find("\"shape\"");
    REQUIRE(at != std::string::npos);
    text.replace(text.find('9', at), 1, "7");
    std::ofstream(dir / "proj_0001.json") << text;
    CHECK_THROWS_AS(read_projections(dir), SchemaError);
  }
}

TEST_CASE("slice export writes a windowed PGM") {
  VolumeD v(GridSpec(Eigen::Array3i(4, 3, 2), Eigen::Array3d::Ones()));
  v.at(0, 2, 1) = 1;
  const fs::path p = scratch("slice.pgm");
  write_pgm_slice(p, v, 2, 1, 0, 1);
  std::ifstream is(p, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  is.get();
  CHECK(magic == "P5");
  CHECK(w == 4);
  CHECK(h == 3);
  CHECK(maxval == 255);
  CHECK(static_cast<unsigned char>(is.get()) == 255);
  CHECK(is.get() == 0);
  CHECK_THROWS_AS(write_pgm_slice(p, v, 3, 0, 0, 1), InvalidArgument);
}

TEST_CASE("metrics CSV") {
  MetricsReport finite{{31.25, false}, 0.875, 0.03, SsimMode::SliceAverage};
  MetricsReport same{{0, true}, 1.0, 1.0, SsimMode::Volumetric};
  const std::string csv = metrics_csv({{"fdk", 20, finite}, {"self", 0, same}});
  CHECK(csv ==
        "case,views,psnr_db,ssim,data_range,ssim_mode\n"
        "fdk,20,31.250000,0.875000,0.03,slice\n"
        "self,0,inf,1.000000,1,volumetric\n");
}

TEST_CASE("dental circular manifest expands to 18 degree steps") {
  const Manifest m = parse_manifest(kDental);
  REQUIRE(m.circular);
  CHECK(m.circular->delta_theta == 18);
  CHECK(m.circular->start_angle == 0);
  REQUIRE(m.poses.size() == 20);
  for (int i = 1; i <= 20; ++i) {
    const Pose expect = view_pose(*m.circular, i);
    CHECK(m.poses[i - 1].source == expect.source);
    CHECK(m.poses[i - 1].u_basis == expect.u_basis);
    CHECK(m.poses[i - 1].origin_pixel_center == expect.origin_pixel_center);
  }
  const double angle = std::atan2(m.poses[1].source.y(), m.poses[1].source.x()) * 180 / std::numbers::pi;
  CHECK(angle == doctest::Approx(18));
  CHECK_FALSE(m.normalization);
}

TEST_CASE("explicit manifest keeps listed vectors verbatim") {
  const char* text = R"({
    "detector": {"shape": [4, 2], "spacing": [0.5, 0.5]},
    "volume": {"shape": [8, 8, 8], "spacing": [1, 1, 1]},
    "views": [
      {"source": [100, 0, 0], "detector_center": [-50, 0, 0], "u": [0, 0.5, 0], "v": [0, 0, 0.5]},
      {"source": [0, 100, 1], "detector_center": [0, -50, 1], "u": [-0.5, 0, 0], "v": [0, 0, 0.5]},
      {"source": [-100, 0.25, 0], "detector_center": [50, 0, 0], "u": [0, -0.5, 0], "v": [0, 0.01, 0.5]}
    ],
    "normalization": {"mean": 0.3, "std": 0.2}
  })";
  const Manifest m = parse_manifest(text);
  CHECK_FALSE(m.circular);
  REQUIRE(m.poses.size() == 3);
  CHECK(m.poses[1].source == Eigen::Vector3d(0, 100, 1));
  CHECK(m.poses[2].source == Eigen::Vector3d(-100, 0.25, 0));
  CHECK(m.poses[2].v_basis == Eigen::Vector3d(0, 0.01, 0.5));
  CHECK(m.poses[0].detector == DetectorShape{4, 2});
  REQUIRE(m.normalization);
  CHECK(m.normalization->std == 0.2);
  const Manifest again = parse_manifest(manifest_to_json(m));
  CHECK(again.poses[2].detector_center == m.poses[2].detector_center);
}

TEST_CASE("manifest schema errors name the offending field") {
  auto message = [](const std::string& text) {
    try {
      parse_manifest(text);
    } catch (const SchemaError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  std::string both = kDental;
  both.insert(both.rfind('}'), R"(, "views": [])");
  CHECK(message(both).find("mutually exclusive") != std::string::npos);
  std::string neither = R"({"detector": {"shape": [4, 4], "spacing": [1, 1]},
                            "volume": {"shape": [4, 4, 4], "spacing": [1, 1, 1]}})";
  CHECK(message(neither).find("required") != std::string::npos);
  std::string bad = kDental;
  bad.replace(bad.find("\"n_views\": 20"), 13, "\"n_views\": 0");
  CHECK(message(bad).find("/circular/n_views") != std::string::npos);
  std::string missing = kDental;
  missing.replace(missing.find("\"spacing\": [1.0, 1.0]"), 21, "\"spacing\": [1.0]");
  CHECK(message(missing).find("/detector/spacing") != std::string::npos);
  CHECK(message("{not json").find("invalid JSON") != std::string::npos);
}

TEST_CASE("manifest serialization round trip") {
  ScanConfig scan;
  scan.n_views = 5;
  scan.delta_theta = 72;
  scan.start_angle = 3;
  scan.detector = {32, 24};
  scan.detector_spacing = {1.2, 1.4};
  const Manifest m = circular_manifest(scan, GridSpec::cube(16, 0.75));
  const Manifest r = parse_manifest(manifest_to_json(m));
  CHECK(r.volume == m.volume);
  CHECK(r.detector == m.detector);
  REQUIRE(r.poses.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.poses[i].source == m.poses[i].source);
}

TEST_CASE("vector geometry rows") {
  std::istringstream rows(
      "# source det_center u v\n"
      "100 0 0  -50 0 0  0 1 0  0 0 1\n"
      "\n"
      "0 100 0  0 -50 0  -1 0 0  0 0 1\n");
  const auto poses = parse_vector_geometry(rows, {8, 8});
  REQUIRE(poses.size() == 2);
  CHECK(poses[1].detector_center == Eigen::Vector3d(0, -50, 0));
  std::istringstream short_row("1 2 3\n");
  CHECK_THROWS_AS(parse_vector_geometry(short_row, {8, 8}), SchemaError);
  std::istringstream empty("# nothing\n");
  CHECK_THROWS_AS(parse_vector_geometry(empty, {8, 8}), SchemaError);
}

TEST_CASE("sphere phantom voxel count") {
  const GridSpec g = GridSpec::cube(64, 1);
  const VolumeD v = sphere_phantom(g, 10, 0.02);
  int inside = 0;
  for (double x : v.data()) {
    CHECK((x == 0 || x == 0.02));
    inside += x == 0.02 ? 1 : 0;
  }
  CHECK(v.at(32, 32, 32) == 0.02);
  const double analytic = 4.0 / 3 * std::numbers::pi * 1000;
  CHECK(std::abs(inside - analytic) / analytic < 0.02);
}

TEST_CASE("ellipsoid phantoms are seeded and bounded") {
  const GridSpec g = GridSpec::cube(16, 2);
  const VolumeD a = ellipsoid_phantom(g, 9, 6), b = ellipsoid_phantom(g, 9, 6), c = ellipsoid_phantom(g, 10, 6);
  CHECK(a.data() == b.data());
  CHECK(a.data() != c.data());
  CHECK(ellipsoid_phantom(g, 9, 0).data().isZero());
  for (double x : a.data()) CHECK((x == 0 || (x >= 0.005 && x <= 0.03)));
}

TEST_CASE("Shepp-Logan phantom") {
  const VolumeD v = shepp_logan_phantom(GridSpec::cube(32, 1), 0.02);
  CHECK(v.data().minCoeff() >= 0);
  CHECK(v.data().maxCoeff() == doctest::Approx(0.02));
  CHECK(v.at(0, 0, 0) == 0);
  CHECK(v.at(16, 16, 16) > 0);
}
