#include "cbct/io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cbct {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw I/O assumes a little-endian host");

namespace {

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

void write_raw(const fs::path& path, const Eigen::VectorXd& data) {
  const Eigen::VectorXf f = data.cast<float>();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!os) throw IoError("failed writing " + path.string());
}

Eigen::VectorXd read_raw(const fs::path& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  Eigen::VectorXf f(static_cast<Eigen::Index>(count));
  if (!is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(count * sizeof(float))))
    throw IoError(path.string() + " holds fewer than " + std::to_string(count) + " float32 values");
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError(path.string() + " holds more than " + std::to_string(count) + " float32 values");
  return f.cast<double>();
}

template <typename T>
T field(const json& j, const char* key, const fs::path& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(where.string() + ": field '" + key + "': " + e.what());
  }
}

json vec(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d to_vec(const json& j, const char* key, const fs::path& where) {
  const auto a = field<std::vector<double>>(j, key, where);
  if (a.size() != 3) throw SchemaError(where.string() + ": field '" + std::string(key) + "' needs 3 numbers");
  return {a[0], a[1], a[2]};
}

std::string proj_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "proj_%04zu", i);
  return buf;
}

}  // namespace

fs::path sidecar_path(const fs::path& raw) {
  fs::path p = raw;
  return p.replace_extension(".json");
}

void write_volume(const fs::path& raw, const VolumeD& volume) {
  if (raw.has_parent_path()) fs::create_directories(raw.parent_path());
  write_raw(raw, volume.data());
  json j;
  j["shape"] = {volume.shape()[0], volume.shape()[1], volume.shape()[2]};
  j["spacing"] = {volume.spacing()[0], volume.spacing()[1], volume.spacing()[2]};
  j["channels"] = volume.channels();
  j["dtype"] = "float32";
  write_json(sidecar_path(raw), j);
}

VolumeD read_volume(const fs::path& raw) {
  const fs::path side = sidecar_path(raw);
  const json j = read_json(side);
  const auto shape = field<std::vector<int>>(j, "shape", side);
  const auto spacing = field<std::vector<double>>(j, "spacing", side);
  const int channels = j.contains("channels") ? field<int>(j, "channels", side) : 1;
  if (shape.size() != 3 || spacing.size() != 3) throw SchemaError(side.string() + ": shape and spacing need 3 entries");
  if (j.contains("dtype") && field<std::string>(j, "dtype", side) != "float32")
    throw SchemaError(side.string() + ": only float32 volumes are supported");
  GridSpec grid(Eigen::Array3i(shape[0], shape[1], shape[2]), Eigen::Array3d(spacing[0], spacing[1], spacing[2]));
  grid.validate();
  if (channels < 1) throw SchemaError(side.string() + ": channels must be positive");
  return VolumeD(grid, channels, read_raw(raw, grid.voxel_count() * static_cast<std::size_t>(channels)));
}

void write_projections(const fs::path& dir, const ProjectionStack& stack) {
  stack.validate();
  fs::create_directories(dir);
  const DetectorShape det = stack.detector();
  json files = json::array();
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const auto& view = stack.views[i];
    const std::string stem = proj_stem(i);
    write_raw(dir / (stem + ".raw"), view.image.data());
    json j;
    j["shape"] = {view.image.width(), view.image.height()};
    j["pose"] = {{"source", vec(view.pose.source)},
                 {"detector_center", vec(view.pose.detector_center)},
                 {"u", vec(view.pose.u_basis)},
                 {"v", vec(view.pose.v_basis)}};
    write_json(dir / (stem + ".json"), j);
    files.push_back(stem + ".raw");
  }
  write_json(dir / "stack.json", {{"n_views", stack.size()}, {"detector", {det.width, det.height}}, {"files", files}});
}

ProjectionStack read_projections(const fs::path& dir) {
  const fs::path index = dir / "stack.json";
  const json j = read_json(index);
  const auto n = field<std::size_t>(j, "n_views", index);
  const auto det = field<std::vector<int>>(j, "detector", index);
  if (det.size() != 2) throw SchemaError(index.string() + ": detector needs [width, height]");
  ProjectionStack stack;
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path side = dir / (proj_stem(i) + ".json");
    const json pj = read_json(side);
    const auto shape = field<std::vector<int>>(pj, "shape", side);
    if (shape != det) throw SchemaError(side.string() + ": image shape differs from the stack detector");
    const json pose = field<json>(pj, "pose", side);
    const DetectorShape ds{shape[0], shape[1]};
    const Pose p = make_pose<double>(to_vec(pose, "source", side), to_vec(pose, "detector_center", side),
                                     to_vec(pose, "u", side), to_vec(pose, "v", side), ds);
    ImageD img(ds.width, ds.height, 1,
               read_raw(dir / (proj_stem(i) + ".raw"), static_cast<std::size_t>(ds.width) * ds.height));
    stack.views.push_back({p, std::move(img)});
  }
  stack.validate();
  return stack;
}

void write_pgm_slice(const fs::path& path, const VolumeD& volume, int axis, int index, double lo, double hi) {
  if (axis < 0 || axis > 2) throw InvalidArgument("slice axis must be 0, 1 or 2");
  if (index < 0 || index >= volume.shape()[axis]) throw InvalidArgument("slice index out of range");
  if (!(hi > lo)) throw InvalidArgument("slice window needs hi > lo");
  const int a = axis == 0 ? 1 : 0, b = axis == 2 ? 1 : 2;
  const int w = volume.shape()[a], h = volume.shape()[b];
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  for (int r = h - 1; r >= 0; --r)
    for (int c = 0; c < w; ++c) {
      Eigen::Array3i ijk;
      ijk[axis] = index;
      ijk[a] = c;
      ijk[b] = r;
      const double t = std::clamp((volume.at(ijk[0], ijk[1], ijk[2]) - lo) / (hi - lo), 0.0, 1.0);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255 * t))));
    }
  if (!os) throw IoError("failed writing " + path.string());
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "case,views,psnr_db,ssim,data_range,ssim_mode\n";
  char buf[96];
  for (const auto& r : rows) {
    os << r.name << ',' << r.views << ',';
    if (r.metrics.psnr.infinite) {
      os << "inf";
    } else {
      std::snprintf(buf, sizeof(buf), "%.6f", r.metrics.psnr.db);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.6f,%.9g,%s\n", r.metrics.ssim, r.metrics.data_range,
                  r.metrics.mode == SsimMode::Volumetric ? "volumetric" : "slice");
    os << buf;
  }
  return os.str();
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << metrics_csv(rows);
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace cbct
