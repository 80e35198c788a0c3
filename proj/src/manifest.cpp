#include "cbct/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cbct {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw SchemaError("manifest " + (path.empty() ? std::string("/") : path) + ": " + what);
}

const json& member(const json& j, const std::string& path, const char* key) {
  if (!j.is_object()) fail(path, "expected an object");
  if (!j.contains(key)) fail(path + "/" + key, "required field is missing");
  return j.at(key);
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

template <int N>
Eigen::Matrix<double, N, 1> numbers(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != N) fail(path, "expected an array of " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = number(j[static_cast<std::size_t>(i)], path + "/" + std::to_string(i));
  return v;
}

template <int N>
Eigen::Array<int, N, 1> integers(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != N) fail(path, "expected an array of " + std::to_string(N) + " integers");
  Eigen::Array<int, N, 1> v;
  for (int i = 0; i < N; ++i) {
    v[i] = integer(j[static_cast<std::size_t>(i)], path + "/" + std::to_string(i));
    if (v[i] < 1) fail(path + "/" + std::to_string(i), "must be positive");
  }
  return v;
}

json array3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

Manifest parse_manifest(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    fail("", std::string("invalid JSON: ") + e.what());
  }
  Manifest m;
  const json& det = member(root, "", "detector");
  const auto ds = integers<2>(member(det, "/detector", "shape"), "/detector/shape");
  m.detector = {ds[0], ds[1]};
  m.detector_spacing = numbers<2>(member(det, "/detector", "spacing"), "/detector/spacing");
  if ((m.detector_spacing.array() <= 0).any()) fail("/detector/spacing", "must be positive");

  const json& vol = member(root, "", "volume");
  const Eigen::Array3i vs = integers<3>(member(vol, "/volume", "shape"), "/volume/shape");
  const Eigen::Vector3d vsp = numbers<3>(member(vol, "/volume", "spacing"), "/volume/spacing");
  if ((vsp.array() <= 0).any()) fail("/volume/spacing", "must be positive");
  m.volume = GridSpec(vs, vsp.array());

  const bool has_circular = root.contains("circular"), has_views = root.contains("views");
  if (has_circular && has_views) fail("", "'circular' and 'views' are mutually exclusive; give exactly one");
  if (!has_circular && !has_views) fail("", "one of 'circular' or 'views' is required");

  if (has_circular) {
    const json& c = root.at("circular");
    ScanConfig s;
    s.n_views = integer(member(c, "/circular", "n_views"), "/circular/n_views");
    if (s.n_views < 1) fail("/circular/n_views", "must be >= 1");
    s.delta_theta = c.contains("delta_theta") ? number(c.at("delta_theta"), "/circular/delta_theta")
                                              : ScanConfig::full_orbit_step(s.n_views);
    s.start_angle = c.contains("start_angle") ? number(c.at("start_angle"), "/circular/start_angle") : 0.0;
    if (!(s.start_angle >= 0 && s.start_angle < 360)) fail("/circular/start_angle", "must lie in [0, 360)");
    s.source_to_object = number(member(c, "/circular", "source_to_object"), "/circular/source_to_object");
    if (!(s.source_to_object > 0)) fail("/circular/source_to_object", "must be positive");
    s.object_to_detector = number(member(c, "/circular", "object_to_detector"), "/circular/object_to_detector");
    if (!(s.object_to_detector >= 0)) fail("/circular/object_to_detector", "must be non-negative");
    s.detector = m.detector;
    s.detector_spacing = m.detector_spacing;
    m.circular = s;
    m.poses = circular_poses(s);
  } else {
    const json& views = root.at("views");
    if (!views.is_array() || views.empty()) fail("/views", "expected a non-empty array");
    for (std::size_t i = 0; i < views.size(); ++i) {
      const std::string p = "/views/" + std::to_string(i);
      const json& v = views[i];
      try {
        m.poses.push_back(make_pose<double>(numbers<3>(member(v, p, "source"), p + "/source"),
                                            numbers<3>(member(v, p, "detector_center"), p + "/detector_center"),
                                            numbers<3>(member(v, p, "u"), p + "/u"),
                                            numbers<3>(member(v, p, "v"), p + "/v"), m.detector));
      } catch (const DegenerateGeometry& e) {
        fail(p, e.what());
      }
    }
  }

  if (root.contains("normalization")) {
    const json& n = root.at("normalization");
    Normalization norm{number(member(n, "/normalization", "mean"), "/normalization/mean"),
                       number(member(n, "/normalization", "std"), "/normalization/std")};
    if (!(norm.std > 0)) fail("/normalization/std", "must be positive");
    m.normalization = norm;
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str());
}

std::string manifest_to_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["detector"]["shape"] = {m.detector.width, m.detector.height};
  j["detector"]["spacing"] = {m.detector_spacing.x(), m.detector_spacing.y()};
  j["volume"]["shape"] = {m.volume.shape[0], m.volume.shape[1], m.volume.shape[2]};
  j["volume"]["spacing"] = {m.volume.spacing[0], m.volume.spacing[1], m.volume.spacing[2]};
  if (m.circular) {
    j["circular"]["n_views"] = m.circular->n_views;
    j["circular"]["delta_theta"] = m.circular->delta_theta;
    j["circular"]["start_angle"] = m.circular->start_angle;
    j["circular"]["source_to_object"] = m.circular->source_to_object;
    j["circular"]["object_to_detector"] = m.circular->object_to_detector;
  } else {
    j["views"] = json::array();
    for (const auto& p : m.poses)
      j["views"].push_back({{"source", array3(p.source)},
                            {"detector_center", array3(p.detector_center)},
                            {"u", array3(p.u_basis)},
                            {"v", array3(p.v_basis)}});
  }
  if (m.normalization) {
    j["normalization"]["mean"] = m.normalization->mean;
    j["normalization"]["std"] = m.normalization->std;
  }
  return j.dump(2);
}

Manifest circular_manifest(const ScanConfig& scan, const GridSpec& volume) {
  scan.validate();
  volume.validate();
  Manifest m;
  m.detector = scan.detector;
  m.detector_spacing = scan.detector_spacing;
  m.volume = volume;
  m.circular = scan;
  m.poses = circular_poses(scan);
  return m;
}

std::vector<Pose> parse_vector_geometry(std::istream& rows, DetectorShape detector) {
  std::vector<Pose> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(rows, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[12];
    int n = 0;
    double x;
    while (ls >> x) {
      if (n == 12) throw SchemaError("geometry row " + std::to_string(line_no) + " has more than 12 columns");
      v[n++] = x;
    }
    if (n != 12 || !ls.eof())
      throw SchemaError("geometry row " + std::to_string(line_no) + " must hold exactly 12 numbers");
    poses.push_back(make_pose<double>({v[0], v[1], v[2]}, {v[3], v[4], v[5]}, {v[6], v[7], v[8]},
                                      {v[9], v[10], v[11]}, detector));
  }
  if (poses.empty()) throw SchemaError("geometry file holds no views");
  return poses;
}

}  // namespace cbct
