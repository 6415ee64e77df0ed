#include "zs6d/bop_eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <tuple>

#include "zs6d/error.hpp"
#include "zs6d/json_io.hpp"

namespace fs = std::filesystem;

namespace zs6d {

namespace {

std::string pad6(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", v);
  return buf;
}

const json &require(const json &obj, const std::string &key, const std::string &where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw Error(ErrorCode::SchemaError, where + ": missing key '" + key + "'");
  }
  return obj.at(key);
}

int parse_int_key(const std::string &key, const std::string &where) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), v);
  if (ec != std::errc{} || ptr != key.data() + key.size()) {
    throw Error(ErrorCode::SchemaError, where + ": non-integer key '" + key + "'");
  }
  return v;
}

std::pair<int, int> default_image_size(const fs::path &dataset_root) {
  for (const auto &dir : {dataset_root, dataset_root.parent_path()}) {
    const fs::path p = dir / "camera.json";
    if (fs::exists(p)) {
      const json cam = read_json_file(p);
      if (cam.contains("width") && cam.contains("height")) {
        return {cam.at("width").get<int>(), cam.at("height").get<int>()};
      }
    }
  }
  return {640, 480};
}

bool rotation_is_orthonormal(const Mat3 &R, double tol) {
  return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace

fs::path scene_directory(const fs::path &dataset_root, int scene_id) { return dataset_root / pad6(scene_id); }

std::vector<SceneAnnotation> load_bop_scene(const fs::path &dataset_root, int scene_id) {
  const fs::path dir = scene_directory(dataset_root, scene_id);
  const json cams = read_json_file(dir / "scene_camera.json");
  const json gts = read_json_file(dir / "scene_gt.json");
  const auto [def_w, def_h] = default_image_size(dataset_root);

  std::vector<SceneAnnotation> out;
  try {
    for (const auto &[key, cam] : cams.items()) {
      const std::string where = "scene_camera.json[" + key + "]";
      SceneAnnotation ann;
      ann.scene_id = scene_id;
      ann.image_id = parse_int_key(key, where);
      const Mat3 Km = rotation_from_json(require(cam, "cam_K", where), "cam_K");
      ann.K.fx = Km(0, 0);
      ann.K.fy = Km(1, 1);
      ann.K.cx = Km(0, 2);
      ann.K.cy = Km(1, 2);
      ann.K.width = cam.contains("width") ? cam.at("width").get<int>() : def_w;
      ann.K.height = cam.contains("height") ? cam.at("height").get<int>() : def_h;
      if (!(ann.K.fx > 0.0 && ann.K.fy > 0.0)) {
        throw Error(ErrorCode::SchemaError, where + ": key 'cam_K' has non-positive focal length");
      }
      if (gts.contains(key)) {
        const json &list = gts.at(key);
        if (!list.is_array()) throw Error(ErrorCode::SchemaError, "scene_gt.json: key '" + key + "' is not a list");
        for (std::size_t g = 0; g < list.size(); ++g) {
          const std::string gwhere = "scene_gt.json[" + key + "][" + std::to_string(g) + "]";
          GtInstance inst;
          inst.obj_id = require(list[g], "obj_id", gwhere).get<int>();
          inst.pose.rotation = rotation_from_json(require(list[g], "cam_R_m2c", gwhere), "cam_R_m2c");
          inst.pose.translation = vec3_from_json(require(list[g], "cam_t_m2c", gwhere), "cam_t_m2c");
          if (!rotation_is_orthonormal(inst.pose.rotation, 1e-3)) {
            throw Error(ErrorCode::SchemaError, gwhere + ": key 'cam_R_m2c' is not orthonormal");
          }
          inst.mask_path = dir / "mask_visib" / (pad6(ann.image_id) + "_" + pad6(static_cast<int>(g)) + ".png");
          ann.gt.push_back(std::move(inst));
        }
      }
      out.push_back(std::move(ann));
    }
  } catch (const json::exception &e) {
    throw Error(ErrorCode::SchemaError, std::string("scene ") + pad6(scene_id) + ": " + e.what());
  }
  std::sort(out.begin(), out.end(),
            [](const SceneAnnotation &a, const SceneAnnotation &b) { return a.image_id < b.image_id; });
  return out;
}

void write_bop_scene(const fs::path &dataset_root, int scene_id, std::span<const SceneAnnotation> images) {
  const fs::path dir = scene_directory(dataset_root, scene_id);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  json cams = json::object();
  json gts = json::object();
  for (const auto &ann : images) {
    Mat3 Km = Mat3::Zero();
    Km(0, 0) = ann.K.fx;
    Km(1, 1) = ann.K.fy;
    Km(0, 2) = ann.K.cx;
    Km(1, 2) = ann.K.cy;
    Km(2, 2) = 1.0;
    const std::string key = std::to_string(ann.image_id);
    cams[key] = {{"cam_K", rotation_to_json(Km)}, {"depth_scale", 1.0}, {"width", ann.K.width},
                 {"height", ann.K.height}};
    json list = json::array();
    for (const auto &g : ann.gt) {
      list.push_back({{"cam_R_m2c", rotation_to_json(g.pose.rotation)},
                      {"cam_t_m2c", vec3_to_json(g.pose.translation)},
                      {"obj_id", g.obj_id}});
    }
    gts[key] = std::move(list);
  }
  write_json_file(cams, dir / "scene_camera.json");
  write_json_file(gts, dir / "scene_gt.json");
}

std::vector<int> list_scenes(const fs::path &dataset_root) {
  if (!fs::is_directory(dataset_root)) {
    throw Error(ErrorCode::MissingFile, "dataset directory not found: " + dataset_root.string());
  }
  std::vector<int> ids;
  for (const auto &entry : fs::directory_iterator(dataset_root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    int v = 0;
    const auto [ptr, err] = std::from_chars(name.data(), name.data() + name.size(), v);
    if (err == std::errc{} && ptr == name.data() + name.size() && fs::exists(entry.path() / "scene_gt.json")) {
      ids.push_back(v);
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------

void SymmetrySet::add_discrete(const Pose &s) {
  if (!rotation_is_orthonormal(s.rotation, 1e-3) || s.rotation.determinant() <= 0.0) {
    throw Error(ErrorCode::SchemaError, "discrete symmetry rotation is not orthonormal");
  }
  const bool is_identity = (s.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9 &&
                           s.translation.cwiseAbs().maxCoeff() < 1e-9;
  if (!is_identity) discrete_.push_back(s);
}

void SymmetrySet::add_continuous(const ContinuousSymmetry &c) {
  if (c.axis.norm() <= 0.0 || c.steps < 1) {
    throw Error(ErrorCode::SchemaError, "continuous symmetry needs a non-zero axis and at least one step");
  }
  ContinuousSymmetry n = c;
  n.axis.normalize();
  continuous_.push_back(n);
}

std::vector<Pose> SymmetrySet::expand() const {
  if (continuous_.empty()) return discrete_;
  std::vector<Pose> out;
  for (const auto &c : continuous_) {
    for (int i = 0; i < c.steps; ++i) {
      Pose rc;
      rc.rotation = axis_angle(c.axis, 2.0 * std::numbers::pi * i / c.steps);
      rc.translation = c.offset - rc.rotation * c.offset;
      for (const auto &d : discrete_) out.push_back(rc.compose(d));
    }
  }
  return out;
}

std::map<int, ModelInfo> load_models_info(const fs::path &path) {
  const json doc = read_json_file(path);
  std::map<int, ModelInfo> out;
  try {
    for (const auto &[key, entry] : doc.items()) {
      const std::string where = "models_info.json[" + key + "]";
      ModelInfo info;
      info.obj_id = parse_int_key(key, where);
      info.diameter = require(entry, "diameter", where).get<double>();
      if (entry.contains("symmetries_discrete")) {
        for (const auto &m : entry.at("symmetries_discrete")) {
          if (!m.is_array() || m.size() != 16) {
            throw Error(ErrorCode::SchemaError, where + ": key 'symmetries_discrete' entries need 16 values");
          }
          Pose s;
          for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) s.rotation(r, c) = m[static_cast<std::size_t>(4 * r + c)].get<double>();
            s.translation(r) = m[static_cast<std::size_t>(4 * r + 3)].get<double>();
          }
          info.symmetries.add_discrete(s);
        }
      }
      if (entry.contains("symmetries_continuous")) {
        for (const auto &c : entry.at("symmetries_continuous")) {
          ContinuousSymmetry cs;
          cs.axis = vec3_from_json(require(c, "axis", where), "axis");
          if (c.contains("offset")) cs.offset = vec3_from_json(c.at("offset"), "offset");
          info.symmetries.add_continuous(cs);
        }
      }
      out.emplace(info.obj_id, std::move(info));
    }
  } catch (const json::exception &e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
  return out;
}

void write_models_info(const std::map<int, ModelInfo> &infos, const fs::path &path) {
  json doc = json::object();
  for (const auto &[id, info] : infos) {
    json entry = {{"diameter", info.diameter}};
    json disc = json::array();
    for (std::size_t k = 1; k < info.symmetries.discrete().size(); ++k) {
      const Pose &s = info.symmetries.discrete()[k];
      json m = json::array();
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m.push_back(s.rotation(r, c));
        m.push_back(s.translation(r));
      }
      for (double v : {0.0, 0.0, 0.0, 1.0}) m.push_back(v);
      disc.push_back(std::move(m));
    }
    if (!disc.empty()) entry["symmetries_discrete"] = std::move(disc);
    json cont = json::array();
    for (const auto &c : info.symmetries.continuous()) {
      cont.push_back({{"axis", vec3_to_json(c.axis)}, {"offset", vec3_to_json(c.offset)}});
    }
    if (!cont.empty()) entry["symmetries_continuous"] = std::move(cont);
    doc[std::to_string(id)] = std::move(entry);
  }
  write_json_file(doc, path);
}

// ---------------------------------------------------------------------------

std::array<double, kRecallThresholdCount> mssd_thresholds(double diameter) {
  std::array<double, kRecallThresholdCount> th{};
  for (int k = 0; k < kRecallThresholdCount; ++k) th[static_cast<std::size_t>(k)] = 0.05 * (k + 1) * diameter;
  return th;
}

std::array<double, kRecallThresholdCount> mspd_thresholds(int image_width) {
  const double r = image_width / 640.0;
  std::array<double, kRecallThresholdCount> th{};
  for (int k = 0; k < kRecallThresholdCount; ++k) th[static_cast<std::size_t>(k)] = 5.0 * (k + 1) * r;
  return th;
}

void ErrorReport::apply_thresholds() {
  const auto ts = mssd_thresholds(diameter);
  const auto tp = mspd_thresholds(image_width);
  for (std::size_t k = 0; k < kRecallThresholdCount; ++k) {
    mssd_pass[k] = has_estimate && mssd < ts[k];
    mspd_pass[k] = has_estimate && mspd < tp[k];
  }
}

ErrorReport ErrorReport::missing(double diameter, int image_width) {
  ErrorReport r;
  const double inf = std::numeric_limits<double>::infinity();
  r.has_estimate = false;
  r.mssd = r.mspd = r.add = r.adi = inf;
  r.diameter = diameter;
  r.image_width = image_width;
  r.apply_thresholds();
  return r;
}

std::vector<Vec3> metric_vertices(const TriMesh &mesh) {
  const std::size_t n = mesh.vertices.size();
  if (n <= kMetricVertexLimit) return mesh.vertices;
  const std::size_t stride = (n + kMetricVertexLimit - 1) / kMetricVertexLimit;
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; i += stride) out.push_back(mesh.vertices[i]);
  return out;
}

namespace {

double projected_distance(const Vec3 &a, const Vec3 &b, const CameraIntrinsics &K) {
  if (a.z() <= kMinDepthMm || b.z() <= kMinDepthMm) return std::numeric_limits<double>::infinity();
  return (K.project_camera_point(a) - K.project_camera_point(b)).norm();
}

/// Mean over `queries` of the distance to the nearest point of `targets`.
/// Sweeps outward from each query along targets sorted by x.
double mean_nearest_distance(const std::vector<Vec3> &queries, std::vector<Vec3> targets) {
  std::sort(targets.begin(), targets.end(), [](const Vec3 &a, const Vec3 &b) { return a.x() < b.x(); });
  double sum = 0.0;
  for (const auto &q : queries) {
    const auto mid = std::lower_bound(targets.begin(), targets.end(), q.x(),
                                      [](const Vec3 &p, double x) { return p.x() < x; });
    double best = std::numeric_limits<double>::infinity();
    for (auto it = mid; it != targets.end(); ++it) {
      const double dx = it->x() - q.x();
      if (dx * dx >= best) break;
      best = std::min(best, (*it - q).squaredNorm());
    }
    for (auto it = mid; it != targets.begin();) {
      --it;
      const double dx = q.x() - it->x();
      if (dx * dx >= best) break;
      best = std::min(best, (*it - q).squaredNorm());
    }
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(queries.size());
}

}  // namespace

ErrorReport pose_error_metrics(const Pose &est, const Pose &gt, std::span<const Vec3> vertices,
                               const SymmetrySet &sym, const CameraIntrinsics &K, double diameter) {
  if (vertices.empty()) throw Error(ErrorCode::InvalidMesh, "metrics need at least one vertex");
  ErrorReport rep;
  rep.has_estimate = true;
  rep.diameter = diameter;
  rep.image_width = K.width;

  std::vector<Vec3> gt_pts(vertices.size());
  std::vector<Vec3> est_pts(vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    gt_pts[i] = gt.apply(vertices[i]);
    est_pts[i] = est.apply(vertices[i]);
  }

  double mssd = std::numeric_limits<double>::infinity();
  double mspd = std::numeric_limits<double>::infinity();
  for (const auto &s : sym.expand()) {
    const Pose es = est.compose(s);
    double e3 = 0.0;
    double e2 = 0.0;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      const Vec3 p = es.apply(vertices[i]);
      e3 = std::max(e3, (p - gt_pts[i]).norm());
      e2 = std::max(e2, projected_distance(p, gt_pts[i], K));
    }
    mssd = std::min(mssd, e3);
    mspd = std::min(mspd, e2);
  }
  rep.mssd = mssd;
  rep.mspd = mspd;

  double add = 0.0;
  for (std::size_t i = 0; i < vertices.size(); ++i) add += (est_pts[i] - gt_pts[i]).norm();
  rep.add = add / static_cast<double>(vertices.size());
  rep.adi = mean_nearest_distance(gt_pts, est_pts);
  rep.apply_thresholds();
  return rep;
}

ErrorReport pose_error_metrics(const Pose &est, const Pose &gt, const TriMesh &mesh, const SymmetrySet &sym,
                               const CameraIntrinsics &K, double diameter) {
  const auto verts = metric_vertices(mesh);
  return pose_error_metrics(est, gt, verts, sym, K, diameter > 0.0 ? diameter : mesh.diameter);
}

RecallSummary average_recall(std::span<const ErrorReport> reports) {
  if (reports.empty()) throw Error(ErrorCode::EmptyReportSet, "no error reports to aggregate");
  RecallSummary s;
  s.instances = reports.size();
  std::size_t mssd_hits = 0, mspd_hits = 0, add_hits = 0, adi_hits = 0;
  for (const auto &r : reports) {
    if (!r.has_estimate) ++s.missing;
    for (std::size_t k = 0; k < kRecallThresholdCount; ++k) {
      mssd_hits += r.mssd_pass[k] ? 1 : 0;
      mspd_hits += r.mspd_pass[k] ? 1 : 0;
    }
    if (r.has_estimate && r.add < 0.1 * r.diameter) ++add_hits;
    if (r.has_estimate && r.adi < 0.1 * r.diameter) ++adi_hits;
  }
  const double n = static_cast<double>(reports.size());
  s.ar_mssd = static_cast<double>(mssd_hits) / (n * kRecallThresholdCount);
  s.ar_mspd = static_cast<double>(mspd_hits) / (n * kRecallThresholdCount);
  s.ar = 0.5 * (s.ar_mssd + s.ar_mspd);
  s.recall_add = static_cast<double>(add_hits) / n;
  s.recall_adi = static_cast<double>(adi_hits) / n;
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::string shortest(double v) {
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Shortest form that always reads as a float ("1.0", "0.2", "1e+30").
std::string float_literal(double v) {
  std::string s = shortest(v);
  if (s.find_first_of(".eni") == std::string::npos) s += ".0";
  return s;
}

double parse_double(std::string_view text, int line, const char *field) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::ParseError,
                "results line " + std::to_string(line) + ": bad " + field + " value '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

constexpr std::string_view kCsvHeader = "scene_id,im_id,obj_id,score,R,t,time";

}  // namespace

void write_results_csv(std::span<const PoseResult> estimates, const fs::path &path) {
  std::vector<const PoseResult *> rows;
  rows.reserve(estimates.size());
  for (const auto &e : estimates) {
    if (!e.pose.is_orthonormal(1e-6) || !e.pose.translation.allFinite()) {
      throw Error(ErrorCode::SchemaError, "estimate for scene " + std::to_string(e.scene_id) + " image " +
                                              std::to_string(e.im_id) + " has an invalid pose");
    }
    rows.push_back(&e);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const PoseResult *a, const PoseResult *b) {
    return std::tie(a->scene_id, a->im_id, a->obj_id) < std::tie(b->scene_id, b->im_id, b->obj_id);
  });

  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const PoseResult *e : rows) {
    os << e->scene_id << ',' << e->im_id << ',' << e->obj_id << ',' << float_literal(e->score) << ',';
    for (int k = 0; k < 9; ++k) os << (k ? " " : "") << shortest(e->pose.rotation(k / 3, k % 3));
    os << ',';
    for (int k = 0; k < 3; ++k) os << (k ? " " : "") << shortest(e->pose.translation(k));
    os << ',' << float_literal(e->time) << '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  const std::string text = os.str();
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<PoseResult> read_results_csv(const fs::path &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::MissingFile, "results file not found: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw Error(ErrorCode::ParseError, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw Error(ErrorCode::ParseError, path.string() + ": unexpected header '" + line + "'");

  std::vector<PoseResult> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 7) {
      throw Error(ErrorCode::ParseError, "results line " + std::to_string(lineno) + ": expected 7 fields");
    }
    PoseResult r;
    r.scene_id = static_cast<int>(parse_double(fields[0], lineno, "scene_id"));
    r.im_id = static_cast<int>(parse_double(fields[1], lineno, "im_id"));
    r.obj_id = static_cast<int>(parse_double(fields[2], lineno, "obj_id"));
    r.score = parse_double(fields[3], lineno, "score");
    const auto rv = split(fields[4], ' ');
    const auto tv = split(fields[5], ' ');
    if (rv.size() != 9 || tv.size() != 3) {
      throw Error(ErrorCode::ParseError, "results line " + std::to_string(lineno) + ": R needs 9 and t 3 values");
    }
    for (int k = 0; k < 9; ++k) r.pose.rotation(k / 3, k % 3) = parse_double(rv[static_cast<std::size_t>(k)], lineno, "R");
    for (int k = 0; k < 3; ++k) r.pose.translation(k) = parse_double(tv[static_cast<std::size_t>(k)], lineno, "t");
    r.time = parse_double(fields[6], lineno, "time");
    out.push_back(r);
  }
  return out;
}

}  // namespace zs6d
