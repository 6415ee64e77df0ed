#include "zs6d/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "zs6d/error.hpp"
#include "zs6d/json_io.hpp"
#include "zs6d/png_io.hpp"

namespace zs6d {

// ---------------------------------------------------------------------------
// Viewpoints

int icosa_level_for(int n) {
  int level = 0;
  // Vertex count of level L is 10·4^L + 2.
  while (10 * (1 << (2 * level)) + 2 < n) ++level;
  return level;
}

std::vector<int> farthest_point_order(const std::vector<Vec3> &directions, int n) {
  const int count = static_cast<int>(directions.size());
  n = std::min(n, count);
  std::vector<int> order;
  if (n <= 0) return order;
  order.reserve(static_cast<std::size_t>(n));
  std::vector<double> nearest(static_cast<std::size_t>(count), std::numeric_limits<double>::infinity());
  std::vector<bool> taken(static_cast<std::size_t>(count), false);
  int current = 0;
  for (int k = 0; k < n; ++k) {
    order.push_back(current);
    taken[static_cast<std::size_t>(current)] = true;
    int next = -1;
    double best = -1.0;
    for (int i = 0; i < count; ++i) {
      auto &d = nearest[static_cast<std::size_t>(i)];
      d = std::min(d, (directions[static_cast<std::size_t>(i)] - directions[static_cast<std::size_t>(current)]).squaredNorm());
      if (!taken[static_cast<std::size_t>(i)] && d > best) {
        best = d;
        next = i;
      }
    }
    if (next < 0) break;
    current = next;
  }
  return order;
}

std::vector<ViewSample> sample_viewpoints(int n, double radius) {
  if (n < 1) throw Error(ErrorCode::ConfigError, "need at least one viewpoint");
  if (!(radius > 0.0)) throw Error(ErrorCode::ConfigError, "sampling radius must be positive");
  const int level = icosa_level_for(n);
  const IcoSphere sphere = icosphere(level);
  const auto order = farthest_point_order(sphere.vertices, n);
  std::vector<ViewSample> views;
  views.reserve(order.size());
  for (int idx : order) {
    ViewSample v;
    v.pose = look_at_pose(radius * sphere.vertices[static_cast<std::size_t>(idx)], Vec3::Zero());
    v.icosa_level = level;
    v.index = static_cast<int>(views.size());
    views.push_back(v);
  }
  return views;
}

// ---------------------------------------------------------------------------
// Rasterizer

namespace {

constexpr double kNearPlaneMm = 1.0;

struct ClipVertex {
  Vec3 cam;
  Vec3 obj;
};

/// Sutherland–Hodgman against z >= near.
std::vector<ClipVertex> clip_near(const std::array<ClipVertex, 3> &tri) {
  std::vector<ClipVertex> out;
  for (int i = 0; i < 3; ++i) {
    const auto &a = tri[static_cast<std::size_t>(i)];
    const auto &b = tri[static_cast<std::size_t>((i + 1) % 3)];
    const bool a_in = a.cam.z() >= kNearPlaneMm;
    const bool b_in = b.cam.z() >= kNearPlaneMm;
    if (a_in) out.push_back(a);
    if (a_in != b_in) {
      const double s = (kNearPlaneMm - a.cam.z()) / (b.cam.z() - a.cam.z());
      out.push_back({a.cam + s * (b.cam - a.cam), a.obj + s * (b.obj - a.obj)});
    }
  }
  return out;
}

inline double edge(const Vec2 &a, const Vec2 &b, const Vec2 &p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

NocsValue encode_clamped(const Vec3 &p, const Vec3 &lo, const Vec3 &extent) {
  double c[3];
  for (int a = 0; a < 3; ++a) {
    c[a] = extent[a] > 0.0 ? std::clamp((p[a] - lo[a]) / extent[a], 0.0, 1.0) : 0.5;
  }
  return {c[0], c[1], c[2]};
}

void raster_triangle(const ClipVertex &v0, const ClipVertex &v1, const ClipVertex &v2,
                     const CameraIntrinsics &K, const Vec3 &lo, const Vec3 &extent,
                     RenderOutput &out) {
  const Vec2 s0 = K.project_camera_point(v0.cam);
  const Vec2 s1 = K.project_camera_point(v1.cam);
  const Vec2 s2 = K.project_camera_point(v2.cam);
  const double area = edge(s0, s1, s2);
  if (std::abs(area) < 1e-12) return;
  const double sign = area > 0.0 ? 1.0 : -1.0;
  const double inv_area = 1.0 / std::abs(area);

  const double min_x = std::min({s0.x(), s1.x(), s2.x()});
  const double max_x = std::max({s0.x(), s1.x(), s2.x()});
  const double min_y = std::min({s0.y(), s1.y(), s2.y()});
  const double max_y = std::max({s0.y(), s1.y(), s2.y()});
  const int x0 = static_cast<int>(std::max(0.0, std::ceil(min_x)));
  const int x1 = static_cast<int>(std::min<double>(K.width - 1, std::floor(max_x)));
  const int y0 = static_cast<int>(std::max(0.0, std::ceil(min_y)));
  const int y1 = static_cast<int>(std::min<double>(K.height - 1, std::floor(max_y)));

  const double iz0 = 1.0 / v0.cam.z();
  const double iz1 = 1.0 / v1.cam.z();
  const double iz2 = 1.0 / v2.cam.z();
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Vec2 p(x, y);
      const double l0 = sign * edge(s1, s2, p) * inv_area;
      const double l1 = sign * edge(s2, s0, p) * inv_area;
      const double l2 = sign * edge(s0, s1, p) * inv_area;
      if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
      const double inv_z = l0 * iz0 + l1 * iz1 + l2 * iz2;
      const double z = 1.0 / inv_z;
      float &depth = out.depth(x, y);
      if (depth > 0.0f && z >= depth) continue;
      const Vec3 obj = z * (l0 * iz0 * v0.obj + l1 * iz1 * v1.obj + l2 * iz2 * v2.obj);
      depth = static_cast<float>(z);
      out.coord_map(x, y) = encode_clamped(obj, lo, extent);
      out.mask(x, y) = 255;
    }
  }
}

}  // namespace

RenderOutput rasterize_coordinate_map(const TriMesh &mesh, const Pose &pose, const CameraIntrinsics &K,
                                      const Vec3 &bbox_min, const Vec3 &bbox_max) {
  if (K.width < 16 || K.height < 16) throw Error(ErrorCode::ConfigError, "render target must be at least 16×16");
  RenderOutput out;
  out.coord_map = Image<NocsValue>(K.width, K.height, kBackgroundNocs);
  out.depth = Image<float>(K.width, K.height, 0.0f);
  out.mask = Mask(K.width, K.height, 0);

  std::vector<Vec3> cam(mesh.vertices.size());
  for (std::size_t i = 0; i < cam.size(); ++i) cam[i] = pose.apply(mesh.vertices[i]);
  const Vec3 extent = bbox_max - bbox_min;

  for (const auto &t : mesh.triangles) {
    const std::array<ClipVertex, 3> tri = {ClipVertex{cam[t[0]], mesh.vertices[t[0]]},
                                           ClipVertex{cam[t[1]], mesh.vertices[t[1]]},
                                           ClipVertex{cam[t[2]], mesh.vertices[t[2]]}};
    if (tri[0].cam.z() >= kNearPlaneMm && tri[1].cam.z() >= kNearPlaneMm && tri[2].cam.z() >= kNearPlaneMm) {
      raster_triangle(tri[0], tri[1], tri[2], K, bbox_min, extent, out);
      continue;
    }
    const auto poly = clip_near(tri);
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
      raster_triangle(poly[0], poly[k], poly[k + 1], K, bbox_min, extent, out);
    }
  }
  return out;
}

RenderOutput rasterize_coordinate_map(const TriMesh &mesh, const Pose &pose, const CameraIntrinsics &K) {
  return rasterize_coordinate_map(mesh, pose, K, mesh.bbox_min, mesh.bbox_max);
}

// ---------------------------------------------------------------------------
// Templates

CameraIntrinsics default_template_intrinsics() { return {572.4, 572.4, 320.0, 240.0, 640, 480}; }

TemplateRecord render_template(const TriMesh &mesh, const ViewSample &view, const CameraIntrinsics &K,
                               const TemplateRenderSettings &settings) {
  TemplateRecord rec;
  rec.index = view.index;
  rec.pose = view.pose;
  rec.icosa_level = view.icosa_level;
  rec.bbox_min = mesh.bbox_min;
  rec.bbox_max = mesh.bbox_max;

  auto mark_empty = [&] {
    rec.empty_render = true;
    rec.crop = {};
    rec.render.coord_map = Image<NocsValue>(settings.out_size, settings.out_size, kBackgroundNocs);
    rec.render.depth = Image<float>(settings.out_size, settings.out_size, 0.0f);
    rec.render.mask = Mask(settings.out_size, settings.out_size, 0);
    return rec;
  };

  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  for (const auto &v : mesh.vertices) {
    const Vec3 pc = view.pose.apply(v);
    if (pc.z() < kNearPlaneMm) return mark_empty();
    const Vec2 px = K.project_camera_point(pc);
    x0 = std::min(x0, px.x());
    x1 = std::max(x1, px.x());
    y0 = std::min(y0, px.y());
    y1 = std::max(y1, px.y());
  }
  x0 = std::max(x0, 0.0);
  y0 = std::max(y0, 0.0);
  x1 = std::min(x1, static_cast<double>(K.width));
  y1 = std::min(y1, static_cast<double>(K.height));
  if (x1 <= x0 || y1 <= y0) return mark_empty();

  rec.crop = compute_crop({x0, y0, x1 - x0, y1 - y0}, settings.crop_pad, settings.out_size);
  rec.render = rasterize_coordinate_map(mesh, view.pose, rec.crop.apply_to(K, settings.out_size));

  // Crop pixels whose source pixel lies outside the template image stay empty.
  for (int v = 0; v < settings.out_size; ++v) {
    for (int u = 0; u < settings.out_size; ++u) {
      const Vec2 p = rec.crop.to_original({static_cast<double>(u), static_cast<double>(v)});
      const long px = std::lround(p.x());
      const long py = std::lround(p.y());
      if (px >= 0 && py >= 0 && px < K.width && py < K.height) continue;
      rec.render.mask(u, v) = 0;
      rec.render.depth(u, v) = 0.0f;
      rec.render.coord_map(u, v) = kBackgroundNocs;
    }
  }
  if (rec.render.empty()) rec.empty_render = true;
  return rec;
}

TemplateStore build_templates(const TriMesh &mesh, const std::vector<ViewSample> &views,
                              const CameraIntrinsics &K, const TemplateRenderSettings &settings,
                              int obj_id) {
  if (mesh.triangles.empty()) throw Error(ErrorCode::InvalidMesh, "mesh has no triangles");
  TemplateStore store;
  store.obj_id = obj_id;
  store.bbox_min = mesh.bbox_min;
  store.bbox_max = mesh.bbox_max;
  store.diameter = mesh.diameter;
  store.K = K;
  store.settings = settings;
  store.templates.reserve(views.size());
  for (const auto &view : views) store.templates.push_back(render_template(mesh, view, K, settings));
  return store;
}

std::filesystem::path store_object_dir(const std::filesystem::path &store_root, int obj_id) {
  return store_root / ("obj_" + std::to_string(obj_id));
}

namespace {

std::string view_prefix(int index) { return "view_" + std::to_string(index); }

TensorFile coord_tensor(const RenderOutput &r) {
  TensorFile t;
  t.dtype = TensorDType::UInt16;
  t.rows = static_cast<std::uint32_t>(r.height());
  t.cols = static_cast<std::uint32_t>(r.width());
  t.dim = 3;
  t.u16.reserve(t.element_count());
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < r.width(); ++x) {
      const auto q = r.mask(x, y) ? quantize16(r.coord_map(x, y)) : std::array<std::uint16_t, 3>{0, 0, 0};
      t.u16.insert(t.u16.end(), q.begin(), q.end());
    }
  }
  return t;
}

TensorFile depth_tensor(const RenderOutput &r) {
  TensorFile t;
  t.dtype = TensorDType::Float32;
  t.rows = static_cast<std::uint32_t>(r.height());
  t.cols = static_cast<std::uint32_t>(r.width());
  t.dim = 1;
  t.f32 = r.depth.data();
  return t;
}

json crop_to_json(const CropTransform &c) {
  return {{"scale", c.scale}, {"offset_x", c.offset_x}, {"offset_y", c.offset_y}};
}

CropTransform crop_from_json(const json &j) {
  try {
    return {j.at("scale").get<double>(), j.at("offset_x").get<double>(), j.at("offset_y").get<double>()};
  } catch (const json::exception &e) {
    throw Error(ErrorCode::SchemaError, std::string("crop transform: ") + e.what());
  }
}

void write_bytes(const std::vector<std::uint8_t> &bytes, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

json flags_for(const TemplateRecord &rec) {
  json flags = json::array();
  if (rec.empty_render) flags.push_back("EmptyRender");
  return flags;
}

}  // namespace

TemplateStore build_template_store(const TriMesh &mesh, const std::vector<ViewSample> &views,
                                   const CameraIntrinsics &K, const std::filesystem::path &out_dir,
                                   int obj_id, const TemplateRenderSettings &settings) {
  TemplateStore store = build_templates(mesh, views, K, settings, obj_id);
  const auto dir = store_object_dir(out_dir, obj_id);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  store.directory = dir;

  Fnv1a digest;
  json entries = json::array();
  for (const auto &rec : store.templates) {
    const std::string prefix = view_prefix(rec.index);
    const auto coord_bytes = encode_tensor(coord_tensor(rec.render));
    const auto depth_bytes = encode_tensor(depth_tensor(rec.render));
    write_bytes(coord_bytes, dir / (prefix + ".coord.zst6"));
    write_bytes(depth_bytes, dir / (prefix + ".depth.zst6"));
    write_mask_png(rec.render.mask, dir / (prefix + ".mask.png"));

    json meta = {{"index", rec.index},
                 {"R", rotation_to_json(rec.pose.rotation)},
                 {"t", vec3_to_json(rec.pose.translation)},
                 {"K", intrinsics_to_json(K)},
                 {"crop", crop_to_json(rec.crop)},
                 {"icosa_level", rec.icosa_level},
                 {"flags", flags_for(rec)}};
    write_json_file(meta, dir / (prefix + ".meta.json"));

    digest.update(coord_bytes);
    digest.update(depth_bytes);
    digest.update(file_digest(dir / (prefix + ".mask.png")));
    digest.update(meta.dump());

    entries.push_back({{"index", rec.index},
                       {"prefix", prefix},
                       {"R", rotation_to_json(rec.pose.rotation)},
                       {"t", vec3_to_json(rec.pose.translation)},
                       {"icosa_level", rec.icosa_level},
                       {"flags", flags_for(rec)}});
  }
  store.digest = digest.hex();

  json manifest = {{"format", "zs6d-template-store"},
                   {"version", 1},
                   {"obj_id", obj_id},
                   {"bbox_min", vec3_to_json(store.bbox_min)},
                   {"bbox_max", vec3_to_json(store.bbox_max)},
                   {"diameter", store.diameter},
                   {"K", intrinsics_to_json(K)},
                   {"crop_pad", settings.crop_pad},
                   {"out_size", settings.out_size},
                   {"templates", entries},
                   {"digest", store.digest}};
  write_json_file(manifest, dir / "manifest.json");

  // Quantize exactly as a reader would see the store.
  for (auto &rec : store.templates) {
    for (int y = 0; y < rec.render.height(); ++y)
      for (int x = 0; x < rec.render.width(); ++x)
        if (rec.render.mask(x, y)) rec.render.coord_map(x, y) = dequantize16(quantize16(rec.render.coord_map(x, y)));
  }
  return store;
}

TemplateStore load_template_store(const std::filesystem::path &object_dir) {
  const json manifest = read_json_file(object_dir / "manifest.json");
  TemplateStore store;
  store.directory = object_dir;
  try {
    store.obj_id = manifest.at("obj_id").get<int>();
    store.bbox_min = vec3_from_json(manifest.at("bbox_min"), "bbox_min");
    store.bbox_max = vec3_from_json(manifest.at("bbox_max"), "bbox_max");
    store.diameter = manifest.at("diameter").get<double>();
    store.K = intrinsics_from_json(manifest.at("K"));
    store.settings.crop_pad = manifest.at("crop_pad").get<double>();
    store.settings.out_size = manifest.at("out_size").get<int>();
    store.digest = manifest.value("digest", std::string{});

    for (const auto &entry : manifest.at("templates")) {
      TemplateRecord rec;
      rec.index = entry.at("index").get<int>();
      rec.pose.rotation = rotation_from_json(entry.at("R"), "R");
      rec.pose.translation = vec3_from_json(entry.at("t"), "t");
      rec.icosa_level = entry.at("icosa_level").get<int>();
      rec.bbox_min = store.bbox_min;
      rec.bbox_max = store.bbox_max;
      for (const auto &f : entry.at("flags")) rec.empty_render |= f.get<std::string>() == "EmptyRender";

      const std::string prefix = entry.at("prefix").get<std::string>();
      const json meta = read_json_file(object_dir / (prefix + ".meta.json"));
      rec.crop = crop_from_json(meta.at("crop"));

      const TensorFile coord = read_tensor_file(object_dir / (prefix + ".coord.zst6"));
      const TensorFile depth = read_tensor_file(object_dir / (prefix + ".depth.zst6"));
      rec.render.mask = read_mask_png(object_dir / (prefix + ".mask.png"));
      const int w = rec.render.mask.width();
      const int h = rec.render.mask.height();
      if (coord.dtype != TensorDType::UInt16 || coord.dim != 3 || coord.cols != static_cast<std::uint32_t>(w) ||
          coord.rows != static_cast<std::uint32_t>(h) || depth.dtype != TensorDType::Float32 ||
          depth.dim != 1 || depth.cols != coord.cols || depth.rows != coord.rows) {
        throw Error(ErrorCode::SchemaError, "template files for " + prefix + " disagree in shape");
      }
      rec.render.coord_map = Image<NocsValue>(w, h, kBackgroundNocs);
      rec.render.depth = Image<float>(w, h, 0.0f);
      rec.render.depth.data() = depth.f32;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!rec.render.mask(x, y)) continue;
          const std::size_t k = 3 * (static_cast<std::size_t>(y) * w + x);
          rec.render.coord_map(x, y) = dequantize16({coord.u16[k], coord.u16[k + 1], coord.u16[k + 2]});
        }
      }
      store.templates.push_back(std::move(rec));
    }
  } catch (const json::exception &e) {
    throw Error(ErrorCode::SchemaError, (object_dir / "manifest.json").string() + ": " + e.what());
  }
  return store;
}

TemplateStore subsample_store(const TemplateStore &store, int n) {
  std::vector<Vec3> dirs;
  dirs.reserve(store.templates.size());
  for (const auto &t : store.templates) dirs.push_back(t.pose.camera_center().normalized());
  TemplateStore out = store;
  out.templates.clear();
  for (int idx : farthest_point_order(dirs, n)) out.templates.push_back(store.templates[static_cast<std::size_t>(idx)]);
  return out;
}

double min_angular_spacing(const TemplateStore &store) {
  std::vector<Vec3> dirs;
  for (const auto &t : store.templates) {
    if (!t.empty_render) dirs.push_back(t.pose.camera_center().normalized());
  }
  double best = std::numbers::pi;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    for (std::size_t j = i + 1; j < dirs.size(); ++j) {
      best = std::min(best, std::acos(std::clamp(dirs[i].dot(dirs[j]), -1.0, 1.0)));
    }
  }
  return best;
}

}  // namespace zs6d
