#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "zs6d/descriptors.hpp"
#include "zs6d/geometry.hpp"
#include "zs6d/mesh.hpp"
#include "zs6d/render_output.hpp"

namespace zs6d {

struct ViewSample {
  Pose pose;
  int icosa_level = 0;
  int index = 0;
};

/// Smallest icosphere subdivision level with at least n vertices.
int icosa_level_for(int n);

/// Farthest-point ordering of unit directions seeded at index 0; ties go to
/// the lowest index. Returns the first `n` selected indices, so every prefix
/// is itself a farthest-point subsample.
std::vector<int> farthest_point_order(const std::vector<Vec3> &directions, int n);

/// Exactly n cameras on a sphere of `radius` mm, all facing the origin.
/// Vertices come from the smallest subdivided icosahedron with >= n vertices,
/// reduced by farthest_point_order. Output is in selection order.
std::vector<ViewSample> sample_viewpoints(int n, double radius);

/// Z-buffered rasterization of the mesh's normalized object coordinates.
/// Pixel centers sit on integer coordinates; no back-face culling;
/// triangles are clipped at the near plane. Depth is camera z in mm.
RenderOutput rasterize_coordinate_map(const TriMesh &mesh, const Pose &pose, const CameraIntrinsics &K);

/// Same, with an explicit NOCS box (used when the box is not the mesh's own).
RenderOutput rasterize_coordinate_map(const TriMesh &mesh, const Pose &pose, const CameraIntrinsics &K,
                                      const Vec3 &bbox_min, const Vec3 &bbox_max);

// ---------------------------------------------------------------------------
// Templates

struct TemplateRenderSettings {
  double crop_pad = 1.2;
  int out_size = 224;
};

/// One rendered template view. The coordinate map, depth and mask are in
/// crop space (out_size × out_size); `crop` maps them back to the template
/// camera `K` used for `pose`.
struct TemplateRecord {
  int index = 0;
  Pose pose;
  int icosa_level = 0;
  CropTransform crop;
  RenderOutput render;
  bool empty_render = false;
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();

  // Filled by the descriptor backend, not persisted by the store writer.
  std::optional<DescriptorGrid> local;
  std::optional<GlobalDescriptor> global;
};

struct TemplateStore {
  int obj_id = 0;
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();
  double diameter = 0.0;
  CameraIntrinsics K;
  TemplateRenderSettings settings;
  std::vector<TemplateRecord> templates;
  /// FNV-1a over every artifact the store writes, in write order.
  std::string digest;
  std::filesystem::path directory;
};

/// Default template camera: 640×480, fx = fy = 572.4, principal point at the
/// image center.
CameraIntrinsics default_template_intrinsics();

/// Renders one view directly into its object-centered square crop. The crop
/// box is the bounding box of the projected vertices clamped to the K image.
/// Views where the object misses the image or sits behind the camera are
/// flagged empty.
TemplateRecord render_template(const TriMesh &mesh, const ViewSample &view, const CameraIntrinsics &K,
                               const TemplateRenderSettings &settings = {});

/// In-memory template set; build_template_store additionally writes it.
TemplateStore build_templates(const TriMesh &mesh, const std::vector<ViewSample> &views,
                              const CameraIntrinsics &K, const TemplateRenderSettings &settings = {},
                              int obj_id = 0);

/// Writes obj_<id>/manifest.json plus per-view coord/depth/mask/meta files
/// under `out_dir`. Throws InvalidMesh for meshes without triangles and
/// IoError on write failures.
TemplateStore build_template_store(const TriMesh &mesh, const std::vector<ViewSample> &views,
                                   const CameraIntrinsics &K, const std::filesystem::path &out_dir,
                                   int obj_id, const TemplateRenderSettings &settings = {});

std::filesystem::path store_object_dir(const std::filesystem::path &store_root, int obj_id);

/// Loads manifest and per-view files written by build_template_store.
TemplateStore load_template_store(const std::filesystem::path &object_dir);

/// Keeps `n` templates chosen by farthest-point selection over the view
/// directions (seeded at the first template).
TemplateStore subsample_store(const TemplateStore &store, int n);

/// Smallest angle (radians) between the viewing directions of any two
/// non-empty templates.
double min_angular_spacing(const TemplateStore &store);

}  // namespace zs6d
