#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "zs6d/geometry.hpp"

namespace zs6d {

using Triangle = std::array<std::uint32_t, 3>;

/// Meshes with more vertices than this get an approximate diameter computed
/// over a stride subsample of this many vertices.
inline constexpr std::size_t kExactDiameterVertexLimit = 20000;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();
  double diameter = 0.0;
  bool diameter_is_exact = true;

  /// Builds a mesh and derives bbox and diameter. Throws InvalidMesh on
  /// out-of-range triangle indices or an empty vertex list.
  static TriMesh from(std::vector<Vec3> vertices, std::vector<Triangle> triangles);

  Vec3 bbox_extent() const { return bbox_max - bbox_min; }
  Vec3 bbox_center() const { return 0.5 * (bbox_min + bbox_max); }

  friend bool operator==(const TriMesh &a, const TriMesh &b) {
    return a.vertices == b.vertices && a.triangles == b.triangles && a.bbox_min == b.bbox_min &&
           a.bbox_max == b.bbox_max && a.diameter == b.diameter &&
           a.diameter_is_exact == b.diameter_is_exact;
  }
};

/// Maximum pairwise distance; see kExactDiameterVertexLimit.
double point_set_diameter(const std::vector<Vec3> &points, bool *is_exact = nullptr);

enum class PlyEncoding { Ascii, BinaryLittleEndian };

/// Reads an ASCII or binary little-endian PLY (vertex x/y/z + faces).
/// Polygons are fan-triangulated; other elements and properties are skipped.
TriMesh load_mesh(const std::filesystem::path &path);
void save_mesh(const TriMesh &mesh, const std::filesystem::path &path,
               PlyEncoding encoding = PlyEncoding::BinaryLittleEndian);

/// Normalized object coordinate: position inside the mesh bounding box,
/// each channel in [0,1].
struct NocsValue {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  friend bool operator==(const NocsValue &, const NocsValue &) = default;
};

/// Throws OutOfBounds if `point` lies outside the bbox expanded by 1e-6 mm.
NocsValue nocs_encode(const Vec3 &point, const TriMesh &mesh);
Vec3 nocs_decode(const NocsValue &c, const TriMesh &mesh);

/// Same as above but against an explicit box (template stores carry only the box).
NocsValue nocs_encode(const Vec3 &point, const Vec3 &bbox_min, const Vec3 &bbox_max);
Vec3 nocs_decode(const NocsValue &c, const Vec3 &bbox_min, const Vec3 &bbox_max);

std::array<std::uint16_t, 3> quantize16(const NocsValue &c);
NocsValue dequantize16(const std::array<std::uint16_t, 3> &q);

/// Unit sphere from a subdivided icosahedron. Level-k vertices are a prefix of
/// the level-(k+1) vertex list (12, 42, 162, 642, ... vertices).
struct IcoSphere {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
};
IcoSphere icosphere(int level);

// Procedural meshes for synthetic data and tests.
TriMesh make_box(const Vec3 &extent);
/// Ellipsoid with smooth radial bumps; asymmetric for non-zero `bumpiness`.
TriMesh make_bumpy_ellipsoid(const Vec3 &radii, int subdivisions, double bumpiness);
/// L-shaped block built from two boxes sharing a face.
TriMesh make_l_block(double size);

}  // namespace zs6d
