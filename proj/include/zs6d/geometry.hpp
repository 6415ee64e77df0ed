#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <span>
#include <vector>

namespace zs6d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid transform mapping object/world coordinates into the camera frame
/// (BOP/OpenCV convention: +z forward, x right, y down). Translation in mm.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3 &p) const { return rotation * p + translation; }
  Pose inverse() const;
  /// (*this ∘ other)(x) = this(other(x))
  Pose compose(const Pose &other) const;
  /// Camera center in world coordinates, -Rᵀt.
  Vec3 camera_center() const { return -rotation.transpose() * translation; }

  /// ‖RᵀR − I‖∞ below tol and det(R) > 0.
  bool is_orthonormal(double tol = 1e-9) const;

  friend bool operator==(const Pose &a, const Pose &b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// fx, fy > 0 and principal point inside the image.
  bool is_valid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width && cy >= 0.0 && cy < height;
  }

  Vec2 project_camera_point(const Vec3 &p) const {
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
  }

  friend bool operator==(const CameraIntrinsics &, const CameraIntrinsics &) = default;
};

/// Minimum camera-frame depth accepted by projection, in mm.
inline constexpr double kMinDepthMm = 1e-6;

/// Applies `pose` to every point and projects through `K`.
/// Throws NonPositiveDepth if any transformed point has z <= 1e-6 mm.
std::vector<Vec2> transform_and_project(std::span<const Vec3> points, const Pose &pose,
                                        const CameraIntrinsics &K);

/// World→camera pose for a camera at `eye` looking at `target`. The camera
/// y axis is aligned with −up_hint; when |view·up| > 0.999 the world x axis
/// replaces the hint. Throws DegenerateView if eye == target.
Pose look_at_pose(const Vec3 &eye, const Vec3 &target, const Vec3 &up_hint = Vec3::UnitZ());

/// Geodesic angle between the two rotations, in [0, π].
double rotation_angle_between(const Pose &a, const Pose &b);

/// Rotation by `angle` radians about the unit `axis`.
Mat3 axis_angle(const Vec3 &axis, double angle);

/// Projects an arbitrary 3×3 matrix onto SO(3) via SVD.
Mat3 nearest_rotation(const Mat3 &m);

}  // namespace zs6d
