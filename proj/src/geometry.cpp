#include "zs6d/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "zs6d/error.hpp"

namespace zs6d {

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::compose(const Pose &other) const {
  Pose out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

bool Pose::is_orthonormal(double tol) const {
  const Mat3 residual = rotation.transpose() * rotation - Mat3::Identity();
  return residual.cwiseAbs().maxCoeff() < tol && rotation.determinant() > 0.0;
}

std::vector<Vec2> transform_and_project(std::span<const Vec3> points, const Pose &pose,
                                        const CameraIntrinsics &K) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 pc = pose.apply(points[i]);
    if (pc.z() <= kMinDepthMm) {
      std::ostringstream msg;
      msg << "point " << i << " has camera depth " << pc.z() << " mm";
      throw Error(ErrorCode::NonPositiveDepth, msg.str());
    }
    out.push_back(K.project_camera_point(pc));
  }
  return out;
}

Pose look_at_pose(const Vec3 &eye, const Vec3 &target, const Vec3 &up_hint) {
  const Vec3 view = target - eye;
  if (view.norm() <= 1e-6) {
    throw Error(ErrorCode::DegenerateView, "eye and target coincide");
  }
  const Vec3 z = view.normalized();
  Vec3 up = up_hint.norm() > 0.0 ? up_hint.normalized() : Vec3::UnitZ();
  if (std::abs(z.dot(up)) > 0.999) up = Vec3::UnitX();

  // y_cam ≈ −up, x_cam = y_cam × z_cam = z × up.
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);

  Pose pose;
  pose.rotation.row(0) = x.transpose();
  pose.rotation.row(1) = y.transpose();
  pose.rotation.row(2) = z.transpose();
  pose.translation = -(pose.rotation * eye);
  return pose;
}

double rotation_angle_between(const Pose &a, const Pose &b) {
  const double trace = (a.rotation.transpose() * b.rotation).trace();
  const double c = std::clamp((trace - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Mat3 axis_angle(const Vec3 &axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Mat3 nearest_rotation(const Mat3 &m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace zs6d
