#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zs6d/geometry.hpp"
#include "zs6d/matching.hpp"

namespace zs6d {

struct RansacParams {
  int max_iterations = 1000;
  double inlier_threshold_px = 3.0;
  double confidence = 0.99;
  static constexpr int kMinSample = 4;
  std::uint64_t seed = 0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

struct PoseEstimate {
  Pose pose;
  std::vector<int> inlier_indices;
  double mean_inlier_reproj_px = 0.0;
  int num_ransac_iters_run = 0;
};

/// Number of Gauss-Newton steps applied after the closed-form solution.
inline constexpr int kRefinementSteps = 10;

/// EPnP with four control points (three when the 3D points are planar),
/// followed by kRefinementSteps Gauss-Newton iterations on reprojection
/// error. Needs at least four non-collinear points.
/// Throws DegenerateConfiguration or NoValidSolution.
Pose solve_pnp(std::span<const Vec3> object_pts, std::span<const Vec2> image_pts, const CameraIntrinsics &K);

/// Gauss-Newton on the reprojection error starting from `initial`.
Pose refine_pose(std::span<const Vec3> object_pts, std::span<const Vec2> image_pts, const CameraIntrinsics &K,
                 const Pose &initial, int iterations = kRefinementSteps);

/// Per-point reprojection error in pixels; +inf for points behind the camera.
std::vector<double> reprojection_errors(std::span<const Vec3> object_pts, std::span<const Vec2> image_pts,
                                        const CameraIntrinsics &K, const Pose &pose);

/// Seeded hypothesize-and-verify over 4-point samples with adaptive
/// termination and a final refit on the consensus set. Sample k draws from
/// its own RNG stream derived from (seed, k).
/// Throws TooFewCorrespondences or NoConsensus.
PoseEstimate ransac_pnp(std::span<const Vec3> object_pts, std::span<const Vec2> image_pts,
                        const CameraIntrinsics &K, const RansacParams &params);

PoseEstimate ransac_pnp(const CorrespondenceSet &corr, const CameraIntrinsics &K, const RansacParams &params);

}  // namespace zs6d
