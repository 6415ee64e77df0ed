#include "zs6d/pose_solver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "zs6d/error.hpp"

namespace zs6d {

void RansacParams::validate() const {
  if (max_iterations < 1) throw Error(ErrorCode::ConfigError, "ransac max_iterations must be >= 1");
  if (!(inlier_threshold_px > 0.0)) throw Error(ErrorCode::ConfigError, "ransac threshold must be > 0");
  if (!(confidence > 0.0 && confidence < 1.0)) throw Error(ErrorCode::ConfigError, "ransac confidence must be in (0,1)");
}

std::vector<double> reprojection_errors(std::span<const Vec3> object_pts, std::span<const Vec2> image_pts,
                                        const CameraIntrinsics &K, const Pose &pose) {
  std::vector<double> err(object_pts.size());
  for (std::size_t i = 0; i < object_pts.size(); ++i) {
    const Vec3 pc = pose.apply(object_pts[i]);
    err[i] = pc.z() > kMinDepthMm ? (K.project_camera_point(pc) - image_pts[i]).norm()
                                  : std::numeric_limits<double>::infinity();
  }
  return err;
}

namespace {

double mean_sq_error(std::span<const Vec3> X, std::span<const Vec2> u, const CameraIntrinsics &K,
                     const Pose &pose) {
  double acc = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const Vec3 pc = pose.apply(X[i]);
    if (pc.z() <= kMinDepthMm) return std::numeric_limits<double>::infinity();
    acc += (K.project_camera_point(pc) - u[i]).squaredNorm();
  }
  return acc / static_cast<double>(X.size());
}

bool all_in_front(std::span<const Vec3> X, const Pose &pose) {
  return std::all_of(X.begin(), X.end(), [&](const Vec3 &p) { return pose.apply(p).z() > kMinDepthMm; });
}

Mat3 skew(const Vec3 &v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Rigid alignment p_cam ≈ R·X + t (no scale).
Pose align_rigid(std::span<const Vec3> X, const std::vector<Vec3> &P) {
  Vec3 mx = Vec3::Zero(), mp = Vec3::Zero();
  for (std::size_t i = 0; i < X.size(); ++i) {
    mx += X[i];
    mp += P[i];
  }
  mx /= static_cast<double>(X.size());
  mp /= static_cast<double>(X.size());
  Mat3 H = Mat3::Zero();
  for (std::size_t i = 0; i < X.size(); ++i) H += (X[i] - mx) * (P[i] - mp).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Pose pose;
  pose.rotation = svd.matrixV() * D * svd.matrixU().transpose();
  pose.translation = mp - pose.rotation * mx;
  return pose;
}

struct ControlFrame {
  int count = 4;                    // 4 general, 3 planar
  std::vector<Vec3> points;         // world control points
  std::vector<Eigen::VectorXd> alphas;  // per input point, size count
};

ControlFrame choose_control_points(std::span<const Vec3> X) {
  const auto n = static_cast<double>(X.size());
  Vec3 c0 = Vec3::Zero();
  for (const auto &p : X) c0 += p;
  c0 /= n;
  Mat3 cov = Mat3::Zero();
  for (const auto &p : X) cov += (p - c0) * (p - c0).transpose();
  cov /= n;
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  // Eigenvalues ascending; singular values of the centered cloud are their roots.
  const Vec3 sv = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const double largest = sv(2);
  if (largest <= 1e-12 || sv(1) < 1e-6 * largest) {
    throw Error(ErrorCode::DegenerateConfiguration, "object points are duplicate or collinear");
  }
  ControlFrame f;
  f.count = sv(0) < 1e-6 * largest ? 3 : 4;
  f.points.push_back(c0);
  std::vector<Vec3> axes;
  std::vector<double> scales;
  for (int k = 2; k >= 4 - f.count + 0 && static_cast<int>(axes.size()) < f.count - 1; --k) {
    axes.push_back(eig.eigenvectors().col(k));
    scales.push_back(sv(k));
    f.points.push_back(c0 + sv(k) * eig.eigenvectors().col(k));
  }
  for (const auto &p : X) {
    Eigen::VectorXd a(f.count);
    double sum = 0.0;
    for (std::size_t j = 0; j < axes.size(); ++j) {
      a(static_cast<Eigen::Index>(j + 1)) = axes[j].dot(p - c0) / scales[j];
      sum += a(static_cast<Eigen::Index>(j + 1));
    }
    a(0) = 1.0 - sum;
    f.alphas.push_back(a);
  }
  return f;
}

/// Control-point pairs and the differences of kernel vector blocks.
struct BetaProblem {
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> dist_sq;
  // diff[k][p] = v_k block a − v_k block b for pair p.
  std::vector<std::vector<Vec3>> diff;
};

BetaProblem make_beta_problem(const ControlFrame &f, const std::vector<Eigen::VectorXd> &kernel) {
  BetaProblem bp;
  for (int a = 0; a < f.count; ++a)
    for (int b = a + 1; b < f.count; ++b) {
      bp.pairs.emplace_back(a, b);
      bp.dist_sq.push_back((f.points[static_cast<std::size_t>(a)] - f.points[static_cast<std::size_t>(b)]).squaredNorm());
    }
  for (const auto &v : kernel) {
    std::vector<Vec3> d;
    for (auto [a, b] : bp.pairs) d.push_back(v.segment<3>(3 * a) - v.segment<3>(3 * b));
    bp.diff.push_back(std::move(d));
  }
  return bp;
}

/// Gauss-Newton on the control-point distance constraints over all kernel
/// directions.
Eigen::VectorXd refine_betas(const BetaProblem &bp, Eigen::VectorXd beta) {
  const auto nb = beta.size();
  const auto np = static_cast<Eigen::Index>(bp.pairs.size());
  for (int it = 0; it < 8; ++it) {
    Eigen::MatrixXd J(np, nb);
    Eigen::VectorXd r(np);
    for (Eigen::Index p = 0; p < np; ++p) {
      Vec3 d = Vec3::Zero();
      for (Eigen::Index k = 0; k < nb; ++k) d += beta(k) * bp.diff[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)];
      r(p) = d.squaredNorm() - bp.dist_sq[static_cast<std::size_t>(p)];
      for (Eigen::Index k = 0; k < nb; ++k) J(p, k) = 2.0 * d.dot(bp.diff[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)]);
    }
    const Eigen::VectorXd step = J.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) break;
    beta += step;
    if (step.norm() < 1e-12 * std::max(1.0, beta.norm())) break;
  }
  return beta;
}

/// Linearized initial betas using the first `n` kernel directions.
Eigen::VectorXd initial_betas(const BetaProblem &bp, int n, Eigen::Index total) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(total);
  const auto np = static_cast<Eigen::Index>(bp.pairs.size());
  if (n == 1) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index p = 0; p < np; ++p) {
      const double len = bp.diff[0][static_cast<std::size_t>(p)].norm();
      num += len * std::sqrt(bp.dist_sq[static_cast<std::size_t>(p)]);
      den += len * len;
    }
    beta(0) = den > 0.0 ? num / den : 0.0;
    return beta;
  }
  // Unknowns: products β_a·β_b for a <= b < n.
  std::vector<std::pair<int, int>> prods;
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b) prods.emplace_back(a, b);
  const auto nu = static_cast<Eigen::Index>(prods.size());
  if (np < nu) return beta;
  Eigen::MatrixXd L(np, nu);
  Eigen::VectorXd rho(np);
  for (Eigen::Index p = 0; p < np; ++p) {
    for (Eigen::Index u = 0; u < nu; ++u) {
      const auto [a, b] = prods[static_cast<std::size_t>(u)];
      const double dot = bp.diff[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)].dot(
          bp.diff[static_cast<std::size_t>(b)][static_cast<std::size_t>(p)]);
      L(p, u) = a == b ? dot : 2.0 * dot;
    }
    rho(p) = bp.dist_sq[static_cast<std::size_t>(p)];
  }
  const Eigen::VectorXd s = L.colPivHouseholderQr().solve(rho);
  // s(0) = β0², s(1..n-1) = β0·βk.
  const double b0 = std::sqrt(std::abs(s(0)));
  beta(0) = b0;
  if (b0 > 0.0) {
    for (int k = 1; k < n; ++k) beta(k) = s(k) / b0;
  }
  return beta;
}

std::vector<Pose> candidate_poses(std::span<const Vec3> X, std::span<const Vec2> u, const CameraIntrinsics &K) {
  const ControlFrame frame = choose_control_points(X);
  const int nc = frame.count;
  const auto n = static_cast<Eigen::Index>(X.size());

  Eigen::MatrixXd M(2 * n, 3 * nc);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto &a = frame.alphas[static_cast<std::size_t>(i)];
    const Vec2 &px = u[static_cast<std::size_t>(i)];
    for (int j = 0; j < nc; ++j) {
      M(2 * i, 3 * j) = a(j) * K.fx;
      M(2 * i, 3 * j + 1) = 0.0;
      M(2 * i, 3 * j + 2) = a(j) * (K.cx - px.x());
      M(2 * i + 1, 3 * j) = 0.0;
      M(2 * i + 1, 3 * j + 1) = a(j) * K.fy;
      M(2 * i + 1, 3 * j + 2) = a(j) * (K.cy - px.y());
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M.transpose() * M);
  const int kernel_dim = nc == 4 ? 4 : 3;
  std::vector<Eigen::VectorXd> kernel;
  for (int k = 0; k < kernel_dim; ++k) kernel.push_back(eig.eigenvectors().col(k));
  const BetaProblem bp = make_beta_problem(frame, kernel);

  std::vector<Pose> poses;
  const int max_n = nc == 4 ? 3 : 2;
  for (int approx = 1; approx <= max_n; ++approx) {
    Eigen::VectorXd beta = refine_betas(bp, initial_betas(bp, approx, kernel_dim));
    Eigen::VectorXd cc = Eigen::VectorXd::Zero(3 * nc);
    for (int k = 0; k < kernel_dim; ++k) cc += beta(k) * kernel[static_cast<std::size_t>(k)];
    for (double sign : {1.0, -1.0}) {
      std::vector<Vec3> pc;
      pc.reserve(X.size());
      for (Eigen::Index i = 0; i < n; ++i) {
        Vec3 p = Vec3::Zero();
        for (int j = 0; j < nc; ++j) p += frame.alphas[static_cast<std::size_t>(i)](j) * cc.segment<3>(3 * j);
        pc.push_back(sign * p);
      }
      poses.push_back(align_rigid(X, pc));
    }
  }
  return poses;
}

}  // namespace

Pose refine_pose(std::span<const Vec3> X, std::span<const Vec2> u, const CameraIntrinsics &K,
                 const Pose &initial, int iterations) {
  Pose pose = initial;
  double cost = mean_sq_error(X, u, K, pose);
  double damping = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < X.size(); ++i) {
      const Vec3 rx = pose.rotation * X[i];
      const Vec3 p = rx + pose.translation;
      const double iz = 1.0 / p.z();
      Eigen::Matrix<double, 2, 3> Jp;
      Jp << K.fx * iz, 0.0, -K.fx * p.x() * iz * iz, 0.0, K.fy * iz, -K.fy * p.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> Jx;
      Jx.leftCols<3>() = -skew(rx);
      Jx.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> J = Jp * Jx;
      const Vec2 r = K.project_camera_point(p) - u[i];
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 6 && !accepted; ++attempt) {
      Eigen::Matrix<double, 6, 6> A = H;
      A.diagonal() *= 1.0 + damping;
      const Eigen::Matrix<double, 6, 1> step = A.ldlt().solve(-g);
      if (!step.allFinite()) break;
      Pose next;
      next.rotation = nearest_rotation(axis_angle(step.head<3>().normalized(), step.head<3>().norm()) * pose.rotation);
      if (step.head<3>().norm() == 0.0) next.rotation = pose.rotation;
      next.translation = pose.translation + step.tail<3>();
      const double next_cost = mean_sq_error(X, u, K, next);
      if (next_cost <= cost) {
        pose = next;
        cost = next_cost;
        damping = damping * 0.1;
        accepted = true;
      } else {
        damping = damping == 0.0 ? 1e-4 : damping * 10.0;
      }
    }
    if (!accepted || cost == 0.0) break;
  }
  return pose;
}

Pose solve_pnp(std::span<const Vec3> object_pts, std::span<const Vec2> image_pts, const CameraIntrinsics &K) {
  if (object_pts.size() != image_pts.size()) {
    throw Error(ErrorCode::DimMismatch, "object and image point counts differ");
  }
  if (object_pts.size() < 4) {
    throw Error(ErrorCode::DegenerateConfiguration,
                "PnP needs at least 4 points, got " + std::to_string(object_pts.size()));
  }
  const auto candidates = candidate_poses(object_pts, image_pts, K);
  const Pose *best = nullptr;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto &c : candidates) {
    if (!all_in_front(object_pts, c)) continue;
    const double cost = mean_sq_error(object_pts, image_pts, K, c);
    if (cost < best_cost) {
      best_cost = cost;
      best = &c;
    }
  }
  if (!best) throw Error(ErrorCode::NoValidSolution, "no candidate places all points in front of the camera");
  Pose refined = refine_pose(object_pts, image_pts, K, *best);
  if (!all_in_front(object_pts, refined)) {
    throw Error(ErrorCode::NoValidSolution, "refined pose violates cheirality");
  }
  return refined;
}

namespace {

std::vector<int> inliers_of(const std::vector<double> &err, double threshold) {
  std::vector<int> out;
  for (std::size_t i = 0; i < err.size(); ++i)
    if (err[i] <= threshold) out.push_back(static_cast<int>(i));
  return out;
}

template <typename T>
std::vector<T> gather(std::span<const T> v, const std::vector<int> &idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

PoseEstimate ransac_pnp(std::span<const Vec3> object_pts, std::span<const Vec2> image_pts,
                        const CameraIntrinsics &K, const RansacParams &params) {
  params.validate();
  const int n = static_cast<int>(object_pts.size());
  if (n < RansacParams::kMinSample || image_pts.size() != object_pts.size()) {
    throw Error(ErrorCode::TooFewCorrespondences,
                "RANSAC needs at least 4 correspondences, got " + std::to_string(n));
  }

  Pose best_pose;
  std::vector<int> best_inliers;
  int iterations = 0;
  double required = static_cast<double>(params.max_iterations);
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::vector<Vec3> sx(RansacParams::kMinSample);
  std::vector<Vec2> su(RansacParams::kMinSample);

  for (int k = 0; k < params.max_iterations && k < required; ++k) {
    ++iterations;
    std::seed_seq seq{static_cast<std::uint32_t>(params.seed), static_cast<std::uint32_t>(params.seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int s = 0; s < RansacParams::kMinSample; ++s) {
      std::uniform_int_distribution<int> pick(s, n - 1);
      std::swap(pool[static_cast<std::size_t>(s)], pool[static_cast<std::size_t>(pick(rng))]);
      sx[static_cast<std::size_t>(s)] = object_pts[static_cast<std::size_t>(pool[static_cast<std::size_t>(s)])];
      su[static_cast<std::size_t>(s)] = image_pts[static_cast<std::size_t>(pool[static_cast<std::size_t>(s)])];
    }
    Pose hypothesis;
    try {
      hypothesis = solve_pnp(sx, su, K);
    } catch (const Error &) {
      continue;
    }
    auto inliers = inliers_of(reprojection_errors(object_pts, image_pts, K, hypothesis), params.inlier_threshold_px);
    if (inliers.size() > best_inliers.size()) {
      best_inliers = std::move(inliers);
      best_pose = hypothesis;
      const double w = static_cast<double>(best_inliers.size()) / n;
      const double miss = 1.0 - std::pow(w, RansacParams::kMinSample);
      if (miss <= 0.0) {
        required = 0.0;
      } else {
        required = std::log(1.0 - params.confidence) / std::log(miss);
      }
    }
  }
  if (static_cast<int>(best_inliers.size()) < RansacParams::kMinSample) {
    throw Error(ErrorCode::NoConsensus, "best hypothesis has " + std::to_string(best_inliers.size()) + " inliers");
  }

  // Refit on the consensus set while it keeps growing.
  for (int round = 0; round < 3; ++round) {
    Pose refit;
    try {
      const auto X = gather(object_pts, best_inliers);
      const auto u = gather(image_pts, best_inliers);
      refit = solve_pnp(X, u, K);
    } catch (const Error &) {
      break;
    }
    auto inliers = inliers_of(reprojection_errors(object_pts, image_pts, K, refit), params.inlier_threshold_px);
    if (inliers.size() < best_inliers.size()) break;
    const bool grew = inliers.size() > best_inliers.size();
    best_inliers = std::move(inliers);
    best_pose = refit;
    if (!grew) break;
  }

  PoseEstimate est;
  est.pose = best_pose;
  est.inlier_indices = best_inliers;
  est.num_ransac_iters_run = iterations;
  const auto err = reprojection_errors(object_pts, image_pts, K, best_pose);
  double sum = 0.0;
  for (int i : best_inliers) sum += err[static_cast<std::size_t>(i)];
  est.mean_inlier_reproj_px = sum / static_cast<double>(best_inliers.size());
  return est;
}

PoseEstimate ransac_pnp(const CorrespondenceSet &corr, const CameraIntrinsics &K, const RansacParams &params) {
  std::vector<Vec3> X;
  std::vector<Vec2> u;
  X.reserve(corr.size());
  u.reserve(corr.size());
  for (const auto &c : corr.pairs) {
    X.push_back(c.object_pt);
    u.push_back(c.query_px);
  }
  return ransac_pnp(X, u, K, params);
}

}  // namespace zs6d
