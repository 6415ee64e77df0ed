#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "zs6d/geometry.hpp"
#include "zs6d/mesh.hpp"

namespace zs6d {

// ---------------------------------------------------------------------------
// Dataset ingestion

struct GtInstance {
  int obj_id = 0;
  Pose pose;
  std::filesystem::path mask_path;  ///< mask_visib/<im>_<gt>.png, may not exist

  friend bool operator==(const GtInstance &, const GtInstance &) = default;
};

struct SceneAnnotation {
  int scene_id = 0;
  int image_id = 0;
  CameraIntrinsics K;
  std::vector<GtInstance> gt;

  friend bool operator==(const SceneAnnotation &, const SceneAnnotation &) = default;
};

/// `<root>/<scene:06d>`.
std::filesystem::path scene_directory(const std::filesystem::path &dataset_root, int scene_id);

/// Reads scene_camera.json and scene_gt.json of one scene, sorted by image id.
/// Image size comes from per-image "width"/"height" keys, else from
/// camera.json in the dataset root or its parent, else 640×480.
/// Throws MissingFile, ParseError, or SchemaError naming the offending key.
std::vector<SceneAnnotation> load_bop_scene(const std::filesystem::path &dataset_root, int scene_id);

/// Writes scene_camera.json and scene_gt.json (with per-image width/height).
void write_bop_scene(const std::filesystem::path &dataset_root, int scene_id,
                     std::span<const SceneAnnotation> images);

/// Numeric scene directories under `dataset_root`, ascending.
std::vector<int> list_scenes(const std::filesystem::path &dataset_root);

// ---------------------------------------------------------------------------
// Symmetries

struct ContinuousSymmetry {
  Vec3 axis = Vec3::UnitZ();
  Vec3 offset = Vec3::Zero();
  int steps = 64;
};

inline constexpr int kContinuousSymmetrySteps = 64;

/// Object-frame symmetry transforms. The identity is always the first discrete
/// entry.
class SymmetrySet {
 public:
  SymmetrySet() : discrete_{Pose::identity()} {}

  /// Adds a discrete transform unless it equals the identity (1e-9).
  /// Throws SchemaError when the rotation is not orthonormal (1e-3).
  void add_discrete(const Pose &s);
  void add_continuous(const ContinuousSymmetry &c);

  const std::vector<Pose> &discrete() const { return discrete_; }
  const std::vector<ContinuousSymmetry> &continuous() const { return continuous_; }

  /// Every transform the metrics minimize over: each sampled continuous
  /// rotation composed after each discrete transform. Without continuous
  /// axes this is the discrete list.
  std::vector<Pose> expand() const;

 private:
  std::vector<Pose> discrete_;
  std::vector<ContinuousSymmetry> continuous_;
};

struct ModelInfo {
  int obj_id = 0;
  double diameter = 0.0;
  SymmetrySet symmetries;
};

/// Parses models_info.json (diameter, symmetries_discrete as row-major 4×4
/// with mm translation, symmetries_continuous as {axis, offset}).
std::map<int, ModelInfo> load_models_info(const std::filesystem::path &path);
void write_models_info(const std::map<int, ModelInfo> &infos, const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Metrics

inline constexpr int kRecallThresholdCount = 10;
inline constexpr std::size_t kMetricVertexLimit = 10000;

/// 0.05·d, 0.10·d, ..., 0.50·d.
std::array<double, kRecallThresholdCount> mssd_thresholds(double diameter);
/// 5r, 10r, ..., 50r with r = image_width / 640.
std::array<double, kRecallThresholdCount> mspd_thresholds(int image_width);

struct ErrorReport {
  int scene_id = 0;
  int im_id = 0;
  int obj_id = 0;
  bool has_estimate = false;
  double mssd = 0.0;  ///< mm
  double mspd = 0.0;  ///< px
  double add = 0.0;   ///< mm
  double adi = 0.0;   ///< mm
  double diameter = 0.0;
  int image_width = 640;
  std::array<bool, kRecallThresholdCount> mssd_pass{};
  std::array<bool, kRecallThresholdCount> mspd_pass{};

  /// Fills the pass arrays from the errors (strict less-than).
  void apply_thresholds();

  /// A ground-truth instance without an estimate: infinite errors, no passes.
  static ErrorReport missing(double diameter, int image_width);
};

/// Vertices used by the metrics: all of them up to kMetricVertexLimit, else
/// every ceil(n / limit)-th vertex.
std::vector<Vec3> metric_vertices(const TriMesh &mesh);

/// MSSD, MSPD, ADD and ADI of `est` against `gt`. Uses mesh.diameter unless
/// `diameter` is positive. Projections of points at non-positive depth count
/// as infinitely far.
ErrorReport pose_error_metrics(const Pose &est, const Pose &gt, const TriMesh &mesh, const SymmetrySet &sym,
                               const CameraIntrinsics &K, double diameter = 0.0);

/// Same, over an explicit vertex list.
ErrorReport pose_error_metrics(const Pose &est, const Pose &gt, std::span<const Vec3> vertices,
                               const SymmetrySet &sym, const CameraIntrinsics &K, double diameter);

struct RecallSummary {
  static constexpr const char *kLabel = "AR(MSSD,MSPD)";
  double ar = 0.0;
  double ar_mssd = 0.0;
  double ar_mspd = 0.0;
  double recall_add = 0.0;  ///< ADD < 0.1·d
  double recall_adi = 0.0;  ///< ADI < 0.1·d
  std::size_t instances = 0;
  std::size_t missing = 0;
};

/// Throws EmptyReportSet.
RecallSummary average_recall(std::span<const ErrorReport> reports);

// ---------------------------------------------------------------------------
// Results CSV

struct PoseResult {
  int scene_id = 0;
  int im_id = 0;
  int obj_id = 0;
  double score = 1.0;
  Pose pose;
  double time = -1.0;  ///< seconds, -1 when not recorded

  friend bool operator==(const PoseResult &, const PoseResult &) = default;
};

/// Header `scene_id,im_id,obj_id,score,R,t,time`, rows sorted by
/// (scene, image, object) keeping input order among equal keys. Values use
/// the shortest round-trip decimal form. Throws SchemaError for
/// non-orthonormal rotations and IoError on write failure.
void write_results_csv(std::span<const PoseResult> estimates, const std::filesystem::path &path);
std::vector<PoseResult> read_results_csv(const std::filesystem::path &path);

}  // namespace zs6d
