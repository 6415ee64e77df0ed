#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zs6d/bop_eval.hpp"
#include "zs6d/descriptors.hpp"
#include "zs6d/json_io.hpp"
#include "zs6d/matching.hpp"
#include "zs6d/pose_solver.hpp"
#include "zs6d/render.hpp"

namespace zs6d {

enum class DescriptorBackend { Oracle, Archive };

std::string to_string(DescriptorBackend b);
/// Throws ConfigError for anything but "oracle" / "archive".
DescriptorBackend parse_backend(const std::string &name);

struct PipelineConfig {
  int template_count = 300;
  int correspondence_top_k = kDefaultTopK;
  double crop_pad = 1.2;
  int out_size = 224;
  int patch_size = 8;
  int stride = 8;
  int oracle_dim = 32;
  RansacParams ransac;
  DescriptorBackend descriptor_backend = DescriptorBackend::Oracle;
  std::uint64_t seed = 0;
  /// Write wall-clock seconds into the results CSV "time" column. Off by
  /// default so results stay byte-reproducible.
  bool record_timing = false;

  std::filesystem::path store;
  std::filesystem::path dataset;  ///< BOP split directory holding <scene:06d>/
  std::filesystem::path masks;    ///< optional detections JSON
  std::filesystem::path models;   ///< defaults to <dataset>/../models
  std::filesystem::path results;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::filesystem::path models_dir() const;

  /// Field names mirror the struct; unknown keys are rejected.
  static PipelineConfig from_json(const json &j);
  json to_json() const;
};

/// Reads a JSON config file over the defaults. Throws MissingFile, ParseError
/// or ConfigError.
PipelineConfig load_config(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Descriptors for templates and queries

/// Computes oracle local and pooled global descriptors for every non-empty
/// template.
void attach_oracle_descriptors(TemplateStore &store, const PipelineConfig &cfg);

/// view_<k>.local.zst6 / view_<k>.global.zst6 inside the store object dir.
std::filesystem::path template_descriptor_path(const TemplateStore &store, int index, bool global);

/// Reads template descriptors from the store directory. Throws MissingFile.
void attach_archive_descriptors(TemplateStore &store);

/// Writes the currently attached template descriptors in archive layout.
void write_template_descriptors(const TemplateStore &store);

struct QueryObservation {
  DescriptorGrid local;
  GlobalDescriptor global;
  CropTransform crop;
};

/// Oracle query: renders the object at `gt_pose`, keeps the pixels inside
/// `mask`, crops around the mask and encodes the coordinates.
/// Throws NoForeground when the mask and the render do not overlap.
QueryObservation oracle_query(const TriMesh &mesh, const Pose &gt_pose, const CameraIntrinsics &K,
                              const Mask &mask, const PipelineConfig &cfg);

/// `<scene dir>/descriptors/<im:06d>_<inst:06d>.{local,global}.zst6`.
std::filesystem::path query_descriptor_path(const std::filesystem::path &dataset_root, int scene_id, int im_id,
                                            int instance, bool global);

/// Reads archive query descriptors; the local file's metadata must carry
/// crop {scale, offset_x, offset_y}. Throws MissingFile or SchemaError.
QueryObservation archive_query(const std::filesystem::path &dataset_root, int scene_id, int im_id, int instance);

/// Writes a query observation in the archive layout read by archive_query.
void write_query_descriptors(const QueryObservation &q, const std::filesystem::path &dataset_root, int scene_id,
                             int im_id, int instance);

// ---------------------------------------------------------------------------
// Single-instance estimation

struct InstanceOutcome {
  bool ok = false;
  std::string stage;  ///< failing stage when !ok
  std::string message;
  int template_index = -1;
  double template_score = 0.0;
  int num_matches = 0;
  int num_correspondences = 0;
  PoseEstimate estimate;
  double score = 0.0;  ///< inlier fraction of the correspondences
};

/// Retrieval, mutual nearest neighbors, lifting, RANSAC-PnP. Never throws for
/// data-dependent failures; they come back as a failed outcome naming the
/// stage ("retrieval", "matching", "lifting", "pnp").
InstanceOutcome estimate_instance(const QueryObservation &query, const TemplateStore &store,
                                  const CameraIntrinsics &K, const PipelineConfig &cfg, std::uint64_t seed);

/// Deterministic per-instance RANSAC seed.
std::uint64_t instance_seed(std::uint64_t seed, int scene_id, int im_id, int instance);

// ---------------------------------------------------------------------------
// Dataset-level commands

struct Diagnostic {
  int scene_id = 0;
  int im_id = 0;
  int instance = 0;
  int obj_id = 0;
  std::string stage;  ///< "ok" on success
  std::string message;
  int template_index = -1;
  int num_correspondences = 0;
  int num_inliers = 0;
  int ransac_iterations = 0;
};

struct EstimateRun {
  std::vector<PoseResult> results;
  std::vector<Diagnostic> diagnostics;
  std::size_t succeeded() const { return results.size(); }
};

/// Inputs shared across estimate/ablate runs: loaded scenes, meshes and
/// template stores with descriptors attached.
struct DatasetContext {
  std::vector<SceneAnnotation> images;
  std::map<int, TriMesh> meshes;
  std::map<int, ModelInfo> model_info;
  std::map<int, TemplateStore> stores;
};

/// Loads scenes, models (when present or needed by the oracle backend) and
/// stores for every object id that has one.
DatasetContext load_dataset_context(const PipelineConfig &cfg);

/// Runs estimation over every instance. `stores` overrides the context stores
/// (used by the template sweep).
EstimateRun run_estimation(const DatasetContext &ctx, const PipelineConfig &cfg,
                           const std::map<int, TemplateStore> *stores = nullptr);

/// Estimation plus results CSV at cfg.results and diagnostics JSON next to it.
EstimateRun cmd_estimate(const PipelineConfig &cfg);

struct EvaluationResult {
  std::vector<ErrorReport> reports;
  RecallSummary summary;
};

/// Scores estimates against ground truth. Estimates are matched greedily in
/// descending score order to the unmatched ground-truth instance of the same
/// object with the smallest MSSD; unmatched instances count as missing.
EvaluationResult evaluate_results(const DatasetContext &ctx, std::span<const PoseResult> results);

json evaluation_to_json(const EvaluationResult &r);

enum class SweepKnob { Templates, Correspondences };
SweepKnob parse_sweep(const std::string &name);

struct SweepRow {
  int value = 0;
  RecallSummary summary;
  std::size_t succeeded = 0;
};

/// Re-runs estimation varying one knob. The template sweep subsamples each
/// store by farthest-point selection. Throws ConfigError on an empty list.
std::vector<SweepRow> run_ablation(const DatasetContext &ctx, const PipelineConfig &cfg, SweepKnob knob,
                                   const std::vector<int> &values);
void write_ablation_csv(const std::vector<SweepRow> &rows, SweepKnob knob, const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticDatasetOptions {
  int images = 50;
  std::uint64_t seed = 0;
  /// Also write oracle descriptors in archive layout for queries.
  bool write_query_descriptors = false;
};

/// Procedural BOP-layout dataset under `root`: models/ (two objects plus
/// models_info.json), test/000001/ with scene_camera.json, scene_gt.json and
/// mask_visib PNGs, one object instance per image.
void make_synthetic_dataset(const std::filesystem::path &root, const SyntheticDatasetOptions &opts,
                            const PipelineConfig &cfg);

/// Uniformly random rotation and a translation with depth in [500, 1000] mm
/// and the origin projecting within ±100 px of the principal point.
Pose random_object_pose(std::uint64_t seed, const CameraIntrinsics &K);

/// Camera used by the synthetic data and the self-test: 640×480, f = 600.
CameraIntrinsics synthetic_intrinsics();

/// Bumpy ellipsoid of roughly 100 × 70 × 50 mm.
TriMesh selftest_mesh();

// ---------------------------------------------------------------------------
// Self-test

enum class SelftestDescriptors { Oracle, Random };

struct SelftestOptions {
  std::uint64_t seed = 0;
  int template_count = 300;
  int query_count = 40;
  SelftestDescriptors descriptors = SelftestDescriptors::Oracle;
  /// Place every query exactly at a template pose.
  bool queries_at_templates = false;
};

struct SelftestReport {
  std::vector<double> rotation_error_deg;  ///< +inf for failed estimates
  std::vector<double> translation_error_mm;
  double median_rotation_deg = 0.0;
  double median_translation_mm = 0.0;
  double diameter = 0.0;
  double min_template_spacing_deg = 0.0;
  int failures = 0;
  bool pass = false;              ///< median rotation < 5°, translation < 5% of diameter
  bool beats_granularity = false;  ///< median rotation < half the template spacing
  double seconds = 0.0;
};

SelftestReport run_selftest(const SelftestOptions &opts, const PipelineConfig &cfg = {});

/// Median of the values; +inf entries sort last.
double median_of(std::vector<double> values);

}  // namespace zs6d
