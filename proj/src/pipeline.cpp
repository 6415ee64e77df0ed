#include "zs6d/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include "zs6d/error.hpp"
#include "zs6d/png_io.hpp"

namespace fs = std::filesystem;

namespace zs6d {

std::string to_string(DescriptorBackend b) { return b == DescriptorBackend::Oracle ? "oracle" : "archive"; }

DescriptorBackend parse_backend(const std::string &name) {
  if (name == "oracle") return DescriptorBackend::Oracle;
  if (name == "archive") return DescriptorBackend::Archive;
  throw Error(ErrorCode::ConfigError, "descriptor_backend must be 'oracle' or 'archive', got '" + name + "'");
}

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  auto fail = [](const std::string &msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (template_count < 1) fail("template_count must be >= 1");
  if (correspondence_top_k < RansacParams::kMinSample) fail("correspondence_top_k must be >= 4");
  if (!(crop_pad >= 1.0)) fail("crop_pad must be >= 1");
  if (out_size < 32) fail("out_size must be >= 32");
  if (patch_size < 1 || stride < 1) fail("patch_size and stride must be >= 1");
  if (oracle_dim < 6) fail("oracle_dim must be >= 6");
  ransac.validate();
}

fs::path PipelineConfig::models_dir() const {
  if (!models.empty()) return models;
  fs::path split = dataset.lexically_normal();
  if (split.filename().empty()) split = split.parent_path();
  return split.parent_path() / "models";
}

namespace {

template <typename T>
void read_field(const json &j, const char *key, T &out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception &) {
    throw Error(ErrorCode::ConfigError, std::string("config field '") + key + "' has the wrong type");
  }
}

void read_path(const json &j, const char *key, fs::path &out) {
  std::string s;
  if (!j.contains(key)) return;
  read_field(j, key, s);
  out = s;
}

void reject_unknown(const json &j, std::initializer_list<const char *> known, const std::string &where) {
  for (const auto &[key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char *k) { return key == k; })) {
      throw Error(ErrorCode::ConfigError, "unknown config field '" + where + key + "'");
    }
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json &j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  reject_unknown(j,
                 {"template_count", "correspondence_top_k", "crop_pad", "out_size", "patch_size", "stride",
                  "oracle_dim", "ransac", "descriptor_backend", "seed", "record_timing", "store", "dataset",
                  "masks", "models", "results"},
                 "");
  PipelineConfig c;
  read_field(j, "template_count", c.template_count);
  read_field(j, "correspondence_top_k", c.correspondence_top_k);
  read_field(j, "crop_pad", c.crop_pad);
  read_field(j, "out_size", c.out_size);
  read_field(j, "patch_size", c.patch_size);
  read_field(j, "stride", c.stride);
  read_field(j, "oracle_dim", c.oracle_dim);
  read_field(j, "seed", c.seed);
  read_field(j, "record_timing", c.record_timing);
  if (j.contains("descriptor_backend")) {
    std::string b;
    read_field(j, "descriptor_backend", b);
    c.descriptor_backend = parse_backend(b);
  }
  if (j.contains("ransac")) {
    const json &r = j.at("ransac");
    if (!r.is_object()) throw Error(ErrorCode::ConfigError, "config field 'ransac' must be an object");
    reject_unknown(r, {"max_iterations", "inlier_threshold_px", "confidence"}, "ransac.");
    read_field(r, "max_iterations", c.ransac.max_iterations);
    read_field(r, "inlier_threshold_px", c.ransac.inlier_threshold_px);
    read_field(r, "confidence", c.ransac.confidence);
  }
  read_path(j, "store", c.store);
  read_path(j, "dataset", c.dataset);
  read_path(j, "masks", c.masks);
  read_path(j, "models", c.models);
  read_path(j, "results", c.results);
  return c;
}

json PipelineConfig::to_json() const {
  return {{"template_count", template_count},
          {"correspondence_top_k", correspondence_top_k},
          {"crop_pad", crop_pad},
          {"out_size", out_size},
          {"patch_size", patch_size},
          {"stride", stride},
          {"oracle_dim", oracle_dim},
          {"ransac",
           {{"max_iterations", ransac.max_iterations},
            {"inlier_threshold_px", ransac.inlier_threshold_px},
            {"confidence", ransac.confidence}}},
          {"descriptor_backend", zs6d::to_string(descriptor_backend)},
          {"seed", seed},
          {"record_timing", record_timing},
          {"store", store.string()},
          {"dataset", dataset.string()},
          {"masks", masks.string()},
          {"models", models.string()},
          {"results", results.string()}};
}

PipelineConfig load_config(const fs::path &path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const Error &e) {
    if (e.code() == ErrorCode::ParseError) throw Error(ErrorCode::ConfigError, e.what());
    throw;
  }
  return PipelineConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Descriptors

void attach_oracle_descriptors(TemplateStore &store, const PipelineConfig &cfg) {
  for (auto &t : store.templates) {
    if (t.empty_render) continue;
    DescriptorGrid g = oracle_descriptors(t.render, cfg.patch_size, cfg.stride, cfg.oracle_dim);
    if (g.valid_count() == 0) continue;
    t.global = pool_global(g);
    t.local = std::move(g);
  }
}

fs::path template_descriptor_path(const TemplateStore &store, int index, bool global) {
  return store.directory / ("view_" + std::to_string(index) + (global ? ".global.zst6" : ".local.zst6"));
}

void attach_archive_descriptors(TemplateStore &store) {
  for (auto &t : store.templates) {
    if (t.empty_render) continue;
    const fs::path lp = template_descriptor_path(store, t.index, false);
    const fs::path gp = template_descriptor_path(store, t.index, true);
    if (!fs::exists(lp) || !fs::exists(gp)) {
      throw Error(ErrorCode::MissingFile, "template descriptors missing: " + lp.string());
    }
    t.local = read_descriptor_grid(lp);
    t.global = read_global_descriptor(gp);
  }
}

void write_template_descriptors(const TemplateStore &store) {
  for (const auto &t : store.templates) {
    if (!t.local || !t.global) continue;
    write_descriptor_grid(*t.local, template_descriptor_path(store, t.index, false));
    write_global_descriptor(*t.global, template_descriptor_path(store, t.index, true));
  }
}

QueryObservation oracle_query(const TriMesh &mesh, const Pose &gt_pose, const CameraIntrinsics &K,
                              const Mask &mask, const PipelineConfig &cfg) {
  if (mask.width() != K.width || mask.height() != K.height) {
    throw Error(ErrorCode::DimMismatch, "mask is " + std::to_string(mask.width()) + "x" +
                                            std::to_string(mask.height()) + ", camera is " +
                                            std::to_string(K.width) + "x" + std::to_string(K.height));
  }
  const auto box = mask_bbox(mask);
  if (!box) throw Error(ErrorCode::NoForeground, "empty mask");
  RenderOutput render = rasterize_coordinate_map(mesh, gt_pose, K);
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      if (mask(x, y)) continue;
      render.mask(x, y) = 0;
      render.depth(x, y) = 0.0f;
      render.coord_map(x, y) = kBackgroundNocs;
    }
  }
  QueryObservation q;
  q.crop = compute_crop(*box, cfg.crop_pad, cfg.out_size);
  const RenderOutput cropped = crop_render(render, q.crop, cfg.out_size);
  q.local = oracle_descriptors(cropped, cfg.patch_size, cfg.stride, cfg.oracle_dim);
  q.global = pool_global(q.local);
  return q;
}

namespace {

std::string pad6(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", v);
  return buf;
}

}  // namespace

fs::path query_descriptor_path(const fs::path &dataset_root, int scene_id, int im_id, int instance, bool global) {
  return scene_directory(dataset_root, scene_id) / "descriptors" /
         (pad6(im_id) + "_" + pad6(instance) + (global ? ".global.zst6" : ".local.zst6"));
}

QueryObservation archive_query(const fs::path &dataset_root, int scene_id, int im_id, int instance) {
  const fs::path lp = query_descriptor_path(dataset_root, scene_id, im_id, instance, false);
  const fs::path gp = query_descriptor_path(dataset_root, scene_id, im_id, instance, true);
  if (!fs::exists(lp)) throw Error(ErrorCode::MissingFile, "query descriptors missing: " + lp.string());
  if (!fs::exists(gp)) throw Error(ErrorCode::MissingFile, "query descriptors missing: " + gp.string());
  QueryObservation q;
  json meta;
  q.local = read_descriptor_grid(lp, &meta);
  q.global = read_global_descriptor(gp);
  if (!meta.is_object() || !meta.contains("crop")) {
    throw Error(ErrorCode::SchemaError, lp.string() + ": metadata key 'crop' missing");
  }
  try {
    const json &c = meta.at("crop");
    q.crop.scale = c.at("scale").get<double>();
    q.crop.offset_x = c.at("offset_x").get<double>();
    q.crop.offset_y = c.at("offset_y").get<double>();
  } catch (const json::exception &) {
    throw Error(ErrorCode::SchemaError, lp.string() + ": metadata key 'crop' needs scale, offset_x, offset_y");
  }
  if (!(q.crop.scale > 0.0)) throw Error(ErrorCode::SchemaError, lp.string() + ": crop scale must be positive");
  return q;
}

void write_query_descriptors(const QueryObservation &q, const fs::path &dataset_root, int scene_id, int im_id,
                             int instance) {
  const fs::path lp = query_descriptor_path(dataset_root, scene_id, im_id, instance, false);
  std::error_code ec;
  fs::create_directories(lp.parent_path(), ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + lp.parent_path().string());
  json extra = {{"crop", {{"scale", q.crop.scale}, {"offset_x", q.crop.offset_x}, {"offset_y", q.crop.offset_y}}}};
  write_descriptor_grid(q.local, lp, extra);
  write_global_descriptor(q.global, query_descriptor_path(dataset_root, scene_id, im_id, instance, true));
}

// ---------------------------------------------------------------------------
// Estimation

std::uint64_t instance_seed(std::uint64_t seed, int scene_id, int im_id, int instance) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  };
  std::uint64_t h = mix(seed);
  for (int v : {scene_id, im_id, instance}) h = mix(h ^ static_cast<std::uint32_t>(v));
  return h;
}

InstanceOutcome estimate_instance(const QueryObservation &query, const TemplateStore &store,
                                  const CameraIntrinsics &K, const PipelineConfig &cfg, std::uint64_t seed) {
  InstanceOutcome out;
  auto fail = [&](const char *stage, const std::string &msg) {
    out.ok = false;
    out.stage = stage;
    out.message = msg;
    return out;
  };

  std::vector<GlobalDescriptor> globals;
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < store.templates.size(); ++i) {
    const auto &t = store.templates[i];
    if (t.empty_render || !t.global || !t.local) continue;
    globals.push_back(*t.global);
    positions.push_back(i);
  }
  if (globals.empty()) return fail("retrieval", "no template carries descriptors");

  std::vector<TemplateMatch> ranking;
  try {
    ranking = match_template(query.global, globals);
  } catch (const Error &e) {
    return fail("retrieval", e.what());
  }
  const TemplateRecord &templ = store.templates[positions[static_cast<std::size_t>(ranking.front().template_index)]];
  out.template_index = templ.index;
  out.template_score = ranking.front().score;

  std::vector<PatchMatch> matches;
  try {
    matches = mutual_nearest_neighbors(query.local, *templ.local);
  } catch (const Error &e) {
    return fail("matching", e.what());
  }
  out.num_matches = static_cast<int>(matches.size());
  if (matches.empty()) return fail("matching", "no mutual nearest neighbors");

  CorrespondenceSet corr;
  try {
    corr = lift_correspondences(matches, query.local, *templ.local, templ, query.crop, cfg.correspondence_top_k);
  } catch (const Error &e) {
    return fail("lifting", e.what());
  }
  out.num_correspondences = static_cast<int>(corr.size());

  RansacParams params = cfg.ransac;
  params.seed = seed;
  try {
    out.estimate = ransac_pnp(corr, K, params);
  } catch (const Error &e) {
    return fail("pnp", e.what());
  }
  out.ok = true;
  out.stage = "ok";
  out.score = static_cast<double>(out.estimate.inlier_indices.size()) / static_cast<double>(corr.size());
  return out;
}

// ---------------------------------------------------------------------------
// Dataset context

namespace {

fs::path model_path(const fs::path &models_dir, int obj_id) {
  return models_dir / ("obj_" + pad6(obj_id) + ".ply");
}

struct QueryInstance {
  int instance = 0;
  int obj_id = 0;
  fs::path mask_path;
  const GtInstance *gt = nullptr;  // oracle source
};

/// Detections JSON entries grouped by (scene, image).
struct Detection {
  int scene_id = 0;
  int im_id = 0;
  int obj_id = 0;
  BBox bbox;
  fs::path mask_path;
};

std::vector<Detection> load_detections(const fs::path &path) {
  const json doc = read_json_file(path);
  if (!doc.is_array()) throw Error(ErrorCode::SchemaError, path.string() + ": detections must be a list");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json &d = doc[i];
    const std::string where = path.string() + "[" + std::to_string(i) + "]";
    try {
      Detection det;
      det.scene_id = d.at("scene_id").get<int>();
      det.im_id = d.at("im_id").get<int>();
      det.obj_id = d.at("obj_id").get<int>();
      if (d.contains("bbox")) {
        const auto b = d.at("bbox").get<std::vector<double>>();
        if (b.size() != 4) throw Error(ErrorCode::SchemaError, where + ": key 'bbox' needs 4 values");
        det.bbox = {b[0], b[1], b[2], b[3]};
      }
      det.mask_path = d.at("mask_png_path").get<std::string>();
      if (det.mask_path.is_relative()) det.mask_path = path.parent_path() / det.mask_path;
      out.push_back(std::move(det));
    } catch (const json::exception &e) {
      throw Error(ErrorCode::SchemaError, where + ": " + e.what());
    }
  }
  return out;
}

/// Instances to estimate in one image: one per ground-truth mask, or one per
/// detection. Detections borrow the ground-truth instance of the same object
/// whose projected origin lies closest to the detection box center.
std::vector<QueryInstance> instances_for(const SceneAnnotation &img, const std::vector<Detection> *dets) {
  std::vector<QueryInstance> out;
  if (!dets) {
    for (std::size_t g = 0; g < img.gt.size(); ++g) {
      out.push_back({static_cast<int>(g), img.gt[g].obj_id, img.gt[g].mask_path, &img.gt[g]});
    }
    return out;
  }
  int next = 0;
  for (const auto &d : *dets) {
    if (d.scene_id != img.scene_id || d.im_id != img.image_id) continue;
    QueryInstance q{next++, d.obj_id, d.mask_path, nullptr};
    double best = std::numeric_limits<double>::infinity();
    for (const auto &g : img.gt) {
      if (g.obj_id != d.obj_id || g.pose.translation.z() <= kMinDepthMm) continue;
      const double dist = (img.K.project_camera_point(g.pose.translation) - d.bbox.center()).norm();
      if (dist < best) {
        best = dist;
        q.gt = &g;
      }
    }
    out.push_back(q);
  }
  return out;
}

}  // namespace

DatasetContext load_dataset_context(const PipelineConfig &cfg) {
  if (cfg.dataset.empty()) throw Error(ErrorCode::ConfigError, "dataset path not set");
  DatasetContext ctx;
  for (int scene : list_scenes(cfg.dataset)) {
    auto imgs = load_bop_scene(cfg.dataset, scene);
    ctx.images.insert(ctx.images.end(), imgs.begin(), imgs.end());
  }
  std::vector<int> obj_ids;
  for (const auto &img : ctx.images)
    for (const auto &g : img.gt) obj_ids.push_back(g.obj_id);
  std::sort(obj_ids.begin(), obj_ids.end());
  obj_ids.erase(std::unique(obj_ids.begin(), obj_ids.end()), obj_ids.end());

  const fs::path models_dir = cfg.models_dir();
  if (fs::exists(models_dir / "models_info.json")) ctx.model_info = load_models_info(models_dir / "models_info.json");
  for (int id : obj_ids) {
    const fs::path mp = model_path(models_dir, id);
    if (fs::exists(mp)) ctx.meshes.emplace(id, load_mesh(mp));
  }
  if (!cfg.store.empty()) {
    for (int id : obj_ids) {
      const fs::path dir = store_object_dir(cfg.store, id);
      if (!fs::exists(dir / "manifest.json")) continue;
      TemplateStore store = load_template_store(dir);
      if (cfg.descriptor_backend == DescriptorBackend::Oracle) {
        attach_oracle_descriptors(store, cfg);
      } else {
        attach_archive_descriptors(store);
      }
      ctx.stores.emplace(id, std::move(store));
    }
  }
  return ctx;
}

EstimateRun run_estimation(const DatasetContext &ctx, const PipelineConfig &cfg,
                           const std::map<int, TemplateStore> *stores) {
  cfg.validate();
  if (!stores) stores = &ctx.stores;
  std::optional<std::vector<Detection>> dets;
  if (!cfg.masks.empty()) dets = load_detections(cfg.masks);

  // Apply template_count once per object, outside the per-instance loop.
  std::map<int, TemplateStore> reduced;
  for (const auto &[id, s] : *stores) {
    if (static_cast<int>(s.templates.size()) > cfg.template_count) reduced.emplace(id, subsample_store(s, cfg.template_count));
  }

  EstimateRun run;
  for (const auto &img : ctx.images) {
    for (const auto &inst : instances_for(img, dets ? &*dets : nullptr)) {
      Diagnostic diag;
      diag.scene_id = img.scene_id;
      diag.im_id = img.image_id;
      diag.instance = inst.instance;
      diag.obj_id = inst.obj_id;
      auto record = [&](const std::string &stage, const std::string &msg) {
        diag.stage = stage;
        diag.message = msg;
        run.diagnostics.push_back(diag);
      };

      const TemplateStore *store = nullptr;
      if (const auto r = reduced.find(inst.obj_id); r != reduced.end()) {
        store = &r->second;
      } else if (const auto s = stores->find(inst.obj_id); s != stores->end()) {
        store = &s->second;
      }
      if (!store) {
        record("templates-missing", "no template store for object " + std::to_string(inst.obj_id));
        continue;
      }
      if (!fs::exists(inst.mask_path)) {
        record("segmentation-missing", "mask not found: " + inst.mask_path.string());
        continue;
      }

      const auto t0 = std::chrono::steady_clock::now();
      QueryObservation query;
      try {
        if (cfg.descriptor_backend == DescriptorBackend::Oracle) {
          const auto mit = ctx.meshes.find(inst.obj_id);
          if (mit == ctx.meshes.end()) {
            record("model-missing", "no model for object " + std::to_string(inst.obj_id));
            continue;
          }
          if (!inst.gt) {
            record("descriptors", "oracle backend found no ground-truth pose for the detection");
            continue;
          }
          query = oracle_query(mit->second, inst.gt->pose, img.K, read_mask_png(inst.mask_path), cfg);
        } else {
          query = archive_query(cfg.dataset, img.scene_id, img.image_id, inst.instance);
        }
      } catch (const Error &e) {
        record(e.code() == ErrorCode::MissingFile && cfg.descriptor_backend == DescriptorBackend::Oracle
                   ? "segmentation-missing"
                   : "descriptors",
               e.what());
        continue;
      }

      const InstanceOutcome res = estimate_instance(
          query, *store, img.K, cfg, instance_seed(cfg.seed, img.scene_id, img.image_id, inst.instance));
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      diag.template_index = res.template_index;
      diag.num_correspondences = res.num_correspondences;
      if (!res.ok) {
        record(res.stage, res.message);
        continue;
      }
      diag.num_inliers = static_cast<int>(res.estimate.inlier_indices.size());
      diag.ransac_iterations = res.estimate.num_ransac_iters_run;
      record("ok", "");

      PoseResult r;
      r.scene_id = img.scene_id;
      r.im_id = img.image_id;
      r.obj_id = inst.obj_id;
      r.score = res.score;
      r.pose = res.estimate.pose;
      r.time = cfg.record_timing ? seconds : -1.0;
      run.results.push_back(r);
    }
  }
  return run;
}

namespace {

json diagnostics_to_json(const std::vector<Diagnostic> &diags) {
  json arr = json::array();
  for (const auto &d : diags) {
    arr.push_back({{"scene_id", d.scene_id},
                   {"im_id", d.im_id},
                   {"instance", d.instance},
                   {"obj_id", d.obj_id},
                   {"stage", d.stage},
                   {"message", d.message},
                   {"template", d.template_index},
                   {"correspondences", d.num_correspondences},
                   {"inliers", d.num_inliers},
                   {"ransac_iterations", d.ransac_iterations}});
  }
  return arr;
}

}  // namespace

EstimateRun cmd_estimate(const PipelineConfig &cfg) {
  cfg.validate();
  if (cfg.results.empty()) throw Error(ErrorCode::ConfigError, "results path not set");
  if (cfg.store.empty()) throw Error(ErrorCode::ConfigError, "store path not set");
  const DatasetContext ctx = load_dataset_context(cfg);
  EstimateRun run = run_estimation(ctx, cfg);
  write_results_csv(run.results, cfg.results);
  fs::path diag_path = cfg.results;
  diag_path.replace_extension(".diagnostics.json");
  write_json_file(diagnostics_to_json(run.diagnostics), diag_path);
  return run;
}

// ---------------------------------------------------------------------------
// Evaluation

EvaluationResult evaluate_results(const DatasetContext &ctx, std::span<const PoseResult> results) {
  EvaluationResult out;
  const SymmetrySet no_symmetry;
  for (const auto &img : ctx.images) {
    std::vector<int> objs;
    for (const auto &g : img.gt) objs.push_back(g.obj_id);
    std::sort(objs.begin(), objs.end());
    objs.erase(std::unique(objs.begin(), objs.end()), objs.end());

    for (int obj : objs) {
      const auto mit = ctx.meshes.find(obj);
      if (mit == ctx.meshes.end()) {
        throw Error(ErrorCode::MissingFile, "evaluation needs the model of object " + std::to_string(obj));
      }
      const auto iit = ctx.model_info.find(obj);
      const double diameter = iit != ctx.model_info.end() ? iit->second.diameter : mit->second.diameter;
      const SymmetrySet &sym = iit != ctx.model_info.end() ? iit->second.symmetries : no_symmetry;
      const auto verts = metric_vertices(mit->second);

      std::vector<const PoseResult *> ests;
      for (const auto &r : results)
        if (r.scene_id == img.scene_id && r.im_id == img.image_id && r.obj_id == obj) ests.push_back(&r);
      std::stable_sort(ests.begin(), ests.end(),
                       [](const PoseResult *a, const PoseResult *b) { return a->score > b->score; });

      std::vector<std::size_t> gts;
      for (std::size_t g = 0; g < img.gt.size(); ++g)
        if (img.gt[g].obj_id == obj) gts.push_back(g);
      std::vector<std::optional<ErrorReport>> assigned(gts.size());

      for (const PoseResult *e : ests) {
        std::optional<ErrorReport> best;
        std::size_t best_slot = 0;
        for (std::size_t s = 0; s < gts.size(); ++s) {
          if (assigned[s]) continue;
          ErrorReport rep = pose_error_metrics(e->pose, img.gt[gts[s]].pose, verts, sym, img.K, diameter);
          if (!best || rep.mssd < best->mssd) {
            best = rep;
            best_slot = s;
          }
        }
        if (best) assigned[best_slot] = best;
      }
      for (std::size_t s = 0; s < gts.size(); ++s) {
        ErrorReport rep = assigned[s] ? *assigned[s] : ErrorReport::missing(diameter, img.K.width);
        rep.scene_id = img.scene_id;
        rep.im_id = img.image_id;
        rep.obj_id = obj;
        out.reports.push_back(rep);
      }
    }
  }
  out.summary = average_recall(out.reports);
  return out;
}

json evaluation_to_json(const EvaluationResult &r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json per = json::array();
  for (const auto &rep : r.reports) {
    per.push_back({{"scene_id", rep.scene_id},
                   {"im_id", rep.im_id},
                   {"obj_id", rep.obj_id},
                   {"has_estimate", rep.has_estimate},
                   {"mssd", num(rep.mssd)},
                   {"mspd", num(rep.mspd)},
                   {"add", num(rep.add)},
                   {"adi", num(rep.adi)},
                   {"diameter", rep.diameter}});
  }
  return {{"label", RecallSummary::kLabel},
          {"ar", r.summary.ar},
          {"ar_mssd", r.summary.ar_mssd},
          {"ar_mspd", r.summary.ar_mspd},
          {"recall_add_0.1d", r.summary.recall_add},
          {"recall_adi_0.1d", r.summary.recall_adi},
          {"instances", r.summary.instances},
          {"missing", r.summary.missing},
          {"per_instance", std::move(per)}};
}

// ---------------------------------------------------------------------------
// Ablation

SweepKnob parse_sweep(const std::string &name) {
  if (name == "templates") return SweepKnob::Templates;
  if (name == "correspondences") return SweepKnob::Correspondences;
  throw Error(ErrorCode::ConfigError, "sweep must be 'templates' or 'correspondences', got '" + name + "'");
}

std::vector<SweepRow> run_ablation(const DatasetContext &ctx, const PipelineConfig &cfg, SweepKnob knob,
                                   const std::vector<int> &values) {
  if (values.empty()) throw Error(ErrorCode::ConfigError, "ablation sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (int v : values) {
    PipelineConfig c = cfg;
    std::map<int, TemplateStore> subsampled;
    const std::map<int, TemplateStore> *stores = nullptr;
    if (knob == SweepKnob::Templates) {
      if (v < 1) throw Error(ErrorCode::ConfigError, "template count must be >= 1");
      for (const auto &[id, s] : ctx.stores) {
        if (v > static_cast<int>(s.templates.size())) {
          throw Error(ErrorCode::ConfigError, "object " + std::to_string(id) + " has only " +
                                                  std::to_string(s.templates.size()) + " templates, asked for " +
                                                  std::to_string(v));
        }
        subsampled.emplace(id, subsample_store(s, v));
      }
      c.template_count = v;
      stores = &subsampled;
    } else {
      c.correspondence_top_k = v;
    }
    const EstimateRun run = run_estimation(ctx, c, stores);
    const EvaluationResult eval = evaluate_results(ctx, run.results);
    rows.push_back({v, eval.summary, run.succeeded()});
  }
  return rows;
}

void write_ablation_csv(const std::vector<SweepRow> &rows, SweepKnob knob, const fs::path &path) {
  std::FILE *f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  std::fprintf(f, "%s,ar_mssd_mspd\n", knob == SweepKnob::Templates ? "templates" : "correspondences");
  for (const auto &r : rows) std::fprintf(f, "%d,%.6f\n", r.value, r.summary.ar);
  if (std::fclose(f) != 0) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic data

CameraIntrinsics synthetic_intrinsics() { return {600.0, 600.0, 320.0, 240.0, 640, 480}; }

TriMesh selftest_mesh() { return make_bumpy_ellipsoid({50.0, 35.0, 25.0}, 4, 0.12); }

Pose random_object_pose(std::uint64_t seed, const CameraIntrinsics &K) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> depth(500.0, 1000.0);
  std::uniform_real_distribution<double> shift(-100.0, 100.0);
  Eigen::Quaterniond q;
  do {
    q.coeffs() << normal(rng), normal(rng), normal(rng), normal(rng);
  } while (q.norm() < 1e-9);
  q.normalize();
  Pose p;
  p.rotation = q.toRotationMatrix();
  const double z = depth(rng);
  const double du = shift(rng);
  const double dv = shift(rng);
  p.translation = {du * z / K.fx, dv * z / K.fy, z};
  return p;
}

namespace {

std::map<int, TriMesh> synthetic_models() {
  std::map<int, TriMesh> m;
  m.emplace(1, selftest_mesh());
  m.emplace(2, make_l_block(80.0));
  return m;
}

}  // namespace

void make_synthetic_dataset(const fs::path &root, const SyntheticDatasetOptions &opts, const PipelineConfig &cfg) {
  if (opts.images < 1) throw Error(ErrorCode::ConfigError, "synthetic dataset needs at least one image");
  const fs::path models_dir = root / "models";
  const fs::path split = root / "test";
  std::error_code ec;
  fs::create_directories(models_dir, ec);
  if (!ec) fs::create_directories(scene_directory(split, 1) / "mask_visib", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create directories under " + root.string());

  const auto models = synthetic_models();
  std::map<int, ModelInfo> infos;
  for (const auto &[id, mesh] : models) {
    save_mesh(mesh, model_path(models_dir, id));
    infos[id] = ModelInfo{id, mesh.diameter, SymmetrySet{}};
  }
  write_models_info(infos, models_dir / "models_info.json");

  const CameraIntrinsics K = synthetic_intrinsics();
  write_json_file({{"width", K.width}, {"height", K.height}, {"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy},
                   {"depth_scale", 1.0}},
                  root / "camera.json");

  std::vector<SceneAnnotation> anns;
  std::uint64_t attempt = 0;
  for (int im = 0; im < opts.images; ++im) {
    const int obj = 1 + im % static_cast<int>(models.size());
    const TriMesh &mesh = models.at(obj);
    RenderOutput render;
    Pose pose;
    do {
      pose = random_object_pose(instance_seed(opts.seed, 1, im, static_cast<int>(attempt++)), K);
      render = rasterize_coordinate_map(mesh, pose, K);
    } while (render.foreground_count() < 400);

    SceneAnnotation ann;
    ann.scene_id = 1;
    ann.image_id = im;
    ann.K = K;
    GtInstance g;
    g.obj_id = obj;
    g.pose = pose;
    g.mask_path = scene_directory(split, 1) / "mask_visib" / (pad6(im) + "_000000.png");
    write_mask_png(render.mask, g.mask_path);
    if (opts.write_query_descriptors) {
      write_query_descriptors(oracle_query(mesh, pose, K, render.mask, cfg), split, 1, im, 0);
    }
    ann.gt.push_back(g);
    anns.push_back(std::move(ann));
  }
  write_bop_scene(split, 1, anns);
}

// ---------------------------------------------------------------------------
// Self-test

double median_of(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

SelftestReport run_selftest(const SelftestOptions &opts, const PipelineConfig &base) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineConfig cfg = base;
  cfg.template_count = opts.template_count;
  cfg.validate();

  const TriMesh mesh = selftest_mesh();
  const auto views = sample_viewpoints(opts.template_count, 2.5 * mesh.diameter);
  TemplateRenderSettings settings{cfg.crop_pad, cfg.out_size};
  TemplateStore store = build_templates(mesh, views, default_template_intrinsics(), settings, 1);
  const bool random = opts.descriptors == SelftestDescriptors::Random;
  if (random) {
    for (auto &t : store.templates) {
      if (t.empty_render) continue;
      DescriptorGrid g = random_descriptors(t.render, cfg.patch_size, cfg.stride, cfg.oracle_dim,
                                            instance_seed(opts.seed, 0, t.index, 1));
      if (g.valid_count() == 0) continue;
      t.global = pool_global(g);
      t.local = std::move(g);
    }
  } else {
    attach_oracle_descriptors(store, cfg);
  }

  SelftestReport rep;
  rep.diameter = mesh.diameter;
  rep.min_template_spacing_deg = min_angular_spacing(store) * 180.0 / std::numbers::pi;
  const CameraIntrinsics K = synthetic_intrinsics();
  const double inf = std::numeric_limits<double>::infinity();

  for (int q = 0; q < opts.query_count; ++q) {
    Pose gt;
    if (opts.queries_at_templates) {
      gt = views[static_cast<std::size_t>(q) * views.size() / static_cast<std::size_t>(opts.query_count)].pose;
    } else {
      gt = random_object_pose(instance_seed(opts.seed, 2, q, 0), K);
    }
    double rot = inf, trans = inf;
    const RenderOutput full = rasterize_coordinate_map(mesh, gt, K);
    try {
      QueryObservation query;
      if (random) {
        const auto box = mask_bbox(full.mask);
        if (!box) throw Error(ErrorCode::NoForeground, "query render is empty");
        query.crop = compute_crop(*box, cfg.crop_pad, cfg.out_size);
        query.local = random_descriptors(crop_render(full, query.crop, cfg.out_size), cfg.patch_size, cfg.stride,
                                         cfg.oracle_dim, instance_seed(opts.seed, 3, q, 0));
        query.global = pool_global(query.local);
      } else {
        query = oracle_query(mesh, gt, K, full.mask, cfg);
      }
      const InstanceOutcome res = estimate_instance(query, store, K, cfg, instance_seed(opts.seed, 1, q, 0));
      if (res.ok) {
        rot = rotation_angle_between(res.estimate.pose, gt) * 180.0 / std::numbers::pi;
        trans = (res.estimate.pose.translation - gt.translation).norm();
      }
    } catch (const Error &) {
    }
    if (!std::isfinite(rot)) ++rep.failures;
    rep.rotation_error_deg.push_back(rot);
    rep.translation_error_mm.push_back(trans);
  }
  rep.median_rotation_deg = median_of(rep.rotation_error_deg);
  rep.median_translation_mm = median_of(rep.translation_error_mm);
  rep.pass = opts.query_count >= 1 && rep.median_rotation_deg < 5.0 && rep.median_translation_mm < 0.05 * rep.diameter;
  rep.beats_granularity = rep.median_rotation_deg < 0.5 * rep.min_template_spacing_deg;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace zs6d
