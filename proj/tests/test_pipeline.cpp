#include <gtest/gtest.h>

#include <functional>
#include <set>

#include "synthetic_fixture.hpp"
#include "zs6d/error.hpp"

using namespace zs6d;
namespace fs = std::filesystem;

namespace {

ErrorCode error_of(const std::function<void()> &fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::IoError;
}

std::string csv_text(const std::vector<PoseResult> &rs, const fs::path &path) {
  write_results_csv(rs, path);
  const auto b = test::read_bytes(path);
  return {b.begin(), b.end()};
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  PipelineConfig c;
  c.template_count = 123;
  c.correspondence_top_k = 17;
  c.ransac.inlier_threshold_px = 2.5;
  c.ransac.max_iterations = 321;
  c.descriptor_backend = DescriptorBackend::Archive;
  c.seed = 99;
  c.store = "/tmp/store";
  c.dataset = "/data/lmo/test";
  c.results = "out.csv";
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.template_count, 123);
  EXPECT_EQ(back.descriptor_backend, DescriptorBackend::Archive);
  EXPECT_EQ(back.ransac.max_iterations, 321);
}

TEST(Config, Errors) {
  EXPECT_EQ(error_of([] { PipelineConfig::from_json(json{{"template_cont", 3}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(error_of([] { PipelineConfig::from_json(json{{"template_count", "many"}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(error_of([] { PipelineConfig::from_json(json{{"template_count", 0}}).validate(); }),
            ErrorCode::ConfigError);
  EXPECT_EQ(error_of([] { parse_backend("dino"); }), ErrorCode::ConfigError);
  EXPECT_EQ(parse_backend("oracle"), DescriptorBackend::Oracle);
  EXPECT_EQ(to_string(DescriptorBackend::Archive), "archive");
  test::TempDir d("cfg");
  test::write_text(d / "bad.json", "{not json");
  EXPECT_EQ(error_of([&] { load_config(d / "bad.json"); }), ErrorCode::ConfigError);
  EXPECT_EQ(error_of([&] { load_config(d / "none.json"); }), ErrorCode::MissingFile);
}

TEST(Config, ModelsDirDefault) {
  PipelineConfig c;
  c.dataset = "/data/lmo/test";
  EXPECT_EQ(c.models_dir(), fs::path("/data/lmo/models"));
  c.dataset = "/data/lmo/test/";
  EXPECT_EQ(c.models_dir(), fs::path("/data/lmo/models"));
  c.models = "/m";
  EXPECT_EQ(c.models_dir(), fs::path("/m"));
}

TEST(Seeds, PerInstanceSeedsDiffer) {
  std::set<std::uint64_t> seen;
  for (int s = 0; s < 3; ++s)
    for (int im = 0; im < 20; ++im)
      for (int i = 0; i < 3; ++i) seen.insert(instance_seed(7, s, im, i));
  EXPECT_EQ(seen.size(), 180u);
  EXPECT_EQ(instance_seed(7, 1, 2, 3), instance_seed(7, 1, 2, 3));
  EXPECT_NE(instance_seed(7, 1, 2, 3), instance_seed(8, 1, 2, 3));
}

TEST(SyntheticData, LayoutAndPoses) {
  test::SyntheticFixture fx(6, 3);
  const fs::path root = fx.dir.path();
  EXPECT_TRUE(fs::exists(root / "models" / "obj_000001.ply"));
  EXPECT_TRUE(fs::exists(root / "models" / "obj_000002.ply"));
  EXPECT_TRUE(fs::exists(root / "models" / "models_info.json"));
  EXPECT_TRUE(fs::exists(root / "camera.json"));
  ASSERT_EQ(fx.ctx.images.size(), 6u);
  std::set<int> objs;
  for (const auto &img : fx.ctx.images) {
    ASSERT_EQ(img.gt.size(), 1u);
    EXPECT_TRUE(fs::exists(img.gt[0].mask_path));
    EXPECT_EQ(img.K, synthetic_intrinsics());
    objs.insert(img.gt[0].obj_id);
  }
  EXPECT_EQ(objs, (std::set<int>{1, 2}));
  EXPECT_EQ(random_object_pose(5, synthetic_intrinsics()), random_object_pose(5, synthetic_intrinsics()));
}

TEST(Estimation, SyntheticFiftyImages) {
  test::SyntheticFixture fx(50);
  fx.build_stores(300);
  const EstimateRun run = run_estimation(fx.ctx, fx.cfg);
  EXPECT_GE(run.succeeded(), 45u);
  ASSERT_EQ(run.diagnostics.size(), 50u);
  for (const auto &d : run.diagnostics) {
    if (d.stage == "ok") {
      EXPECT_GE(d.num_inliers, 4);
      EXPECT_LE(d.num_correspondences, fx.cfg.correspondence_top_k);
    }
  }
  for (const auto &r : run.results) {
    EXPECT_GT(r.score, 0.0);
    EXPECT_LE(r.score, 1.0);
    EXPECT_EQ(r.time, -1.0);
  }
  const EvaluationResult eval = evaluate_results(fx.ctx, run.results);
  EXPECT_EQ(eval.reports.size(), 50u);
  EXPECT_GT(eval.summary.ar, 0.8);
  const json j = evaluation_to_json(eval);
  EXPECT_EQ(j.at("label"), RecallSummary::kLabel);

  // Same inputs, same bytes.
  const EstimateRun again = run_estimation(fx.ctx, fx.cfg);
  EXPECT_EQ(csv_text(run.results, fx.dir / "a.csv"), csv_text(again.results, fx.dir / "b.csv"));
}

TEST(Estimation, MissingInputsAreDiagnosed) {
  test::SyntheticFixture fx(4);
  fx.build_stores(20);
  fs::remove(fx.ctx.images[0].gt[0].mask_path);
  fx.ctx.stores.erase(fx.ctx.images[1].gt[0].obj_id == 1 ? 1 : 2);
  const EstimateRun run = run_estimation(fx.ctx, fx.cfg);
  ASSERT_EQ(run.diagnostics.size(), 4u);
  std::map<int, std::string> stage;
  for (const auto &d : run.diagnostics) stage[d.im_id] = d.stage;
  const int im0 = fx.ctx.images[0].image_id;
  const int im1 = fx.ctx.images[1].image_id;
  EXPECT_TRUE(stage[im0] == "segmentation-missing" || stage[im0] == "templates-missing") << stage[im0];
  EXPECT_EQ(stage[im1], "templates-missing");
  for (const auto &r : run.results) EXPECT_NE(r.im_id, im1);
}

TEST(Estimation, DetectionsFile) {
  test::SyntheticFixture fx(2);
  fx.build_stores(50);
  json dets = json::array();
  for (const auto &img : fx.ctx.images) {
    dets.push_back({{"scene_id", img.scene_id},
                    {"im_id", img.image_id},
                    {"obj_id", img.gt[0].obj_id},
                    {"mask_png_path", img.gt[0].mask_path.string()}});
  }
  write_json_file(dets, fx.dir / "dets.json");
  fx.cfg.masks = fx.dir / "dets.json";
  const EstimateRun run = run_estimation(fx.ctx, fx.cfg);
  EXPECT_EQ(run.diagnostics.size(), 2u);
  EXPECT_EQ(run.succeeded(), 2u);
}

TEST(Estimation, ArchiveBackendOnDisk) {
  test::SyntheticFixture fx(10, 0, 40, true);
  const fs::path store_root = fx.dir / "store";
  for (const auto &[id, mesh] : fx.ctx.meshes) {
    TemplateStore s = build_template_store(mesh, sample_viewpoints(40, 2.5 * mesh.diameter),
                                           default_template_intrinsics(), store_root, id);
    attach_oracle_descriptors(s, fx.cfg);
    write_template_descriptors(s);
  }
  EXPECT_TRUE(fs::exists(query_descriptor_path(fx.cfg.dataset, 1, fx.ctx.images[0].image_id, 0, false)));
  PipelineConfig cfg = fx.cfg;
  cfg.store = store_root;
  cfg.descriptor_backend = DescriptorBackend::Archive;
  cfg.results = fx.dir / "results.csv";
  const EstimateRun run = cmd_estimate(cfg);
  EXPECT_GE(run.succeeded(), 9u);
  EXPECT_TRUE(fs::exists(fx.dir / "results.diagnostics.json"));
  const auto back = read_results_csv(cfg.results);
  EXPECT_EQ(back.size(), run.succeeded());

  // Oracle backend over the same stores gives the same poses.
  cfg.descriptor_backend = DescriptorBackend::Oracle;
  cfg.results = fx.dir / "oracle.csv";
  const EstimateRun oracle = cmd_estimate(cfg);
  ASSERT_EQ(oracle.results.size(), run.results.size());
  for (std::size_t i = 0; i < run.results.size(); ++i) {
    EXPECT_LT(rotation_angle_between(oracle.results[i].pose, run.results[i].pose), 1e-3);
  }

  fs::remove(query_descriptor_path(cfg.dataset, 1, fx.ctx.images[0].image_id, 0, true));
  cfg.descriptor_backend = DescriptorBackend::Archive;
  cfg.results = fx.dir / "partial.csv";
  const EstimateRun partial = cmd_estimate(cfg);
  EXPECT_EQ(partial.succeeded(), run.succeeded() - 1);
  EXPECT_EQ(partial.diagnostics[0].stage, "descriptors");
}

TEST(Ablation, SweepBasics) {
  test::SyntheticFixture fx(6);
  fx.build_stores(60);
  EXPECT_EQ(error_of([] { parse_sweep("layers"); }), ErrorCode::ConfigError);
  EXPECT_EQ(parse_sweep("correspondences"), SweepKnob::Correspondences);
  EXPECT_EQ(error_of([&] { run_ablation(fx.ctx, fx.cfg, SweepKnob::Templates, {}); }), ErrorCode::ConfigError);
  EXPECT_EQ(error_of([&] { run_ablation(fx.ctx, fx.cfg, SweepKnob::Templates, {61}); }), ErrorCode::ConfigError);
  const auto rows = run_ablation(fx.ctx, fx.cfg, SweepKnob::Templates, {60});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].value, 60);
  EXPECT_EQ(rows[0].summary.instances, 6u);
  write_ablation_csv(rows, SweepKnob::Templates, fx.dir / "abl.csv");
  const auto b = test::read_bytes(fx.dir / "abl.csv");
  const std::string text(b.begin(), b.end());
  EXPECT_EQ(text.substr(0, text.find('\n')), "templates,ar_mssd_mspd");
}

TEST(Selftest, PassesWithOracleDescriptors) {
  const SelftestReport r = run_selftest({});
  EXPECT_EQ(r.rotation_error_deg.size(), 40u);
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.median_rotation_deg, 5.0);
  EXPECT_LT(r.median_translation_mm, 0.05 * r.diameter);
  EXPECT_TRUE(r.beats_granularity);
}

TEST(Selftest, QueriesAtTemplatesAreNearExact) {
  SelftestOptions o;
  o.queries_at_templates = true;
  o.query_count = 20;
  const SelftestReport r = run_selftest(o);
  EXPECT_LT(r.median_rotation_deg, 0.5);
  EXPECT_EQ(r.failures, 0);
}

TEST(Selftest, RandomDescriptorsFail) {
  SelftestOptions o;
  o.descriptors = SelftestDescriptors::Random;
  o.query_count = 20;
  const SelftestReport r = run_selftest(o);
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.median_rotation_deg, 20.0);
}

TEST(Selftest, MedianHelper) {
  EXPECT_DOUBLE_EQ(median_of({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median_of({4, 1, 2, 3}), 2.5);
}
