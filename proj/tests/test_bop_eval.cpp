#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <tuple>
#include <numbers>

#include "oracles.hpp"
#include "test_util.hpp"
#include "zs6d/bop_eval.hpp"
#include "zs6d/error.hpp"
#include "zs6d/json_io.hpp"

using namespace zs6d;

namespace {

ErrorCode error_of(const std::function<void()> &fn, std::string *msg = nullptr) {
  try {
    fn();
  } catch (const Error &e) {
    if (msg) *msg = e.what();
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::ConfigError;
}

oracle::RigidT to_oracle(const Pose &p) {
  oracle::RigidT T;
  for (int r = 0; r < 3; ++r) {
    T.t[r] = p.translation(r);
    for (int c = 0; c < 3; ++c) T.R[r][c] = p.rotation(r, c);
  }
  return T;
}

Pose rot_z(double deg) {
  Pose p;
  p.rotation = axis_angle(Vec3::UnitZ(), deg * std::numbers::pi / 180.0);
  return p;
}

void write_minimal_scene(const std::filesystem::path &root, const std::string &r_json) {
  const auto dir = root / "000001";
  std::filesystem::create_directories(dir);
  test::write_text(dir / "scene_camera.json",
                   R"({"0": {"cam_K": [500, 0, 320, 0, 500, 240, 0, 0, 1], "depth_scale": 1.0}})");
  test::write_text(dir / "scene_gt.json",
                   R"({"0": [{"obj_id": 5, "cam_R_m2c": )" + r_json + R"(, "cam_t_m2c": [0, 0, 1000]}]})");
}

double near_rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Scene, MinimalHandWritten) {
  test::TempDir d("scene");
  write_minimal_scene(d.path(), "[1, 0, 0, 0, 1, 0, 0, 0, 1]");
  const auto scene = load_bop_scene(d.path(), 1);
  ASSERT_EQ(scene.size(), 1u);
  const CameraIntrinsics &K = scene[0].K;
  EXPECT_EQ(K.fx, 500);
  EXPECT_EQ(K.fy, 500);
  EXPECT_EQ(K.cx, 320);
  EXPECT_EQ(K.cy, 240);
  EXPECT_EQ(K.width, 640);
  EXPECT_EQ(K.height, 480);
  ASSERT_EQ(scene[0].gt.size(), 1u);
  EXPECT_EQ(scene[0].gt[0].obj_id, 5);
  EXPECT_EQ(scene[0].gt[0].pose.translation, Vec3(0, 0, 1000));
  EXPECT_EQ(scene[0].gt[0].mask_path, d.path() / "000001" / "mask_visib" / "000000_000000.png");
  EXPECT_EQ(list_scenes(d.path()), std::vector<int>{1});
}

TEST(Scene, NonOrthonormalRotation) {
  test::TempDir d("scene");
  write_minimal_scene(d.path(), "[1, 0, 0, 0, 1.01, 0, 0, 0, 1]");
  std::string msg;
  EXPECT_EQ(error_of([&] { load_bop_scene(d.path(), 1); }, &msg), ErrorCode::SchemaError);
  EXPECT_NE(msg.find("cam_R_m2c"), std::string::npos) << msg;
}

TEST(Scene, MissingKeyAndFile) {
  test::TempDir d("scene");
  EXPECT_EQ(error_of([&] { load_bop_scene(d.path(), 1); }), ErrorCode::MissingFile);
  write_minimal_scene(d.path(), "[1, 0, 0, 0, 1, 0, 0, 0, 1]");
  test::write_text(d.path() / "000001" / "scene_camera.json", R"({"0": {"depth_scale": 1.0}})");
  std::string msg;
  EXPECT_EQ(error_of([&] { load_bop_scene(d.path(), 1); }, &msg), ErrorCode::SchemaError);
  EXPECT_NE(msg.find("cam_K"), std::string::npos) << msg;
}

TEST(Scene, RoundTrip) {
  test::TempDir d("scene");
  std::mt19937_64 rng(3);
  std::vector<SceneAnnotation> images;
  for (int im = 0; im < 4; ++im) {
    SceneAnnotation a;
    a.scene_id = 2;
    a.image_id = im * 3;
    a.K = {572.4114, 573.57043, 325.2611, 242.04899, 640, 480};
    for (int g = 0; g <= im % 2; ++g) {
      GtInstance inst;
      inst.obj_id = 1 + g;
      inst.pose = test::random_pose(rng);
      inst.mask_path = scene_directory(d.path(), 2) / "mask_visib" /
                       ([&] {
                         char buf[32];
                         std::snprintf(buf, sizeof buf, "%06d_%06d.png", a.image_id, g);
                         return std::string(buf);
                       })();
      a.gt.push_back(inst);
    }
    images.push_back(a);
  }
  write_bop_scene(d.path(), 2, images);
  EXPECT_EQ(load_bop_scene(d.path(), 2), images);
}

TEST(Metrics, Thresholds) {
  const auto t = mssd_thresholds(200.0);
  EXPECT_DOUBLE_EQ(t[0], 10.0);
  EXPECT_DOUBLE_EQ(t[9], 100.0);
  const auto p = mspd_thresholds(1280);
  EXPECT_DOUBLE_EQ(p[0], 10.0);
  EXPECT_DOUBLE_EQ(p[9], 100.0);
  EXPECT_DOUBLE_EQ(mspd_thresholds(640)[3], 20.0);
}

TEST(Metrics, IdenticalPoseIsZero) {
  const TriMesh mesh = make_box({60, 40, 20});
  std::mt19937_64 rng(1);
  const Pose gt = test::random_pose(rng);
  ErrorReport r = pose_error_metrics(gt, gt, mesh, {}, test::test_camera());
  EXPECT_EQ(r.mssd, 0.0);
  EXPECT_EQ(r.mspd, 0.0);
  EXPECT_EQ(r.add, 0.0);
  EXPECT_EQ(r.adi, 0.0);
  EXPECT_TRUE(r.has_estimate);
  const std::vector<ErrorReport> rs{r};
  EXPECT_DOUBLE_EQ(average_recall(rs).ar, 1.0);
}

TEST(Metrics, FiveMillimetreShift) {
  const TriMesh mesh = make_bumpy_ellipsoid({50, 35, 25}, 2, 0.1);
  std::mt19937_64 rng(2);
  const Pose gt = test::random_pose(rng);
  Pose est = gt;
  est.translation.x() += 5.0;
  const ErrorReport r = pose_error_metrics(est, gt, mesh, {}, test::test_camera());
  EXPECT_NEAR(r.mssd, 5.0, 1e-9);
  EXPECT_NEAR(r.add, 5.0, 1e-9);
  EXPECT_GT(r.mspd, 0.0);
}

TEST(Metrics, HalfTurnSymmetry) {
  const TriMesh mesh = make_box({80, 40, 20});
  SymmetrySet sym;
  sym.add_discrete(rot_z(180));
  std::mt19937_64 rng(3);
  const Pose gt = test::random_pose(rng);
  const Pose est = gt.compose(rot_z(180));
  const ErrorReport r = pose_error_metrics(est, gt, mesh, sym, test::test_camera());
  EXPECT_NEAR(r.mssd, 0.0, 1e-9);
  EXPECT_NEAR(r.mspd, 0.0, 1e-6);
  EXPECT_GT(r.add, 10.0);
  EXPECT_NEAR(r.adi, 0.0, 1e-9);
}

TEST(Metrics, AddZeroIffAgree) {
  const TriMesh mesh = make_box({80, 40, 20});
  std::mt19937_64 rng(4);
  const Pose gt = test::random_pose(rng);
  Pose est = gt;
  est.translation.z() += 1e-6;
  EXPECT_GT(pose_error_metrics(est, gt, mesh, {}, test::test_camera()).add, 0.0);
  EXPECT_LT(pose_error_metrics(gt, gt, mesh, {}, test::test_camera()).add, 1e-9);
}

TEST(Metrics, BehindCameraMspdInfinite) {
  const TriMesh mesh = make_box({80, 40, 20});
  Pose gt;
  gt.translation = {0, 0, 500};
  Pose est;
  est.translation = {0, 0, -500};
  const ErrorReport r = pose_error_metrics(est, gt, mesh, {}, test::test_camera());
  EXPECT_TRUE(std::isinf(r.mspd));
  EXPECT_NEAR(r.mssd, 1000.0, 1e-9);
}

TEST(Metrics, MatchesBruteForceOracle) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  std::uniform_int_distribution<int> pick(0, 3);
  const TriMesh meshes[] = {make_bumpy_ellipsoid({50, 35, 25}, 2, 0.12), make_l_block(60), make_box({30, 60, 90})};
  const CameraIntrinsics K = test::test_camera();
  for (int trial = 0; trial < 60; ++trial) {
    const TriMesh &mesh = meshes[trial % 3];
    ASSERT_LE(mesh.vertices.size(), 500u);
    const Pose gt = test::random_pose(rng);
    Pose est = gt;
    est.rotation = axis_angle(Vec3(n(rng), n(rng), n(rng)).normalized(), 0.3 * n(rng)) * est.rotation;
    est.translation += 15.0 * Vec3(n(rng), n(rng), n(rng));

    SymmetrySet sym;
    std::vector<oracle::RigidT> disc;
    std::vector<oracle::ContinuousAxis> cont;
    const int nd = pick(rng);
    for (int k = 0; k < nd; ++k) {
      Pose s;
      s.rotation = test::random_rotation(rng);
      s.translation = 5.0 * Vec3(n(rng), n(rng), n(rng));
      sym.add_discrete(s);
      disc.push_back(to_oracle(s));
    }
    if (trial % 4 == 0) {
      ContinuousSymmetry c;
      c.axis = Vec3(n(rng), n(rng), n(rng)).normalized();
      c.offset = 3.0 * Vec3(n(rng), n(rng), n(rng));
      c.steps = 16;
      sym.add_continuous(c);
      cont.push_back({{c.axis.x(), c.axis.y(), c.axis.z()}, {c.offset.x(), c.offset.y(), c.offset.z()}, 16});
    }
    std::vector<oracle::V3> verts;
    for (const auto &v : mesh.vertices) verts.push_back({v.x(), v.y(), v.z()});
    const auto ref = oracle::pose_errors(to_oracle(est), to_oracle(gt), verts, oracle::symmetry_transforms(disc, cont),
                                         K.fx, K.fy, K.cx, K.cy);
    const ErrorReport r = pose_error_metrics(est, gt, mesh, sym, K);
    EXPECT_LT(near_rel(r.mssd, ref.mssd), 1e-9) << trial;
    EXPECT_LT(near_rel(r.mspd, ref.mspd), 1e-9) << trial;
    EXPECT_LT(near_rel(r.add, ref.add), 1e-9) << trial;
    EXPECT_LT(near_rel(r.adi, ref.adi), 1e-9) << trial;
  }
}

TEST(Metrics, InvariantUnderSymmetryGroup) {
  const TriMesh mesh = make_box({40, 40, 90});
  SymmetrySet sym;
  for (double a : {90.0, 180.0, 270.0}) sym.add_discrete(rot_z(a));
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const Pose gt = test::random_pose(rng);
    Pose est = gt;
    est.rotation = axis_angle(Vec3(1, -1, 2).normalized(), 0.1 * (t + 1)) * est.rotation;
    const ErrorReport a = pose_error_metrics(est, gt, mesh, sym, test::test_camera());
    for (const Pose &S : sym.discrete()) {
      const ErrorReport b = pose_error_metrics(est.compose(S), gt, mesh, sym, test::test_camera());
      EXPECT_NEAR(a.mssd, b.mssd, 1e-9);
      EXPECT_NEAR(a.mspd, b.mspd, 1e-9);
    }
  }
}

TEST(SymmetrySetTest, IdentityFirstAndValidation) {
  SymmetrySet s;
  s.add_discrete(Pose::identity());
  EXPECT_EQ(s.discrete().size(), 1u);
  s.add_discrete(rot_z(180));
  EXPECT_EQ(s.discrete().size(), 2u);
  EXPECT_EQ(s.discrete()[0], Pose::identity());
  Pose bad;
  bad.rotation(0, 0) = 2.0;
  EXPECT_EQ(error_of([&] { s.add_discrete(bad); }), ErrorCode::SchemaError);
  ContinuousSymmetry c;
  c.steps = 8;
  s.add_continuous(c);
  EXPECT_EQ(s.expand().size(), 16u);
}

TEST(ModelsInfo, RoundTrip) {
  test::TempDir d("info");
  std::map<int, ModelInfo> infos;
  infos[1] = {1, 102.5, {}};
  infos[4] = {4, 55.0, {}};
  Pose s = rot_z(180);
  s.translation = {0, 0, 2.5};
  infos[4].symmetries.add_discrete(s);
  infos[4].symmetries.add_continuous({Vec3::UnitY(), Vec3(1, 0, 0), 64});
  write_models_info(infos, d / "models_info.json");
  const auto back = load_models_info(d / "models_info.json");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_DOUBLE_EQ(back.at(1).diameter, 102.5);
  ASSERT_EQ(back.at(4).symmetries.discrete().size(), 2u);
  EXPECT_LT((back.at(4).symmetries.discrete()[1].rotation - s.rotation).norm(), 1e-12);
  EXPECT_EQ(back.at(4).symmetries.discrete()[1].translation, s.translation);
  ASSERT_EQ(back.at(4).symmetries.continuous().size(), 1u);
  EXPECT_EQ(back.at(4).symmetries.continuous()[0].axis, Vec3::UnitY());
}

TEST(Recall, HandEnumeratedThresholds) {
  ErrorReport r;
  r.has_estimate = true;
  r.diameter = 100.0;
  r.mssd = 26.0;
  r.mspd = 1000.0;
  r.add = r.adi = 26.0;
  r.apply_thresholds();
  const std::vector<ErrorReport> rs{r};
  const RecallSummary s = average_recall(rs);
  EXPECT_DOUBLE_EQ(s.ar_mssd, 0.5);
  EXPECT_DOUBLE_EQ(s.ar_mspd, 0.0);
  EXPECT_DOUBLE_EQ(s.ar, 0.25);
  EXPECT_STREQ(RecallSummary::kLabel, "AR(MSSD,MSPD)");
}

TEST(Recall, StrictThresholdAndMonotonePasses) {
  ErrorReport r;
  r.has_estimate = true;
  r.diameter = 100.0;
  r.mssd = 5.0;  // equal to the tightest threshold: fails it
  r.mspd = 4.999;
  r.apply_thresholds();
  EXPECT_FALSE(r.mssd_pass[0]);
  EXPECT_TRUE(r.mssd_pass[1]);
  EXPECT_TRUE(r.mspd_pass[0]);
  for (int k = 1; k < kRecallThresholdCount; ++k) {
    EXPECT_LE(r.mssd_pass[static_cast<std::size_t>(k - 1)], r.mssd_pass[static_cast<std::size_t>(k)]);
  }
}

TEST(Recall, MissingEstimateFailsEverything) {
  ErrorReport good;
  good.has_estimate = true;
  good.diameter = 100.0;
  good.apply_thresholds();
  const std::vector<ErrorReport> rs{good, ErrorReport::missing(100.0, 640)};
  const RecallSummary s = average_recall(rs);
  EXPECT_DOUBLE_EQ(s.ar, 0.5);
  EXPECT_EQ(s.missing, 1u);
  EXPECT_DOUBLE_EQ(s.recall_add, 0.5);
  EXPECT_EQ(error_of([] { average_recall(std::vector<ErrorReport>{}); }), ErrorCode::EmptyReportSet);
}

TEST(Recall, MonotoneInError) {
  const TriMesh mesh = make_bumpy_ellipsoid({50, 35, 25}, 2, 0.1);
  std::mt19937_64 rng(7);
  std::vector<Pose> gts;
  for (int i = 0; i < 10; ++i) gts.push_back(test::random_pose(rng));
  double prev = 2.0;
  for (double shift : {0.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0}) {
    std::vector<ErrorReport> rs;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      Pose est = gts[i];
      est.translation += shift * Vec3(1.0, 0.5 * static_cast<double>(i % 3), 0.2);
      rs.push_back(pose_error_metrics(est, gts[i], mesh, {}, test::test_camera()));
    }
    const double ar = average_recall(rs).ar;
    EXPECT_LE(ar, prev) << shift;
    prev = ar;
  }
  EXPECT_LT(prev, 0.2);
}

TEST(Recall, MetricVertexSubsampling) {
  const TriMesh big = make_bumpy_ellipsoid({50, 35, 25}, 6, 0.1);
  ASSERT_GT(big.vertices.size(), kMetricVertexLimit);
  const auto v = metric_vertices(big);
  EXPECT_LE(v.size(), kMetricVertexLimit);
  const std::size_t stride = (big.vertices.size() + kMetricVertexLimit - 1) / kMetricVertexLimit;
  EXPECT_EQ(v[1], big.vertices[stride]);
  const TriMesh small = make_box({1, 1, 1});
  EXPECT_EQ(metric_vertices(small), small.vertices);
}

TEST(ResultsCsv, ExactLine) {
  test::TempDir d("csv");
  PoseResult r;
  r.scene_id = 1;
  r.im_id = 1;
  r.obj_id = 5;
  r.score = 1.0;
  r.pose.translation = {0, 0, 1000};
  r.time = 0.2;
  write_results_csv(std::vector<PoseResult>{r}, d / "r.csv");
  std::ifstream f(d / "r.csv");
  std::string header, line;
  std::getline(f, header);
  std::getline(f, line);
  EXPECT_EQ(header, "scene_id,im_id,obj_id,score,R,t,time");
  EXPECT_EQ(line, "1,1,5,1.0,1 0 0 0 1 0 0 0 1,0 0 1000,0.2");
}

TEST(ResultsCsv, RoundTripAndOrdering) {
  test::TempDir d("csv");
  std::mt19937_64 rng(8);
  std::vector<PoseResult> rs;
  for (int i = 0; i < 30; ++i) {
    PoseResult r;
    r.scene_id = 3 - i % 3;
    r.im_id = (i * 7) % 5;
    r.obj_id = 1 + i % 2;
    r.score = 1.0 / (i + 1);
    r.pose = test::random_pose(rng);
    r.time = i % 2 ? -1.0 : 0.001 * i;
    rs.push_back(r);
  }
  write_results_csv(rs, d / "r.csv");
  const auto back = read_results_csv(d / "r.csv");
  ASSERT_EQ(back.size(), rs.size());
  auto sorted = rs;
  std::stable_sort(sorted.begin(), sorted.end(), [](const PoseResult &a, const PoseResult &b) {
    return std::tie(a.scene_id, a.im_id, a.obj_id) < std::tie(b.scene_id, b.im_id, b.obj_id);
  });
  EXPECT_EQ(back, sorted);
}

TEST(ResultsCsv, EmptyAndErrors) {
  test::TempDir d("csv");
  write_results_csv(std::vector<PoseResult>{}, d / "e.csv");
  const auto bytes = test::read_bytes(d / "e.csv");
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "scene_id,im_id,obj_id,score,R,t,time\n");
  EXPECT_TRUE(read_results_csv(d / "e.csv").empty());

  PoseResult bad;
  bad.pose.rotation(1, 1) = 3.0;
  EXPECT_EQ(error_of([&] { write_results_csv(std::vector<PoseResult>{bad}, d / "b.csv"); }), ErrorCode::SchemaError);
  test::write_text(d / "h.csv", "scene,im\n");
  EXPECT_EQ(error_of([&] { read_results_csv(d / "h.csv"); }), ErrorCode::ParseError);
  test::write_text(d / "f.csv", "scene_id,im_id,obj_id,score,R,t,time\n1,1,5,1.0,1 0 0,0 0 1000,0.2\n");
  EXPECT_EQ(error_of([&] { read_results_csv(d / "f.csv"); }), ErrorCode::ParseError);
}
