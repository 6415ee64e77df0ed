#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "zs6d/error.hpp"
#include "zs6d/pipeline.hpp"

namespace fs = std::filesystem;
using namespace zs6d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string backend;
  std::string store;
  std::string dataset;
  std::string masks;
  std::string out;
  CLI::Option *seed_opt = nullptr;
  CLI::Option *backend_opt = nullptr;
  CLI::Option *store_opt = nullptr;
  CLI::Option *dataset_opt = nullptr;
  CLI::Option *masks_opt = nullptr;
  CLI::Option *out_opt = nullptr;

  void attach(CLI::App *cmd) {
    cmd->add_option("--config", config, "JSON config file");
    seed_opt = cmd->add_option("--seed", seed, "RNG seed");
    backend_opt = cmd->add_option("--backend", backend, "descriptor backend: archive|oracle");
    store_opt = cmd->add_option("--store", store, "template store root");
    dataset_opt = cmd->add_option("--dataset", dataset, "BOP split directory with <scene>/ folders");
    masks_opt = cmd->add_option("--masks", masks, "detections JSON (defaults to mask_visib)");
    out_opt = cmd->add_option("--out", out, "output path");
  }

  /// Config file first, then any flag given on the command line.
  PipelineConfig resolve(bool out_is_results = true) const {
    PipelineConfig cfg = config.empty() ? PipelineConfig{} : load_config(config);
    if (seed_opt->count()) cfg.seed = seed;
    if (backend_opt->count()) cfg.descriptor_backend = parse_backend(backend);
    if (store_opt->count()) cfg.store = store;
    if (dataset_opt->count()) cfg.dataset = dataset;
    if (masks_opt->count()) cfg.masks = masks;
    if (out_is_results && out_opt->count()) cfg.results = out;
    cfg.validate();
    return cfg;
  }
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
      return kExitConfig;
    case ErrorCode::IoError:
    case ErrorCode::MissingFile:
    case ErrorCode::ParseError:
    case ErrorCode::SchemaError:
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::UnsupportedFormat:
      return kExitIo;
    default:
      return kExitFailure;
  }
}

std::vector<std::pair<int, fs::path>> list_models(const fs::path &dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingFile, "models directory not found: " + dir.string());
  std::vector<std::pair<int, fs::path>> out;
  for (const auto &e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("obj_", 0) != 0 || e.path().extension() != ".ply") continue;
    const std::string digits = name.substr(4, name.size() - 8);
    int id = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
    if (ec == std::errc{} && ptr == digits.data() + digits.size()) out.emplace_back(id, e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void print_summary(const RecallSummary &s) {
  std::printf("%s = %.4f  (MSSD %.4f, MSPD %.4f; ADD@0.1d %.4f, ADI@0.1d %.4f; %zu instances, %zu missing)\n",
              RecallSummary::kLabel, s.ar, s.ar_mssd, s.ar_mspd, s.recall_add, s.recall_adi, s.instances,
              s.missing);
}

std::vector<int> parse_int_list(const std::string &text) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
      throw Error(ErrorCode::ConfigError, "bad integer '" + item + "' in list '" + text + "'");
    }
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Zero-shot 6D object pose estimation from template matching and patch correspondences"};
  app.require_subcommand(1);

  CommonFlags render_flags, estimate_flags, eval_flags, ablate_flags, selftest_flags, synth_flags;

  auto *render = app.add_subcommand("render-templates", "render and store object templates");
  render_flags.attach(render);
  std::string models_dir;
  std::vector<int> render_objs;
  int render_count = 0;
  bool render_descriptors = false;
  render->add_option("--models", models_dir, "directory with obj_<id>.ply (default <dataset>/../models)");
  render->add_option("--obj", render_objs, "restrict to these object ids");
  render->add_option("--templates", render_count, "template count (default from config)");
  render->add_flag("--write-oracle-descriptors", render_descriptors,
                   "also write oracle descriptors in archive layout");

  auto *estimate = app.add_subcommand("estimate", "estimate one pose per instance mask");
  estimate_flags.attach(estimate);

  auto *evaluate = app.add_subcommand("evaluate", "score a results CSV against ground truth");
  eval_flags.attach(evaluate);
  std::string results_path;
  evaluate->add_option("--results", results_path, "results CSV (default: config results); --out names the summary JSON");

  auto *ablate = app.add_subcommand("ablate", "sweep the template or correspondence count");
  ablate_flags.attach(ablate);
  std::string sweep = "templates";
  std::string values = "10,50,100,200,300";
  ablate->add_option("--sweep", sweep, "templates|correspondences");
  ablate->add_option("--values", values, "comma separated values");

  auto *selftest = app.add_subcommand("selftest", "synthetic end-to-end check without model or dataset");
  selftest_flags.attach(selftest);
  int st_queries = 40;
  int st_templates = 300;
  bool st_random = false;
  bool st_at_templates = false;
  selftest->add_option("--queries", st_queries, "held-out query views");
  selftest->add_option("--templates", st_templates, "template count");
  selftest->add_flag("--random-descriptors", st_random, "negative control: random descriptors");
  selftest->add_flag("--at-templates", st_at_templates, "place queries exactly at template poses");

  auto *synth = app.add_subcommand("make-synthetic", "write a procedural BOP-layout dataset");
  synth_flags.attach(synth);
  int synth_images = 50;
  bool synth_descriptors = false;
  synth->add_option("--images", synth_images, "number of images");
  synth->add_flag("--write-descriptors", synth_descriptors, "also write oracle query descriptors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (render->parsed()) {
      PipelineConfig cfg = render_flags.resolve();
      if (render_count > 0) cfg.template_count = render_count;
      if (cfg.store.empty()) throw Error(ErrorCode::ConfigError, "--store is required");
      const fs::path dir = models_dir.empty() ? cfg.models_dir() : fs::path(models_dir);
      TemplateRenderSettings settings{cfg.crop_pad, cfg.out_size};
      for (const auto &[id, path] : list_models(dir)) {
        if (!render_objs.empty() && std::find(render_objs.begin(), render_objs.end(), id) == render_objs.end()) continue;
        const TriMesh mesh = load_mesh(path);
        const auto views = sample_viewpoints(cfg.template_count, 2.5 * mesh.diameter);
        TemplateStore store =
            build_template_store(mesh, views, default_template_intrinsics(), cfg.store, id, settings);
        if (render_descriptors) {
          attach_oracle_descriptors(store, cfg);
          write_template_descriptors(store);
        }
        std::printf("obj %d: %zu templates -> %s (digest %s)\n", id, store.templates.size(),
                    store.directory.string().c_str(), store.digest.c_str());
      }
      return kExitOk;
    }

    if (estimate->parsed()) {
      const PipelineConfig cfg = estimate_flags.resolve();
      const EstimateRun run = cmd_estimate(cfg);
      std::printf("%zu of %zu instances estimated -> %s\n", run.succeeded(), run.diagnostics.size(),
                  cfg.results.string().c_str());
      return kExitOk;
    }

    if (evaluate->parsed()) {
      PipelineConfig cfg = eval_flags.resolve(false);
      const fs::path in = results_path.empty() ? cfg.results : fs::path(results_path);
      if (in.empty()) throw Error(ErrorCode::ConfigError, "--results is required");
      cfg.store.clear();  // evaluation reads ground truth and models only
      const DatasetContext ctx = load_dataset_context(cfg);
      const auto results = read_results_csv(in);
      const EvaluationResult eval = evaluate_results(ctx, results);
      print_summary(eval.summary);
      if (eval_flags.out_opt->count()) write_json_file(evaluation_to_json(eval), eval_flags.out);
      return kExitOk;
    }

    if (ablate->parsed()) {
      const PipelineConfig cfg = ablate_flags.resolve();
      if (cfg.results.empty()) throw Error(ErrorCode::ConfigError, "--out is required");
      const SweepKnob knob = parse_sweep(sweep);
      const DatasetContext ctx = load_dataset_context(cfg);
      const auto rows = run_ablation(ctx, cfg, knob, parse_int_list(values));
      write_ablation_csv(rows, knob, cfg.results);
      for (const auto &r : rows) std::printf("%s=%d  %s=%.4f  (%zu estimates)\n", sweep.c_str(), r.value,
                                             RecallSummary::kLabel, r.summary.ar, r.succeeded);
      return kExitOk;
    }

    if (selftest->parsed()) {
      const PipelineConfig cfg = selftest_flags.resolve();
      SelftestOptions opts;
      opts.seed = cfg.seed;
      opts.query_count = st_queries;
      opts.template_count = st_templates;
      opts.descriptors = st_random ? SelftestDescriptors::Random : SelftestDescriptors::Oracle;
      opts.queries_at_templates = st_at_templates;
      const SelftestReport rep = run_selftest(opts, cfg);
      std::printf("queries: %d, failures: %d, diameter: %.2f mm\n", opts.query_count, rep.failures, rep.diameter);
      std::printf("median rotation error:    %.3f deg (limit 5)\n", rep.median_rotation_deg);
      std::printf("median translation error: %.3f mm (limit %.3f)\n", rep.median_translation_mm,
                  0.05 * rep.diameter);
      std::printf("min template spacing:     %.3f deg (median below half: %s)\n", rep.min_template_spacing_deg,
                  rep.beats_granularity ? "yes" : "no");
      std::printf("runtime: %.2f s\n%s\n", rep.seconds, rep.pass ? "PASS" : "FAIL");
      return rep.pass ? kExitOk : kExitFailure;
    }

    if (synth->parsed()) {
      const PipelineConfig cfg = synth_flags.resolve();
      if (cfg.results.empty()) throw Error(ErrorCode::ConfigError, "--out is required");
      SyntheticDatasetOptions opts;
      opts.images = synth_images;
      opts.seed = cfg.seed;
      opts.write_query_descriptors = synth_descriptors;
      make_synthetic_dataset(cfg.results, opts, cfg);
      std::printf("wrote %d images under %s\n", synth_images, (cfg.results / "test").string().c_str());
      return kExitOk;
    }
  } catch (const Error &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitOk;
}
