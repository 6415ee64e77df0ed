#pragma once

// Procedural BOP dataset on disk plus in-memory template stores with oracle
// descriptors, shared by the pipeline tests and the acceptance binary.

#include <map>

#include "test_util.hpp"
#include "zs6d/pipeline.hpp"

namespace zs6d::test {

struct SyntheticFixture {
  TempDir dir;
  PipelineConfig cfg;
  DatasetContext ctx;

  explicit SyntheticFixture(int images, std::uint64_t seed = 0, int templates = 300, bool query_descriptors = false)
      : dir("synthetic") {
    cfg.seed = seed;
    cfg.template_count = templates;
    SyntheticDatasetOptions opts;
    opts.images = images;
    opts.seed = seed;
    opts.write_query_descriptors = query_descriptors;
    make_synthetic_dataset(dir.path(), opts, cfg);
    cfg.dataset = dir.path() / "test";
    ctx = load_dataset_context(cfg);
  }

  /// Renders `templates` views per object in memory and attaches oracle descriptors.
  void build_stores(int templates) {
    ctx.stores.clear();
    for (const auto &[id, mesh] : ctx.meshes) {
      TemplateStore s = build_templates(mesh, sample_viewpoints(templates, 2.5 * mesh.diameter),
                                        default_template_intrinsics(), {cfg.crop_pad, cfg.out_size}, id);
      attach_oracle_descriptors(s, cfg);
      ctx.stores.emplace(id, std::move(s));
    }
  }
};

}  // namespace zs6d::test
