#include "zs6d/matching.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <numeric>

#include "zs6d/error.hpp"

namespace zs6d {

std::vector<TemplateMatch> match_template(const GlobalDescriptor &query,
                                          std::span<const GlobalDescriptor> templates) {
  if (templates.empty()) throw Error(ErrorCode::ConfigError, "no templates to match against");
  std::vector<TemplateMatch> ranking;
  ranking.reserve(templates.size());
  for (std::size_t t = 0; t < templates.size(); ++t) {
    if (templates[t].dim() != query.dim()) {
      throw Error(ErrorCode::DimMismatch, "template " + std::to_string(t) + " has dim " +
                                              std::to_string(templates[t].dim()) + ", query has " +
                                              std::to_string(query.dim()));
    }
    double dot = 0.0;
    for (std::size_t k = 0; k < query.vec.size(); ++k) dot += query.vec[k] * templates[t].vec[k];
    ranking.push_back({static_cast<int>(t), dot});
  }
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const TemplateMatch &a, const TemplateMatch &b) { return a.score > b.score; });
  return ranking;
}

namespace {

Eigen::MatrixXd valid_rows(const DescriptorGrid &g, std::vector<int> &indices) {
  indices.clear();
  for (int p = 0; p < g.patch_count(); ++p)
    if (g.is_valid(p)) indices.push_back(p);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(indices.size()), g.dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto row = g.row(indices[r]);
    for (int k = 0; k < g.dim; ++k) m(static_cast<Eigen::Index>(r), k) = row[static_cast<std::size_t>(k)];
  }
  return m;
}

}  // namespace

std::vector<PatchMatch> mutual_nearest_neighbors(const DescriptorGrid &query, const DescriptorGrid &templ) {
  if (query.dim != templ.dim) {
    throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(query.dim) + " vs template dim " +
                                            std::to_string(templ.dim));
  }
  std::vector<int> qi, ti;
  const Eigen::MatrixXd q = valid_rows(query, qi);
  const Eigen::MatrixXd t = valid_rows(templ, ti);
  if (qi.empty() || ti.empty()) throw Error(ErrorCode::NoForeground, "descriptor grid without valid patches");

  const Eigen::MatrixXd sim = q * t.transpose();
  // Valid indices are ascending, so the first maximum is the lowest patch index.
  std::vector<Eigen::Index> best_t(qi.size(), 0), best_q(ti.size(), 0);
  for (Eigen::Index r = 0; r < sim.rows(); ++r) {
    for (Eigen::Index c = 0; c < sim.cols(); ++c) {
      if (sim(r, c) > sim(r, best_t[static_cast<std::size_t>(r)])) best_t[static_cast<std::size_t>(r)] = c;
      if (sim(r, c) > sim(best_q[static_cast<std::size_t>(c)], c)) best_q[static_cast<std::size_t>(c)] = r;
    }
  }

  std::vector<PatchMatch> out;
  for (Eigen::Index r = 0; r < sim.rows(); ++r) {
    const Eigen::Index c = best_t[static_cast<std::size_t>(r)];
    if (best_q[static_cast<std::size_t>(c)] == r) {
      out.push_back({qi[static_cast<std::size_t>(r)], ti[static_cast<std::size_t>(c)], sim(r, c)});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const PatchMatch &a, const PatchMatch &b) { return a.similarity > b.similarity; });
  return out;
}

namespace {

/// Foreground pixel at `center`, else the nearest foreground pixel in its
/// 3×3 neighborhood (4-neighbors before diagonals, scan order within a ring).
std::optional<std::pair<int, int>> foreground_near(const Mask &mask, int cx, int cy) {
  static constexpr int kOffsets[9][2] = {{0, 0},  {0, -1}, {-1, 0}, {1, 0}, {0, 1},
                                         {-1, -1}, {1, -1}, {-1, 1}, {1, 1}};
  for (const auto &o : kOffsets) {
    const int x = cx + o[0];
    const int y = cy + o[1];
    if (mask.contains(x, y) && mask(x, y)) return std::make_pair(x, y);
  }
  return std::nullopt;
}

}  // namespace

CorrespondenceSet lift_correspondences(std::span<const PatchMatch> matches, const DescriptorGrid &query_grid,
                                       const DescriptorGrid &template_grid, const TemplateRecord &templ,
                                       const CropTransform &query_crop, int top_k) {
  CorrespondenceSet out;
  out.source_template = templ.index;
  for (const auto &m : matches) {
    if (static_cast<int>(out.pairs.size()) >= top_k) break;
    const Vec2 tc = template_grid.patch_center(m.template_patch);
    const auto hit = foreground_near(templ.render.mask, static_cast<int>(tc.x()), static_cast<int>(tc.y()));
    if (!hit) continue;
    const NocsValue &c = templ.render.coord_map(hit->first, hit->second);
    if (is_background(c)) continue;
    Correspondence corr;
    corr.query_px = query_crop.to_original(query_grid.patch_center(m.query_patch));
    corr.object_pt = nocs_decode(c, templ.bbox_min, templ.bbox_max);
    corr.patch_sim = std::clamp(m.similarity, -1.0, 1.0);
    corr.query_patch = m.query_patch;
    corr.template_patch = m.template_patch;
    out.pairs.push_back(corr);
  }
  if (out.pairs.empty()) {
    throw Error(ErrorCode::EmptyAfterFiltering, "no patch match lands on the template foreground");
  }
  return out;
}

}  // namespace zs6d
