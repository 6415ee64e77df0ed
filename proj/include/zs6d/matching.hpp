#pragma once

#include <span>
#include <vector>

#include "zs6d/descriptors.hpp"
#include "zs6d/geometry.hpp"
#include "zs6d/render.hpp"

namespace zs6d {

struct TemplateMatch {
  int template_index = 0;
  double score = 0.0;  ///< cosine similarity
};

/// Ranks every template by cosine similarity to `query`, best first; equal
/// scores keep ascending template order. Throws DimMismatch, or ConfigError
/// for an empty template list.
std::vector<TemplateMatch> match_template(const GlobalDescriptor &query,
                                          std::span<const GlobalDescriptor> templates);

/// A mutual nearest-neighbor pair between a query patch and a template patch
/// (linear patch indices into the respective grids).
struct PatchMatch {
  int query_patch = 0;
  int template_patch = 0;
  double similarity = 0.0;

  friend bool operator==(const PatchMatch &, const PatchMatch &) = default;
};

/// Pairs (q, t) of valid patches where t is q's nearest neighbor among the
/// template patches and q is t's nearest neighbor among the query patches,
/// by cosine similarity. Nearest-neighbor ties resolve to the lowest linear
/// index. Sorted by descending similarity, then ascending query patch.
/// Throws DimMismatch or NoForeground.
std::vector<PatchMatch> mutual_nearest_neighbors(const DescriptorGrid &query,
                                                 const DescriptorGrid &templ);

struct Correspondence {
  Vec2 query_px;    ///< pixel in the original query image
  Vec3 object_pt;   ///< object frame, mm
  double patch_sim = 0.0;
  int query_patch = 0;
  int template_patch = 0;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  int source_template = -1;

  std::size_t size() const { return pairs.size(); }
};

/// Default number of correspondences handed to PnP.
inline constexpr int kDefaultTopK = 20;

/// Lifts patch matches to 2D–3D pairs. Walks `matches` in order and keeps the
/// first `top_k` whose template patch center (or, failing that, the nearest
/// foreground pixel in its 3×3 neighborhood) is foreground in the template
/// coordinate map. Query patch centers are mapped to original image pixels
/// through `query_crop`. Throws EmptyAfterFiltering when nothing survives.
CorrespondenceSet lift_correspondences(std::span<const PatchMatch> matches, const DescriptorGrid &query_grid,
                                       const DescriptorGrid &template_grid, const TemplateRecord &templ,
                                       const CropTransform &query_crop, int top_k = kDefaultTopK);

}  // namespace zs6d
