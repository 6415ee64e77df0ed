#pragma once

#include "zs6d/image.hpp"
#include "zs6d/mesh.hpp"

namespace zs6d {

/// Coordinate-map value used for pixels not covered by the object.
inline constexpr NocsValue kBackgroundNocs{-1.0, -1.0, -1.0};

inline bool is_background(const NocsValue &c) { return c.r < 0.0; }

/// Result of rasterizing a mesh: per-pixel object coordinates, camera depth
/// (mm, 0 on background) and coverage mask (255 on foreground).
struct RenderOutput {
  Image<NocsValue> coord_map;
  Image<float> depth;
  Mask mask;

  int width() const { return mask.width(); }
  int height() const { return mask.height(); }
  std::size_t foreground_count() const;
  bool empty() const { return foreground_count() == 0; }
};

}  // namespace zs6d
