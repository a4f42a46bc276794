#pragma once

#include "xsgen/shapes.hpp"

namespace xsg {

// Per-view maps that accompany the color/normal images when supervising the
// decoders. Mask is first-hit coverage, depth is the near face of the first
// occupied voxel in [0,1] view units (background = 1).
struct ReferenceViews {
  int v_px = 0;
  std::array<Tensor, 4> masks;   // [V,V]
  std::array<Tensor, 4> depths;  // [V,V]
};

// Orthographic ray march through the occupancy: the first-hit voxel of a
// pixel is the first occupied entry of its ray column. Colors come from the
// voxel colors, normals are world-space encoded as (n+1)/2; both snapped to
// the 16-bit grid so dataset image files round-trip exactly. Background black.
MultiviewImageSet render_reference_views(const ShapeSample& shape,
                                         const std::vector<ViewSpec>& views, int v_px,
                                         ReferenceViews* extra = nullptr);

}  // namespace xsg
