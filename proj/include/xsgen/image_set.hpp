#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "xsgen/geometry.hpp"
#include "xsgen/tensor.hpp"

namespace xsg {

// Binary occupancy over a grid (flat index order, see GridSpec).
struct VoxelGrid {
  GridSpec grid;
  std::vector<uint8_t> occ;

  VoxelGrid() = default;
  explicit VoxelGrid(const GridSpec& g)
      : grid(g), occ(static_cast<size_t>(g.voxel_count()), 0) {}
  bool at(int x, int y, int z) const {
    return occ[static_cast<size_t>(grid.flat_index(x, y, z))] != 0;
  }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t v : occ) n += v ? 1 : 0;
    return n;
  }
  bool empty() const { return count() == 0; }
};

// Four canonical views x {color, normal}, each stored channel-first [3,V,V]
// with values in [0,1]. The front color map doubles as the condition image.
struct MultiviewImageSet {
  int v_px = 0;
  std::array<Tensor, 8> maps;  // index = view*2 + modality (0=color, 1=normal)

  Tensor& map(ViewId view, int modality) {
    return maps[static_cast<size_t>(view) * 2 + static_cast<size_t>(modality)];
  }
  const Tensor& map(ViewId view, int modality) const {
    return maps[static_cast<size_t>(view) * 2 + static_cast<size_t>(modality)];
  }
};

// Snaps a [0,1] value onto the 16-bit storage grid used by image files, so a
// rendered image round-trips the dataset bit-exactly.
inline double quant16(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return std::round(c * 65535.0) / 65535.0;
}

}  // namespace xsg
