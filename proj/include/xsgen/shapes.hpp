#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "xsgen/image_set.hpp"
#include "xsgen/rng.hpp"

namespace xsg {

// Analytic solid primitive of the procedural stick figures.
struct Primitive {
  enum class Kind { sphere, box, capsule } kind = Kind::sphere;
  std::array<double, 3> a{}, b{};   // center / endpoints
  std::array<double, 3> extent{};  // box half extents
  double radius = 0.0;
  std::array<double, 3> color{};

  double sdf(const double p[3]) const;
};

struct ShapeSample {
  GridSpec grid;
  uint64_t seed = 0;
  int complexity = 1;
  std::vector<Primitive> primitives;
  std::vector<uint8_t> occupancy;  // [N^3]
  Tensor colors;                   // [N^3, 3], 16-bit-grid values
  Tensor normals;                  // [N^3, 3], unit vectors on surface voxels
  std::vector<uint8_t> surface;    // [N^3], 1 where a surface voxel

  bool occupied(int x, int y, int z) const {
    return occupancy[static_cast<size_t>(grid.flat_index(x, y, z))] != 0;
  }
  VoxelGrid voxel_grid() const {
    VoxelGrid g(grid);
    g.occ = occupancy;
    return g;
  }
  // Union signed distance at a world point.
  double sdf(const double p[3]) const;
};

// Union of complexity+2 primitives arranged as a stick figure (trunk, head,
// limbs at seeded joint angles). Deterministic per (seed, complexity, N);
// retries internally with perturbed parameters if the voxelization comes out
// empty or disconnected, and throws after 10 attempts.
ShapeSample generate_shape(uint64_t seed, int complexity, const GridSpec& grid);

// Voxelizes an explicit primitive union (occupancy, per-voxel colors from the
// nearest primitive, SDF-gradient normals on surface voxels). Returns false if
// the result is empty or not 6-connected.
bool voxelize_primitives(const std::vector<Primitive>& prims, const GridSpec& grid,
                         ShapeSample* out);

// 6-connectivity of the occupied set (flood fill).
bool is_six_connected(const std::vector<uint8_t>& occ, const GridSpec& grid);

}  // namespace xsg
