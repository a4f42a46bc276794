#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xsgen/common.hpp"

namespace xsg {

// World frame: unit cube [0,1)^3. Voxel (x,y,z) in {0..N-1}^3 has its center
// at ((x,y,z)+0.5)/N. Grid tensors are stored [z][y][x]; flat index below.
struct GridSpec {
  int n = 0;
  GridSpec() = default;
  explicit GridSpec(int n_) : n(n_) {
    XSG_CHECK_DOMAIN(n >= 2, "GridSpec: N must be >= 2");
  }
  int64_t voxel_count() const { return static_cast<int64_t>(n) * n * n; }
  int64_t flat_index(int x, int y, int z) const {
    return (static_cast<int64_t>(z) * n + y) * n + x;
  }
};

using VoxelCoord = std::array<int, 3>;  // (x, y, z)
using PixelCoord = std::array<int, 2>;  // (u, v), origin top-left

// Signed grid axis: base in {0:x, 1:y, 2:z}, optionally flipped.
struct SignedAxis {
  int base = 0;
  bool neg = false;
};

enum class ViewId { front = 0, back = 1, left = 2, right = 3 };
const char* view_name(ViewId id);

// Image origin top-left, u rightward, v downward. The depth axis points away
// from the camera, so traversal along it goes near to far.
struct ViewSpec {
  ViewId id = ViewId::front;
  SignedAxis u_axis, v_axis, depth_axis;
  int v_px = 0;  // image side length V

  void validate(const GridSpec& grid) const;
};

// The four canonical orthogonal views:
//   front: u=+x, v=-y, depth=-z   back:  u=-x, v=-y, depth=+z
//   left:  u=-z, v=-y, depth=+x   right: u=+z, v=-y, depth=-x
std::vector<ViewSpec> canonical_views(int v_px);
ViewSpec canonical_view(ViewId id, int v_px);

PixelCoord project_voxel(const VoxelCoord& c, const ViewSpec& view, const GridSpec& grid);
std::vector<VoxelCoord> ray_column(const PixelCoord& p, const ViewSpec& view,
                                   const GridSpec& grid);

struct ViewTables {
  ViewSpec view;
  std::vector<PixelCoord> voxel_to_pixel;           // [N^3], by flat voxel index
  std::vector<std::vector<int32_t>> pixel_to_column;  // [V^2], near-to-far flat voxels
};

struct ProjectionMap {
  GridSpec grid;
  std::vector<ViewTables> views;
  const ViewTables& table(ViewId id) const;
};

// Requires V >= N and V an integer multiple of N for every view.
ProjectionMap build_projection_tables(const GridSpec& grid,
                                      const std::vector<ViewSpec>& views);

// Continuous helpers shared by the renderers. World point in [0,1]^3 maps to
// view coordinates (u,v,depth) in [0,1]^3 with depth increasing away from the
// camera; pixel centers sit at ((u_pix+0.5)/V, (v_pix+0.5)/V).
double axis_coord(const double p[3], const SignedAxis& ax);
void world_to_view(const double p[3], const ViewSpec& view, double* u, double* v,
                   double* depth);

}  // namespace xsg
