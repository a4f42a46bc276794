#include "xsgen/geometry.hpp"

namespace xsg {

const char* view_name(ViewId id) {
  switch (id) {
    case ViewId::front: return "front";
    case ViewId::back: return "back";
    case ViewId::left: return "left";
    case ViewId::right: return "right";
  }
  return "?";
}

void ViewSpec::validate(const GridSpec& grid) const {
  XSG_CHECK(v_px >= grid.n, "ViewSpec: V must be >= N");
  const int a = u_axis.base, b = v_axis.base, c = depth_axis.base;
  XSG_CHECK_DOMAIN(a >= 0 && a < 3 && b >= 0 && b < 3 && c >= 0 && c < 3,
                   "ViewSpec: axis out of range");
  XSG_CHECK_DOMAIN(a != b && b != c && a != c, "ViewSpec: axes must be distinct");
}

std::vector<ViewSpec> canonical_views(int v_px) {
  std::vector<ViewSpec> vs(4);
  vs[0] = {ViewId::front, {0, false}, {1, true}, {2, true}, v_px};
  vs[1] = {ViewId::back, {0, true}, {1, true}, {2, false}, v_px};
  vs[2] = {ViewId::left, {2, true}, {1, true}, {0, false}, v_px};
  vs[3] = {ViewId::right, {2, false}, {1, true}, {0, true}, v_px};
  return vs;
}

ViewSpec canonical_view(ViewId id, int v_px) {
  return canonical_views(v_px)[static_cast<size_t>(id)];
}

namespace {

inline int effective_coord(const VoxelCoord& c, const SignedAxis& ax, int n) {
  const int v = c[static_cast<size_t>(ax.base)];
  return ax.neg ? n - 1 - v : v;
}

inline void check_voxel(const VoxelCoord& c, const GridSpec& grid) {
  for (int i = 0; i < 3; ++i)
    XSG_CHECK_DOMAIN(c[static_cast<size_t>(i)] >= 0 && c[static_cast<size_t>(i)] < grid.n,
                     "voxel coordinate out of range");
}

}  // namespace

PixelCoord project_voxel(const VoxelCoord& c, const ViewSpec& view, const GridSpec& grid) {
  check_voxel(c, grid);
  view.validate(grid);
  const int64_t n = grid.n, v_px = view.v_px;
  // floor((e + 0.5) * V / N) in integer arithmetic
  const int64_t eu = effective_coord(c, view.u_axis, grid.n);
  const int64_t ev = effective_coord(c, view.v_axis, grid.n);
  const int u = static_cast<int>(((2 * eu + 1) * v_px) / (2 * n));
  const int v = static_cast<int>(((2 * ev + 1) * v_px) / (2 * n));
  return {u, v};
}

std::vector<VoxelCoord> ray_column(const PixelCoord& p, const ViewSpec& view,
                                   const GridSpec& grid) {
  view.validate(grid);
  XSG_CHECK_DOMAIN(p[0] >= 0 && p[0] < view.v_px && p[1] >= 0 && p[1] < view.v_px,
                   "pixel coordinate out of range");
  const int64_t n = grid.n, v_px = view.v_px;
  // lateral voxel cell containing the pixel center
  const int eu = static_cast<int>(((2 * static_cast<int64_t>(p[0]) + 1) * n) / (2 * v_px));
  const int ev = static_cast<int>(((2 * static_cast<int64_t>(p[1]) + 1) * n) / (2 * v_px));
  const int cu = view.u_axis.neg ? grid.n - 1 - eu : eu;
  const int cv = view.v_axis.neg ? grid.n - 1 - ev : ev;

  std::vector<VoxelCoord> out;
  out.reserve(static_cast<size_t>(grid.n));
  for (int k = 0; k < grid.n; ++k) {
    const int cd = view.depth_axis.neg ? grid.n - 1 - k : k;
    VoxelCoord c{};
    c[static_cast<size_t>(view.u_axis.base)] = cu;
    c[static_cast<size_t>(view.v_axis.base)] = cv;
    c[static_cast<size_t>(view.depth_axis.base)] = cd;
    out.push_back(c);
  }
  return out;
}

const ViewTables& ProjectionMap::table(ViewId id) const {
  for (const auto& t : views)
    if (t.view.id == id) return t;
  throw ConfigError("ProjectionMap: view not present");
}

ProjectionMap build_projection_tables(const GridSpec& grid,
                                      const std::vector<ViewSpec>& views) {
  ProjectionMap map;
  map.grid = grid;
  for (const auto& view : views) {
    view.validate(grid);
    XSG_CHECK(view.v_px >= grid.n,
              "build_projection_tables: V < N breaks column containment");
    XSG_CHECK(view.v_px % grid.n == 0,
              "build_projection_tables: V must be an integer multiple of N");
    ViewTables t;
    t.view = view;
    t.voxel_to_pixel.resize(static_cast<size_t>(grid.voxel_count()));
    for (int z = 0; z < grid.n; ++z)
      for (int y = 0; y < grid.n; ++y)
        for (int x = 0; x < grid.n; ++x) {
          const VoxelCoord c{x, y, z};
          t.voxel_to_pixel[static_cast<size_t>(grid.flat_index(x, y, z))] =
              project_voxel(c, view, grid);
        }
    t.pixel_to_column.resize(static_cast<size_t>(view.v_px) * view.v_px);
    for (int v = 0; v < view.v_px; ++v)
      for (int u = 0; u < view.v_px; ++u) {
        auto col = ray_column({u, v}, view, grid);
        auto& dst = t.pixel_to_column[static_cast<size_t>(v) * view.v_px + u];
        dst.reserve(col.size());
        for (const auto& c : col)
          dst.push_back(static_cast<int32_t>(grid.flat_index(c[0], c[1], c[2])));
      }
    map.views.push_back(std::move(t));
  }
  return map;
}

double axis_coord(const double p[3], const SignedAxis& ax) {
  const double v = p[ax.base];
  return ax.neg ? 1.0 - v : v;
}

void world_to_view(const double p[3], const ViewSpec& view, double* u, double* v,
                   double* depth) {
  *u = axis_coord(p, view.u_axis);
  *v = axis_coord(p, view.v_axis);
  *depth = axis_coord(p, view.depth_axis);
}

}  // namespace xsg
