#include "xsgen/reference_render.hpp"

namespace xsg {

MultiviewImageSet render_reference_views(const ShapeSample& shape,
                                         const std::vector<ViewSpec>& views, int v_px,
                                         ReferenceViews* extra) {
  XSG_CHECK(v_px % shape.grid.n == 0, "render_reference_views: V must be a multiple of N");
  const GridSpec& grid = shape.grid;

  MultiviewImageSet out;
  out.v_px = v_px;
  for (auto& m : out.maps) m = Tensor({3, v_px, v_px});
  if (extra) {
    extra->v_px = v_px;
    for (auto& m : extra->masks) m = Tensor({v_px, v_px});
    for (auto& d : extra->depths) d = Tensor({v_px, v_px}, 1.0);
  }

  for (const auto& view : views) {
    ViewSpec v = view;
    v.v_px = v_px;
    Tensor& color = out.map(v.id, 0);
    Tensor& normal = out.map(v.id, 1);
    for (int py = 0; py < v_px; ++py)
      for (int px = 0; px < v_px; ++px) {
        const auto col = ray_column({px, py}, v, grid);
        int hit = -1;
        for (size_t k = 0; k < col.size(); ++k) {
          if (shape.occupied(col[k][0], col[k][1], col[k][2])) {
            hit = static_cast<int>(k);
            break;
          }
        }
        const int64_t pi = static_cast<int64_t>(py) * v_px + px;
        if (hit < 0) continue;  // background stays black / depth 1
        const auto& c = col[static_cast<size_t>(hit)];
        const int64_t fi = grid.flat_index(c[0], c[1], c[2]);
        for (int ch = 0; ch < 3; ++ch) {
          color[(static_cast<int64_t>(ch) * v_px + py) * v_px + px] =
              shape.colors[fi * 3 + ch];
          normal[(static_cast<int64_t>(ch) * v_px + py) * v_px + px] =
              quant16((shape.normals[fi * 3 + ch] + 1.0) * 0.5);
        }
        if (extra) {
          const auto vid = static_cast<size_t>(v.id);
          extra->masks[vid][pi] = 1.0;
          extra->depths[vid][pi] = static_cast<double>(hit) / grid.n;
        }
      }
  }
  return out;
}

}  // namespace xsg
