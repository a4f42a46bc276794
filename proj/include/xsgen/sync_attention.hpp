#pragma once

#include <array>

#include "xsgen/geometry.hpp"
#include "xsgen/nn.hpp"

namespace xsg {

enum class Modality { color = 0, normal = 1 };

// Dense voxel features, one d_u vector per grid cell (flat index order).
struct VoxelFeatureSet {
  ag::VarPtr features;  // [N^3, d_u]
  GridSpec grid;

  void validate() const {
    XSG_CHECK_SHAPE(features && features->val.ndim() == 2 &&
                        features->val.dim(0) == grid.voxel_count(),
                    "VoxelFeatureSet: features must be [N^3, d_u]");
  }
  int64_t feature_dim() const { return features->val.dim(1); }
};

// Per-view, per-modality feature maps stored row-major as [V^2, d_p].
struct ViewFeatureMaps {
  int v_px = 0;
  std::array<ag::VarPtr, 8> maps;  // index = view*2 + modality

  ag::VarPtr& map(ViewId view, Modality m) {
    return maps[static_cast<size_t>(view) * 2 + static_cast<size_t>(m)];
  }
  const ag::VarPtr& map(ViewId view, Modality m) const {
    return maps[static_cast<size_t>(view) * 2 + static_cast<size_t>(m)];
  }
  void validate() const {
    for (const auto& m : maps) {
      XSG_CHECK_SHAPE(m && m->val.ndim() == 2 &&
                          m->val.dim(0) == static_cast<int64_t>(v_px) * v_px,
                      "ViewFeatureMaps: each map must be [V^2, d_p]");
    }
  }
  int64_t feature_dim() const { return maps[0]->val.dim(1); }
};

// One direction of synchronization attention: single-layer q/k/v transforms,
// multi-head cross attention with scale 1/sqrt(per-head dim), and a two-layer
// output gate whose final layer starts at exactly zero, so a fresh block is
// the identity under the residual add.
struct SyncBlockParams {
  int64_t query_dim = 0, kv_dim = 0;
  int heads = 1;
  nn::Linear wq, wk, wv;     // query_dim->width, kv_dim->width, kv_dim->width
  nn::Linear gate1, gate2;   // width->width (silu), width->query_dim (zero init)

  int64_t width() const { return query_dim; }
  int64_t head_dim() const { return query_dim / heads; }
  void collect(nn::ParamMap& pm, const std::string& prefix) const {
    wq.collect(pm, prefix + ".wq");
    wk.collect(pm, prefix + ".wk");
    wv.collect(pm, prefix + ".wv");
    gate1.collect(pm, prefix + ".gate1");
    gate2.collect(pm, prefix + ".gate2");
  }
};

// d_q is the querying stream's width (also the attention width), d_kv the
// other stream's width. h must divide d_q.
SyncBlockParams init_sync_block(int64_t d_q, int64_t d_kv, int h, uint64_t seed);
SyncBlockParams init_sync_block(int64_t d_q, int64_t d_kv, int h, Rng& rng);

// Each voxel queries the four projected normal-map features (keys/values are
// the views concatenated along the sequence dimension, in proj.views order).
VoxelFeatureSet attend_2d_to_3d(const VoxelFeatureSet& vox, const ViewFeatureMaps& maps,
                                const SyncBlockParams& params, const ProjectionMap& proj);

// Each pixel of every view and modality queries its H=N voxel ray column.
ViewFeatureMaps attend_3d_to_2d(const ViewFeatureMaps& maps, const VoxelFeatureSet& vox,
                                const SyncBlockParams& params, const ProjectionMap& proj);

}  // namespace xsg
