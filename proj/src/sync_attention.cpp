#include "xsgen/sync_attention.hpp"

namespace xsg {

namespace ag_ = xsg::ag;

SyncBlockParams init_sync_block(int64_t d_q, int64_t d_kv, int h, Rng& rng) {
  XSG_CHECK(d_q > 0 && d_kv > 0 && h > 0, "init_sync_block: dims must be positive");
  XSG_CHECK(d_q % h == 0, "init_sync_block: head count must divide attention width");
  SyncBlockParams p;
  p.query_dim = d_q;
  p.kv_dim = d_kv;
  p.heads = h;
  p.wq = nn::Linear(d_q, d_q, rng);
  p.wk = nn::Linear(d_kv, d_q, rng);
  p.wv = nn::Linear(d_kv, d_q, rng);
  p.gate1 = nn::Linear(d_q, d_q, rng);
  p.gate2 = nn::Linear(d_q, d_q, rng, /*zero_init=*/true);
  return p;
}

SyncBlockParams init_sync_block(int64_t d_q, int64_t d_kv, int h, uint64_t seed) {
  Rng rng(seed);
  return init_sync_block(d_q, d_kv, h, rng);
}

namespace {

// Multi-head cross attention over B independent token groups:
// q [B,1,dq] against kv [B,S,width-projected], followed by the zero gate.
ag_::VarPtr attend_and_gate(const SyncBlockParams& p, const ag_::VarPtr& queries,
                            const ag_::VarPtr& keys, const ag_::VarPtr& values) {
  const int64_t B = queries->val.dim(0);
  const int64_t S = keys->val.dim(1);
  const int64_t dh = p.head_dim();
  const int h = p.heads;

  auto split = [&](const ag_::VarPtr& t, int64_t T) {
    auto r = ag_::reshape(t, {B, T, h, dh});
    r = ag_::permute_0213(r);
    return ag_::reshape(r, {B * h, T, dh});
  };
  auto q = split(queries, 1);
  auto k = split(keys, S);
  auto v = split(values, S);
  auto att = ag_::softmax_lastdim(
      ag_::mul_scalar(ag_::bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh))));
  auto ctx = ag_::bmm(att, v);                       // [B*h, 1, dh]
  ctx = ag_::reshape(ctx, {B, h, 1, dh});
  ctx = ag_::permute_0213(ctx);                      // [B, 1, h, dh]
  ctx = ag_::reshape(ctx, {B, p.width()});
  return p.gate2(ag_::silu(p.gate1(ctx)));
}

std::vector<int64_t> voxel_pixel_indices(const ViewTables& t) {
  std::vector<int64_t> idx(t.voxel_to_pixel.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& px = t.voxel_to_pixel[i];
    idx[i] = static_cast<int64_t>(px[1]) * t.view.v_px + px[0];
  }
  return idx;
}

}  // namespace

VoxelFeatureSet attend_2d_to_3d(const VoxelFeatureSet& vox, const ViewFeatureMaps& maps,
                                const SyncBlockParams& params, const ProjectionMap& proj) {
  vox.validate();
  maps.validate();
  XSG_CHECK_SHAPE(vox.grid.n == proj.grid.n, "attend_2d_to_3d: grid mismatch");
  XSG_CHECK_SHAPE(maps.v_px == proj.views.at(0).view.v_px,
                  "attend_2d_to_3d: map resolution does not match projection tables");
  XSG_CHECK_SHAPE(vox.feature_dim() == params.query_dim &&
                      maps.feature_dim() == params.kv_dim,
                  "attend_2d_to_3d: feature dims do not match block params");

  const int64_t L = vox.grid.voxel_count();
  // keys/values: the four projected normal-map features, one slot per view,
  // concatenated along the sequence dimension in proj.views order.
  std::vector<ag_::VarPtr> slots;
  slots.reserve(proj.views.size());
  for (const auto& t : proj.views) {
    auto idx = voxel_pixel_indices(t);
    slots.push_back(ag_::gather_rows(maps.map(t.view.id, Modality::normal), idx));
  }
  auto kv = ag_::stack_axis1(slots);  // [L, n_views, d_p]
  const int64_t S = kv->val.dim(1);

  auto q = params.wq(ag_::reshape(vox.features, {L, 1, params.query_dim}));
  auto k = params.wk(kv);
  auto v = params.wv(kv);
  auto delta = attend_and_gate(params, q, k, v);
  (void)S;

  VoxelFeatureSet out;
  out.grid = vox.grid;
  out.features = ag_::add(vox.features, delta);
  return out;
}

ViewFeatureMaps attend_3d_to_2d(const ViewFeatureMaps& maps, const VoxelFeatureSet& vox,
                                const SyncBlockParams& params, const ProjectionMap& proj) {
  vox.validate();
  maps.validate();
  XSG_CHECK_SHAPE(vox.grid.n == proj.grid.n, "attend_3d_to_2d: grid mismatch");
  XSG_CHECK_SHAPE(maps.v_px == proj.views.at(0).view.v_px,
                  "attend_3d_to_2d: map resolution does not match projection tables");
  XSG_CHECK_SHAPE(maps.feature_dim() == params.query_dim &&
                      vox.feature_dim() == params.kv_dim,
                  "attend_3d_to_2d: feature dims do not match block params");

  const int64_t P = static_cast<int64_t>(maps.v_px) * maps.v_px;
  const int64_t H = vox.grid.n;

  ViewFeatureMaps out;
  out.v_px = maps.v_px;
  for (const auto& t : proj.views) {
    // Ray columns are shared by both modalities of a view.
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(P * H));
    for (const auto& col : t.pixel_to_column)
      for (int32_t vi : col) idx.push_back(vi);
    auto cols = ag_::gather_rows(vox.features, idx);         // [P*H, d_u]
    cols = ag_::reshape(cols, {P, H, params.kv_dim});
    auto k = params.wk(cols);
    auto v = params.wv(cols);
    for (Modality m : {Modality::color, Modality::normal}) {
      const auto& pix = maps.map(t.view.id, m);
      auto q = params.wq(ag_::reshape(pix, {P, 1, params.query_dim}));
      auto delta = attend_and_gate(params, q, k, v);
      out.map(t.view.id, m) = ag_::add(pix, delta);
    }
  }
  return out;
}

}  // namespace xsg
