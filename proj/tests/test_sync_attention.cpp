#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "test_utils.hpp"
#include "xsgen/sync_attention.hpp"

using namespace xsg;
using ag::VarPtr;

namespace {

// Brute-force single-stream attention oracle: plain loops over heads and
// key/value slots, reading the block's weight values directly. Independent of
// the batched autograd path in the library.
std::vector<double> oracle_linear(const nn::Linear& lin, const std::vector<double>& x) {
  const int64_t in = lin.w->val.dim(0), out = lin.w->val.dim(1);
  std::vector<double> y(static_cast<size_t>(out), 0.0);
  for (int64_t j = 0; j < out; ++j) {
    double acc = lin.b->val[j];
    for (int64_t i = 0; i < in; ++i) acc += x[static_cast<size_t>(i)] * lin.w->val[i * out + j];
    y[static_cast<size_t>(j)] = acc;
  }
  return y;
}

std::vector<double> oracle_attend_gate(const SyncBlockParams& p,
                                       const std::vector<double>& query,
                                       const std::vector<std::vector<double>>& kv_feats) {
  const int64_t dh = p.head_dim();
  const auto q = oracle_linear(p.wq, query);
  std::vector<std::vector<double>> ks, vs;
  for (const auto& f : kv_feats) {
    ks.push_back(oracle_linear(p.wk, f));
    vs.push_back(oracle_linear(p.wv, f));
  }
  std::vector<double> ctx(static_cast<size_t>(p.width()), 0.0);
  for (int h = 0; h < p.heads; ++h) {
    std::vector<double> scores(kv_feats.size());
    double mx = -1e300;
    for (size_t s = 0; s < kv_feats.size(); ++s) {
      double dot = 0.0;
      for (int64_t i = 0; i < dh; ++i)
        dot += q[static_cast<size_t>(h * dh + i)] * ks[s][static_cast<size_t>(h * dh + i)];
      scores[s] = dot / std::sqrt(static_cast<double>(dh));
      mx = std::max(mx, scores[s]);
    }
    double denom = 0.0;
    for (double& sc : scores) {
      sc = std::exp(sc - mx);
      denom += sc;
    }
    for (size_t s = 0; s < kv_feats.size(); ++s)
      for (int64_t i = 0; i < dh; ++i)
        ctx[static_cast<size_t>(h * dh + i)] += scores[s] / denom * vs[s][static_cast<size_t>(h * dh + i)];
  }
  auto g1 = oracle_linear(p.gate1, ctx);
  for (double& v : g1) v = v / (1.0 + std::exp(-v));  // silu
  return oracle_linear(p.gate2, g1);
}

VoxelFeatureSet make_vox(Rng& rng, const GridSpec& g, int64_t d, bool rg = true) {
  VoxelFeatureSet v;
  v.grid = g;
  v.features = ag::make_var(rng.gaussian_tensor({g.voxel_count(), d}, 0.8), rg);
  return v;
}

ViewFeatureMaps make_maps(Rng& rng, int v_px, int64_t d, bool rg = true) {
  ViewFeatureMaps m;
  m.v_px = v_px;
  for (auto& mp : m.maps)
    mp = ag::make_var(rng.gaussian_tensor({static_cast<int64_t>(v_px) * v_px, d}, 0.8), rg);
  return m;
}

void randomize_gate(SyncBlockParams& p, Rng& rng) {
  p.gate2.w->val = rng.gaussian_tensor(p.gate2.w->val.shape(), 0.5);
  p.gate2.b->val = rng.gaussian_tensor(p.gate2.b->val.shape(), 0.2);
}

}  // namespace

TEST_CASE("init_sync_block: zero gate, determinism, head arithmetic") {
  auto p = init_sync_block(64, 64, 4, 123);
  CHECK(p.gate2.w->val.max_abs() == 0.0);
  CHECK(p.gate2.b->val.max_abs() == 0.0);
  CHECK(p.head_dim() == 16);

  auto p2 = init_sync_block(64, 64, 4, 123);
  CHECK(xsg::testutil::max_abs_diff(p.wq.w->val, p2.wq.w->val) == 0.0);
  CHECK(xsg::testutil::max_abs_diff(p.gate1.w->val, p2.gate1.w->val) == 0.0);

  CHECK_THROWS_AS(init_sync_block(10, 8, 3, 1), ConfigError);
}

TEST_CASE("attend_2d_to_3d: identity at init") {
  Rng rng(5);
  GridSpec grid(4);
  auto proj = build_projection_tables(grid, canonical_views(8));
  auto vox = make_vox(rng, grid, 6);
  auto maps = make_maps(rng, 8, 5);
  auto p = init_sync_block(6, 5, 2, 42);
  auto out = attend_2d_to_3d(vox, maps, p, proj);
  CHECK(xsg::testutil::max_abs_diff(out.features->val, vox.features->val) == 0.0);
  CHECK(out.features->val.same_shape(vox.features->val));
}

TEST_CASE("attend_3d_to_2d: identity at init and shape preservation") {
  Rng rng(6);
  GridSpec grid(4);
  auto proj = build_projection_tables(grid, canonical_views(4));
  auto vox = make_vox(rng, grid, 3);
  auto maps = make_maps(rng, 4, 6);
  auto p = init_sync_block(6, 3, 2, 43);
  auto out = attend_3d_to_2d(maps, vox, p, proj);
  for (int i = 0; i < 8; ++i) {
    CHECK(out.maps[i]->val.same_shape(maps.maps[i]->val));
    CHECK(xsg::testutil::max_abs_diff(out.maps[i]->val, maps.maps[i]->val) == 0.0);
  }
}

TEST_CASE("attend_2d_to_3d matches brute-force oracle (h=1 and h=2)") {
  for (int heads : {1, 2}) {
    Rng rng(100 + heads);
    GridSpec grid(2);
    auto proj = build_projection_tables(grid, canonical_views(2));
    const int64_t d = (heads == 1) ? 1 : 4;
    auto vox = make_vox(rng, grid, d);
    auto maps = make_maps(rng, 2, d);
    auto p = init_sync_block(d, d, heads, 7);
    randomize_gate(p, rng);

    auto out = attend_2d_to_3d(vox, maps, p, proj);

    for (int z = 0; z < 2; ++z)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
          const int64_t fi = grid.flat_index(x, y, z);
          std::vector<double> u(static_cast<size_t>(d));
          for (int64_t c = 0; c < d; ++c) u[static_cast<size_t>(c)] = vox.features->val[fi * d + c];
          std::vector<std::vector<double>> kv;
          for (const auto& t : proj.views) {
            const auto px = project_voxel({x, y, z}, t.view, grid);
            const int64_t pi = static_cast<int64_t>(px[1]) * t.view.v_px + px[0];
            std::vector<double> f(static_cast<size_t>(d));
            const auto& m = maps.map(t.view.id, Modality::normal);
            for (int64_t c = 0; c < d; ++c) f[static_cast<size_t>(c)] = m->val[pi * d + c];
            kv.push_back(f);
          }
          auto delta = oracle_attend_gate(p, u, kv);
          for (int64_t c = 0; c < d; ++c)
            CHECK(out.features->val[fi * d + c] ==
                  doctest::Approx(u[static_cast<size_t>(c)] + delta[static_cast<size_t>(c)]).epsilon(1e-6));
        }
  }
}

TEST_CASE("attend_3d_to_2d matches brute-force oracle at d=1") {
  Rng rng(55);
  GridSpec grid(2);
  auto proj = build_projection_tables(grid, canonical_views(2));
  auto vox = make_vox(rng, grid, 1);
  auto maps = make_maps(rng, 2, 1);
  auto p = init_sync_block(1, 1, 1, 9);
  randomize_gate(p, rng);

  auto out = attend_3d_to_2d(maps, vox, p, proj);

  for (const auto& t : proj.views)
    for (Modality m : {Modality::color, Modality::normal})
      for (int v = 0; v < 2; ++v)
        for (int u = 0; u < 2; ++u) {
          const int64_t pi = v * 2 + u;
          std::vector<double> q{maps.map(t.view.id, m)->val[pi]};
          std::vector<std::vector<double>> kv;
          for (int32_t vi : t.pixel_to_column[static_cast<size_t>(pi)])
            kv.push_back({vox.features->val[vi]});
          auto delta = oracle_attend_gate(p, q, kv);
          CHECK(out.map(t.view.id, m)->val[pi] ==
                doctest::Approx(q[0] + delta[0]).epsilon(1e-6));
        }
}

TEST_CASE("view permutation invariance (keys and values permuted together)") {
  Rng rng(77);
  GridSpec grid(4);
  auto views = canonical_views(8);
  auto proj = build_projection_tables(grid, views);
  auto vox = make_vox(rng, grid, 4, false);
  auto maps = make_maps(rng, 8, 4, false);
  auto p = init_sync_block(4, 4, 2, 11);
  randomize_gate(p, rng);

  auto base = attend_2d_to_3d(vox, maps, p, proj);

  std::vector<ViewSpec> shuffled{views[2], views[0], views[3], views[1]};
  auto proj2 = build_projection_tables(grid, shuffled);
  auto perm = attend_2d_to_3d(vox, maps, p, proj2);
  CHECK(xsg::testutil::max_abs_diff(base.features->val, perm.features->val) < 1e-5);
}

TEST_CASE("uniform voxel features: 3d-to-2d attention reduces to MLP_v(u*)") {
  Rng rng(88);
  GridSpec grid(2);
  auto proj = build_projection_tables(grid, canonical_views(2));
  const int64_t d = 3;
  std::vector<double> ustar{0.4, -1.2, 0.7};
  VoxelFeatureSet vox;
  vox.grid = grid;
  Tensor vf({grid.voxel_count(), d});
  for (int64_t i = 0; i < grid.voxel_count(); ++i)
    for (int64_t c = 0; c < d; ++c) vf[i * d + c] = ustar[static_cast<size_t>(c)];
  vox.features = ag::constant(vf);
  auto maps = make_maps(rng, 2, d, false);
  auto p = init_sync_block(d, d, 1, 13);
  randomize_gate(p, rng);

  auto out = attend_3d_to_2d(maps, vox, p, proj);

  // Convex combination of identical values: context = W_v u* + b_v for every
  // pixel, so the residual is gate(W_v u* + b_v) regardless of the scores.
  auto ctx = oracle_linear(p.wv, ustar);
  auto g1 = oracle_linear(p.gate1, ctx);
  for (double& v : g1) v = v / (1.0 + std::exp(-v));
  auto delta = oracle_linear(p.gate2, g1);
  for (const auto& t : proj.views)
    for (Modality m : {Modality::color, Modality::normal})
      for (int64_t pi = 0; pi < 4; ++pi)
        for (int64_t c = 0; c < d; ++c)
          CHECK(out.map(t.view.id, m)->val[pi * d + c] ==
                doctest::Approx(maps.map(t.view.id, m)->val[pi * d + c] +
                                delta[static_cast<size_t>(c)])
                    .epsilon(1e-9));
}

TEST_CASE("locality: zeroing one view's normal map acts only through its slot") {
  Rng rng(99);
  GridSpec grid(2);
  auto proj = build_projection_tables(grid, canonical_views(2));
  const int64_t d = 2;
  auto vox = make_vox(rng, grid, d, false);
  auto maps = make_maps(rng, 2, d, false);
  auto p = init_sync_block(d, d, 1, 17);
  randomize_gate(p, rng);

  // Zero the back view's normal map in the input.
  maps.map(ViewId::back, Modality::normal)->val.zero();
  auto out = attend_2d_to_3d(vox, maps, p, proj);

  // Oracle with the back slot's key/value computed from a zero feature vector.
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        const int64_t fi = grid.flat_index(x, y, z);
        std::vector<double> u(static_cast<size_t>(d));
        for (int64_t c = 0; c < d; ++c) u[static_cast<size_t>(c)] = vox.features->val[fi * d + c];
        std::vector<std::vector<double>> kv;
        for (const auto& t : proj.views) {
          if (t.view.id == ViewId::back) {
            kv.push_back(std::vector<double>(static_cast<size_t>(d), 0.0));
            continue;
          }
          const auto px = project_voxel({x, y, z}, t.view, grid);
          const int64_t pi = static_cast<int64_t>(px[1]) * t.view.v_px + px[0];
          std::vector<double> f(static_cast<size_t>(d));
          const auto& m = maps.map(t.view.id, Modality::normal);
          for (int64_t c = 0; c < d; ++c) f[static_cast<size_t>(c)] = m->val[pi * d + c];
          kv.push_back(f);
        }
        auto delta = oracle_attend_gate(p, u, kv);
        for (int64_t c = 0; c < d; ++c)
          CHECK(out.features->val[fi * d + c] ==
                doctest::Approx(u[static_cast<size_t>(c)] + delta[static_cast<size_t>(c)]).epsilon(1e-9));
      }
}

TEST_CASE("gradient check: both directions, params and inputs") {
  Rng rng(123);
  GridSpec grid(2);
  auto proj = build_projection_tables(grid, canonical_views(2));
  const int64_t d = 4;
  auto vox = make_vox(rng, grid, d);
  auto maps = make_maps(rng, 2, d);
  auto p = init_sync_block(d, d, 2, 19);
  randomize_gate(p, rng);

  std::vector<VarPtr> params{vox.features, maps.maps[1], maps.maps[3],
                             p.wq.w, p.wk.w, p.wv.w, p.wq.b,
                             p.gate1.w, p.gate2.w, p.gate2.b};
  auto loss_2d3d = [&] {
    auto out = attend_2d_to_3d(vox, maps, p, proj);
    return ag::mean(ag::square(out.features));
  };
  CHECK(xsg::testutil::grad_check(loss_2d3d, params, 1e-5, 8) < 1e-3);

  std::vector<VarPtr> params2{vox.features, maps.maps[0], maps.maps[5],
                              p.wq.w, p.wk.w, p.wv.w, p.gate1.w, p.gate2.w};
  auto loss_3d2d = [&] {
    auto out = attend_3d_to_2d(maps, vox, p, proj);
    VarPtr acc;
    for (const auto& m : out.maps) {
      auto s = ag::mean(ag::square(m));
      acc = acc ? ag::add(acc, s) : s;
    }
    return acc;
  };
  CHECK(xsg::testutil::grad_check(loss_3d2d, params2, 1e-5, 8) < 1e-3);
}
