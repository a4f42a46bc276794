#include "xsgen/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

namespace xsg {

namespace {

inline double sq(double v) { return v * v; }

double segment_distance(const double p[3], const std::array<double, 3>& a,
                        const std::array<double, 3>& b) {
  double ab[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  double ap[3] = {p[0] - a[0], p[1] - a[1], p[2] - a[2]};
  const double denom = sq(ab[0]) + sq(ab[1]) + sq(ab[2]);
  double t = denom > 0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / denom : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::sqrt(sq(ap[0] - t * ab[0]) + sq(ap[1] - t * ab[1]) + sq(ap[2] - t * ab[2]));
}

}  // namespace

double Primitive::sdf(const double p[3]) const {
  switch (kind) {
    case Kind::sphere:
      return std::sqrt(sq(p[0] - a[0]) + sq(p[1] - a[1]) + sq(p[2] - a[2])) - radius;
    case Kind::capsule:
      return segment_distance(p, a, b) - radius;
    case Kind::box: {
      const double q[3] = {std::fabs(p[0] - a[0]) - extent[0],
                           std::fabs(p[1] - a[1]) - extent[1],
                           std::fabs(p[2] - a[2]) - extent[2]};
      const double ox = std::max(q[0], 0.0), oy = std::max(q[1], 0.0),
                   oz = std::max(q[2], 0.0);
      const double outside = std::sqrt(sq(ox) + sq(oy) + sq(oz));
      const double inside = std::min(std::max({q[0], q[1], q[2]}), 0.0);
      return outside + inside;
    }
  }
  return 1e9;
}

double ShapeSample::sdf(const double p[3]) const {
  double d = 1e9;
  for (const auto& prim : primitives) d = std::min(d, prim.sdf(p));
  return d;
}

bool is_six_connected(const std::vector<uint8_t>& occ, const GridSpec& grid) {
  const int n = grid.n;
  int64_t start = -1, total = 0;
  for (int64_t i = 0; i < grid.voxel_count(); ++i)
    if (occ[static_cast<size_t>(i)]) {
      if (start < 0) start = i;
      ++total;
    }
  if (total == 0) return false;
  std::vector<uint8_t> seen(occ.size(), 0);
  std::queue<int64_t> q;
  q.push(start);
  seen[static_cast<size_t>(start)] = 1;
  int64_t reached = 0;
  const int dx[6] = {1, -1, 0, 0, 0, 0};
  const int dy[6] = {0, 0, 1, -1, 0, 0};
  const int dz[6] = {0, 0, 0, 0, 1, -1};
  while (!q.empty()) {
    const int64_t i = q.front();
    q.pop();
    ++reached;
    const int x = static_cast<int>(i % n);
    const int y = static_cast<int>((i / n) % n);
    const int z = static_cast<int>(i / (static_cast<int64_t>(n) * n));
    for (int k = 0; k < 6; ++k) {
      const int nx = x + dx[k], ny = y + dy[k], nz = z + dz[k];
      if (nx < 0 || nx >= n || ny < 0 || ny >= n || nz < 0 || nz >= n) continue;
      const int64_t j = grid.flat_index(nx, ny, nz);
      if (occ[static_cast<size_t>(j)] && !seen[static_cast<size_t>(j)]) {
        seen[static_cast<size_t>(j)] = 1;
        q.push(j);
      }
    }
  }
  return reached == total;
}

namespace {

std::array<double, 3> palette_color(Rng& rng) {
  return {quant16(rng.uniform(0.15, 0.95)), quant16(rng.uniform(0.15, 0.95)),
          quant16(rng.uniform(0.15, 0.95))};
}

std::array<double, 3> clamp_inside(std::array<double, 3> p, double margin) {
  for (double& v : p) v = std::clamp(v, margin, 1.0 - margin);
  return p;
}

// Trunk + head + limbs in a fixed order; complexity selects the first
// complexity+2 of them.
std::vector<Primitive> build_figure(Rng& rng, int complexity, double voxel) {
  const double limb_r = std::max(0.05, 1.05 * voxel);
  std::vector<Primitive> prims;

  Primitive trunk;
  trunk.kind = Primitive::Kind::capsule;
  trunk.a = {0.5 + rng.uniform(-0.03, 0.03), 0.30 + rng.uniform(-0.02, 0.02),
             0.5 + rng.uniform(-0.03, 0.03)};
  trunk.b = {0.5 + rng.uniform(-0.03, 0.03), 0.62 + rng.uniform(-0.02, 0.02),
             0.5 + rng.uniform(-0.03, 0.03)};
  trunk.radius = rng.uniform(0.08, 0.11);
  trunk.color = palette_color(rng);
  prims.push_back(trunk);

  Primitive head;
  head.kind = Primitive::Kind::sphere;
  head.a = {trunk.b[0], trunk.b[1] + rng.uniform(0.09, 0.12), trunk.b[2]};
  head.a = clamp_inside(head.a, 0.10);
  head.radius = rng.uniform(0.075, 0.10);
  head.color = palette_color(rng);
  prims.push_back(head);

  auto limb = [&](const std::array<double, 3>& joint, double polar_lo, double polar_hi,
                  double length_lo, double length_hi, bool down) {
    Primitive p;
    p.kind = Primitive::Kind::capsule;
    p.a = joint;
    const double polar = rng.uniform(polar_lo, polar_hi);
    const double azim = rng.uniform(0.0, 6.2831853071795864);
    const double len = rng.uniform(length_lo, length_hi);
    const double ysign = down ? -1.0 : -0.2 + rng.uniform(0.0, 0.6);
    std::array<double, 3> dir = {std::sin(polar) * std::cos(azim),
                                 ysign * std::cos(polar),
                                 std::sin(polar) * std::sin(azim)};
    const double norm = std::sqrt(sq(dir[0]) + sq(dir[1]) + sq(dir[2]));
    p.b = clamp_inside({joint[0] + dir[0] / norm * len, joint[1] + dir[1] / norm * len,
                        joint[2] + dir[2] / norm * len},
                       0.06);
    p.radius = limb_r * rng.uniform(0.95, 1.15);
    p.color = palette_color(rng);
    return p;
  };

  const std::array<double, 3> hip_l = {trunk.a[0] - 0.05, trunk.a[1] + 0.02, trunk.a[2]};
  const std::array<double, 3> hip_r = {trunk.a[0] + 0.05, trunk.a[1] + 0.02, trunk.a[2]};
  const std::array<double, 3> sho_l = {trunk.b[0] - 0.06, trunk.b[1] - 0.03, trunk.b[2]};
  const std::array<double, 3> sho_r = {trunk.b[0] + 0.06, trunk.b[1] - 0.03, trunk.b[2]};
  prims.push_back(limb(hip_l, 0.1, 0.9, 0.22, 0.30, true));
  prims.push_back(limb(hip_r, 0.1, 0.9, 0.22, 0.30, true));
  prims.push_back(limb(sho_l, 0.5, 1.45, 0.18, 0.26, false));
  prims.push_back(limb(sho_r, 0.5, 1.45, 0.18, 0.26, false));

  Primitive pack;  // a box accessory on the torso
  pack.kind = Primitive::Kind::box;
  pack.a = {trunk.a[0], (trunk.a[1] + trunk.b[1]) * 0.5,
            trunk.a[2] + trunk.radius * rng.uniform(0.5, 0.9)};
  pack.extent = {rng.uniform(0.05, 0.09), rng.uniform(0.04, 0.08),
                 rng.uniform(0.03, 0.06)};
  pack.color = palette_color(rng);
  prims.push_back(pack);

  prims.resize(static_cast<size_t>(complexity + 2));
  return prims;
}

}  // namespace

ShapeSample generate_shape(uint64_t seed, int complexity, const GridSpec& grid) {
  XSG_CHECK_DOMAIN(complexity >= 1 && complexity <= 5,
                   "generate_shape: complexity must be in 1..5");
  const int n = grid.n;
  const double voxel = 1.0 / n;

  for (int attempt = 0; attempt < 10; ++attempt) {
    Rng rng(seed * 1000003ull + static_cast<uint64_t>(attempt));
    ShapeSample s;
    s.grid = grid;
    s.seed = seed;
    s.complexity = complexity;
    s.primitives = build_figure(rng, complexity, voxel);

    s.occupancy.assign(static_cast<size_t>(grid.voxel_count()), 0);
    s.colors = Tensor({grid.voxel_count(), 3});
    s.normals = Tensor({grid.voxel_count(), 3});
    s.surface.assign(static_cast<size_t>(grid.voxel_count()), 0);

    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double p[3] = {(x + 0.5) * voxel, (y + 0.5) * voxel, (z + 0.5) * voxel};
          double best = 1e9;
          size_t best_prim = 0;
          for (size_t pi = 0; pi < s.primitives.size(); ++pi) {
            const double d = s.primitives[pi].sdf(p);
            if (d < best) {
              best = d;
              best_prim = pi;
            }
          }
          const int64_t fi = grid.flat_index(x, y, z);
          if (best < 0.0) {
            s.occupancy[static_cast<size_t>(fi)] = 1;
            for (int c = 0; c < 3; ++c)
              s.colors[fi * 3 + c] = s.primitives[best_prim].color[static_cast<size_t>(c)];
          }
        }

    if (!is_six_connected(s.occupancy, grid)) continue;

    // Surface voxels: occupied with an empty (or out-of-grid) 6-neighbour.
    // Normals from the union SDF gradient at the voxel center.
    const int dx[6] = {1, -1, 0, 0, 0, 0};
    const int dy[6] = {0, 0, 1, -1, 0, 0};
    const int dz[6] = {0, 0, 0, 0, 1, -1};
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const int64_t fi = grid.flat_index(x, y, z);
          if (!s.occupancy[static_cast<size_t>(fi)]) continue;
          bool boundary = false;
          for (int k = 0; k < 6 && !boundary; ++k) {
            const int nx = x + dx[k], ny = y + dy[k], nz = z + dz[k];
            if (nx < 0 || nx >= n || ny < 0 || ny >= n || nz < 0 || nz >= n)
              boundary = true;
            else if (!s.occupancy[static_cast<size_t>(grid.flat_index(nx, ny, nz))])
              boundary = true;
          }
          if (!boundary) continue;
          s.surface[static_cast<size_t>(fi)] = 1;
          const double h = 0.25 * voxel;
          const double p[3] = {(x + 0.5) * voxel, (y + 0.5) * voxel, (z + 0.5) * voxel};
          double g[3];
          for (int axis = 0; axis < 3; ++axis) {
            double pp[3] = {p[0], p[1], p[2]}, pm[3] = {p[0], p[1], p[2]};
            pp[axis] += h;
            pm[axis] -= h;
            g[axis] = (s.sdf(pp) - s.sdf(pm)) / (2.0 * h);
          }
          const double norm = std::sqrt(sq(g[0]) + sq(g[1]) + sq(g[2]));
          if (norm < 1e-12) {
            s.normals[fi * 3 + 1] = 1.0;  // degenerate gradient; point up
          } else {
            for (int c = 0; c < 3; ++c) s.normals[fi * 3 + c] = g[c] / norm;
          }
        }
    return s;
  }
  throw ConfigError("generate_shape: no valid connected shape after 10 attempts");
}

}  // namespace xsg
