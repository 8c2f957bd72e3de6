#include "reenact/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace reenact {

namespace {

constexpr double kNearPlane = 1e-3;

// Edge function of p against the directed edge a->b (y-down screen space).
double edge(const Vec2& a, const Vec2& b, double px, double py) {
  return (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
}

// Top-left rule for triangles with positive edge-function area in y-down space.
bool is_top_left(const Vec2& a, const Vec2& b) {
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

}  // namespace

RenderOutput rasterize_visibility(const MatX& positions_world, const MeshTopology& topology,
                                  const Camera& camera) {
  camera.validate();
  const int w = camera.width, h = camera.height;
  RenderOutput out;
  out.width = w;
  out.height = h;
  out.depth = ImageF(w, h, 1, std::numeric_limits<float>::infinity());
  std::vector<double> zbuf(static_cast<size_t>(w) * h, std::numeric_limits<double>::infinity());
  std::vector<int> tri_buf(static_cast<size_t>(w) * h, -1);
  std::vector<Vec3> bary_buf(static_cast<size_t>(w) * h);

  const int nv = static_cast<int>(positions_world.rows());
  std::vector<Vec3> cam(nv);
  for (int i = 0; i < nv; ++i) cam[i] = camera.to_camera(positions_world.row(i).transpose());

  for (int f = 0; f < static_cast<int>(topology.triangles.size()); ++f) {
    const Vec3i& t = topology.triangles[f];
    const Vec3 p[3] = {cam[t[0]], cam[t[1]], cam[t[2]]};
    if (p[0].z() <= kNearPlane || p[1].z() <= kNearPlane || p[2].z() <= kNearPlane) continue;
    if ((p[1] - p[0]).cross(p[2] - p[0]).dot(p[0]) >= 0.0) continue;  // back-facing

    Vec2 s[3];
    for (int k = 0; k < 3; ++k)
      s[k] = Vec2(camera.fx * p[k].x() / p[k].z() + camera.cx, camera.fy * p[k].y() / p[k].z() + camera.cy);
    int order[3] = {0, 1, 2};
    double area = edge(s[0], s[1], s[2].x(), s[2].y());
    if (area == 0.0) continue;
    if (area < 0.0) {
      std::swap(order[1], order[2]);
      area = -area;
    }
    const Vec2 a = s[order[0]], b = s[order[1]], c = s[order[2]];
    const bool tl_bc = is_top_left(b, c), tl_ca = is_top_left(c, a), tl_ab = is_top_left(a, b);

    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      const double py = y + 0.5;
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5;
        const double e0 = edge(b, c, px, py), e1 = edge(c, a, px, py), e2 = edge(a, b, px, py);
        if (e0 < 0.0 || e1 < 0.0 || e2 < 0.0) continue;
        if ((e0 == 0.0 && !tl_bc) || (e1 == 0.0 && !tl_ca) || (e2 == 0.0 && !tl_ab)) continue;
        // Screen-space barycentrics in original vertex order.
        double lambda[3];
        lambda[order[0]] = e0 / area;
        lambda[order[1]] = e1 / area;
        lambda[order[2]] = e2 / area;
        const double inv_z = lambda[0] / p[0].z() + lambda[1] / p[1].z() + lambda[2] / p[2].z();
        const double z = 1.0 / inv_z;
        const size_t idx = static_cast<size_t>(y) * w + x;
        if (!(z < zbuf[idx])) continue;
        zbuf[idx] = z;
        tri_buf[idx] = f;
        bary_buf[idx] = Vec3(lambda[0] / p[0].z(), lambda[1] / p[1].z(), lambda[2] / p[2].z()) * z;
      }
    }
  }

  out.fragment_index.assign(static_cast<size_t>(w) * h, -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t idx = static_cast<size_t>(y) * w + x;
      if (tri_buf[idx] < 0) continue;
      out.fragment_index[idx] = static_cast<int>(out.visible.size());
      out.visible.push_back({x, y, tri_buf[idx], bary_buf[idx]});
      out.depth.at(x, y) = static_cast<float>(zbuf[idx]);
    }
  }
  return out;
}

Vec3 interpolate_rows(const MatX& per_vertex, const MeshTopology& topology, const Fragment& f) {
  const Vec3i& t = topology.triangles[f.triangle];
  return f.bary[0] * per_vertex.row(t[0]).transpose() + f.bary[1] * per_vertex.row(t[1]).transpose() +
         f.bary[2] * per_vertex.row(t[2]).transpose();
}

RenderOutput rasterize(const MeshGeometry& mesh, const Camera& camera, const ShCoeffs& gamma) {
  require(mesh.topology != nullptr, ErrorCode::kInvalidArgument, "mesh has no topology");
  require(mesh.positions.rows() == mesh.normals.rows() && mesh.positions.rows() == mesh.albedo.rows(),
          ErrorCode::kDimensionMismatch, "mesh attribute counts differ");
  RenderOutput out = rasterize_visibility(mesh.positions, *mesh.topology, camera);
  out.color = ImageF(out.width, out.height, 3, 0.0f);
  out.normal = ImageF(out.width, out.height, 3, 0.0f);
  for (const Fragment& f : out.visible) {
    const Vec3 n_world = interpolate_rows(mesh.normals, *mesh.topology, f).normalized();
    const Vec3 albedo = interpolate_rows(mesh.albedo, *mesh.topology, f).cwiseMax(0.0).cwiseMin(1.0);
    const Vec3 color = albedo.cwiseProduct(sh_irradiance(n_world, gamma));
    const Vec3 n_cam = camera.rotation * n_world;
    for (int c = 0; c < 3; ++c) {
      out.color.at(f.x, f.y, c) = static_cast<float>(color[c]);
      out.normal.at(f.x, f.y, c) = static_cast<float>(n_cam[c]);
    }
  }
  return out;
}

bool fragment_in_mask(const Fragment& fragment, const MeshTopology& topology,
                      std::span<const std::uint8_t> vertex_mask) {
  int k = 0;
  if (fragment.bary[1] > fragment.bary[k]) k = 1;
  if (fragment.bary[2] > fragment.bary[k]) k = 2;
  return vertex_mask[topology.triangles[fragment.triangle][k]] != 0;
}

Mask rasterize_mask(const RenderOutput& render, const MeshTopology& topology,
                    std::span<const std::uint8_t> vertex_mask) {
  Mask mask(render.width, render.height, 1, 0);
  for (const Fragment& f : render.visible)
    if (fragment_in_mask(f, topology, vertex_mask)) mask.at(f.x, f.y) = 1;
  return mask;
}

std::vector<Fragment> restrict_visibility(const RenderOutput& render, const MeshTopology& topology,
                                          std::span<const std::uint8_t> vertex_mask) {
  require(static_cast<int>(vertex_mask.size()) == topology.num_vertices(),
          ErrorCode::kDimensionMismatch, "mask must be defined on the same basis");
  std::vector<Fragment> out;
  for (const Fragment& f : render.visible)
    if (fragment_in_mask(f, topology, vertex_mask)) out.push_back(f);
  return out;
}

}  // namespace reenact
