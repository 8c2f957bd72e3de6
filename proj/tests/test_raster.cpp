#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "reenact/raster.hpp"
#include "reenact/synth.hpp"

using namespace reenact;

namespace {

// Screen coordinates equal 100 * (x, y) / z.
Camera screen_camera(int w = 24, int h = 20) {
  Camera c;
  c.fx = c.fy = 100.0;
  c.cx = c.cy = 0.0;
  c.width = w;
  c.height = h;
  return c;
}

Vec3 at_screen(double u, double v, double z) { return Vec3(u * z / 100.0, v * z / 100.0, z); }

// Orders a triangle so that it faces a camera at the origin.
Vec3i facing(const MatX& p, Vec3i t) {
  const Vec3 a = p.row(t[0]), b = p.row(t[1]), c = p.row(t[2]);
  if ((b - a).cross(c - a).dot(a) >= 0.0) std::swap(t[1], t[2]);
  return t;
}

double edge(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

std::set<std::pair<int, int>> covered(const RenderOutput& r) {
  std::set<std::pair<int, int>> s;
  for (const auto& f : r.visible) s.insert({f.x, f.y});
  return s;
}

}  // namespace

TEST(Rasterize, SingleTriangleCoverageMatchesHalfPlaneOracle) {
  const Camera cam = screen_camera();
  const Vec2 s[3] = {{2.3, 1.7}, {17.9, 4.2}, {6.1, 13.6}};
  MatX p(3, 3);
  for (int k = 0; k < 3; ++k) p.row(k) = at_screen(s[k].x(), s[k].y(), 1.0).transpose();
  const MeshTopology topo({facing(p, Vec3i(0, 1, 2))}, 3);
  const RenderOutput r = rasterize_visibility(p, topo, cam);
  std::set<std::pair<int, int>> expected;
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec2 c(x + 0.5, y + 0.5);
      const double e0 = edge(s[0], s[1], c), e1 = edge(s[1], s[2], c), e2 = edge(s[2], s[0], c);
      if ((e0 > 0 && e1 > 0 && e2 > 0) || (e0 < 0 && e1 < 0 && e2 < 0)) expected.insert({x, y});
    }
  }
  EXPECT_FALSE(expected.empty());
  EXPECT_EQ(covered(r), expected);
  for (const auto& f : r.visible) {
    EXPECT_EQ(f.triangle, 0);
    EXPECT_NEAR(r.depth.at(f.x, f.y), 1.0f, 1e-6);
  }
}

TEST(Rasterize, PerspectiveCorrectBarycentricsLieOnPixelRay) {
  const Camera cam = screen_camera();
  MatX p(3, 3);
  p.row(0) = at_screen(1.0, 1.0, 0.8).transpose();
  p.row(1) = at_screen(22.0, 3.0, 1.6).transpose();
  p.row(2) = at_screen(5.0, 18.0, 1.2).transpose();
  const MeshTopology topo({facing(p, Vec3i(0, 1, 2))}, 3);
  const RenderOutput r = rasterize_visibility(p, topo, cam);
  ASSERT_FALSE(r.visible.empty());
  for (const auto& f : r.visible) {
    const Vec3 q = interpolate_rows(p, topo, f);
    EXPECT_NEAR(f.bary.sum(), 1.0, 1e-12);
    EXPECT_NEAR(100.0 * q.x() / q.z(), f.x + 0.5, 1e-9);
    EXPECT_NEAR(100.0 * q.y() / q.z(), f.y + 0.5, 1e-9);
    EXPECT_NEAR(r.depth.at(f.x, f.y), q.z(), 1e-6);
  }
}

TEST(Rasterize, NearerTriangleWins) {
  const Camera cam = screen_camera();
  MatX p(6, 3);
  p.row(0) = at_screen(1, 1, 2.0).transpose();
  p.row(1) = at_screen(20, 2, 2.0).transpose();
  p.row(2) = at_screen(4, 17, 2.0).transpose();
  p.row(3) = at_screen(3, 3, 1.0).transpose();
  p.row(4) = at_screen(22, 6, 1.0).transpose();
  p.row(5) = at_screen(8, 19, 1.0).transpose();
  const MeshTopology topo({facing(p, Vec3i(0, 1, 2)), facing(p, Vec3i(3, 4, 5))}, 6);
  const RenderOutput both = rasterize_visibility(p, topo, cam);
  const auto far_only = covered(rasterize_visibility(p, MeshTopology({topo.triangles[0]}, 6), cam));
  const auto near_only = covered(rasterize_visibility(p, MeshTopology({topo.triangles[1]}, 6), cam));
  int shared = 0;
  for (const auto& f : both.visible) {
    if (near_only.count({f.x, f.y})) {
      EXPECT_EQ(f.triangle, 1);
      shared += far_only.count({f.x, f.y});
    } else {
      EXPECT_EQ(f.triangle, 0);
    }
  }
  EXPECT_GT(shared, 10);
}

TEST(Rasterize, SharedEdgeIsWatertight) {
  const Camera cam = screen_camera();
  MatX p(4, 3);
  p.row(0) = at_screen(2, 2, 1).transpose();
  p.row(1) = at_screen(12, 2, 1).transpose();
  p.row(2) = at_screen(12, 12, 1).transpose();
  p.row(3) = at_screen(2, 12, 1).transpose();
  const Vec3i t0 = facing(p, Vec3i(0, 1, 2)), t1 = facing(p, Vec3i(0, 2, 3));
  const auto a = covered(rasterize_visibility(p, MeshTopology({t0}, 4), cam));
  const auto b = covered(rasterize_visibility(p, MeshTopology({t1}, 4), cam));
  std::set<std::pair<int, int>> both = a;
  for (const auto& q : b) {
    EXPECT_EQ(a.count(q), 0u);
    both.insert(q);
  }
  std::set<std::pair<int, int>> square;
  for (int y = 2; y < 12; ++y)
    for (int x = 2; x < 12; ++x) square.insert({x, y});
  EXPECT_EQ(both, square);
}

TEST(Rasterize, BackFacesAreCulled) {
  const Camera cam = screen_camera();
  MatX p(3, 3);
  p.row(0) = at_screen(2, 2, 1).transpose();
  p.row(1) = at_screen(15, 3, 1).transpose();
  p.row(2) = at_screen(5, 15, 1).transpose();
  Vec3i t = facing(p, Vec3i(0, 1, 2));
  std::swap(t[1], t[2]);
  EXPECT_TRUE(rasterize_visibility(p, MeshTopology({t}, 3), cam).visible.empty());
}

class RasterScene : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    basis_ = new FaceBasis(synth_basis(7, FaceDims{16, 16, 12}, 2562));
    camera_ = new Camera(make_rig(RigKind::kMonoRgbd, 160, 120)[0]);
  }
  static void TearDownTestSuite() {
    delete basis_;
    delete camera_;
  }
  static FaceBasis* basis_;
  static Camera* camera_;
};
FaceBasis* RasterScene::basis_ = nullptr;
Camera* RasterScene::camera_ = nullptr;

TEST_F(RasterScene, Deterministic) {
  ParamVector x = rest_pose(basis_->dims());
  x.rotation = Vec3(0.05, 0.2, 0.0);
  const MeshGeometry mesh = eval_geometry(*basis_, x);
  const RenderOutput a = rasterize(mesh, *camera_, x.gamma);
  const RenderOutput b = rasterize(mesh, *camera_, x.gamma);
  EXPECT_TRUE(a.color == b.color);
  EXPECT_TRUE(a.depth == b.depth);
  EXPECT_TRUE(a.normal == b.normal);
  EXPECT_EQ(a.fragment_index, b.fragment_index);
  const Camera twin = *camera_;
  EXPECT_EQ(covered(rasterize(mesh, twin, x.gamma)), covered(a));
  EXPECT_GT(a.visible.size(), 1000u);
  EXPECT_LE(a.visible.size(), 160u * 120u);
}

TEST_F(RasterScene, ColorMatchesShadingOracle) {
  ParamVector x = rest_pose(basis_->dims());
  x.delta[0] = 0.5;
  const MeshGeometry mesh = eval_geometry(*basis_, x);
  const RenderOutput r = rasterize(mesh, *camera_, x.gamma);
  for (size_t i = 0; i < r.visible.size(); i += 37) {
    const Fragment& f = r.visible[i];
    const Vec3i& t = basis_->topology->triangles[f.triangle];
    Vec3 n = Vec3::Zero(), a = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      n += f.bary[k] * mesh.normals.row(t[k]).transpose();
      a += f.bary[k] * mesh.albedo.row(t[k]).transpose();
    }
    n.normalize();
    a = a.cwiseMax(0.0).cwiseMin(1.0);
    const Vec3 expected = sh_shade(a, n, x.gamma);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.color.at(f.x, f.y, c), expected[c], 1e-5);
    EXPECT_NEAR(Vec3(r.normal.at(f.x, f.y, 0), r.normal.at(f.x, f.y, 1), r.normal.at(f.x, f.y, 2)).norm(), 1.0, 1e-5);
    EXPECT_TRUE(std::isfinite(r.depth.at(f.x, f.y)));
  }
}

TEST_F(RasterScene, OffscreenMeshIsEmpty) {
  ParamVector x = rest_pose(basis_->dims());
  x.translation = Vec3(5.0, 0.0, 0.5);
  const RenderOutput r = rasterize(eval_geometry(*basis_, x), *camera_, x.gamma);
  EXPECT_TRUE(r.visible.empty());
  for (float d : r.depth.values()) EXPECT_TRUE(std::isinf(d));
  x.translation = Vec3(0.0, 0.0, -0.5);
  EXPECT_TRUE(rasterize(eval_geometry(*basis_, x), *camera_, x.gamma).visible.empty());
}

TEST_F(RasterScene, RestrictVisibility) {
  ParamVector x = rest_pose(basis_->dims());
  x.rotation = Vec3(0.0, -0.15, 0.0);
  const RenderOutput r = rasterize_visibility(eval_geometry(*basis_, x).positions, *basis_->topology, *camera_);
  const auto& topo = *basis_->topology;
  const std::vector<std::uint8_t> full(basis_->num_vertices(), 1), none(basis_->num_vertices(), 0);
  EXPECT_EQ(restrict_visibility(r, topo, full).size(), r.visible.size());
  EXPECT_TRUE(restrict_visibility(r, topo, none).empty());

  const auto lower = basis_->vertex_mask(kRegionLowerFace);
  const auto subset = restrict_visibility(r, topo, lower);
  // Brute force over the pixel grid: label of the dominant vertex at each covered pixel.
  int count = 0;
  for (int y = 0; y < r.height; ++y) {
    for (int px = 0; px < r.width; ++px) {
      const Fragment* f = r.fragment_at(px, y);
      if (!f) continue;
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (f->bary[k] > f->bary[best]) best = k;
      count += (basis_->regions[topo.triangles[f->triangle][best]] & kRegionLowerFace) ? 1 : 0;
    }
  }
  EXPECT_EQ(static_cast<int>(subset.size()), count);
  EXPECT_GT(count, 100);
  const Mask m = rasterize_mask(r, topo, lower);
  EXPECT_EQ(std::count(m.values().begin(), m.values().end(), 1), count);
  for (const auto& f : subset) EXPECT_NE(r.fragment_at(f.x, f.y), nullptr);

  EXPECT_THROW(restrict_visibility(r, topo, std::vector<std::uint8_t>(10, 1)), Error);
}
