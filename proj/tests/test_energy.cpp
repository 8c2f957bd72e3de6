#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "reenact/energy.hpp"
#include "reenact/raster.hpp"

using namespace reenact;
using namespace reenact::testing;

namespace {

constexpr int kW = 40, kH = 30;
constexpr double kFocal = 70.0;

struct StereoScene {
  ParamVector truth;
  std::vector<Camera> cams;
  std::vector<FrameObservation> views;
};

StereoScene stereo_scene(std::uint64_t seed = 21) {
  StereoScene s;
  s.truth = scene_params(basis642(), seed);
  s.cams = stereo_cameras(kW, kH, kFocal);
  s.views = observe(basis642(), s.truth, s.cams, SynthOptions{});
  return s;
}

StereoScene source_scene(std::uint64_t seed = 22, double depth_sigma = 0.0) {
  StereoScene s;
  s.truth = scene_params(basis642(), seed);
  s.cams = {look_at_camera(Vec3::Zero(), Vec3(0, 0, 0.5), kFocal, kW, kH)};
  SynthOptions o;
  o.depth = true;
  o.occlusion = true;
  o.noise.depth_sigma = depth_sigma;
  s.views = observe(basis642(), s.truth, s.cams, o);
  s.views[0].marker_reference = hmd_reference();
  return s;
}

EnergyOptions source_options() {
  EnergyOptions o = EnergyOptions::source();
  return o;
}

}  // namespace

TEST(Observation, Validate) {
  StereoScene s = stereo_scene();
  EXPECT_NO_THROW(s.views[0].validate());
  FrameObservation bad = s.views[0];
  bad.landmarks[0].index = 66;
  EXPECT_THROW(bad.validate(), Error);
  bad = s.views[0];
  bad.depth = ImageF(kW + 1, kH, 1, 1.0f);
  bad.normals = ImageF(kW + 1, kH, 3);
  EXPECT_THROW(bad.validate(), Error);
  bad = s.views[0];
  bad.markers.assign(9, MarkerCorner{});
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Weights, DefaultsAndValidation) {
  const EnergyWeights w;
  EXPECT_EQ(w.ste, 100.0);
  EXPECT_EQ(w.lan, 0.0005);
  EXPECT_EQ(w.reg, 0.0025);
  EXPECT_EQ(w.rgb, 100.0);
  EXPECT_EQ(w.geo, 10000.0);
  EXPECT_EQ(w.sta, 1.0);
  EXPECT_EQ(w.point, 1.0);
  EXPECT_EQ(w.plane, 1.0);
  EnergyWeights bad;
  bad.lan = -1.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(DepthNormals, PlanarDepth) {
  const Camera cam = look_at_camera(Vec3::Zero(), Vec3(0, 0, 1), 50.0, 30, 20);
  const Vec3 n = Vec3(0.2, -0.1, -1.0).normalized();
  const double d0 = 0.8;  // plane n.p = -d0 * |n_z|
  ImageF depth(30, 20, 1);
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 30; ++x) {
      const Vec3 ray = backproject(cam, Vec2(x + 0.5, y + 0.5), 1.0);
      depth.at(x, y) = static_cast<float>(-d0 * std::abs(n.z()) / n.dot(ray));
    }
  }
  depth.at(10, 10) = 0.0f;
  const ImageF normals = depth_normals(depth, cam);
  const Vec3 got(normals.at(5, 5, 0), normals.at(5, 5, 1), normals.at(5, 5, 2));
  EXPECT_LT((got - n).norm(), 1e-4);
  EXPECT_EQ(normals.at(10, 11, 0), 0.0f);
  EXPECT_EQ(normals.at(0, 0, 2), 0.0f);
}

TEST(Photometric, ZeroAtGroundTruth) {
  StereoScene s = stereo_scene();
  const ResidualSystem sys = assemble_target(basis642(), s.views, s.truth, EnergyWeights{});
  for (int c = 0; c < 2; ++c) {
    const ResidualBlock* b = sys.find("photometric/" + std::to_string(c));
    ASSERT_NE(b, nullptr);
    EXPECT_GT(b->num_groups(), 100);
    EXPECT_LT(b->residual.cwiseAbs().maxCoeff(), 1e-6);
  }
  // Ground truth on clean data: only the regularizer remains.
  const double reg = sys.find("regularizer")->energy();
  EXPECT_GT(reg, 0.0);
  EXPECT_NEAR(sys.energy(), reg, 1e-4 * reg);
}

TEST(Photometric, SinglePixelDifference) {
  StereoScene s = stereo_scene();
  EnergyOptions o = EnergyOptions::target();
  const auto fps = compute_footprints(basis642(), s.views, s.truth, o);
  const Fragment f = fps[0][fps[0].size() / 2];
  const Vec3 d(0.03, -0.04, 0.12);
  for (int c = 0; c < 3; ++c) s.views[0].rgb.at(f.x, f.y, c) -= static_cast<float>(d[c]);
  const ParamLayout layout{basis642().dims()};
  const ResidualSystem sys =
      assemble(basis642(), s.views, s.truth, o, fps, ColumnMap::all(layout), layout.size(), false);
  const double n = static_cast<double>(fps[0].size());
  EXPECT_NEAR(sys.find("photometric/0")->energy(), 100.0 * d.norm() / n, 1e-5);
  EXPECT_LT(sys.find("photometric/1")->energy(), 1e-4);
}

TEST(Photometric, MatchesDirectDoubleLoopOracle) {
  StereoScene s = stereo_scene();
  const ParamVector x = perturb(s.truth, 5);
  EnergyOptions o = EnergyOptions::target();
  const auto fps = compute_footprints(basis642(), s.views, x, o);
  const ParamLayout layout{basis642().dims()};
  const ResidualSystem sys = assemble(basis642(), s.views, x, o, fps, ColumnMap::all(layout), layout.size(), false);

  const MeshGeometry mesh = eval_geometry(basis642(), x);
  const auto& topo = *basis642().topology;
  for (int c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (const Fragment& f : fps[c]) {
      Vec3 p = Vec3::Zero(), nrm = Vec3::Zero(), alb = Vec3::Zero();
      for (int k = 0; k < 3; ++k) {
        const int v = topo.triangles[f.triangle][k];
        p += f.bary[k] * mesh.positions.row(v).transpose();
        nrm += f.bary[k] * mesh.normals.row(v).transpose();
        alb += f.bary[k] * mesh.albedo.row(v).transpose();
      }
      const Vec3 color = sh_shade(alb.cwiseMax(0.0).cwiseMin(1.0), nrm.normalized(), x.gamma);
      const Vec3 pc = s.cams[c].rotation * p + s.cams[c].translation;
      const double u = s.cams[c].fx * pc.x() / pc.z() + s.cams[c].cx;
      const double v = s.cams[c].fy * pc.y() / pc.z() + s.cams[c].cy;
      double sq = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        const double diff = color[ch] - sample_bspline(bspline_coefficients(s.views[c].rgb), u, v, ch).value;
        sq += diff * diff;
      }
      sum += std::sqrt(sq);
    }
    const double expected = 100.0 * sum / static_cast<double>(fps[c].size());
    EXPECT_NEAR(sys.find("photometric/" + std::to_string(c))->energy(), expected, 1e-9 * expected);
  }
}

TEST(Photometric, EnergyInvariantToResolution) {
  // Same scene at 2x resolution (4x pixels) with a smooth, resolution-independent offset.
  const ParamVector x = scene_params(basis642(), 30);
  const auto energy_at = [&](int scale) {
    const std::vector<Camera> cams = {look_at_camera(Vec3::Zero(), Vec3(0, 0, 0.5), kFocal * scale, kW * scale, kH * scale)};
    auto views = observe(basis642(), x, cams, SynthOptions{});
    ImageF& img = views[0].rgb;
    for (int y = 0; y < img.height(); ++y)
      for (int px = 0; px < img.width(); ++px)
        for (int c = 0; c < 3; ++c)
          img.at(px, y, c) += static_cast<float>(0.05 * std::sin(6.0 * (px + 0.5) / img.width() + c) *
                                                 std::cos(4.0 * (y + 0.5) / img.height()));
    EnergyOptions o = EnergyOptions::target();
    o.use_landmarks = false;
    o.regularize_identity = o.regularize_expression = false;
    return evaluate_energy(basis642(), views, x, o);
  };
  const double e1 = energy_at(1), e2 = energy_at(2);
  EXPECT_GT(e1, 0.5);
  EXPECT_NEAR(e2 / e1, 1.0, 0.05);
}

TEST(Photometric, IrlsFixedPoint) {
  StereoScene s = stereo_scene();
  const ParamVector x = perturb(s.truth, 6);
  const ResidualSystem sys = assemble_target(basis642(), s.views, x, EnergyWeights{});
  const ResidualBlock* b = sys.find("photometric/0");
  for (int g = 0; g < b->num_groups(); ++g) ASSERT_GT(b->group_norm(g), 1e-6);
  EXPECT_NEAR(b->weighted_energy(), b->energy(), 1e-12 * b->energy());
}

TEST(Photometric, RigidInvariance) {
  // DC-only lighting is rotation invariant, so moving head and cameras together changes nothing.
  StereoScene s = stereo_scene();
  const auto dc_only = [](ParamVector y) {
    for (int c = 0; c < 3; ++c)
      for (int b = 1; b < kNumShBands; ++b) y.gamma[c * kNumShBands + b] = 0.0;
    return y;
  };
  const ParamVector x = dc_only(s.truth);
  const auto views = observe(basis642(), x, s.cams, SynthOptions{});
  const ParamVector xp = dc_only(perturb(x, 8));

  const Mat3 m = rotation_from_axis_angle(Vec3(0.2, -0.4, 0.3));
  const Vec3 mt(0.3, -0.1, 0.2);
  ParamVector xm = xp;
  xm.rotation = axis_angle_from_rotation(m * xp.rotation_matrix());
  xm.translation = m * xp.translation + mt;
  std::vector<FrameObservation> moved = views;
  for (auto& v : moved) {
    v.camera.rotation = v.camera.rotation * m.transpose();
    v.camera.translation = v.camera.translation - v.camera.rotation * mt;
  }
  EnergyOptions o = EnergyOptions::target();
  const auto fa = compute_footprints(basis642(), views, xp, o);
  const auto fb = compute_footprints(basis642(), moved, xm, o);
  for (int c = 0; c < 2; ++c) {
    ASSERT_EQ(fa[c].size(), fb[c].size());
    for (size_t i = 0; i < fa[c].size(); ++i) {
      ASSERT_EQ(fa[c][i].x, fb[c][i].x);
      ASSERT_EQ(fa[c][i].y, fb[c][i].y);
    }
  }
  const ParamLayout layout{basis642().dims()};
  const auto ra = assemble(basis642(), views, xp, o, fa, ColumnMap::all(layout), layout.size(), false);
  const auto rb = assemble(basis642(), moved, xm, o, fa, ColumnMap::all(layout), layout.size(), false);
  for (int c = 0; c < 2; ++c) {
    const std::string name = "photometric/" + std::to_string(c);
    EXPECT_LT((ra.find(name)->residual - rb.find(name)->residual).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Landmarks, DefinitionalValues) {
  StereoScene s = stereo_scene();
  FaceState state(basis642(), s.truth, false);
  const ParamLayout layout{basis642().dims()};
  const ColumnMap cols = ColumnMap::all(layout);
  EXPECT_LT(residual_landmarks(state, s.views[0], 0.0005, cols, false, "l").energy(), 1e-20);
  ASSERT_EQ(s.views[0].landmarks.size(), 66u);
  s.views[0].landmarks[10].position += Vec2(1.0, 0.0);
  EXPECT_NEAR(residual_landmarks(state, s.views[0], 0.0005, cols, false, "l").energy(), 0.0005 / 66.0, 1e-15);
  s.views[0].landmarks[10].confidence = 0.25;
  EXPECT_NEAR(residual_landmarks(state, s.views[0], 0.0005, cols, false, "l").energy(), 0.25 * 0.0005 / 66.0,
              1e-15);
  FrameObservation empty = s.views[0];
  empty.landmarks.clear();
  EXPECT_EQ(residual_landmarks(state, empty, 0.0005, cols, false, "l").energy(), 0.0);
}

TEST(Landmarks, MatchesDirectSummation) {
  StereoScene s = stereo_scene();
  const ParamVector x = perturb(s.truth, 9);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& l : s.views[1].landmarks) l.confidence = u(rng);
  FaceState state(basis642(), x, false);
  const ParamLayout layout{basis642().dims()};
  const double e = residual_landmarks(state, s.views[1], 0.0005, ColumnMap::all(layout), false, "l").energy();
  const MeshGeometry mesh = eval_geometry(basis642(), x);
  double sum = 0.0;
  for (const auto& l : s.views[1].landmarks) {
    const Vec3 p = mesh.positions.row(basis642().landmark_vertex_ids[l.index]).transpose();
    sum += l.confidence * (l.position - project(s.cams[1], s.cams[1].to_camera(p))).squaredNorm();
  }
  EXPECT_NEAR(e, 0.0005 * sum / 66.0, 1e-12 * e);
}

TEST(Landmarks, DoublingWeightDoublesEnergy) {
  StereoScene s = stereo_scene();
  const ParamVector x = perturb(s.truth, 10);
  EnergyWeights w;
  const double e1 = assemble_target(basis642(), s.views, x, w).block_energy("landmarks");
  w.lan *= 2.0;
  const double e2 = assemble_target(basis642(), s.views, x, w).block_energy("landmarks");
  EXPECT_GT(e1, 0.0);
  EXPECT_NEAR(e2, 2.0 * e1, 1e-12 * e2);
}

TEST(Regularizer, DefinitionalValues) {
  const FaceBasis big = synth_basis(3, FaceDims{80, 80, 76}, 642);
  ParamVector x = ParamVector::zeros(big.dims());
  const ParamLayout layout{big.dims()};
  const ColumnMap cols = ColumnMap::all(layout);
  EXPECT_EQ(residual_regularizer(FaceState(big, x, false), 1.0, true, true, cols, false).energy(), 0.0);
  x.alpha = big.sigma_id;
  EXPECT_NEAR(residual_regularizer(FaceState(big, x, false), 1.0, true, true, cols, false).energy(), 80.0, 1e-12);
  std::mt19937_64 rng(4);
  x.alpha = gaussian(80, rng);
  x.beta = gaussian(80, rng);
  x.delta = gaussian(76, rng);
  double sum = 0.0;
  for (int i = 0; i < 80; ++i) sum += std::pow(x.alpha[i] / big.sigma_id[i], 2) + std::pow(x.beta[i] / big.sigma_alb[i], 2);
  for (int i = 0; i < 76; ++i) sum += x.delta[i] * x.delta[i];
  const double e = residual_regularizer(FaceState(big, x, false), 0.0025, true, true, cols, false).energy();
  EXPECT_NEAR(e, 0.0025 * sum, 1e-12 * e);
}

TEST(Geometric, PointDefinitionalValues) {
  StereoScene s = source_scene();
  EnergyOptions o = source_options();
  const auto fps = compute_footprints(basis642(), s.views, s.truth, o);
  FaceState state(basis642(), s.truth, false);
  const ParamLayout layout{basis642().dims()};
  const ColumnMap cols = ColumnMap::all(layout);
  ASSERT_GT(fps[0].size(), 50u);
  EXPECT_LT(residual_point(state, s.views[0], fps[0], 1.0, cols, false, "p").energy(), 1e-9);
  EXPECT_LT(residual_plane(state, s.views[0], fps[0], 1.0, cols, false, "p").energy(), 1e-9);

  // Uniform 1 mm offset: the difference is 1 mm along each pixel ray.
  FrameObservation off = s.views[0];
  for (float& d : off.depth.values())
    if (d > 0.0f) d += 0.001f;
  const double e = residual_point(state, off, fps[0], 1.0, cols, false, "p").energy();
  double expected = 0.0;
  for (const Fragment& f : fps[0]) {
    const Vec3 ray = backproject(off.camera, Vec2(f.x + 0.5, f.y + 0.5), 1.0);
    expected += 1e-6 * ray.squaredNorm();
  }
  const double n = static_cast<double>(fps[0].size());
  EXPECT_NEAR(e, expected, 1e-3 * expected);
  EXPECT_NEAR(e, n * 1e-6, 0.02 * n * 1e-6);
}

TEST(Geometric, PlaneIgnoresTangentialOffsets) {
  StereoScene s = source_scene();
  const ParamVector x = perturb(s.truth, 12);
  FaceState state(basis642(), x, false);
  // Footprint from the unperturbed pose so the surface point is off the pixel ray.
  const auto fps = compute_footprints(basis642(), s.views, s.truth, source_options());
  const Fragment f = fps[0][fps[0].size() / 2];
  const FaceState::Surface surf = state.surface(f);
  const Camera& cam = s.views[0].camera;
  const Vec3 pc = cam.to_camera(surf.world_point);
  const Vec3 ns = cam.rotation * surf.world_normal;
  const Vec3 ray = backproject(cam, Vec2(f.x + 0.5, f.y + 0.5), 1.0);
  FrameObservation v = s.views[0];
  const double depth = pc.dot(ns) / ray.dot(ns);
  v.depth.at(f.x, f.y) = static_cast<float>(depth);
  const Vec3 q = backproject(cam, Vec2(f.x + 0.5, f.y + 0.5), v.depth.at(f.x, f.y));
  const Vec3 ni = ns.cross(pc - q).normalized();
  for (int c = 0; c < 3; ++c) v.normals.at(f.x, f.y, c) = static_cast<float>(ni[c]);
  const ParamLayout layout{basis642().dims()};
  const ColumnMap cols = ColumnMap::all(layout);
  const std::vector<Fragment> one = {f};
  EXPECT_LT(residual_plane(state, v, one, 1.0, cols, false, "p").residual.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_GT(residual_point(state, v, one, 1.0, cols, false, "p").energy(), 1e-8);
}

TEST(Geometric, MatchesDirectOracle) {
  StereoScene s = source_scene(23, 0.002);
  const ParamVector x = perturb(s.truth, 13);
  EnergyOptions o = source_options();
  const auto fps = compute_footprints(basis642(), s.views, x, o);
  FaceState state(basis642(), x, false);
  const ParamLayout layout{basis642().dims()};
  const ColumnMap cols = ColumnMap::all(layout);
  const double ep = residual_point(state, s.views[0], fps[0], 3.0, cols, false, "p").energy();
  const double el = residual_plane(state, s.views[0], fps[0], 2.0, cols, false, "p").energy();
  const MeshGeometry mesh = eval_geometry(basis642(), x);
  const auto& topo = *basis642().topology;
  const Camera& cam = s.views[0].camera;
  double sp = 0.0, sl = 0.0;
  for (const Fragment& f : fps[0]) {
    Vec3 p = Vec3::Zero(), nrm = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      p += f.bary[k] * mesh.positions.row(topo.triangles[f.triangle][k]).transpose();
      nrm += f.bary[k] * mesh.normals.row(topo.triangles[f.triangle][k]).transpose();
    }
    const Vec3 ds = cam.rotation * p + cam.translation;
    const Vec3 ns = cam.rotation * nrm.normalized();
    const double d = s.views[0].depth.at(f.x, f.y);
    const Vec3 di((f.x + 0.5 - cam.cx) * d / cam.fx, (f.y + 0.5 - cam.cy) * d / cam.fy, d);
    const Vec3 ni(s.views[0].normals.at(f.x, f.y, 0), s.views[0].normals.at(f.x, f.y, 1),
                  s.views[0].normals.at(f.x, f.y, 2));
    sp += (ds - di).squaredNorm();
    sl += std::pow((ds - di).dot(ns), 2) + std::pow((ds - di).dot(ni), 2);
  }
  EXPECT_NEAR(ep, 3.0 * sp, 1e-9 * ep);
  EXPECT_NEAR(el, 2.0 * sl, 1e-9 * el);
}

TEST(Geometric, InvalidDepthPixelsAreDropped) {
  StereoScene s = source_scene();
  EnergyOptions o = source_options();
  const auto before = compute_footprints(basis642(), s.views, s.truth, o);
  const Fragment f = before[0][before[0].size() / 2];
  s.views[0].depth.at(f.x, f.y) = 0.0f;
  s.views[0].normals = depth_normals(s.views[0].depth, s.views[0].camera);
  const auto after = compute_footprints(basis642(), s.views, s.truth, o);
  EXPECT_LT(after[0].size(), before[0].size());
  for (const auto& g : after[0]) EXPECT_FALSE(g.x == f.x && g.y == f.y);
}

TEST(Stabilization, DefinitionalValues) {
  StereoScene s = source_scene();
  FaceState state(basis642(), s.truth, true);
  const ParamLayout layout{basis642().dims()};
  const ColumnMap cols = ColumnMap::all(layout);
  ASSERT_EQ(s.views[0].markers.size(), 8u);
  EXPECT_LT(residual_stabilization(state, s.views[0], 1.0, cols, false, "s").energy(), 1e-20);
  for (auto& m : s.views[0].markers) m.position += Vec2(2.0, 0.0);
  EXPECT_NEAR(residual_stabilization(state, s.views[0], 1.0, cols, false, "s").energy(), 4.0, 1e-12);
  const ResidualBlock b = residual_stabilization(state, s.views[0], 1.0, cols, true, "s");
  for (int c : b.cols) EXPECT_LT(c, kPoseDims);

  // Full system: non-pose directions leave the stabilization rows untouched.
  const ResidualSystem sys = assemble_source(basis642(), s.views[0], perturb(s.truth, 3), EnergyWeights{});
  std::mt19937_64 rng(3);
  VecX v = gaussian(layout.size(), rng);
  v.head<kPoseDims>().setZero();
  const VecX jv = sys.apply_J(v);
  int off = 0;
  for (const auto& blk : sys.blocks()) {
    if (blk.name.rfind("stabilization", 0) == 0) EXPECT_EQ(jv.segment(off, blk.num_rows()).cwiseAbs().maxCoeff(), 0.0);
    off += blk.num_rows();
  }
}

TEST(Stabilization, MatchesDirectSummation) {
  StereoScene s = source_scene();
  const ParamVector x = perturb(s.truth, 14);
  FaceState state(basis642(), x, false);
  const ParamLayout layout{basis642().dims()};
  const double e = residual_stabilization(state, s.views[0], 1.0, ColumnMap::all(layout), false, "s").energy();
  double sum = 0.0;
  for (const auto& m : s.views[0].markers) {
    const Vec3 pw = x.rotation_matrix() * s.views[0].marker_reference[m.corner] + x.translation;
    sum += (m.position - project(s.cams[0], s.cams[0].to_camera(pw))).squaredNorm();
  }
  EXPECT_NEAR(e, sum / 8.0, 1e-12 * e);
}

TEST(GradientCheck, TargetBlocks) {
  StereoScene s = stereo_scene();
  const ParamVector x = perturb(s.truth, 15);
  const auto checks = check_gradients(basis642(), s.views, x, EnergyOptions::target());
  EXPECT_EQ(checks.size(), 5u);
  for (const auto& c : checks) {
    EXPECT_GT(c.gradient_norm, 0.0) << c.block;
    EXPECT_LT(c.relative_error, 1e-3) << c.block;
  }
}

TEST(GradientCheck, SourceBlocks) {
  StereoScene s = source_scene(24, 0.001);
  const ParamVector x = perturb(s.truth, 16);
  const auto checks = check_gradients(basis642(), s.views, x, source_options());
  EXPECT_EQ(checks.size(), 5u);
  for (const auto& c : checks) {
    EXPECT_GT(c.gradient_norm, 0.0) << c.block;
    EXPECT_LT(c.relative_error, 1e-3) << c.block;
  }
}

TEST(ResidualSystem, NormalOperatorMatchesFiniteDifferenceJacobian) {
  // About 20x20 pixels of face.
  const std::vector<Camera> cams = {look_at_camera(Vec3::Zero(), Vec3(0, 0, 0.5), 50.0, 30, 30)};
  const ParamVector truth = scene_params(basis642(), 31);
  const auto views = observe(basis642(), truth, cams, SynthOptions{});
  const ParamVector x = perturb(truth, 17);
  const EnergyOptions o = EnergyOptions::target();
  const auto fps = compute_footprints(basis642(), views, x, o);
  const ParamLayout layout{basis642().dims()};
  const int n = layout.size();
  const ColumnMap cols = ColumnMap::all(layout);
  const ResidualSystem sys = assemble(basis642(), views, x, o, fps, cols, n, true);
  const double h = 1e-4;
  MatX jfd(sys.num_rows(), n);
  for (int i = 0; i < n; ++i) {
    VecX inc = VecX::Zero(n);
    inc[i] = h;
    const VecX rp = assemble(basis642(), views, apply_increment(x, inc), o, fps, cols, n, false).residual();
    const VecX rm = assemble(basis642(), views, apply_increment(x, -inc), o, fps, cols, n, false).residual();
    jfd.col(i) = (rp - rm) / (2 * h);
  }
  const VecX w = sys.row_weights();
  std::mt19937_64 rng(5);
  const VecX v = gaussian(n, rng), u = gaussian(n, rng);
  const VecX expected = jfd.transpose() * w.cwiseProduct(jfd * v);
  const VecX got = sys.apply_normal(v);
  EXPECT_LT((got - expected).norm(), 1e-3 * expected.norm());
  const VecX composed = sys.apply_Jt(w.cwiseProduct(sys.apply_J(v)));
  EXPECT_LT((composed - got).norm(), 1e-10 * got.norm());
  // Symmetric positive semidefinite.
  EXPECT_NEAR(u.dot(sys.apply_normal(v)), v.dot(sys.apply_normal(u)), 1e-9 * got.norm() * u.norm());
  EXPECT_GE(v.dot(got), 0.0);
  // Diagonal agrees with the operator on unit vectors.
  const VecX diag = sys.normal_diagonal();
  for (int i : {0, 4, 7, 30, n - 1}) {
    VecX e = VecX::Zero(n);
    e[i] = 1.0;
    EXPECT_NEAR(diag[i], sys.apply_normal(e)[i], 1e-9 * std::abs(diag[i]) + 1e-300);
  }
}

TEST(ResidualSystem, TrackingColumnsFreezeIdentity) {
  StereoScene s = stereo_scene();
  const ParamLayout layout{basis642().dims()};
  const ColumnMap cols = ColumnMap::tracking(layout);
  EXPECT_EQ(cols.num_active(), layout.size() - 32);
  const EnergyOptions o = EnergyOptions::target();
  const auto fps = compute_footprints(basis642(), s.views, s.truth, o);
  const ResidualSystem sys = assemble(basis642(), s.views, s.truth, o, fps, cols, cols.num_active(), true);
  EXPECT_EQ(sys.num_params(), cols.num_active());
}

TEST(Footprints, TrackingLossWhenNothingVisible) {
  StereoScene s = stereo_scene();
  ParamVector x = s.truth;
  x.translation = Vec3(3.0, 0.0, 0.5);
  try {
    compute_footprints(basis642(), s.views, x, EnergyOptions::target());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTrackingLost);
  }
}

TEST(Footprints, SourceUsesLowerFaceOnly) {
  StereoScene s = source_scene();
  const auto fps = compute_footprints(basis642(), s.views, s.truth, source_options());
  const auto& topo = *basis642().topology;
  const auto upper = basis642().vertex_mask(kRegionUpperFace);
  for (const auto& f : fps[0]) EXPECT_FALSE(fragment_in_mask(f, topo, upper));
}

TEST(MarkerPlanes, NoiselessPlaneRecoversCorners) {
  // Higher resolution so each marker covers enough pixels.
  const Camera cam = look_at_camera(Vec3::Zero(), Vec3(0, 0, 0.5), 4 * kFocal, 4 * kW, 4 * kH);
  SynthOptions o;
  o.depth = true;
  o.occlusion = true;
  std::mt19937_64 rng(1);
  const ParamVector x = scene_params(basis642(), 40);
  const FrameObservation v = synth_observation(basis642(), x, cam, o, rng);
  const auto reg = marker_regions(v.markers, cam.width, cam.height);
  const auto corners = fit_marker_planes(v.depth, cam, reg, v.markers);
  const HmdModel hmd;
  for (int k = 0; k < 8; ++k) {
    const Vec3 truth = cam.to_camera(x.rotation_matrix() * hmd.corners[k] + x.translation);
    EXPECT_LT((corners[k] - truth).norm(), 1e-6) << k;
  }
  const auto ref = calibrate_marker_reference(v, x);
  for (int k = 0; k < 8; ++k) EXPECT_LT((ref[k] - hmd.corners[k]).norm(), 1e-6);
}

TEST(MarkerPlanes, NoisyDepthMonteCarlo) {
  const Camera cam = look_at_camera(Vec3::Zero(), Vec3(0, 0, 0.5), 4 * kFocal, 4 * kW, 4 * kH);
  const ParamVector x = scene_params(basis642(), 41);
  SynthOptions o;
  o.depth = true;
  o.occlusion = true;
  std::mt19937_64 rng(77);
  const FrameObservation clean = synth_observation(basis642(), x, cam, o, rng);
  const auto reg = marker_regions(clean.markers, cam.width, cam.height);
  const HmdModel hmd;
  std::normal_distribution<double> noise(0.0, 0.002);
  double err = 0.0, oracle_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ImageF depth = clean.depth;
    for (float& d : depth.values())
      if (d > 0.0f) d += static_cast<float>(noise(rng));
    const auto corners = fit_marker_planes(depth, cam, reg, clean.markers);
    for (int m = 0; m < 2; ++m) {
      // Dense SVD total-least-squares plane fit.
      MatX pts(reg[m].size(), 3);
      for (size_t i = 0; i < reg[m].size(); ++i)
        pts.row(i) = backproject(cam, Vec2(reg[m][i].x() + 0.5, reg[m][i].y() + 0.5), depth.at(reg[m][i].x(), reg[m][i].y())).transpose();
      const Vec3 c = pts.colwise().mean();
      const MatX centered = pts.rowwise() - c.transpose();
      Eigen::JacobiSVD<MatX> svd(centered, Eigen::ComputeThinV);
      const Vec3 n = svd.matrixV().col(2);
      for (int k = 4 * m; k < 4 * m + 4; ++k) {
        const MarkerCorner& mc = clean.markers[k];
        const Vec3 ray((mc.position.x() - cam.cx) / cam.fx, (mc.position.y() - cam.cy) / cam.fy, 1.0);
        const Vec3 oracle = ray * (n.dot(c) / n.dot(ray));
        oracle_gap = std::max(oracle_gap, (oracle - corners[k]).norm());
        const Vec3 truth = cam.to_camera(x.rotation_matrix() * hmd.corners[k] + x.translation);
        err += (corners[k] - truth).norm();
      }
    }
  }
  EXPECT_LT(oracle_gap, 1e-9);
  EXPECT_LT(err / 800.0, 0.002);
}

TEST(MarkerPlanes, RankDeficientRegion) {
  const Camera cam = look_at_camera(Vec3::Zero(), Vec3(0, 0, 1), 100.0, 40, 30);
  ImageF depth(40, 30, 1, 1.0f);
  std::array<PixelRegion, 2> reg;
  for (int x = 5; x < 20; ++x) reg[0].emplace_back(x, 10);  // collinear points
  for (int y = 5; y < 12; ++y)
    for (int x = 25; x < 32; ++x) reg[1].emplace_back(x, y);
  std::vector<MarkerCorner> corners;
  for (int k = 0; k < 8; ++k) corners.push_back({Vec2(10 + k, 10), k});
  try {
    fit_marker_planes(depth, cam, reg, corners);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerate);
  }
}
