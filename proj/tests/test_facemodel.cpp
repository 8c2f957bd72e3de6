#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "reenact/facemodel.hpp"
#include "reenact/image.hpp"

using namespace reenact;

namespace {

const FaceBasis& small_basis() {
  static const FaceBasis basis = synth_basis(7, FaceDims{16, 16, 12}, 642);
  return basis;
}

VecX random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  VecX v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

Camera test_camera() {
  Camera c;
  c.fx = 200.0;
  c.fy = 210.0;
  c.cx = 80.0;
  c.cy = 60.0;
  c.width = 160;
  c.height = 120;
  return c;
}

}  // namespace

TEST(SynthBasis, DeterministicInSeed) {
  const FaceBasis a = synth_basis(7, FaceDims{16, 16, 12}, 2562);
  const FaceBasis b = synth_basis(7, FaceDims{16, 16, 12}, 2562);
  EXPECT_EQ(a.id_basis.rows(), 2562 * 3);
  EXPECT_EQ(a.exp_basis.cols(), 12);
  EXPECT_TRUE(a.mean_geometry == b.mean_geometry);
  EXPECT_TRUE(a.id_basis == b.id_basis);
  EXPECT_TRUE(a.exp_basis == b.exp_basis);
  EXPECT_TRUE(a.alb_basis == b.alb_basis);
  EXPECT_EQ(a.landmark_vertex_ids, b.landmark_vertex_ids);
  EXPECT_EQ(a.regions, b.regions);
  const FaceBasis c = synth_basis(8, FaceDims{16, 16, 12}, 2562);
  EXPECT_FALSE(a.id_basis == c.id_basis);
}

TEST(SynthBasis, Invariants) {
  const FaceBasis& b = small_basis();
  EXPECT_NO_THROW(b.validate());
  EXPECT_TRUE((b.sigma_id.array() > 0).all());
  EXPECT_TRUE((b.sigma_alb.array() > 0).all());
  EXPECT_TRUE((b.sigma_exp.array() == 1.0).all());
  for (int i = 1; i < b.sigma_id.size(); ++i) EXPECT_LT(b.sigma_id[i], b.sigma_id[i - 1]);
  // Columns are mutually orthogonal.
  const MatX g = b.id_basis.transpose() * b.id_basis;
  const double diag = g(0, 0);
  EXPECT_LT((g - diag * MatX::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff(), 1e-9 * diag);
  std::vector<int> ids(b.landmark_vertex_ids.begin(), b.landmark_vertex_ids.end());
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
  for (std::uint8_t bit : {kRegionUpperFace, kRegionLowerFace, kRegionEyeLeft, kRegionEyeRight, kRegionMouth}) {
    const auto m = b.vertex_mask(bit);
    EXPECT_GT(std::count(m.begin(), m.end(), 1), 2);
  }
}

TEST(SynthBasis, RejectsTooFewVertices) {
  try {
    synth_basis(7, FaceDims{16, 16, 12}, 162);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
  EXPECT_THROW(synth_basis(7, FaceDims{16, 16, 12}, 3), Error);
  EXPECT_THROW(synth_basis(7, FaceDims{16, 16, 12}, 1000), Error);
  EXPECT_THROW(synth_basis(7, FaceDims{0, 16, 12}, 642), Error);
}

TEST(SynthBasis, DefaultDimensions) {
  const FaceBasis b = synth_basis(1, FaceDims{80, 80, 76}, 642);
  EXPECT_EQ(ParamVector::zeros(b.dims()).size(), 269);
}

TEST(EvalGeometry, ZeroCoefficientsGiveMean) {
  const FaceBasis& b = small_basis();
  const MeshGeometry m =
      eval_geometry(b, VecX::Zero(16), VecX::Zero(12), Mat3::Identity(), Vec3::Zero());
  EXPECT_TRUE(m.positions == b.mean_geometry);
}

TEST(EvalGeometry, PureTranslation) {
  const FaceBasis& b = small_basis();
  const Vec3 t(0.1, -0.2, 0.5);
  const MeshGeometry m = eval_geometry(b, VecX::Zero(16), VecX::Zero(12), Mat3::Identity(), t);
  const MatX expected = b.mean_geometry.rowwise() + t.transpose();
  EXPECT_LT((m.positions - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EvalGeometry, MatchesNaiveSummation) {
  const FaceBasis& b = small_basis();
  std::mt19937_64 rng(3);
  const VecX alpha = random_vec(16, rng), delta = random_vec(12, rng);
  const Vec3 w(0.1, -0.3, 0.2), t(0.01, 0.02, 0.6);
  const Mat3 r = rotation_from_axis_angle(w);
  const MeshGeometry m = eval_geometry(b, alpha, delta, r, t);
  for (int v = 0; v < b.num_vertices(); ++v) {
    double p[3];
    for (int a = 0; a < 3; ++a) {
      p[a] = b.mean_geometry(v, a);
      for (int i = 0; i < 16; ++i) p[a] += b.id_basis(3 * v + a, i) * alpha[i];
      for (int i = 0; i < 12; ++i) p[a] += b.exp_basis(3 * v + a, i) * delta[i];
    }
    for (int a = 0; a < 3; ++a) {
      double world = t[a];
      for (int k = 0; k < 3; ++k) world += r(a, k) * p[k];
      ASSERT_NEAR(m.positions(v, a), world, 1e-12);
    }
    ASSERT_NEAR(m.normals.row(v).norm(), 1.0, 1e-6);
  }
}

TEST(EvalGeometry, LinearInIdentity) {
  const FaceBasis& b = small_basis();
  std::mt19937_64 rng(4);
  const VecX a1 = random_vec(16, rng), a2 = random_vec(16, rng), d = random_vec(12, rng);
  const MatX p12 = model_positions(b, a1 + a2, d);
  const MatX p1 = model_positions(b, a1, d);
  const VecX off = b.id_basis * a2;
  for (int v = 0; v < b.num_vertices(); ++v)
    for (int a = 0; a < 3; ++a)
      ASSERT_NEAR(p12(v, a) - p1(v, a), off[3 * v + a], 1e-9 * std::max(1.0, std::abs(off[3 * v + a])));
}

TEST(EvalGeometry, DimensionMismatch) {
  const FaceBasis& b = small_basis();
  try {
    model_positions(b, VecX::Zero(15), VecX::Zero(12));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
  EXPECT_THROW(eval_albedo(b, VecX::Zero(3)), Error);
}

TEST(EvalAlbedo, ZeroAndUnitCoefficients) {
  const FaceBasis& b = small_basis();
  EXPECT_TRUE(eval_albedo(b, VecX::Zero(16)) == b.mean_albedo);
  VecX beta = VecX::Zero(16);
  beta[0] = b.sigma_alb[0];
  const MatX a = eval_albedo(b, beta);
  for (int v = 0; v < b.num_vertices(); ++v)
    for (int c = 0; c < 3; ++c)
      ASSERT_NEAR(a(v, c), b.mean_albedo(v, c) + b.sigma_alb[0] * b.alb_basis(3 * v + c, 0), 1e-14);
}

TEST(EvalAlbedo, MatchesNaiveSummation) {
  const FaceBasis& b = small_basis();
  std::mt19937_64 rng(5);
  const VecX beta = random_vec(16, rng);
  const MatX a = eval_albedo(b, beta);
  for (int v = 0; v < b.num_vertices(); ++v) {
    for (int c = 0; c < 3; ++c) {
      double s = b.mean_albedo(v, c);
      for (int i = 0; i < 16; ++i) s += b.alb_basis(3 * v + c, i) * beta[i];
      ASSERT_NEAR(a(v, c), s, 1e-12);
    }
  }
}

TEST(SphericalHarmonics, DcTermConstant) {
  const double y0 = 1.0 / (2.0 * std::sqrt(std::numbers::pi));
  EXPECT_NEAR(y0, 0.282095, 1e-6);
  ShCoeffs g = ShCoeffs::Zero();
  g[0] = 1.5;
  g[9] = 2.0;
  g[18] = 0.5;
  const Vec3 albedo(0.2, 0.5, 0.9);
  const Vec3 n = Vec3(0.3, -0.4, 0.8).normalized();
  const Vec3 out = sh_shade(albedo, n, g);
  EXPECT_NEAR(out[0], 0.2 * 1.5 * y0, 1e-12);
  EXPECT_NEAR(out[1], 0.5 * 2.0 * y0, 1e-12);
  EXPECT_NEAR(out[2], 0.9 * 0.5 * y0, 1e-12);
}

TEST(SphericalHarmonics, BasisIsOrthonormalOnTheSphere) {
  // Fibonacci-lattice quadrature of <Y_i, Y_j> over the unit sphere.
  const int n = 200000;
  Eigen::Matrix<double, 9, 9> gram = Eigen::Matrix<double, 9, 9>::Zero();
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(1.0 - z * z);
    const Vec3 d(r * std::cos(golden * i), r * std::sin(golden * i), z);
    const ShBasis y = sh_basis(d);
    gram += y * y.transpose();
  }
  gram *= 4.0 * std::numbers::pi / n;
  EXPECT_LT((gram - Eigen::Matrix<double, 9, 9>::Identity()).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(SphericalHarmonics, GradientMatchesFiniteDifferences) {
  const Vec3 n(0.3, -0.5, 0.7);
  const auto g = sh_basis_gradient(n);
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    Vec3 p = n, m = n;
    p[k] += h;
    m[k] -= h;
    const ShBasis fd = (sh_basis(p) - sh_basis(m)) / (2 * h);
    for (int b = 0; b < 9; ++b) EXPECT_NEAR(g(b, k), fd[b], 1e-8);
  }
}

TEST(SphericalHarmonics, ZeroLightOrAlbedoIsBlack) {
  const Vec3 n = Vec3(0.1, 0.2, -0.9).normalized();
  EXPECT_EQ(sh_shade(Vec3(0.5, 0.5, 0.5), n, ShCoeffs::Zero()), Vec3::Zero());
  EXPECT_EQ(sh_shade(Vec3::Zero(), n, default_lighting()), Vec3::Zero());
}

TEST(SphericalHarmonics, LinearInLightAndAlbedo) {
  std::mt19937_64 rng(9);
  const ShCoeffs g1 = random_vec(27, rng), g2 = random_vec(27, rng);
  const Vec3 a1(0.1, 0.4, 0.7), a2(0.3, 0.2, 0.5);
  const Vec3 n = Vec3(-0.2, 0.4, -0.8).normalized();
  EXPECT_LT((sh_shade(a1, n, g1 + g2) - sh_shade(a1, n, g1) - sh_shade(a1, n, g2)).norm(), 1e-12);
  EXPECT_LT((sh_shade(a1 + a2, n, g1) - sh_shade(a1, n, g1) - sh_shade(a2, n, g1)).norm(), 1e-12);
}

TEST(SphericalHarmonics, RejectsNonUnitNormal) {
  EXPECT_THROW(sh_shade(Vec3::Ones(), Vec3(0, 0, 1.01), default_lighting()), Error);
  EXPECT_NO_THROW(sh_shade(Vec3::Ones(), Vec3(0, 0, 1.0 + 5e-7), default_lighting()));
}

TEST(Camera, ProjectOnAxisAndOffset) {
  const Camera c = test_camera();
  EXPECT_EQ(project(c, Vec3(0, 0, 2.0)), Vec2(c.cx, c.cy));
  const double z = 1.7;
  const Vec2 p = project(c, Vec3(z / c.fx, 0, z));
  EXPECT_NEAR(p.x(), c.cx + 1.0, 1e-12);
  EXPECT_NEAR(p.y(), c.cy, 1e-12);
}

TEST(Camera, BehindCameraAndBadDepth) {
  const Camera c = test_camera();
  try {
    project(c, Vec3(0, 0, -1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBehindCamera);
  }
  EXPECT_THROW(project(c, Vec3(0, 0, 0)), Error);
  EXPECT_THROW(backproject(c, Vec2(1, 1), 0.0), Error);
  EXPECT_THROW(backproject(c, Vec2(1, 1), -2.0), Error);
}

TEST(Camera, RoundTrip) {
  const Camera c = test_camera();
  EXPECT_EQ(backproject(c, Vec2(c.cx, c.cy), 0.8), Vec3(0, 0, 0.8));
  for (int y = 0; y < c.height; y += 7) {
    for (int x = 0; x < c.width; x += 7) {
      const Vec2 px(x + 0.5, y + 0.5);
      const Vec2 back = project(c, backproject(c, px, 0.3 + 0.01 * x));
      ASSERT_LT((back - px).norm(), 1e-9 * px.norm());
    }
  }
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.3, 0.3), zd(0.2, 3.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), zd(rng));
    const Vec3 q = backproject(c, project(c, p), p.z());
    ASSERT_LT((q - p).norm(), 1e-9 * p.norm());
  }
}

TEST(Camera, ProjectJacobianMatchesFiniteDifferences) {
  const Camera c = test_camera();
  const Vec3 p(0.05, -0.03, 0.6);
  const auto j = project_jacobian(c, p);
  const double h = 1e-7;
  for (int k = 0; k < 3; ++k) {
    Vec3 a = p, b = p;
    a[k] += h;
    b[k] -= h;
    const Vec2 fd = (project(c, a) - project(c, b)) / (2 * h);
    EXPECT_NEAR(j(0, k), fd.x(), 1e-4);
    EXPECT_NEAR(j(1, k), fd.y(), 1e-4);
  }
}

TEST(Camera, ScaledMatchesDecimatedPixelCenters) {
  const Camera c = test_camera();
  for (int f : {2, 4}) {
    const Camera s = c.scaled(f);
    for (int x : {0, 3, 17}) {
      const Vec3 p = backproject(c, Vec2(x * f + 0.5, x * f + 0.5), 1.0);
      const Vec2 q = project(s, p);
      EXPECT_NEAR(q.x(), x + 0.5, 1e-12);
      EXPECT_NEAR(q.y(), x + 0.5, 1e-12);
    }
  }
}

TEST(Camera, ValidateAndJson) {
  Camera c = test_camera();
  c.rotation = rotation_from_axis_angle(Vec3(0.1, 0.2, 0.3));
  c.translation = Vec3(0.1, 0.0, -0.2);
  const Camera d = camera_from_json(to_json(c));
  EXPECT_EQ(d.fx, c.fx);
  EXPECT_LT((d.rotation - c.rotation).norm(), 1e-15);
  c.fx = -1;
  EXPECT_THROW(c.validate(), Error);
  c = test_camera();
  c.cx = 500;
  EXPECT_THROW(c.validate(), Error);
}

TEST(ParamVector, LayoutAndRoundTrips) {
  const FaceDims dims{16, 16, 12};
  std::mt19937_64 rng(12);
  ParamVector x = ParamVector::zeros(dims);
  x.rotation = Vec3(0.1, -0.2, 0.05);
  x.translation = Vec3(0.0, 0.01, 0.5);
  x.alpha = random_vec(16, rng);
  x.beta = random_vec(16, rng);
  x.delta = random_vec(12, rng);
  x.gamma = default_lighting();
  EXPECT_EQ(x.size(), 16 + 16 + 12 + 27 + 6);
  const ParamLayout layout{dims};
  EXPECT_EQ(layout.size(), x.size());
  const VecX flat = x.flatten();
  EXPECT_EQ(flat[layout.beta()], x.beta[0]);
  EXPECT_EQ(flat[layout.gamma() + 26], x.gamma[26]);
  const ParamVector y = ParamVector::unflatten(dims, flat);
  EXPECT_TRUE(y.flatten() == flat);
  const ParamVector z = param_vector_from_json(to_json(x));
  EXPECT_TRUE(z.flatten() == flat);
}

TEST(ParamVector, IncrementComposesRotationOnTheLeft) {
  const FaceDims dims{16, 16, 12};
  ParamVector x = ParamVector::zeros(dims);
  x.rotation = Vec3(0.3, 0.1, -0.2);
  VecX inc = VecX::Zero(ParamLayout{dims}.size());
  inc.head<3>() = Vec3(0.01, -0.02, 0.03);
  inc[3] = 0.5;
  const ParamVector y = apply_increment(x, inc);
  const Mat3 expected = rotation_from_axis_angle(Vec3(0.01, -0.02, 0.03)) * x.rotation_matrix();
  EXPECT_LT((y.rotation_matrix() - expected).norm(), 1e-12);
  EXPECT_LT((y.rotation_matrix().transpose() * y.rotation_matrix() - Mat3::Identity()).norm(), 1e-12);
  EXPECT_EQ(y.translation.x(), 0.5);
}

TEST(BasisContainer, RoundTripAndBadMagic) {
  const FaceBasis& b = small_basis();
  const auto dir = std::filesystem::temp_directory_path() / "reenact_test_basis";
  std::filesystem::create_directories(dir);
  const auto path = dir / "basis.bin";
  save_basis(path, b);
  const FaceBasis c = load_basis(path);
  EXPECT_EQ(c.dims(), b.dims());
  EXPECT_EQ(c.num_vertices(), b.num_vertices());
  EXPECT_LT((c.id_basis - b.id_basis).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((c.mean_geometry - b.mean_geometry).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_EQ(c.topology->triangles, b.topology->triangles);
  EXPECT_EQ(c.landmark_vertex_ids, b.landmark_vertex_ids);
  EXPECT_EQ(c.regions, b.regions);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    load_basis(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
  EXPECT_THROW(load_basis(dir / "missing.bin"), Error);
}

TEST(Image, BoxDownsampleAndDecimate) {
  ImageF img(5, 4, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 2; ++c) img.at(x, y, c) = static_cast<float>(x + 10 * y + 100 * c);
  const ImageF d = downsample_box(img, 2);
  ASSERT_EQ(d.width(), 2);
  ASSERT_EQ(d.height(), 2);
  EXPECT_FLOAT_EQ(d.at(0, 0, 0), 5.5f);
  EXPECT_FLOAT_EQ(d.at(1, 1, 1), 127.5f);
  const ImageF k = decimate(img, 2);
  EXPECT_EQ(k.at(1, 1, 1), img.at(2, 2, 1));
}

TEST(Image, SplineSampleInterpolatesAndDifferentiates) {
  ImageF img(9, 7, 1);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) img.at(x, y) = static_cast<float>(std::sin(0.7 * x) + std::cos(0.5 * y));
  const ImageF coeffs = bspline_coefficients(img);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) EXPECT_NEAR(sample_bspline(coeffs, x + 0.5, y + 0.5, 0).value, img.at(x, y), 1e-5);
  const double h = 1e-5;
  for (const Vec2 p : {Vec2(4.3, 3.1), Vec2(0.2, 6.9), Vec2(8.7, 0.4)}) {
    const Sample s = sample_bspline(coeffs, p.x(), p.y(), 0);
    const auto at = [&](double x, double y) { return sample_bspline(coeffs, x, y, 0).value; };
    EXPECT_NEAR(s.dx, (at(p.x() + h, p.y()) - at(p.x() - h, p.y())) / (2 * h), 1e-6);
    EXPECT_NEAR(s.dy, (at(p.x(), p.y() + h) - at(p.x(), p.y() - h)) / (2 * h), 1e-6);
  }
  // Second derivative is continuous across knots.
  const auto second = [&](double x) {
    const double e = 1e-4;
    return (sample_bspline(coeffs, x + e, 3.5, 0).dx - sample_bspline(coeffs, x - e, 3.5, 0).dx) / (2 * e);
  };
  EXPECT_NEAR(second(4.5 - 1e-3), second(4.5 + 1e-3), 1e-2);
  const ImageF flat(5, 4, 1, 0.25f);
  EXPECT_NEAR(sample_bspline(bspline_coefficients(flat), 2.2, 1.7, 0).value, 0.25, 1e-6);
}

TEST(Image, PngAndPfmRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "reenact_test_image";
  std::filesystem::create_directories(dir);
  ImageF rgb(5, 4, 3);
  for (size_t i = 0; i < rgb.size(); ++i) rgb.values()[i] = static_cast<float>(i % 17) / 16.0f;
  write_png(dir / "a.png", rgb);
  const ImageF back = read_png(dir / "a.png");
  for (size_t i = 0; i < rgb.size(); ++i) {
    const float enc = srgb_encode(rgb.values()[i]);
    EXPECT_NEAR(srgb_encode(back.values()[i]), enc, 0.5f / 255.0f + 1e-6f);
  }
  ImageF depth(6, 3, 1);
  for (size_t i = 0; i < depth.size(); ++i) depth.values()[i] = 0.1f * static_cast<float>(i);
  write_pfm(dir / "d.pfm", depth);
  EXPECT_TRUE(read_pfm(dir / "d.pfm") == depth);
  EXPECT_THROW(read_png(dir / "missing.png"), Error);
}
