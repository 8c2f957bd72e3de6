#pragma once

#include <random>
#include <vector>

#include "reenact/energy.hpp"
#include "reenact/synth.hpp"

namespace reenact::testing {

inline const FaceBasis& basis642() {
  static const FaceBasis basis = synth_basis(7, FaceDims{16, 16, 12}, 642);
  return basis;
}

inline VecX gaussian(int n, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> normal(0.0, sigma);
  VecX v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

// Ground truth with identity, expression and mild pose.
inline ParamVector scene_params(const FaceBasis& basis, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamVector x = rest_pose(basis.dims());
  x.alpha = gaussian(basis.dims().identity, rng, 0.5);
  x.beta = gaussian(basis.dims().albedo, rng, 0.5);
  x.delta = gaussian(basis.dims().expression, rng, 0.4);
  x.rotation = Vec3(0.03, -0.08, 0.02);
  x.translation += Vec3(0.004, -0.003, 0.01);
  return x;
}

// Small perturbation of every parameter group.
inline ParamVector perturb(const ParamVector& x, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  ParamVector y = x;
  y.rotation += gaussian(3, rng, 0.01 * scale);
  y.translation += gaussian(3, rng, 0.002 * scale);
  y.alpha += gaussian(x.alpha.size(), rng, 0.2 * scale);
  y.beta += gaussian(x.beta.size(), rng, 0.2 * scale);
  y.delta += gaussian(x.delta.size(), rng, 0.2 * scale);
  y.gamma += ShCoeffs(gaussian(kNumShCoeffs, rng, 0.05 * scale));
  return y;
}

inline std::vector<Camera> stereo_cameras(int w, int h, double focal) {
  const Vec3 target(0.0, 0.0, 0.5);
  return {look_at_camera(Vec3(-0.05, 0, 0), target, focal, w, h),
          look_at_camera(Vec3(0.05, 0, 0), target, focal, w, h)};
}

inline std::vector<FrameObservation> observe(const FaceBasis& basis, const ParamVector& x,
                                             const std::vector<Camera>& cams, const SynthOptions& options,
                                             std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<FrameObservation> out;
  for (const auto& c : cams) out.push_back(synth_observation(basis, x, c, options, rng));
  return out;
}

inline std::vector<Vec3> hmd_reference() {
  const HmdModel hmd;
  return {hmd.corners.begin(), hmd.corners.end()};
}

// Per-block J^T W r scattered into the full parameter space.
inline VecX block_gradient(const ResidualBlock& b, int num_params) {
  VecX g = VecX::Zero(num_params);
  if (b.num_rows() == 0) return g;
  const VecX local = b.jacobian.transpose() * b.row_weights().cwiseProduct(b.residual);
  for (size_t i = 0; i < b.cols.size(); ++i) g[b.cols[i]] += local[static_cast<Eigen::Index>(i)];
  return g;
}

struct GradientCheck {
  std::string block;
  double relative_error = 0.0;
  double gradient_norm = 0.0;
};

// Central differences of 1/2 sum w r^2 per block with visibility and IRLS
// weights frozen at x.
inline std::vector<GradientCheck> check_gradients(const FaceBasis& basis, std::span<const FrameObservation> views,
                                                  const ParamVector& x, const EnergyOptions& options,
                                                  double step = 1e-5) {
  const ParamLayout layout{basis.dims()};
  const int n = layout.size();
  const ColumnMap cols = ColumnMap::all(layout);
  const auto fps = compute_footprints(basis, views, x, options);
  const ResidualSystem sys = assemble(basis, views, x, options, fps, cols, n, true);
  const auto half_energies = [&](const ParamVector& y) {
    ResidualSystem s = assemble(basis, views, y, options, fps, cols, n, false);
    s.copy_irls_weights(sys);
    std::vector<double> e;
    for (const auto& b : s.blocks()) e.push_back(0.5 * b.weighted_energy());
    return e;
  };
  const size_t nb = sys.blocks().size();
  std::vector<VecX> fd(nb, VecX::Zero(n));
  for (int i = 0; i < n; ++i) {
    VecX inc = VecX::Zero(n);
    inc[i] = step;
    const auto ep = half_energies(apply_increment(x, inc));
    const auto em = half_energies(apply_increment(x, -inc));
    for (size_t b = 0; b < nb; ++b) fd[b][i] = (ep[b] - em[b]) / (2.0 * step);
  }
  std::vector<GradientCheck> out;
  for (size_t b = 0; b < nb; ++b) {
    const VecX g = block_gradient(sys.blocks()[b], n);
    const double denom = std::max(g.norm(), 1e-300);
    out.push_back({sys.blocks()[b].name, (g - fd[b]).norm() / denom, g.norm()});
  }
  return out;
}

}  // namespace reenact::testing
