#include "reenact/energy.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace reenact {

// ---------------------------------------------------------------------------
// Observations

bool FrameObservation::depth_valid(int x, int y) const {
  if (!has_depth()) return false;
  const float d = depth.at(x, y);
  return std::isfinite(d) && d > 0.0f;
}

void FrameObservation::validate() const {
  camera.validate();
  require(rgb.channels() == 3 && rgb.width() == camera.width && rgb.height() == camera.height,
          ErrorCode::kDimensionMismatch, "rgb image does not match the camera");
  if (has_depth()) {
    require(depth.channels() == 1 && depth.width() == rgb.width() && depth.height() == rgb.height(),
            ErrorCode::kDimensionMismatch, "depth is not aligned with rgb");
    require(normals.width() == depth.width() && normals.height() == depth.height() &&
                normals.channels() == 3,
            ErrorCode::kDimensionMismatch, "input normals missing");
  }
  for (const auto& l : landmarks) {
    require(l.index >= 0 && l.index < kNumLandmarks, ErrorCode::kInvalidArgument,
            "landmark index out of range");
    require(l.confidence >= 0.0 && l.confidence <= 1.0, ErrorCode::kInvalidArgument,
            "landmark confidence outside [0,1]");
  }
  require(markers.size() <= 8, ErrorCode::kInvalidArgument, "at most 8 marker corners");
  for (const auto& m : markers) {
    require(m.corner >= 0 && m.corner < 8, ErrorCode::kInvalidArgument, "marker corner out of range");
    require(m.corner < static_cast<int>(marker_reference.size()), ErrorCode::kInvalidArgument,
            "marker corner has no reference position");
  }
}

ImageF depth_normals(const ImageF& depth, const Camera& camera) {
  ImageF normals(depth.width(), depth.height(), 3, 0.0f);
  const auto point = [&](int x, int y, Vec3& out) {
    const float d = depth.at(x, y);
    if (!std::isfinite(d) || d <= 0.0f) return false;
    out = backproject(camera, Vec2(x + 0.5, y + 0.5), d);
    return true;
  };
  for (int y = 1; y + 1 < depth.height(); ++y) {
    for (int x = 1; x + 1 < depth.width(); ++x) {
      Vec3 c, l, r, u, d;
      if (!point(x, y, c) || !point(x - 1, y, l) || !point(x + 1, y, r) || !point(x, y - 1, u) ||
          !point(x, y + 1, d))
        continue;
      Vec3 n = (r - l).cross(d - u);
      const double len = n.norm();
      if (len <= 0.0) continue;
      n /= len;
      if (n.dot(c) > 0.0) n = -n;
      for (int k = 0; k < 3; ++k) normals.at(x, y, k) = static_cast<float>(n[k]);
    }
  }
  return normals;
}

void EnergyWeights::validate() const {
  for (double w : {ste, lan, reg, rgb, geo, point, plane, sta})
    require(w >= 0.0 && std::isfinite(w), ErrorCode::kInvalidArgument, "energy weights must be >= 0");
}

EnergyOptions EnergyOptions::target() {
  EnergyOptions o;
  o.kind = Kind::kTarget;
  o.use_landmarks = true;
  return o;
}

EnergyOptions EnergyOptions::source() {
  EnergyOptions o;
  o.kind = Kind::kSource;
  o.photometric_region = kRegionLowerFace;
  o.use_landmarks = false;
  o.use_depth = true;
  o.use_markers = true;
  return o;
}

// ---------------------------------------------------------------------------
// Columns

ColumnMap ColumnMap::all(const ParamLayout& layout) {
  ColumnMap m;
  m.local_to_global.resize(layout.size());
  for (int i = 0; i < layout.size(); ++i) m.local_to_global[i] = i;
  return m;
}

ColumnMap ColumnMap::tracking(const ParamLayout& layout) {
  ColumnMap m;
  m.local_to_global.assign(layout.size(), -1);
  int next = 0;
  for (int i = 0; i < layout.size(); ++i) {
    const bool identity = i >= layout.alpha() && i < layout.delta();
    if (!identity) m.local_to_global[i] = next++;
  }
  return m;
}

ColumnMap ColumnMap::only(const ParamLayout& layout, int begin, int count) {
  ColumnMap m;
  m.local_to_global.assign(layout.size(), -1);
  for (int i = 0; i < count; ++i) m.local_to_global[begin + i] = i;
  return m;
}

int ColumnMap::num_active() const {
  return static_cast<int>(std::count_if(local_to_global.begin(), local_to_global.end(),
                                        [](int g) { return g >= 0; }));
}

namespace {

// Active subset of a block's relevant local columns, with local -> compact lookup.
struct BlockColumns {
  std::vector<int> cols;
  std::vector<int> compact;

  BlockColumns(const ColumnMap& map, std::initializer_list<std::pair<int, int>> ranges)
      : compact(map.local_to_global.size(), -1) {
    for (const auto& [begin, count] : ranges) {
      for (int i = begin; i < begin + count; ++i) {
        if (map.local_to_global[i] < 0) continue;
        compact[i] = static_cast<int>(cols.size());
        cols.push_back(map.local_to_global[i]);
      }
    }
  }

  // Scatter a dense local row into the compact block row.
  template <typename Row, typename Dst>
  void scatter(const Row& local, Dst&& dst) const {
    for (size_t i = 0; i < compact.size(); ++i)
      if (compact[i] >= 0) dst(compact[i]) = local(static_cast<Eigen::Index>(i));
  }
};

ResidualBlock make_block(std::string name, int group_size, bool robust, int groups, int ncols,
                         bool jacobian) {
  ResidualBlock b;
  b.name = std::move(name);
  b.group_size = group_size;
  b.robust = robust;
  b.residual = VecX::Zero(static_cast<Eigen::Index>(groups) * group_size);
  b.group_weight = VecX::Zero(groups);
  b.irls_weight = VecX::Ones(groups);
  if (jacobian) b.jacobian = MatX::Zero(b.residual.size(), ncols);
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Residual system

VecX ResidualBlock::row_weights() const {
  VecX w(residual.size());
  for (int g = 0; g < num_groups(); ++g)
    w.segment(g * group_size, group_size).setConstant(group_weight[g] * irls_weight[g]);
  return w;
}

double ResidualBlock::energy() const {
  double e = 0.0;
  for (int g = 0; g < num_groups(); ++g) {
    const double n = group_norm(g);
    e += group_weight[g] * (robust ? n : n * n);
  }
  return e;
}

double ResidualBlock::weighted_energy() const {
  double e = 0.0;
  for (int g = 0; g < num_groups(); ++g) {
    const double n = group_norm(g);
    e += group_weight[g] * irls_weight[g] * n * n;
  }
  return e;
}

void ResidualSystem::add(ResidualBlock block) {
  for (int c : block.cols)
    require(c >= 0 && c < num_params_, ErrorCode::kDimensionMismatch, "block column out of range");
  require(block.jacobian.size() == 0 ||
              (block.jacobian.rows() == block.num_rows() &&
               block.jacobian.cols() == static_cast<Eigen::Index>(block.cols.size())),
          ErrorCode::kDimensionMismatch, "block Jacobian shape mismatch");
  blocks_.push_back(std::move(block));
}

int ResidualSystem::num_rows() const {
  int n = 0;
  for (const auto& b : blocks_) n += b.num_rows();
  return n;
}

const ResidualBlock* ResidualSystem::find(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return &b;
  return nullptr;
}

void ResidualSystem::update_irls_weights(double epsilon) {
  for (auto& b : blocks_) {
    for (int g = 0; g < b.num_groups(); ++g)
      b.irls_weight[g] = b.robust ? 1.0 / std::max(b.group_norm(g), epsilon) : 1.0;
  }
}

void ResidualSystem::copy_irls_weights(const ResidualSystem& other) {
  require(other.blocks_.size() == blocks_.size(), ErrorCode::kDimensionMismatch,
          "systems have different block structure");
  for (size_t i = 0; i < blocks_.size(); ++i) {
    require(other.blocks_[i].irls_weight.size() == blocks_[i].irls_weight.size(),
            ErrorCode::kDimensionMismatch, "systems have different block sizes");
    blocks_[i].irls_weight = other.blocks_[i].irls_weight;
  }
}

double ResidualSystem::energy() const {
  double e = 0.0;
  for (const auto& b : blocks_) e += b.energy();
  return e;
}

double ResidualSystem::weighted_energy() const {
  double e = 0.0;
  for (const auto& b : blocks_) e += b.weighted_energy();
  return e;
}

double ResidualSystem::block_energy(const std::string& prefix) const {
  double e = 0.0;
  for (const auto& b : blocks_)
    if (b.name.rfind(prefix, 0) == 0) e += b.energy();
  return e;
}

VecX ResidualSystem::residual() const {
  VecX r(num_rows());
  int off = 0;
  for (const auto& b : blocks_) {
    r.segment(off, b.num_rows()) = b.residual;
    off += b.num_rows();
  }
  return r;
}

VecX ResidualSystem::row_weights() const {
  VecX w(num_rows());
  int off = 0;
  for (const auto& b : blocks_) {
    w.segment(off, b.num_rows()) = b.row_weights();
    off += b.num_rows();
  }
  return w;
}

namespace {

VecX gather(const VecX& v, const std::vector<int>& cols) {
  VecX out(cols.size());
  for (size_t i = 0; i < cols.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[cols[i]];
  return out;
}

void scatter_add(VecX& dst, const std::vector<int>& cols, const VecX& values) {
  for (size_t i = 0; i < cols.size(); ++i) dst[cols[i]] += values[static_cast<Eigen::Index>(i)];
}

void require_jacobian(const ResidualBlock& b) {
  require(b.jacobian.rows() == b.num_rows() || b.num_rows() == 0, ErrorCode::kInvalidArgument,
          "system was assembled without Jacobians");
}

}  // namespace

VecX ResidualSystem::apply_J(const VecX& v) const {
  require(v.size() == num_params_, ErrorCode::kDimensionMismatch, "apply_J input length");
  VecX out(num_rows());
  int off = 0;
  for (const auto& b : blocks_) {
    require_jacobian(b);
    if (b.num_rows() > 0) out.segment(off, b.num_rows()) = b.jacobian * gather(v, b.cols);
    off += b.num_rows();
  }
  return out;
}

VecX ResidualSystem::apply_Jt(const VecX& u) const {
  require(u.size() == num_rows(), ErrorCode::kDimensionMismatch, "apply_Jt input length");
  VecX out = VecX::Zero(num_params_);
  int off = 0;
  for (const auto& b : blocks_) {
    require_jacobian(b);
    if (b.num_rows() > 0) scatter_add(out, b.cols, b.jacobian.transpose() * u.segment(off, b.num_rows()));
    off += b.num_rows();
  }
  return out;
}

VecX ResidualSystem::gradient() const {
  VecX out = VecX::Zero(num_params_);
  for (const auto& b : blocks_) {
    require_jacobian(b);
    if (b.num_rows() == 0) continue;
    scatter_add(out, b.cols, b.jacobian.transpose() * b.row_weights().cwiseProduct(b.residual));
  }
  return out;
}

VecX ResidualSystem::apply_normal(const VecX& v) const {
  require(v.size() == num_params_, ErrorCode::kDimensionMismatch, "apply_normal input length");
  VecX out = VecX::Zero(num_params_);
  for (const auto& b : blocks_) {
    require_jacobian(b);
    if (b.num_rows() == 0) continue;
    const VecX jv = b.jacobian * gather(v, b.cols);
    scatter_add(out, b.cols, b.jacobian.transpose() * b.row_weights().cwiseProduct(jv));
  }
  return out;
}

VecX ResidualSystem::normal_diagonal() const {
  VecX out = VecX::Zero(num_params_);
  for (const auto& b : blocks_) {
    require_jacobian(b);
    if (b.num_rows() == 0) continue;
    const VecX w = b.row_weights();
    const VecX d = (b.jacobian.array().square().colwise() * w.array()).colwise().sum().transpose();
    scatter_add(out, b.cols, d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Face state

namespace {

Eigen::Matrix<double, 3, Eigen::Dynamic> geo_rows(const FaceBasis& basis, int v) {
  Eigen::Matrix<double, 3, Eigen::Dynamic> g(3, basis.id_basis.cols() + basis.exp_basis.cols());
  g << basis.id_basis.middleRows(3 * v, 3), basis.exp_basis.middleRows(3 * v, 3);
  return g;
}

}  // namespace

FaceState::FaceState(const FaceBasis& basis, const ParamVector& x, bool with_derivatives)
    : basis_(&basis),
      x_(x),
      rotation_(x.rotation_matrix()),
      with_derivatives_(with_derivatives),
      geo_dims_(static_cast<int>(basis.id_basis.cols() + basis.exp_basis.cols())) {
  require(x.dims() == basis.dims(), ErrorCode::kDimensionMismatch,
          "parameter vector does not match the basis dimensions");
  model_ = reenact::model_positions(basis, x.alpha, x.delta);
  albedo_ = eval_albedo(basis, x.beta);
  const MeshTopology& topo = *basis.topology;
  const int nv = basis.num_vertices();
  MatX raw = MatX::Zero(nv, 3);
  for (const auto& t : topo.triangles) {
    const Vec3 a = model_.row(t[0]), b = model_.row(t[1]), c = model_.row(t[2]);
    const Vec3 n = (b - a).cross(c - a);
    for (int k = 0; k < 3; ++k) raw.row(t[k]) += n.transpose();
  }
  normal_lengths_ = raw.rowwise().norm();
  normals_ = raw;
  for (int i = 0; i < nv; ++i)
    if (normal_lengths_[i] > 0.0) normals_.row(i) /= normal_lengths_[i];

  if (!with_derivatives) return;
  normal_jacobians_.assign(nv, Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, geo_dims_));
  for (const auto& t : topo.triangles) {
    const Vec3 a = model_.row(t[0]), b = model_.row(t[1]), c = model_.row(t[2]);
    const Vec3 e1 = b - a, e2 = c - a;
    const auto ga = geo_rows(basis, t[0]);
    const Eigen::Matrix<double, 3, Eigen::Dynamic> dc =
        -skew(e2) * (geo_rows(basis, t[1]) - ga) + skew(e1) * (geo_rows(basis, t[2]) - ga);
    for (int k = 0; k < 3; ++k) normal_jacobians_[t[k]] += dc;
  }
  for (int i = 0; i < nv; ++i) {
    if (normal_lengths_[i] <= 0.0) continue;
    const Vec3 n = normals_.row(i);
    normal_jacobians_[i] = (Mat3::Identity() - n * n.transpose()) / normal_lengths_[i] * normal_jacobians_[i];
  }
}

Vec3 FaceState::world_vertex(int v) const {
  return rotation_ * model_.row(v).transpose() + x_.translation;
}

Eigen::Matrix<double, 3, Eigen::Dynamic> FaceState::vertex_geo_jacobian(int v) const {
  return rotation_ * geo_rows(*basis_, v);
}

FaceState::Surface FaceState::surface(const Fragment& f) const {
  const Vec3i& t = basis_->topology->triangles[f.triangle];
  Surface s;
  s.model_point = Vec3::Zero();
  Vec3 n_sum = Vec3::Zero(), albedo_raw = Vec3::Zero();
  for (int k = 0; k < 3; ++k) {
    s.model_point += f.bary[k] * model_.row(t[k]).transpose();
    n_sum += f.bary[k] * normals_.row(t[k]).transpose();
    albedo_raw += f.bary[k] * albedo_.row(t[k]).transpose();
  }
  const double n_len = n_sum.norm();
  const Vec3 n_model = n_sum / n_len;
  s.world_point = rotation_ * s.model_point + x_.translation;
  s.world_normal = rotation_ * n_model;
  s.albedo = albedo_raw.cwiseMax(0.0).cwiseMin(1.0);
  if (!with_derivatives_) return s;

  Eigen::Matrix<double, 3, Eigen::Dynamic> g = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, geo_dims_);
  Eigen::Matrix<double, 3, Eigen::Dynamic> dn = g;
  const int dalb = static_cast<int>(basis_->alb_basis.cols());
  s.d_albedo = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, dalb);
  for (int k = 0; k < 3; ++k) {
    g += f.bary[k] * geo_rows(*basis_, t[k]);
    dn += f.bary[k] * normal_jacobians_[t[k]];
    s.d_albedo += f.bary[k] * basis_->alb_basis.middleRows(3 * t[k], 3);
  }
  for (int c = 0; c < 3; ++c)
    if (albedo_raw[c] < 0.0 || albedo_raw[c] > 1.0) s.d_albedo.row(c).setZero();
  s.d_point = rotation_ * g;
  s.d_normal = rotation_ * ((Mat3::Identity() - n_model * n_model.transpose()) / n_len * dn);
  return s;
}

// ---------------------------------------------------------------------------
// Residual blocks

namespace {

// Scatters geometry-column derivatives (alpha | delta) into a local row.
template <typename Row, typename Src>
void put_geo(Row& row, const ParamLayout& layout, const Src& geo) {
  const int did = layout.dims.identity, dexp = layout.dims.expression;
  row.segment(layout.alpha(), did) += geo.head(did);
  row.segment(layout.delta(), dexp) += geo.tail(dexp);
}

}  // namespace

ResidualBlock residual_photometric(const FaceState& state, const FrameObservation& view,
                                   std::span<const Fragment> pixels, double weight,
                                   const ColumnMap& columns, bool jacobian, std::string name) {
  require(!jacobian || state.has_derivatives(), ErrorCode::kInvalidArgument,
          "face state built without derivatives");
  const ParamLayout layout{state.basis().dims()};
  const BlockColumns bc(columns, {{0, layout.size()}});
  const int n = static_cast<int>(pixels.size());
  ResidualBlock b = make_block(std::move(name), 3, true, n, static_cast<int>(bc.cols.size()), jacobian);
  b.cols = bc.cols;
  if (n == 0) return b;
  b.group_weight.setConstant(weight / n);
  const Camera& cam = view.camera;
  const ImageF coeffs = bspline_coefficients(view.rgb);
  const ShCoeffs& gamma = state.params().gamma;
  const Vec3 t = state.params().translation;
  Eigen::RowVectorXd local(layout.size());

  for (int i = 0; i < n; ++i) {
    const FaceState::Surface s = state.surface(pixels[i]);
    const Vec3 pc = cam.to_camera(s.world_point);
    const Vec2 uv = project(cam, pc);
    const ShBasis y = sh_basis(s.world_normal);
    Sample samples[3];
    for (int c = 0; c < 3; ++c) {
      samples[c] = sample_bspline(coeffs, uv.x(), uv.y(), c);
      const double irr = gamma.segment<kNumShBands>(c * kNumShBands).dot(y);
      b.residual[3 * i + c] = s.albedo[c] * irr - samples[c].value;
    }
    if (!jacobian) continue;

    const Eigen::Matrix<double, 2, 3> a = project_jacobian(cam, pc) * cam.rotation;
    const Mat3 dp_rot = -skew(s.world_point - t);
    const Mat3 dn_rot = -skew(s.world_normal);
    const Eigen::Matrix<double, kNumShBands, 3> dy = sh_basis_gradient(s.world_normal);
    for (int c = 0; c < 3; ++c) {
      local.setZero();
      const Eigen::RowVector2d grad(samples[c].dx, samples[c].dy);
      const Eigen::RowVector3d ga = grad * a;
      const Eigen::Matrix<double, kNumShBands, 1> gc = gamma.segment<kNumShBands>(c * kNumShBands);
      const Eigen::RowVector3d shade_dn = s.albedo[c] * (gc.transpose() * dy);
      const double irr = gc.dot(y);
      local.segment<3>(layout.rotation()) = shade_dn * dn_rot - ga * dp_rot;
      local.segment<3>(layout.translation()) = -ga;
      const Eigen::RowVectorXd geo = shade_dn * s.d_normal - ga * s.d_point;
      put_geo(local, layout, geo);
      local.segment(layout.beta(), layout.dims.albedo) = irr * s.d_albedo.row(c);
      local.segment<kNumShBands>(layout.gamma() + c * kNumShBands) = s.albedo[c] * y.transpose();
      bc.scatter(local, [&](int j) -> double& { return b.jacobian(3 * i + c, j); });
    }
  }
  return b;
}

ResidualBlock residual_landmarks(const FaceState& state, const FrameObservation& view,
                                 double weight, const ColumnMap& columns, bool jacobian,
                                 std::string name) {
  const ParamLayout layout{state.basis().dims()};
  const BlockColumns bc(columns, {{0, kPoseDims},
                                  {layout.alpha(), layout.dims.identity},
                                  {layout.delta(), layout.dims.expression}});
  const int n = static_cast<int>(view.landmarks.size());
  ResidualBlock b = make_block(std::move(name), 2, false, n, static_cast<int>(bc.cols.size()), jacobian);
  b.cols = bc.cols;
  const Camera& cam = view.camera;
  const Vec3 t = state.params().translation;
  Eigen::RowVectorXd local(layout.size());
  for (int i = 0; i < n; ++i) {
    const Landmark& l = view.landmarks[i];
    const int v = state.basis().landmark_vertex_ids[l.index];
    const Vec3 pw = state.world_vertex(v);
    const Vec3 pc = cam.to_camera(pw);
    b.residual.segment<2>(2 * i) = l.position - project(cam, pc);
    b.group_weight[i] = weight * l.confidence / n;
    if (!jacobian) continue;
    const Eigen::Matrix<double, 2, 3> a = -project_jacobian(cam, pc) * cam.rotation;
    const Mat3 dp_rot = -skew(pw - t);
    const auto g = state.vertex_geo_jacobian(v);
    for (int r = 0; r < 2; ++r) {
      local.setZero();
      local.segment<3>(layout.rotation()) = a.row(r) * dp_rot;
      local.segment<3>(layout.translation()) = a.row(r);
      const Eigen::RowVectorXd geo = a.row(r) * g;
      put_geo(local, layout, geo);
      bc.scatter(local, [&](int j) -> double& { return b.jacobian(2 * i + r, j); });
    }
  }
  return b;
}

ResidualBlock residual_regularizer(const FaceState& state, double weight, bool identity,
                                   bool expression, const ColumnMap& columns, bool jacobian) {
  const FaceBasis& basis = state.basis();
  const ParamLayout layout{basis.dims()};
  const ParamVector& x = state.params();
  const int did = layout.dims.identity, dalb = layout.dims.albedo, dexp = layout.dims.expression;
  const BlockColumns bc(columns, {{layout.alpha(), identity ? did + dalb : 0},
                                  {layout.delta(), expression ? dexp : 0}});
  const int n = (identity ? did + dalb : 0) + (expression ? dexp : 0);
  ResidualBlock b = make_block("regularizer", 1, false, n, static_cast<int>(bc.cols.size()), jacobian);
  b.cols = bc.cols;
  b.group_weight.setConstant(weight);
  int row = 0;
  const auto emit = [&](double value, double sigma, int local_index) {
    b.residual[row] = value / sigma;
    if (jacobian && bc.compact[local_index] >= 0) b.jacobian(row, bc.compact[local_index]) = 1.0 / sigma;
    ++row;
  };
  if (identity) {
    for (int i = 0; i < did; ++i) emit(x.alpha[i], basis.sigma_id[i], layout.alpha() + i);
    for (int i = 0; i < dalb; ++i) emit(x.beta[i], basis.sigma_alb[i], layout.beta() + i);
  }
  if (expression) {
    for (int i = 0; i < dexp; ++i) emit(x.delta[i], basis.sigma_exp[i], layout.delta() + i);
  }
  return b;
}

namespace {

Vec3 input_point(const FrameObservation& view, const Fragment& f) {
  return backproject(view.camera, Vec2(f.x + 0.5, f.y + 0.5), view.depth.at(f.x, f.y));
}

Vec3 input_normal(const FrameObservation& view, const Fragment& f) {
  return Vec3(view.normals.at(f.x, f.y, 0), view.normals.at(f.x, f.y, 1), view.normals.at(f.x, f.y, 2));
}

}  // namespace

ResidualBlock residual_point(const FaceState& state, const FrameObservation& view,
                             std::span<const Fragment> pixels, double weight,
                             const ColumnMap& columns, bool jacobian, std::string name) {
  require(view.has_depth(), ErrorCode::kInvalidArgument, "point-to-point term needs depth");
  const ParamLayout layout{state.basis().dims()};
  const BlockColumns bc(columns, {{0, kPoseDims},
                                  {layout.alpha(), layout.dims.identity},
                                  {layout.delta(), layout.dims.expression}});
  const int n = static_cast<int>(pixels.size());
  ResidualBlock b = make_block(std::move(name), 3, false, n, static_cast<int>(bc.cols.size()), jacobian);
  b.cols = bc.cols;
  b.group_weight.setConstant(weight);
  const Camera& cam = view.camera;
  const Vec3 t = state.params().translation;
  Eigen::RowVectorXd local(layout.size());
  for (int i = 0; i < n; ++i) {
    const FaceState::Surface s = state.surface(pixels[i]);
    const Vec3 pc = cam.to_camera(s.world_point);
    b.residual.segment<3>(3 * i) = pc - input_point(view, pixels[i]);
    if (!jacobian) continue;
    const Mat3 dp_rot = cam.rotation * -skew(s.world_point - t);
    const Eigen::Matrix<double, 3, Eigen::Dynamic> dgeo = cam.rotation * s.d_point;
    for (int r = 0; r < 3; ++r) {
      local.setZero();
      local.segment<3>(layout.rotation()) = dp_rot.row(r);
      local.segment<3>(layout.translation()) = cam.rotation.row(r);
      const Eigen::RowVectorXd geo = dgeo.row(r);
      put_geo(local, layout, geo);
      bc.scatter(local, [&](int j) -> double& { return b.jacobian(3 * i + r, j); });
    }
  }
  return b;
}

ResidualBlock residual_plane(const FaceState& state, const FrameObservation& view,
                             std::span<const Fragment> pixels, double weight,
                             const ColumnMap& columns, bool jacobian, std::string name) {
  require(view.has_depth(), ErrorCode::kInvalidArgument, "point-to-plane term needs depth");
  const ParamLayout layout{state.basis().dims()};
  const BlockColumns bc(columns, {{0, kPoseDims},
                                  {layout.alpha(), layout.dims.identity},
                                  {layout.delta(), layout.dims.expression}});
  const int n = static_cast<int>(pixels.size());
  ResidualBlock b = make_block(std::move(name), 1, false, 2 * n, static_cast<int>(bc.cols.size()), jacobian);
  b.cols = bc.cols;
  b.group_weight.setConstant(weight);
  const Camera& cam = view.camera;
  const Vec3 t = state.params().translation;
  Eigen::RowVectorXd local(layout.size());
  for (int i = 0; i < n; ++i) {
    const FaceState::Surface s = state.surface(pixels[i]);
    const Vec3 pc = cam.to_camera(s.world_point);
    const Vec3 diff = pc - input_point(view, pixels[i]);
    const Vec3 n_model = cam.rotation * s.world_normal;
    const Vec3 n_input = input_normal(view, pixels[i]);
    b.residual[2 * i] = diff.dot(n_model);
    b.residual[2 * i + 1] = diff.dot(n_input);
    if (!jacobian) continue;
    const Mat3 dp_rot = cam.rotation * -skew(s.world_point - t);
    const Mat3 dn_rot = cam.rotation * -skew(s.world_normal);
    const Eigen::Matrix<double, 3, Eigen::Dynamic> dp_geo = cam.rotation * s.d_point;
    const Eigen::Matrix<double, 3, Eigen::Dynamic> dn_geo = cam.rotation * s.d_normal;

    local.setZero();
    local.segment<3>(layout.rotation()) = n_model.transpose() * dp_rot + diff.transpose() * dn_rot;
    local.segment<3>(layout.translation()) = n_model.transpose() * cam.rotation;
    Eigen::RowVectorXd geo = n_model.transpose() * dp_geo + diff.transpose() * dn_geo;
    put_geo(local, layout, geo);
    bc.scatter(local, [&](int j) -> double& { return b.jacobian(2 * i, j); });

    local.setZero();
    local.segment<3>(layout.rotation()) = n_input.transpose() * dp_rot;
    local.segment<3>(layout.translation()) = n_input.transpose() * cam.rotation;
    geo = n_input.transpose() * dp_geo;
    put_geo(local, layout, geo);
    bc.scatter(local, [&](int j) -> double& { return b.jacobian(2 * i + 1, j); });
  }
  return b;
}

ResidualBlock residual_stabilization(const FaceState& state, const FrameObservation& view,
                                     double weight, const ColumnMap& columns, bool jacobian,
                                     std::string name) {
  const ParamLayout layout{state.basis().dims()};
  const BlockColumns bc(columns, {{0, kPoseDims}});
  const int n = static_cast<int>(view.markers.size());
  ResidualBlock b = make_block(std::move(name), 2, false, n, static_cast<int>(bc.cols.size()), jacobian);
  b.cols = bc.cols;
  if (n == 0) return b;
  b.group_weight.setConstant(weight / n);
  const Camera& cam = view.camera;
  const Mat3& r = state.rotation();
  const Vec3 t = state.params().translation;
  Eigen::RowVectorXd local(layout.size());
  for (int i = 0; i < n; ++i) {
    const MarkerCorner& m = view.markers[i];
    require(m.corner >= 0 && m.corner < static_cast<int>(view.marker_reference.size()),
            ErrorCode::kInvalidArgument, "marker corner has no reference position");
    const Vec3 ra = r * view.marker_reference[m.corner];
    const Vec3 pc = cam.to_camera(ra + t);
    b.residual.segment<2>(2 * i) = m.position - project(cam, pc);
    if (!jacobian) continue;
    const Eigen::Matrix<double, 2, 3> a = -project_jacobian(cam, pc) * cam.rotation;
    for (int row = 0; row < 2; ++row) {
      local.setZero();
      local.segment<3>(layout.rotation()) = a.row(row) * -skew(ra);
      local.segment<3>(layout.translation()) = a.row(row);
      bc.scatter(local, [&](int j) -> double& { return b.jacobian(2 * i + row, j); });
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Assembly

namespace {

MatX world_positions(const FaceBasis& basis, const ParamVector& x) {
  const MatX model = model_positions(basis, x.alpha, x.delta);
  return (model * x.rotation_matrix().transpose()).rowwise() + x.translation.transpose();
}

}  // namespace

std::vector<Footprint> compute_footprints(const FaceBasis& basis,
                                          std::span<const FrameObservation> views,
                                          const ParamVector& x, const EnergyOptions& options) {
  const MatX positions = world_positions(basis, x);
  const std::vector<std::uint8_t> mask =
      options.photometric_region ? basis.vertex_mask(options.photometric_region)
                                 : std::vector<std::uint8_t>(basis.num_vertices(), 1);
  std::vector<Footprint> out;
  bool any = false;
  for (const auto& view : views) {
    const RenderOutput render = rasterize_visibility(positions, *basis.topology, view.camera);
    Footprint fp;
    for (const Fragment& f : render.visible) {
      if (!fragment_in_mask(f, *basis.topology, mask)) continue;
      if (options.use_depth && view.has_depth()) {
        if (!view.depth_valid(f.x, f.y)) continue;
        if (view.normals.at(f.x, f.y, 0) == 0.0f && view.normals.at(f.x, f.y, 1) == 0.0f &&
            view.normals.at(f.x, f.y, 2) == 0.0f)
          continue;
      }
      fp.push_back(f);
    }
    any = any || !fp.empty();
    out.push_back(std::move(fp));
  }
  if (options.use_photometric && !any) fail(ErrorCode::kTrackingLost, "no visible model pixels in any view");
  return out;
}

ResidualSystem assemble(const FaceBasis& basis, std::span<const FrameObservation> views,
                        const ParamVector& x, const EnergyOptions& options,
                        std::span<const Footprint> footprints, const ColumnMap& columns,
                        int num_params, bool jacobian) {
  options.weights.validate();
  require(footprints.size() == views.size(), ErrorCode::kDimensionMismatch,
          "one footprint per view required");
  const FaceState state(basis, x, jacobian);
  const EnergyWeights& w = options.weights;
  ResidualSystem system(num_params);
  for (size_t c = 0; c < views.size(); ++c) {
    const FrameObservation& view = views[c];
    const std::string tag = "/" + std::to_string(c);
    if (options.use_photometric)
      system.add(residual_photometric(state, view, footprints[c], options.photometric_weight(),
                                      columns, jacobian, "photometric" + tag));
    if (options.use_landmarks && !view.landmarks.empty())
      system.add(residual_landmarks(state, view, w.lan, columns, jacobian, "landmarks" + tag));
    if (options.use_depth && view.has_depth()) {
      system.add(residual_point(state, view, footprints[c], w.geo * w.point, columns, jacobian, "point" + tag));
      system.add(residual_plane(state, view, footprints[c], w.geo * w.plane, columns, jacobian, "plane" + tag));
    }
    if (options.use_markers && !view.markers.empty())
      system.add(residual_stabilization(state, view, w.sta, columns, jacobian, "stabilization" + tag));
  }
  if (options.regularize_identity || options.regularize_expression)
    system.add(residual_regularizer(state, w.reg, options.regularize_identity,
                                    options.regularize_expression, columns, jacobian));
  system.update_irls_weights(options.irls_epsilon);
  return system;
}

ResidualSystem assemble_target(const FaceBasis& basis, std::span<const FrameObservation> views,
                               const ParamVector& x, const EnergyWeights& weights) {
  EnergyOptions options = EnergyOptions::target();
  options.weights = weights;
  const auto fps = compute_footprints(basis, views, x, options);
  const ParamLayout layout{basis.dims()};
  return assemble(basis, views, x, options, fps, ColumnMap::all(layout), layout.size(), true);
}

ResidualSystem assemble_source(const FaceBasis& basis, const FrameObservation& view,
                               const ParamVector& x, const EnergyWeights& weights) {
  EnergyOptions options = EnergyOptions::source();
  options.weights = weights;
  const std::span<const FrameObservation> views(&view, 1);
  const auto fps = compute_footprints(basis, views, x, options);
  const ParamLayout layout{basis.dims()};
  return assemble(basis, views, x, options, fps, ColumnMap::all(layout), layout.size(), true);
}

double evaluate_energy(const FaceBasis& basis, std::span<const FrameObservation> views,
                       const ParamVector& x, const EnergyOptions& options) {
  const auto fps = compute_footprints(basis, views, x, options);
  const ParamLayout layout{basis.dims()};
  return assemble(basis, views, x, options, fps, ColumnMap::all(layout), layout.size(), false).energy();
}

// ---------------------------------------------------------------------------
// Marker planes

std::array<Vec3, 8> fit_marker_planes(const ImageF& depth, const Camera& camera,
                                      const std::array<PixelRegion, 2>& regions,
                                      std::span<const MarkerCorner> corners) {
  std::array<Vec3, 2> centroid, normal;
  for (int m = 0; m < 2; ++m) {
    std::vector<Vec3> pts;
    for (const auto& p : regions[m]) {
      if (!depth.contains(p.x(), p.y())) continue;
      const float d = depth.at(p.x(), p.y());
      if (!std::isfinite(d) || d <= 0.0f) continue;
      pts.push_back(backproject(camera, Vec2(p.x() + 0.5, p.y() + 0.5), d));
    }
    require(pts.size() >= 8, ErrorCode::kDegenerate, "marker region has fewer than 8 valid depth pixels");
    Vec3 c = Vec3::Zero();
    for (const auto& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();
    require(ev[1] > 1e-12 * std::max(ev[2], 1e-300) && ev[2] > 0.0, ErrorCode::kDegenerate,
            "marker point cloud is rank deficient");
    centroid[m] = c;
    normal[m] = eig.eigenvectors().col(0);
  }
  std::array<Vec3, 8> out;
  std::array<bool, 8> seen{};
  for (const auto& corner : corners) {
    require(corner.corner >= 0 && corner.corner < 8, ErrorCode::kInvalidArgument, "corner id out of range");
    const int m = corner.corner / 4;
    const Vec3 ray((corner.position.x() - camera.cx) / camera.fx, (corner.position.y() - camera.cy) / camera.fy, 1.0);
    const double denom = normal[m].dot(ray);
    require(std::abs(denom) > 1e-12, ErrorCode::kDegenerate, "corner ray parallel to marker plane");
    out[corner.corner] = ray * (normal[m].dot(centroid[m]) / denom);
    seen[corner.corner] = true;
  }
  for (int k = 0; k < 8; ++k)
    require(seen[k], ErrorCode::kInvalidArgument, "all 8 marker corners are required");
  return out;
}

}  // namespace reenact
