#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "reenact/common.hpp"

namespace reenact {

inline constexpr int kNumLandmarks = 66;
inline constexpr int kNumShBands = 9;
inline constexpr int kNumShCoeffs = 3 * kNumShBands;
inline constexpr int kPoseDims = 6;

// First and one-past-last index of the mouth contour landmarks (outer + inner lip).
inline constexpr int kMouthLandmarkBegin = 48;
inline constexpr int kMouthLandmarkEnd = 66;

struct FaceDims {
  int identity = 16;
  int albedo = 16;
  int expression = 12;

  friend bool operator==(const FaceDims&, const FaceDims&) = default;
};

using ShCoeffs = Eigen::Matrix<double, kNumShCoeffs, 1>;  // index = channel * 9 + band

// Stacked unknowns: rigid pose, identity, albedo, expression, illumination.
struct ParamVector {
  Vec3 rotation = Vec3::Zero();  // axis-angle, model -> world
  Vec3 translation = Vec3::Zero();
  VecX alpha;
  VecX beta;
  VecX delta;
  ShCoeffs gamma = ShCoeffs::Zero();

  static ParamVector zeros(const FaceDims& dims);

  FaceDims dims() const;
  int size() const { return kPoseDims + alpha.size() + beta.size() + delta.size() + kNumShCoeffs; }
  Mat3 rotation_matrix() const { return rotation_from_axis_angle(rotation); }
  bool finite() const;

  // Flat layout: [rotation(3) translation(3) alpha beta delta gamma].
  VecX flatten() const;
  static ParamVector unflatten(const FaceDims& dims, const VecX& flat);
};

// Index arithmetic over the flat layout above; the first three entries are
// interpreted as a rotation increment by the solver.
struct ParamLayout {
  FaceDims dims;

  int rotation() const { return 0; }
  int translation() const { return 3; }
  int alpha() const { return kPoseDims; }
  int beta() const { return alpha() + dims.identity; }
  int delta() const { return beta() + dims.albedo; }
  int gamma() const { return delta() + dims.expression; }
  int size() const { return gamma() + kNumShCoeffs; }
};

// Applies a local increment: rotation composed on the left, the rest additive.
ParamVector apply_increment(const ParamVector& x, const VecX& increment);

nlohmann::json to_json(const ParamVector& x);
ParamVector param_vector_from_json(const nlohmann::json& j);

enum Region : std::uint8_t {
  kRegionUpperFace = 1 << 0,
  kRegionLowerFace = 1 << 1,
  kRegionEyeLeft = 1 << 2,
  kRegionEyeRight = 1 << 3,
  kRegionMouth = 1 << 4,
};

struct MeshTopology {
  std::vector<Vec3i> triangles;
  std::vector<std::vector<int>> vertex_faces;  // faces incident to each vertex

  MeshTopology() = default;
  MeshTopology(std::vector<Vec3i> tris, int num_vertices);
  int num_vertices() const { return static_cast<int>(vertex_faces.size()); }
};

struct FaceBasis {
  MatX mean_geometry;  // V x 3, meters
  MatX mean_albedo;    // V x 3, linear RGB
  MatX id_basis;       // 3V x D_id, row 3v+axis
  MatX exp_basis;      // 3V x D_exp
  MatX alb_basis;      // 3V x D_alb
  VecX sigma_id;
  VecX sigma_alb;
  VecX sigma_exp;
  std::shared_ptr<const MeshTopology> topology;
  std::array<int, kNumLandmarks> landmark_vertex_ids{};
  std::vector<std::uint8_t> regions;  // Region bit flags per vertex
  MatX uv;                            // V x 2 texture coordinates, negative when untextured

  int num_vertices() const { return static_cast<int>(mean_geometry.rows()); }
  FaceDims dims() const;
  std::vector<std::uint8_t> vertex_mask(std::uint8_t region_bits) const;

  // Throws on inconsistent dimensions, invalid indices, non-positive sigmas.
  void validate() const;
};

// Procedural head-like morphable model on an icosphere. V must be an
// icosphere vertex count (642, 2562, 10242, ...).
FaceBasis synth_basis(std::uint64_t seed, const FaceDims& dims, int num_vertices);

// Binary container: "FBAS", u32 version, u32 V, F, D_id, D_alb, D_exp, then
// little-endian float32 arrays and u32 indices. See README for the layout.
void save_basis(const std::filesystem::path& path, const FaceBasis& basis);
FaceBasis load_basis(const std::filesystem::path& path);

struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.5, cy = 0.5;
  int width = 1, height = 1;
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();

  void validate() const;
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center_world() const { return -rotation.transpose() * translation; }

  // Intrinsics of the image decimated by `factor` (see decimate()).
  Camera scaled(int factor) const;
};

nlohmann::json to_json(const Camera& camera);
Camera camera_from_json(const nlohmann::json& j);

Vec2 project(const Camera& camera, const Vec3& point_camera);
Vec3 backproject(const Camera& camera, const Vec2& pixel, double depth);

// d(project)/d(point), 2x3.
Eigen::Matrix<double, 2, 3> project_jacobian(const Camera& camera, const Vec3& point_camera);

struct MeshGeometry {
  MatX positions;  // V x 3 world
  MatX normals;    // V x 3 world, unit
  MatX albedo;     // V x 3 raw linear RGB (clamped at shading time)
  std::shared_ptr<const MeshTopology> topology;
};

// Model-space positions mean + id*alpha + exp*delta, V x 3.
MatX model_positions(const FaceBasis& basis, const VecX& alpha, const VecX& delta);

// Area-weighted vertex normals.
MatX vertex_normals(const MatX& positions, const MeshTopology& topology);

MeshGeometry eval_geometry(const FaceBasis& basis, const VecX& alpha, const VecX& delta,
                           const Mat3& rotation, const Vec3& translation);
MeshGeometry eval_geometry(const FaceBasis& basis, const ParamVector& x);
MatX eval_albedo(const FaceBasis& basis, const VecX& beta);

using ShBasis = Eigen::Matrix<double, kNumShBands, 1>;

// Real spherical harmonics up to band 2.
ShBasis sh_basis(const Vec3& n);
Eigen::Matrix<double, kNumShBands, 3> sh_basis_gradient(const Vec3& n);

Vec3 sh_irradiance(const Vec3& normal, const ShCoeffs& gamma);
Vec3 sh_shade(const Vec3& albedo, const Vec3& normal, const ShCoeffs& gamma);

// Plausible studio-like lighting used as a default initialization.
ShCoeffs default_lighting();

}  // namespace reenact
