#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reenact/facemodel.hpp"
#include "reenact/image.hpp"
#include "reenact/raster.hpp"

namespace reenact {

struct Landmark {
  Vec2 position = Vec2::Zero();  // pixels
  int index = 0;                 // 0..65
  double confidence = 1.0;       // detector confidence in [0,1]
};

struct MarkerCorner {
  Vec2 position = Vec2::Zero();
  int corner = 0;  // 0..7, four per marker
};

struct FrameObservation {
  Camera camera;
  ImageF rgb;      // linear RGB
  ImageF depth;    // camera-space z in meters; empty when absent, <= 0 or non-finite = invalid
  ImageF normals;  // derived from depth, zero where invalid
  std::vector<Landmark> landmarks;
  std::vector<MarkerCorner> markers;
  std::vector<Vec3> marker_reference;  // A_k in face-model space, indexed by corner id

  bool has_depth() const { return !depth.empty(); }
  bool depth_valid(int x, int y) const;
  void validate() const;
};

// Input normals from depth cross products on the 4-neighborhood, oriented
// towards the camera; zero where any neighbor is invalid.
ImageF depth_normals(const ImageF& depth, const Camera& camera);

struct EnergyWeights {
  // Stereo target tracking.
  double ste = 100.0;
  double lan = 0.0005;
  double reg = 0.0025;
  // RGB-D source tracking.
  double rgb = 100.0;
  double geo = 10000.0;
  double point = 1.0;
  double plane = 1.0;
  double sta = 1.0;

  void validate() const;
};

struct EnergyOptions {
  enum class Kind { kTarget, kSource };

  Kind kind = Kind::kTarget;
  EnergyWeights weights;
  double irls_epsilon = 1e-6;
  std::uint8_t photometric_region = 0;  // Region bits; 0 keeps every visible pixel
  bool use_photometric = true;
  bool use_landmarks = true;
  bool use_depth = false;
  bool use_markers = false;
  bool regularize_identity = true;
  bool regularize_expression = true;

  static EnergyOptions target();
  static EnergyOptions source();

  double photometric_weight() const { return kind == Kind::kTarget ? weights.ste : weights.rgb; }
};

// Maps local parameter indices (ParamLayout) to system columns; -1 = frozen.
struct ColumnMap {
  std::vector<int> local_to_global;

  static ColumnMap all(const ParamLayout& layout);
  // Pose, expression, illumination only (identity frozen).
  static ColumnMap tracking(const ParamLayout& layout);
  static ColumnMap only(const ParamLayout& layout, int begin, int count);
  int num_active() const;
};

struct ResidualBlock {
  std::string name;
  int group_size = 1;  // residual rows per group (3 for a color pixel)
  bool robust = false;  // l2,1 block: energy is sum of group norms
  VecX residual;
  VecX group_weight;  // term weight x normalizer x confidence
  VecX irls_weight;   // per group, 1 for least-squares blocks
  MatX jacobian;      // rows x cols.size(); empty when not requested
  std::vector<int> cols;

  int num_rows() const { return static_cast<int>(residual.size()); }
  int num_groups() const { return static_cast<int>(group_weight.size()); }
  double group_norm(int g) const { return residual.segment(g * group_size, group_size).norm(); }
  VecX row_weights() const;
  double energy() const;           // true term energy
  double weighted_energy() const;  // sum of w r^2 with current IRLS weights
};

// Stacked weighted residual with matrix-free J / J^T products.
class ResidualSystem {
 public:
  explicit ResidualSystem(int num_params = 0) : num_params_(num_params) {}

  void add(ResidualBlock block);
  int num_params() const { return num_params_; }
  int num_rows() const;
  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  const ResidualBlock* find(const std::string& name) const;

  void update_irls_weights(double epsilon);
  void copy_irls_weights(const ResidualSystem& other);

  double energy() const;
  double weighted_energy() const;
  double block_energy(const std::string& prefix) const;

  VecX residual() const;
  VecX row_weights() const;
  VecX apply_J(const VecX& v) const;
  VecX apply_Jt(const VecX& u) const;
  VecX gradient() const;                      // J^T W r
  VecX apply_normal(const VecX& v) const;     // J^T W J v
  VecX normal_diagonal() const;               // diag(J^T W J)

 private:
  int num_params_;
  std::vector<ResidualBlock> blocks_;
};

// Model state at one parameter vector, with per-vertex normal derivatives when
// requested. Geometry columns are [alpha | delta].
class FaceState {
 public:
  FaceState(const FaceBasis& basis, const ParamVector& x, bool with_derivatives);

  const FaceBasis& basis() const { return *basis_; }
  const ParamVector& params() const { return x_; }
  const Mat3& rotation() const { return rotation_; }
  bool has_derivatives() const { return with_derivatives_; }
  int geo_dims() const { return geo_dims_; }

  struct Surface {
    Vec3 model_point;
    Vec3 world_point;
    Vec3 world_normal;
    Vec3 albedo;                                        // clamped to [0,1]
    Eigen::Matrix<double, 3, Eigen::Dynamic> d_point;   // world point w.r.t. geo columns
    Eigen::Matrix<double, 3, Eigen::Dynamic> d_normal;  // world normal w.r.t. geo columns
    Eigen::Matrix<double, 3, Eigen::Dynamic> d_albedo;  // albedo w.r.t. beta
  };

  Surface surface(const Fragment& fragment) const;
  Vec3 world_vertex(int v) const;
  Eigen::Matrix<double, 3, Eigen::Dynamic> vertex_geo_jacobian(int v) const;  // world, 3 x geo

  const MatX& model_positions() const { return model_; }
  const MatX& model_normals() const { return normals_; }
  const MatX& albedo() const { return albedo_; }

 private:
  const FaceBasis* basis_;
  ParamVector x_;
  Mat3 rotation_;
  bool with_derivatives_;
  int geo_dims_;
  MatX model_;
  MatX normals_;
  VecX normal_lengths_;
  MatX albedo_;
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> normal_jacobians_;  // model space
};

using Footprint = std::vector<Fragment>;

// Visible pixels per view at X: rasterized, restricted to the photometric region
// and, for depth-based energies, to pixels with valid input depth and normals.
std::vector<Footprint> compute_footprints(const FaceBasis& basis,
                                          std::span<const FrameObservation> views,
                                          const ParamVector& x, const EnergyOptions& options);

// Residual blocks. `columns` maps the local layout to system columns.
ResidualBlock residual_photometric(const FaceState& state, const FrameObservation& view,
                                   std::span<const Fragment> pixels, double weight,
                                   const ColumnMap& columns, bool jacobian, std::string name);
ResidualBlock residual_landmarks(const FaceState& state, const FrameObservation& view,
                                 double weight, const ColumnMap& columns, bool jacobian,
                                 std::string name);
ResidualBlock residual_regularizer(const FaceState& state, double weight, bool identity,
                                   bool expression, const ColumnMap& columns, bool jacobian);
ResidualBlock residual_point(const FaceState& state, const FrameObservation& view,
                             std::span<const Fragment> pixels, double weight,
                             const ColumnMap& columns, bool jacobian, std::string name);
ResidualBlock residual_plane(const FaceState& state, const FrameObservation& view,
                             std::span<const Fragment> pixels, double weight,
                             const ColumnMap& columns, bool jacobian, std::string name);
ResidualBlock residual_stabilization(const FaceState& state, const FrameObservation& view,
                                     double weight, const ColumnMap& columns, bool jacobian,
                                     std::string name);

// Assembles every enabled term for the given views with frozen footprints.
// IRLS weights are initialized from the residuals at X.
ResidualSystem assemble(const FaceBasis& basis, std::span<const FrameObservation> views,
                        const ParamVector& x, const EnergyOptions& options,
                        std::span<const Footprint> footprints, const ColumnMap& columns,
                        int num_params, bool jacobian);

// Convenience: refresh visibility at X and assemble with all columns active.
ResidualSystem assemble_target(const FaceBasis& basis, std::span<const FrameObservation> views,
                               const ParamVector& x, const EnergyWeights& weights);
ResidualSystem assemble_source(const FaceBasis& basis, const FrameObservation& view,
                               const ParamVector& x, const EnergyWeights& weights);

// True energy with visibility recomputed at X.
double evaluate_energy(const FaceBasis& basis, std::span<const FrameObservation> views,
                       const ParamVector& x, const EnergyOptions& options);

// Per-marker pixel regions on the HMD front plane.
using PixelRegion = std::vector<Eigen::Vector2i>;

// Fits a total-least-squares plane to each marker region's back-projected depth
// and intersects the corner rays with it. Returns 8 camera-space corners.
std::array<Vec3, 8> fit_marker_planes(const ImageF& depth, const Camera& camera,
                                      const std::array<PixelRegion, 2>& regions,
                                      std::span<const MarkerCorner> corners);

}  // namespace reenact
