#pragma once

#include <optional>
#include <span>
#include <vector>

#include "reenact/facemodel.hpp"
#include "reenact/image.hpp"
#include "reenact/raster.hpp"

namespace reenact {

// Source and target share one expression basis, so transfer copies delta.
VecX transfer_expression(const VecX& source_delta, int target_dims);
ParamVector transfer_expression(const ParamVector& target, const VecX& source_delta);

// ---------------------------------------------------------------------------
// Texture space: uv in [0,1]^2 of the textured front of the model,
// texel (i, j) centered at ((i + 0.5) / N, (j + 0.5) / N).

struct TexelMap {
  int resolution = 0;
  std::vector<int> triangle;  // per texel, -1 outside the textured domain
  std::vector<Vec3> bary;

  int index(int i, int j) const { return j * resolution + i; }
};

TexelMap texel_map(const FaceBasis& basis, int resolution);

struct AlbedoTexture {
  ImageF albedo;  // N x N x 3, linear
  Mask observed;  // 1 where the texel was seen by the camera
};

struct ExtractOptions {
  int resolution = 256;
  double shading_guard = 1e-3;
  double depth_tolerance = 0.005;  // meters
};

// Observed color divided by the SH irradiance at the surface seen through the
// texel's pixel; unseen or badly lit texels keep the model albedo.
AlbedoTexture extract_texture(const ImageF& frame, const ParamVector& x, const Camera& camera,
                              const FaceBasis& basis, const TexelMap& texels, const ExtractOptions& options = {});

// Model albedo sampled on the texel grid.
AlbedoTexture model_texture(const FaceBasis& basis, const VecX& beta, const TexelMap& texels);

struct TexturedRender {
  ImageF color;  // linear RGB, zero where empty
  Mask mask;     // pixels covered by textured surface
  RenderOutput visibility;
};

// Renders the model with a texture (bilinear in uv) and SH shading. Untextured
// surface falls back to the model albedo.
TexturedRender render_textured(const FaceBasis& basis, const ParamVector& x, const Camera& camera,
                               const AlbedoTexture& texture);

// ---------------------------------------------------------------------------
// Mouth database

inline constexpr int kMouthLandmarks = kMouthLandmarkEnd - kMouthLandmarkBegin;

// 3D signature: model-space positions of the mouth landmarks (18 x 3).
MatX mouth_signature(const FaceBasis& basis, const VecX& alpha, const VecX& delta);

struct MouthFrame {
  std::vector<Vec2> landmarks;  // mouth landmarks in pixels
  MatX signature;
  ImageF texture;
};

struct MouthSegment {
  int begin = 0;  // frame range [begin, end)
  int end = 0;
  bool dynamic = false;
};

struct MouthEntry {
  MatX signature;
  ImageF texture;
  int segment = 0;
  double speed = 0.0;  // mean landmark speed, pixels per frame
};

struct MouthDatabase {
  std::vector<MouthEntry> entries;
  std::vector<MouthSegment> segments;

  void validate() const;
};

// Speed of frame t is the mean landmark displacement from t-1 (frame 0 copies
// frame 1). Runs below tau are static, the rest dynamic.
MouthDatabase build_mouth_db(std::span<const MouthFrame> frames, double tau);

inline constexpr double kSameSegmentFactor = 0.9;

// Nearest signature by summed squared distance; distances of entries in the
// previous entry's segment are multiplied by `preference`.
int retrieve_mouth(const MouthDatabase& db, const MatX& query, std::optional<int> previous,
                   double preference = kSameSegmentFactor);

// ---------------------------------------------------------------------------
// Saliency-preserving warp

struct WarpOptions {
  int cells = 16;
  int iterations = 5;
  double contour_weight = 100.0;
  double margin = 0.25;  // grid padding around the contour, fraction of its extent
  double min_rigidity = 0.1;
};

struct WarpGrid {
  int cells = 0;
  std::vector<Vec2> rest;      // (cells + 1)^2 vertices, row-major
  std::vector<Vec2> deformed;
  std::vector<double> rigidity;  // per cell, in [min_rigidity, 1]

  int vertex(int i, int j) const { return j * (cells + 1) + i; }
};

struct WarpResult {
  ImageF image;
  WarpGrid grid;
};

// Moves a grid over the source contour so its points land on the target
// contour while bright cells stay as rigid as possible.
WarpResult saliency_warp(const ImageF& texture, std::span<const Vec2> source_contour,
                         std::span<const Vec2> target_contour, const WarpOptions& options = {});

// Residual of the best rigid fit of a deformed cell against its rest shape.
double cell_rigidity_residual(const WarpGrid& grid, int i, int j);

// ---------------------------------------------------------------------------
// Cross-projection and blending

struct TexturePatch {
  ImageF image;  // target-sized
  Mask mask;
};

// Lifts source mouth pixels through the shared surface parameterization and
// re-renders them under the target parameters and camera.
TexturePatch cross_project_mouth(const FaceBasis& basis, const ImageF& source_frame, const ParamVector& source,
                                 const Camera& source_camera, const ParamVector& target,
                                 const Camera& target_camera, double min_coverage = 0.5);

struct PoissonOptions {
  int max_iterations = 2000;
  double tolerance = 1e-4;  // on the largest per-sweep update
};

struct PoissonResult {
  ImageF image;
  int iterations = 0;
  std::vector<double> residual_norms;  // per iteration, before the update
};

// Jacobi solve of lap(f) = lap(src) on the mask with f = target on its border.
// The mask must stay one pixel away from the image border.
PoissonResult poisson_blend(const ImageF& source, const ImageF& target, const Mask& mask,
                            const PoissonOptions& options = {});

// Poisson blend of a cross-projected patch into `target`. Off-mask patch pixels
// take the target color so guidance across the seam is patch minus target;
// mask pixels on the image border are dropped.
PoissonResult blend_patch(const TexturePatch& patch, const ImageF& target, const PoissonOptions& options = {});

struct Layer {
  ImageF color;
  Mask mask;
  double feather = 0.0;  // linear falloff width in pixels, 0 = hard
};

// Alpha per mask pixel: distance to the nearest off-mask pixel over `width`,
// capped at 1. Pixels outside the mask get 0.
ImageF feather_alpha(const Mask& mask, double width);

ImageF composite_layers(const ImageF& target, std::span<const Layer> layers);

inline constexpr double kFaceFeather = 3.0;

// Target <- face render (feathered) <- eye patches <- mouth patch.
ImageF composite_final(const ImageF& target, const Layer& face, std::span<const Layer> eyes,
                       const std::optional<Layer>& mouth);

// Mean per-pixel RGB distance over the mask (all pixels when the mask is empty).
double mean_color_error(const ImageF& a, const ImageF& b, const Mask& mask = Mask());

}  // namespace reenact
