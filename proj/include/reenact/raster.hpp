#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "reenact/facemodel.hpp"
#include "reenact/image.hpp"

namespace reenact {

// One visible pixel: the nearest front-facing triangle at the pixel center and
// the perspective-correct barycentric coordinates of that surface point.
struct Fragment {
  int x = 0;
  int y = 0;
  int triangle = -1;
  Vec3 bary = Vec3::Zero();
};

struct RenderOutput {
  int width = 0;
  int height = 0;
  ImageF color;   // linear RGB, zero background
  ImageF depth;   // camera-space z, +inf background
  ImageF normal;  // camera-space unit normals, zero background
  std::vector<int> fragment_index;  // per pixel index into `visible`, -1 for background
  std::vector<Fragment> visible;    // raster order (row-major)

  const Fragment* fragment_at(int x, int y) const {
    const int i = fragment_index[static_cast<size_t>(y) * width + x];
    return i < 0 ? nullptr : &visible[i];
  }
};

// Visibility only: z-buffered nearest triangle per pixel center with
// top-left fill rule and back-face culling. Color/normal images are left empty.
RenderOutput rasterize_visibility(const MatX& positions_world, const MeshTopology& topology,
                                  const Camera& camera);

// Full render: visibility plus per-pixel SH shading of interpolated albedo and
// interpolated (renormalized) normals.
RenderOutput rasterize(const MeshGeometry& mesh, const Camera& camera, const ShCoeffs& gamma);

// Per-pixel region test: the vertex with the largest barycentric weight decides.
bool fragment_in_mask(const Fragment& fragment, const MeshTopology& topology,
                      std::span<const std::uint8_t> vertex_mask);

Mask rasterize_mask(const RenderOutput& render, const MeshTopology& topology,
                    std::span<const std::uint8_t> vertex_mask);

// P' = P intersected with the region mask.
std::vector<Fragment> restrict_visibility(const RenderOutput& render, const MeshTopology& topology,
                                          std::span<const std::uint8_t> vertex_mask);

// Surface attributes of a fragment.
Vec3 interpolate_rows(const MatX& per_vertex, const MeshTopology& topology, const Fragment& f);

}  // namespace reenact
