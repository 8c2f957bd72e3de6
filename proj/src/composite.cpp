#include "reenact/composite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace reenact {

namespace {

bool textured(const FaceBasis& basis, int triangle) {
  const Vec3i& t = basis.topology->triangles[triangle];
  return basis.uv(t[0], 0) >= 0.0 && basis.uv(t[1], 0) >= 0.0 && basis.uv(t[2], 0) >= 0.0;
}

Vec2 fragment_uv(const FaceBasis& basis, int triangle, const Vec3& bary) {
  const Vec3i& t = basis.topology->triangles[triangle];
  return bary[0] * basis.uv.row(t[0]).transpose() + bary[1] * basis.uv.row(t[1]).transpose() +
         bary[2] * basis.uv.row(t[2]).transpose();
}

Vec3 rows_at(const MatX& m, const Vec3i& t, const Vec3& bary) {
  return bary[0] * m.row(t[0]).transpose() + bary[1] * m.row(t[1]).transpose() + bary[2] * m.row(t[2]).transpose();
}

void put_rgb(ImageF& image, int x, int y, const Vec3& c) {
  for (int k = 0; k < 3; ++k) image.at(x, y, k) = static_cast<float>(c[k]);
}

Vec3 get_rgb(const ImageF& image, int x, int y) {
  return {image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2)};
}

}  // namespace

VecX transfer_expression(const VecX& source_delta, int target_dims) {
  require(source_delta.size() == target_dims, ErrorCode::kDimensionMismatch,
          "source and target expression spaces differ");
  return source_delta;
}

ParamVector transfer_expression(const ParamVector& target, const VecX& source_delta) {
  ParamVector out = target;
  out.delta = transfer_expression(source_delta, static_cast<int>(target.delta.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Texture space

TexelMap texel_map(const FaceBasis& basis, int resolution) {
  require(resolution >= 2, ErrorCode::kInvalidArgument, "texture resolution must be >= 2");
  TexelMap map;
  map.resolution = resolution;
  const size_t n = static_cast<size_t>(resolution) * resolution;
  map.triangle.assign(n, -1);
  map.bary.assign(n, Vec3::Zero());
  const double N = resolution;
  for (int f = 0; f < static_cast<int>(basis.topology->triangles.size()); ++f) {
    if (!textured(basis, f)) continue;
    const Vec3i& t = basis.topology->triangles[f];
    const Vec2 a = basis.uv.row(t[0]).transpose() * N, b = basis.uv.row(t[1]).transpose() * N,
               c = basis.uv.row(t[2]).transpose() * N;
    const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (std::abs(area) < 1e-14) continue;
    const int i0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int i1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
    const int j0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int j1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        const Vec2 p(i + 0.5, j + 0.5);
        const double l1 = ((p - a).x() * (c - a).y() - (p - a).y() * (c - a).x()) / area;
        const double l2 = ((b - a).x() * (p - a).y() - (b - a).y() * (p - a).x()) / area;
        const double l0 = 1.0 - l1 - l2;
        constexpr double eps = -1e-12;
        if (l0 < eps || l1 < eps || l2 < eps) continue;
        const int k = map.index(i, j);
        if (map.triangle[k] >= 0) continue;
        map.triangle[k] = f;
        map.bary[k] = Vec3(l0, l1, l2);
      }
  }
  return map;
}

AlbedoTexture model_texture(const FaceBasis& basis, const VecX& beta, const TexelMap& texels) {
  const MatX albedo = eval_albedo(basis, beta);
  const int n = texels.resolution;
  AlbedoTexture tex;
  tex.albedo = ImageF(n, n, 3, 0.0f);
  tex.observed = Mask(n, n, 1, 0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const int k = texels.index(i, j);
      if (texels.triangle[k] < 0) continue;
      const Vec3i& t = basis.topology->triangles[texels.triangle[k]];
      put_rgb(tex.albedo, i, j, rows_at(albedo, t, texels.bary[k]).cwiseMax(0.0).cwiseMin(1.0));
    }
  return tex;
}

AlbedoTexture extract_texture(const ImageF& frame, const ParamVector& x, const Camera& camera,
                              const FaceBasis& basis, const TexelMap& texels, const ExtractOptions& options) {
  require(frame.width() == camera.width && frame.height() == camera.height && frame.channels() == 3,
          ErrorCode::kDimensionMismatch, "frame does not match the camera");
  require(texels.resolution > 0, ErrorCode::kInvalidArgument, "empty texel map");
  const MeshGeometry mesh = eval_geometry(basis, x);
  const RenderOutput vis = rasterize_visibility(mesh.positions, *basis.topology, camera);
  AlbedoTexture tex = model_texture(basis, x.beta, texels);
  const Vec3 eye = camera.center_world();
  const int n = texels.resolution;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const int k = texels.index(i, j);
      if (texels.triangle[k] < 0) continue;
      const Vec3i& t = basis.topology->triangles[texels.triangle[k]];
      const Vec3 p = rows_at(mesh.positions, t, texels.bary[k]);
      const Vec3 pc = camera.to_camera(p);
      if (pc.z() <= 1e-3) continue;
      const Vec2 q = project(camera, pc);
      const int px = static_cast<int>(std::floor(q.x())), py = static_cast<int>(std::floor(q.y()));
      if (px < 0 || py < 0 || px >= camera.width || py >= camera.height) continue;
      const Fragment* f = vis.fragment_at(px, py);
      if (!f || std::abs(vis.depth.at(px, py) - pc.z()) > options.depth_tolerance) continue;
      if (rows_at(mesh.normals, t, texels.bary[k]).dot(eye - p) <= 0.0) continue;
      // Unshade the surface point the pixel actually saw.
      const Vec3i& ft = basis.topology->triangles[f->triangle];
      const Vec3 normal = rows_at(mesh.normals, ft, f->bary).normalized();
      const Vec3 shading = sh_irradiance(normal, x.gamma);
      if (shading.minCoeff() < options.shading_guard) continue;
      put_rgb(tex.albedo, i, j, get_rgb(frame, px, py).cwiseQuotient(shading));
      tex.observed.at(i, j) = 1;
    }
  return tex;
}

TexturedRender render_textured(const FaceBasis& basis, const ParamVector& x, const Camera& camera,
                               const AlbedoTexture& texture) {
  const MeshGeometry mesh = eval_geometry(basis, x);
  TexturedRender out;
  out.visibility = rasterize_visibility(mesh.positions, *basis.topology, camera);
  out.color = ImageF(camera.width, camera.height, 3, 0.0f);
  out.mask = Mask(camera.width, camera.height, 1, 0);
  const double n = texture.albedo.width();
  for (const Fragment& f : out.visibility.visible) {
    const Vec3i& t = basis.topology->triangles[f.triangle];
    Vec3 albedo;
    if (textured(basis, f.triangle)) {
      const Vec2 uv = fragment_uv(basis, f.triangle, f.bary);
      for (int c = 0; c < 3; ++c) albedo[c] = sample_bilinear(texture.albedo, uv.x() * n, uv.y() * n, c);
      out.mask.at(f.x, f.y) = 1;
    } else {
      albedo = rows_at(mesh.albedo, t, f.bary).cwiseMax(0.0).cwiseMin(1.0);
    }
    const Vec3 normal = rows_at(mesh.normals, t, f.bary).normalized();
    put_rgb(out.color, f.x, f.y, albedo.cwiseProduct(sh_irradiance(normal, x.gamma)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mouth database

MatX mouth_signature(const FaceBasis& basis, const VecX& alpha, const VecX& delta) {
  const MatX model = model_positions(basis, alpha, delta);
  MatX sig(kMouthLandmarks, 3);
  for (int k = 0; k < kMouthLandmarks; ++k) sig.row(k) = model.row(basis.landmark_vertex_ids[kMouthLandmarkBegin + k]);
  return sig;
}

void MouthDatabase::validate() const {
  require(!entries.empty(), ErrorCode::kInvalidArgument, "mouth database is empty");
  for (const auto& e : entries) {
    require(e.segment >= 0 && e.segment < static_cast<int>(segments.size()), ErrorCode::kInvalidArgument,
            "mouth entry without a segment");
    require(e.signature.rows() == entries.front().signature.rows() && e.signature.cols() == 3 &&
                e.signature.allFinite(),
            ErrorCode::kInvalidArgument, "mouth signatures must be finite and equally sized");
  }
}

MouthDatabase build_mouth_db(std::span<const MouthFrame> frames, double tau) {
  require(!frames.empty(), ErrorCode::kInvalidArgument, "mouth database needs at least one frame");
  const int n = static_cast<int>(frames.size());
  std::vector<double> speed(n, 0.0);
  for (int t = 1; t < n; ++t) {
    const auto& a = frames[t - 1].landmarks;
    const auto& b = frames[t].landmarks;
    require(a.size() == b.size() && !a.empty(), ErrorCode::kDimensionMismatch,
            "mouth landmark counts differ between frames");
    double s = 0.0;
    for (size_t k = 0; k < a.size(); ++k) s += (b[k] - a[k]).norm();
    speed[t] = s / static_cast<double>(a.size());
  }
  if (n > 1) speed[0] = speed[1];

  MouthDatabase db;
  for (int t = 0; t < n; ++t) {
    const bool dynamic = !(speed[t] < tau);
    if (db.segments.empty() || db.segments.back().dynamic != dynamic) db.segments.push_back({t, t, dynamic});
    db.segments.back().end = t + 1;
    db.entries.push_back({frames[t].signature, frames[t].texture, static_cast<int>(db.segments.size()) - 1,
                          speed[t]});
  }
  db.validate();
  return db;
}

int retrieve_mouth(const MouthDatabase& db, const MatX& query, std::optional<int> previous, double preference) {
  require(!db.entries.empty(), ErrorCode::kInvalidArgument, "mouth database is empty");
  require(query.rows() == db.entries.front().signature.rows() && query.cols() == 3, ErrorCode::kDimensionMismatch,
          "query signature does not match the database");
  const int prev_segment =
      previous && *previous >= 0 && *previous < static_cast<int>(db.entries.size()) ? db.entries[*previous].segment : -1;
  int best = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(db.entries.size()); ++i) {
    double cost = (db.entries[i].signature - query).squaredNorm();
    if (db.entries[i].segment == prev_segment) cost *= preference;
    if (cost < best_cost) {
      best_cost = cost;
      best = i;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Cross-projection

TexturePatch cross_project_mouth(const FaceBasis& basis, const ImageF& source_frame, const ParamVector& source,
                                 const Camera& source_camera, const ParamVector& target,
                                 const Camera& target_camera, double min_coverage) {
  require(source_frame.width() == source_camera.width && source_frame.height() == source_camera.height &&
              source_frame.channels() == 3,
          ErrorCode::kDimensionMismatch, "source frame does not match its camera");
  const MeshGeometry src = eval_geometry(basis, source);
  const MeshGeometry dst = eval_geometry(basis, target);
  const RenderOutput src_vis = rasterize_visibility(src.positions, *basis.topology, source_camera);
  const RenderOutput dst_vis = rasterize_visibility(dst.positions, *basis.topology, target_camera);
  const auto mouth = basis.vertex_mask(kRegionMouth);
  const Vec3 eye = source_camera.center_world();

  TexturePatch patch;
  patch.image = ImageF(target_camera.width, target_camera.height, 3, 0.0f);
  patch.mask = Mask(target_camera.width, target_camera.height, 1, 0);
  int total = 0, valid = 0;
  for (const Fragment& f : dst_vis.visible) {
    if (!fragment_in_mask(f, *basis.topology, mouth)) continue;
    ++total;
    const Vec3i& t = basis.topology->triangles[f.triangle];
    const Vec3 p = rows_at(src.positions, t, f.bary);
    const Vec3 a = src.positions.row(t[0]), b = src.positions.row(t[1]), c = src.positions.row(t[2]);
    const Vec3 n = (b - a).cross(c - a);
    if (n.dot(eye - p) <= 0.0) continue;
    const Vec3 pc = source_camera.to_camera(p);
    if (pc.z() <= 1e-3) continue;
    const Vec2 q = project(source_camera, pc);
    const int px = static_cast<int>(std::floor(q.x())), py = static_cast<int>(std::floor(q.y()));
    if (px < 0 || py < 0 || px >= source_camera.width || py >= source_camera.height) continue;
    if (!src_vis.fragment_at(px, py) || std::abs(src_vis.depth.at(px, py) - pc.z()) > 0.005) continue;
    for (int c = 0; c < 3; ++c)
      patch.image.at(f.x, f.y, c) = static_cast<float>(sample_bilinear(source_frame, q.x(), q.y(), c));
    patch.mask.at(f.x, f.y) = 1;
    ++valid;
  }
  require(total > 0, ErrorCode::kDegenerate, "mouth is not visible in the target view");
  require(valid >= min_coverage * total, ErrorCode::kDegenerate,
          "mouth region faces away from the source camera (head rotations differ too much)");
  return patch;
}

// ---------------------------------------------------------------------------
// Compositing

ImageF feather_alpha(const Mask& mask, double width) {
  ImageF alpha(mask.width(), mask.height(), 1, 0.0f);
  const int r = static_cast<int>(std::ceil(width));
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      double d = std::numeric_limits<double>::infinity();
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (!mask.contains(x + dx, y + dy) || mask.at(x + dx, y + dy)) continue;
          d = std::min(d, std::hypot(dx, dy));
        }
      alpha.at(x, y) = width <= 0.0 ? 1.0f : static_cast<float>(std::min(1.0, d / width));
    }
  return alpha;
}

ImageF composite_layers(const ImageF& target, std::span<const Layer> layers) {
  ImageF out = target;
  for (const Layer& layer : layers) {
    require(layer.color.width() == target.width() && layer.color.height() == target.height() &&
                layer.color.channels() == target.channels() && layer.mask.width() == target.width() &&
                layer.mask.height() == target.height(),
            ErrorCode::kDimensionMismatch, "layer does not match the target frame");
    const ImageF alpha = feather_alpha(layer.mask, layer.feather);
    for (int y = 0; y < target.height(); ++y)
      for (int x = 0; x < target.width(); ++x) {
        const float a = alpha.at(x, y);
        if (a <= 0.0f) continue;
        for (int c = 0; c < target.channels(); ++c)
          out.at(x, y, c) = a >= 1.0f ? layer.color.at(x, y, c) : a * layer.color.at(x, y, c) + (1.0f - a) * out.at(x, y, c);
      }
  }
  return out;
}

ImageF composite_final(const ImageF& target, const Layer& face, std::span<const Layer> eyes,
                       const std::optional<Layer>& mouth) {
  std::vector<Layer> stack;
  stack.push_back(face);
  for (const auto& e : eyes) stack.push_back(e);
  if (mouth) stack.push_back(*mouth);
  return composite_layers(target, stack);
}

double mean_color_error(const ImageF& a, const ImageF& b, const Mask& mask) {
  require(a.width() == b.width() && a.height() == b.height() && a.channels() == b.channels(),
          ErrorCode::kDimensionMismatch, "images differ in size");
  const bool all = mask.empty();
  require(all || (mask.width() == a.width() && mask.height() == a.height()), ErrorCode::kDimensionMismatch,
          "mask does not match the images");
  double sum = 0.0;
  long count = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      if (!all && !mask.at(x, y)) continue;
      double d2 = 0.0;
      for (int c = 0; c < a.channels(); ++c) {
        const double d = static_cast<double>(a.at(x, y, c)) - b.at(x, y, c);
        d2 += d * d;
      }
      sum += std::sqrt(d2);
      ++count;
    }
  return count ? sum / count : 0.0;
}

}  // namespace reenact
