#include <Eigen/Cholesky>

#include <algorithm>
#include <array>
#include <cmath>

#include "reenact/composite.hpp"

namespace reenact {

// ---------------------------------------------------------------------------
// Poisson blending

PoissonResult poisson_blend(const ImageF& source, const ImageF& target, const Mask& mask,
                            const PoissonOptions& options) {
  require(source.width() == target.width() && source.height() == target.height() &&
              source.channels() == target.channels() && mask.width() == target.width() &&
              mask.height() == target.height(),
          ErrorCode::kDimensionMismatch, "Poisson inputs differ in size");
  require(options.max_iterations >= 0 && options.tolerance >= 0.0, ErrorCode::kInvalidArgument,
          "bad Poisson options");
  const int w = target.width(), h = target.height(), ch = target.channels();
  std::vector<int> pixels;
  std::vector<int> slot(static_cast<size_t>(w) * h, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask.at(x, y)) continue;
      require(x > 0 && y > 0 && x < w - 1 && y < h - 1, ErrorCode::kInvalidArgument,
              "blend mask touches the image border");
      slot[static_cast<size_t>(y) * w + x] = static_cast<int>(pixels.size());
      pixels.push_back(y * w + x);
    }
  PoissonResult result;
  result.image = target;
  const int n = static_cast<int>(pixels.size());
  if (n == 0) return result;

  const int offsets[4] = {-1, 1, -w, w};
  // Per pixel: constant part (boundary values + guidance) and interior neighbors.
  std::vector<double> rhs(static_cast<size_t>(n) * ch, 0.0);
  std::vector<std::array<int, 4>> nbr(n);
  for (int i = 0; i < n; ++i) {
    const int p = pixels[i];
    for (int k = 0; k < 4; ++k) {
      const int q = p + offsets[k];
      nbr[i][k] = slot[q];
      for (int c = 0; c < ch; ++c) {
        rhs[static_cast<size_t>(i) * ch + c] +=
            static_cast<double>(source.data()[static_cast<size_t>(p) * ch + c]) - source.data()[static_cast<size_t>(q) * ch + c];
        if (slot[q] < 0) rhs[static_cast<size_t>(i) * ch + c] += target.data()[static_cast<size_t>(q) * ch + c];
      }
    }
  }
  std::vector<double> f(static_cast<size_t>(n) * ch), next(f.size());
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < ch; ++c) f[static_cast<size_t>(i) * ch + c] = target.data()[static_cast<size_t>(pixels[i]) * ch + c];

  for (int it = 0; it < options.max_iterations; ++it) {
    double r2 = 0.0, max_update = 0.0;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        double sum = rhs[static_cast<size_t>(i) * ch + c];
        for (int k = 0; k < 4; ++k)
          if (nbr[i][k] >= 0) sum += f[static_cast<size_t>(nbr[i][k]) * ch + c];
        const double cur = f[static_cast<size_t>(i) * ch + c];
        const double r = sum - 4.0 * cur;
        r2 += r * r;
        next[static_cast<size_t>(i) * ch + c] = 0.25 * sum;
        max_update = std::max(max_update, std::abs(0.25 * r));
      }
    result.residual_norms.push_back(std::sqrt(r2));
    f.swap(next);
    result.iterations = it + 1;
    if (max_update < options.tolerance) break;
  }
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < ch; ++c)
      result.image.data()[static_cast<size_t>(pixels[i]) * ch + c] = static_cast<float>(f[static_cast<size_t>(i) * ch + c]);
  return result;
}

// ---------------------------------------------------------------------------
// Saliency-preserving warp

namespace {

double polygon_area(std::span<const Vec2> pts) {
  double a = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) {
    const Vec2& p = pts[i];
    const Vec2& q = pts[(i + 1) % pts.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

// The six corner pairs of a cell.
constexpr int kPairs[6][2] = {{0, 1}, {1, 3}, {3, 2}, {2, 0}, {0, 3}, {1, 2}};

std::array<int, 4> cell_corners(const WarpGrid& g, int i, int j) {
  return {g.vertex(i, j), g.vertex(i + 1, j), g.vertex(i, j + 1), g.vertex(i + 1, j + 1)};
}

// Rotation angle of the best rigid fit of rest to deformed over the pairs.
double fit_angle(const WarpGrid& g, const std::array<int, 4>& c) {
  double dot = 0.0, cross = 0.0;
  for (const auto& pr : kPairs) {
    const Vec2 p = g.rest[c[pr[0]]] - g.rest[c[pr[1]]];
    const Vec2 v = g.deformed[c[pr[0]]] - g.deformed[c[pr[1]]];
    dot += v.dot(p);
    cross += v.y() * p.x() - v.x() * p.y();
  }
  return std::atan2(cross, dot);
}

Eigen::Matrix2d rot(double theta) {
  Eigen::Matrix2d r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

}  // namespace

double cell_rigidity_residual(const WarpGrid& g, int i, int j) {
  const auto c = cell_corners(g, i, j);
  Vec2 pc = Vec2::Zero(), vc = Vec2::Zero();
  for (int k : c) {
    pc += g.rest[k] / 4.0;
    vc += g.deformed[k] / 4.0;
  }
  double dot = 0.0, cross = 0.0;
  for (int k : c) {
    const Vec2 p = g.rest[k] - pc, v = g.deformed[k] - vc;
    dot += v.dot(p);
    cross += v.y() * p.x() - v.x() * p.y();
  }
  const Eigen::Matrix2d r = rot(std::atan2(cross, dot));
  double e = 0.0;
  for (int k : c) e += ((g.deformed[k] - vc) - r * (g.rest[k] - pc)).squaredNorm();
  return std::sqrt(e / 4.0);
}

WarpResult saliency_warp(const ImageF& texture, std::span<const Vec2> source_contour,
                         std::span<const Vec2> target_contour, const WarpOptions& options) {
  require(source_contour.size() == target_contour.size() && source_contour.size() >= 3,
          ErrorCode::kDimensionMismatch, "contours need the same number (>= 3) of points");
  require(options.cells >= 1 && options.iterations >= 1 && options.min_rigidity > 0.0 && options.min_rigidity <= 1.0,
          ErrorCode::kInvalidArgument, "bad warp options");
  require(std::abs(polygon_area(source_contour)) > 1e-9 && std::abs(polygon_area(target_contour)) > 1e-9,
          ErrorCode::kDegenerate, "warp contour has zero area");

  Vec2 lo = source_contour[0], hi = source_contour[0];
  for (const auto& p : source_contour) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec2 pad = (hi - lo) * options.margin;
  lo -= pad;
  hi += pad;
  const int m = options.cells;
  WarpGrid g;
  g.cells = m;
  const int nv = (m + 1) * (m + 1);
  g.rest.resize(nv);
  for (int j = 0; j <= m; ++j)
    for (int i = 0; i <= m; ++i)
      g.rest[g.vertex(i, j)] = lo + Vec2((hi - lo).x() * i / m, (hi - lo).y() * j / m);
  const Vec2 cell = (hi - lo) / m;

  // Rigidity from mean cell intensity.
  std::vector<double> mean(static_cast<size_t>(m) * m, 0.0);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const Vec2 a = g.rest[g.vertex(i, j)];
      double sum = 0.0;
      int count = 0;
      constexpr int kSub = 4;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const Vec2 p = a + Vec2(cell.x() * (sx + 0.5) / kSub, cell.y() * (sy + 0.5) / kSub);
          for (int c = 0; c < texture.channels(); ++c) sum += sample_bilinear(texture, p.x(), p.y(), c);
          ++count;
        }
      mean[static_cast<size_t>(j) * m + i] = sum / (count * texture.channels());
    }
  const auto [mn, mx] = std::minmax_element(mean.begin(), mean.end());
  g.rigidity.resize(mean.size());
  for (size_t k = 0; k < mean.size(); ++k)
    g.rigidity[k] = *mx - *mn > 1e-12
                        ? options.min_rigidity + (1.0 - options.min_rigidity) * (mean[k] - *mn) / (*mx - *mn)
                        : 1.0;

  // Normal matrix: ARAP edge terms plus bilinear contour constraints.
  MatX lhs = MatX::Zero(nv, nv);
  std::vector<std::pair<std::array<int, 4>, Eigen::Vector4d>> constraints;
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const auto c = cell_corners(g, i, j);
      const double w = g.rigidity[static_cast<size_t>(j) * m + i];
      for (const auto& pr : kPairs) {
        const int a = c[pr[0]], b = c[pr[1]];
        lhs(a, a) += w;
        lhs(b, b) += w;
        lhs(a, b) -= w;
        lhs(b, a) -= w;
      }
    }
  for (const auto& p : source_contour) {
    const Vec2 t = (p - lo).cwiseQuotient(cell);
    const int i = std::clamp(static_cast<int>(std::floor(t.x())), 0, m - 1);
    const int j = std::clamp(static_cast<int>(std::floor(t.y())), 0, m - 1);
    const double u = t.x() - i, v = t.y() - j;
    const auto c = cell_corners(g, i, j);
    const Eigen::Vector4d b((1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v);
    for (int r = 0; r < 4; ++r)
      for (int s = 0; s < 4; ++s) lhs(c[r], c[s]) += options.contour_weight * b[r] * b[s];
    constraints.push_back({c, b});
  }
  const Eigen::LDLT<MatX> solver(lhs);
  require(solver.info() == Eigen::Success, ErrorCode::kNumerical, "warp system is singular");

  g.deformed = g.rest;
  std::vector<Eigen::Matrix2d> rotations(static_cast<size_t>(m) * m, Eigen::Matrix2d::Identity());
  for (int it = 0; it < options.iterations; ++it) {
    if (it > 0)
      for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i) rotations[static_cast<size_t>(j) * m + i] = rot(fit_angle(g, cell_corners(g, i, j)));
    MatX rhs = MatX::Zero(nv, 2);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i) {
        const auto c = cell_corners(g, i, j);
        const double w = g.rigidity[static_cast<size_t>(j) * m + i];
        const Eigen::Matrix2d& r = rotations[static_cast<size_t>(j) * m + i];
        for (const auto& pr : kPairs) {
          const int a = c[pr[0]], b = c[pr[1]];
          const Vec2 e = r * (g.rest[a] - g.rest[b]);
          rhs.row(a) += w * e.transpose();
          rhs.row(b) -= w * e.transpose();
        }
      }
    for (size_t k = 0; k < constraints.size(); ++k) {
      const auto& [c, b] = constraints[k];
      for (int r = 0; r < 4; ++r) rhs.row(c[r]) += options.contour_weight * b[r] * target_contour[k].transpose();
    }
    const MatX sol = solver.solve(rhs);
    for (int k = 0; k < nv; ++k) g.deformed[k] = sol.row(k).transpose();
  }

  // Inverse piecewise-affine resampling over the deformed triangles.
  WarpResult out;
  out.image = texture;
  Mask done(texture.width(), texture.height(), 1, 0);
  const int tris[2][3] = {{0, 1, 3}, {0, 3, 2}};
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const auto c = cell_corners(g, i, j);
      for (const auto& tri : tris) {
        const Vec2 a = g.deformed[c[tri[0]]], b = g.deformed[c[tri[1]]], d = g.deformed[c[tri[2]]];
        const double area = (b - a).x() * (d - a).y() - (b - a).y() * (d - a).x();
        if (std::abs(area) < 1e-12) continue;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), d.x()}))));
        const int x1 = std::min(texture.width() - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), d.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), d.y()}))));
        const int y1 = std::min(texture.height() - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), d.y()}))));
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            if (done.at(x, y)) continue;
            const Vec2 p(x + 0.5, y + 0.5);
            const double l1 = ((p - a).x() * (d - a).y() - (p - a).y() * (d - a).x()) / area;
            const double l2 = ((b - a).x() * (p - a).y() - (b - a).y() * (p - a).x()) / area;
            const double l0 = 1.0 - l1 - l2;
            constexpr double eps = -1e-9;
            if (l0 < eps || l1 < eps || l2 < eps) continue;
            const Vec2 s = l0 * g.rest[c[tri[0]]] + l1 * g.rest[c[tri[1]]] + l2 * g.rest[c[tri[2]]];
            for (int ch = 0; ch < texture.channels(); ++ch)
              out.image.at(x, y, ch) = static_cast<float>(sample_bilinear(texture, s.x(), s.y(), ch));
            done.at(x, y) = 1;
          }
      }
    }
  out.grid = std::move(g);
  return out;
}

PoissonResult blend_patch(const TexturePatch& patch, const ImageF& target, const PoissonOptions& options) {
  require(patch.image.width() == target.width() && patch.image.height() == target.height() &&
              patch.image.channels() == target.channels() && patch.mask.width() == target.width() &&
              patch.mask.height() == target.height(),
          ErrorCode::kDimensionMismatch, "patch and target differ in size");
  const int w = target.width(), h = target.height();
  ImageF source = patch.image;
  Mask mask = patch.mask;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x == 0 || y == 0 || x == w - 1 || y == h - 1) mask.at(x, y) = 0;
      if (!mask.at(x, y))
        for (int c = 0; c < target.channels(); ++c) source.at(x, y, c) = target.at(x, y, c);
    }
  return poisson_blend(source, target, mask, options);
}

}  // namespace reenact
