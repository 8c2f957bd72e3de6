#include "reenact/facemodel.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

namespace reenact {

// ---------------------------------------------------------------------------
// ParamVector

ParamVector ParamVector::zeros(const FaceDims& dims) {
  ParamVector x;
  x.alpha = VecX::Zero(dims.identity);
  x.beta = VecX::Zero(dims.albedo);
  x.delta = VecX::Zero(dims.expression);
  return x;
}

FaceDims ParamVector::dims() const {
  return {static_cast<int>(alpha.size()), static_cast<int>(beta.size()),
          static_cast<int>(delta.size())};
}

bool ParamVector::finite() const {
  return rotation.allFinite() && translation.allFinite() && alpha.allFinite() &&
         beta.allFinite() && delta.allFinite() && gamma.allFinite();
}

VecX ParamVector::flatten() const {
  VecX flat(size());
  const ParamLayout layout{dims()};
  flat.segment<3>(layout.rotation()) = rotation;
  flat.segment<3>(layout.translation()) = translation;
  flat.segment(layout.alpha(), alpha.size()) = alpha;
  flat.segment(layout.beta(), beta.size()) = beta;
  flat.segment(layout.delta(), delta.size()) = delta;
  flat.segment<kNumShCoeffs>(layout.gamma()) = gamma;
  return flat;
}

ParamVector ParamVector::unflatten(const FaceDims& dims, const VecX& flat) {
  const ParamLayout layout{dims};
  require(flat.size() == layout.size(), ErrorCode::kDimensionMismatch,
          "flat parameter vector has wrong length");
  ParamVector x;
  x.rotation = flat.segment<3>(layout.rotation());
  x.translation = flat.segment<3>(layout.translation());
  x.alpha = flat.segment(layout.alpha(), dims.identity);
  x.beta = flat.segment(layout.beta(), dims.albedo);
  x.delta = flat.segment(layout.delta(), dims.expression);
  x.gamma = flat.segment<kNumShCoeffs>(layout.gamma());
  return x;
}

ParamVector apply_increment(const ParamVector& x, const VecX& increment) {
  const ParamLayout layout{x.dims()};
  require(increment.size() == layout.size(), ErrorCode::kDimensionMismatch,
          "increment has wrong length");
  ParamVector out = x;
  const Mat3 r = rotation_from_axis_angle(increment.segment<3>(layout.rotation())) *
                 x.rotation_matrix();
  out.rotation = axis_angle_from_rotation(r);
  out.translation += increment.segment<3>(layout.translation());
  out.alpha += increment.segment(layout.alpha(), x.alpha.size());
  out.beta += increment.segment(layout.beta(), x.beta.size());
  out.delta += increment.segment(layout.delta(), x.delta.size());
  out.gamma += increment.segment<kNumShCoeffs>(layout.gamma());
  return out;
}

namespace {

nlohmann::json vec_to_json(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VecX vec_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const VecX>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

nlohmann::json to_json(const ParamVector& x) {
  nlohmann::json gamma = nlohmann::json::array();
  for (int c = 0; c < 3; ++c) gamma.push_back(vec_to_json(x.gamma.segment<kNumShBands>(c * kNumShBands)));
  return {{"rotation", vec_to_json(x.rotation)}, {"translation", vec_to_json(x.translation)},
          {"alpha", vec_to_json(x.alpha)},       {"beta", vec_to_json(x.beta)},
          {"delta", vec_to_json(x.delta)},       {"gamma", gamma}};
}

ParamVector param_vector_from_json(const nlohmann::json& j) {
  ParamVector x;
  try {
    x.rotation = vec_from_json(j.at("rotation"));
    x.translation = vec_from_json(j.at("translation"));
    x.alpha = vec_from_json(j.at("alpha"));
    x.beta = vec_from_json(j.at("beta"));
    x.delta = vec_from_json(j.at("delta"));
    const auto& gamma = j.at("gamma");
    require(gamma.size() == 3, ErrorCode::kDimensionMismatch, "gamma needs 3 channels");
    for (int c = 0; c < 3; ++c) {
      const VecX band = vec_from_json(gamma.at(c));
      require(band.size() == kNumShBands, ErrorCode::kDimensionMismatch, "gamma needs 9 bands");
      x.gamma.segment<kNumShBands>(c * kNumShBands) = band;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed parameter JSON: ") + e.what());
  }
  require(x.finite(), ErrorCode::kInvalidArgument, "parameter JSON contains non-finite values");
  return x;
}

// ---------------------------------------------------------------------------
// Topology and basis

MeshTopology::MeshTopology(std::vector<Vec3i> tris, int num_vertices)
    : triangles(std::move(tris)), vertex_faces(num_vertices) {
  for (int f = 0; f < static_cast<int>(triangles.size()); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int v = triangles[f][k];
      require(v >= 0 && v < num_vertices, ErrorCode::kInvalidArgument,
              "triangle references an invalid vertex");
      vertex_faces[v].push_back(f);
    }
  }
}

FaceDims FaceBasis::dims() const {
  return {static_cast<int>(id_basis.cols()), static_cast<int>(alb_basis.cols()),
          static_cast<int>(exp_basis.cols())};
}

std::vector<std::uint8_t> FaceBasis::vertex_mask(std::uint8_t region_bits) const {
  std::vector<std::uint8_t> mask(regions.size());
  for (size_t i = 0; i < regions.size(); ++i) mask[i] = (regions[i] & region_bits) ? 1 : 0;
  return mask;
}

void FaceBasis::validate() const {
  const int v = num_vertices();
  const auto bad = [](const std::string& what) { fail(ErrorCode::kDimensionMismatch, "FaceBasis: " + what); };
  if (mean_geometry.cols() != 3 || mean_albedo.rows() != v || mean_albedo.cols() != 3) bad("mean shapes");
  if (id_basis.rows() != 3 * v || exp_basis.rows() != 3 * v || alb_basis.rows() != 3 * v) bad("basis rows");
  if (sigma_id.size() != id_basis.cols() || sigma_alb.size() != alb_basis.cols() ||
      sigma_exp.size() != exp_basis.cols())
    bad("sigma lengths");
  if ((sigma_id.array() <= 0).any() || (sigma_alb.array() <= 0).any() ||
      (sigma_exp.array() <= 0).any())
    fail(ErrorCode::kInvalidArgument, "FaceBasis: sigmas must be positive");
  if (!topology || topology->num_vertices() != v) bad("topology");
  for (const auto& t : topology->triangles)
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || t[k] >= v) fail(ErrorCode::kInvalidArgument, "FaceBasis: invalid triangle");
  for (int id : landmark_vertex_ids)
    if (id < 0 || id >= v) fail(ErrorCode::kInvalidArgument, "FaceBasis: invalid landmark id");
  if (static_cast<int>(regions.size()) != v || uv.rows() != v || uv.cols() != 2) bad("per-vertex labels");
}

namespace {

struct Icosphere {
  std::vector<Vec3> vertices;
  std::vector<Vec3i> triangles;
};

Icosphere make_icosphere(int levels) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  Icosphere m;
  m.vertices = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < levels; ++level) {
    std::map<std::pair<int, int>, int> midpoints;
    const auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      const int id = static_cast<int>(m.vertices.size()) - 1;
      midpoints.emplace(key, id);
      return id;
    };
    std::vector<Vec3i> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& tri : m.triangles) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    m.triangles = std::move(next);
  }
  // Outward orientation: (v1-v0)x(v2-v0) points away from the center.
  for (auto& tri : m.triangles) {
    const Vec3& a = m.vertices[tri[0]];
    const Vec3 n = (m.vertices[tri[1]] - a).cross(m.vertices[tri[2]] - a);
    if (n.dot(a) < 0.0) std::swap(tri[1], tri[2]);
  }
  return m;
}

double gauss(double d2, double sigma) { return std::exp(-d2 / (2.0 * sigma * sigma)); }

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Normalized front-face coordinates (x right, y down) of a unit direction.
double ellipse_level(const Vec3& d, double cx, double cy, double rx, double ry) {
  const double ex = (d.x() - cx) / rx, ey = (d.y() - cy) / ry;
  return ex * ex + ey * ey;
}

std::array<Vec2, kNumLandmarks> landmark_layout() {
  std::array<Vec2, kNumLandmarks> pts;
  const double pi = std::acos(-1.0);
  for (int i = 0; i <= 16; ++i) {  // jawline
    const double phi = pi - pi * i / 16.0;
    pts[i] = {0.9 * std::cos(phi), 0.05 + 0.8 * std::sin(phi)};
  }
  for (int i = 0; i < 5; ++i) {  // brows
    const double x = -0.68 + 0.13 * i;
    const double arch = -0.06 * std::sin(pi * i / 4.0);
    pts[17 + i] = {x, -0.45 + arch};
    pts[22 + (4 - i)] = {-x, -0.45 + arch};
  }
  for (int i = 0; i < 4; ++i) pts[27 + i] = {0.0, -0.3 + 0.12 * i};  // nose bridge
  for (int i = 0; i < 5; ++i) pts[31 + i] = {-0.2 + 0.1 * i, 0.2 + 0.03 * (i == 2)};
  for (int side = 0; side < 2; ++side) {  // eyes
    const double cx = side == 0 ? -0.4 : 0.4;
    for (int i = 0; i < 6; ++i) {
      const double phi = pi + 2.0 * pi * i / 6.0;
      pts[36 + 6 * side + i] = {cx + 0.15 * std::cos(phi), -0.25 + 0.07 * std::sin(phi)};
    }
  }
  for (int i = 0; i < 12; ++i) {  // outer lip
    const double phi = pi + 2.0 * pi * i / 12.0;
    pts[48 + i] = {0.35 * std::cos(phi), 0.45 + 0.15 * std::sin(phi)};
  }
  for (int i = 0; i < 6; ++i) {  // inner lip
    const double phi = pi + 2.0 * pi * i / 6.0;
    pts[60 + i] = {0.2 * std::cos(phi), 0.45 + 0.06 * std::sin(phi)};
  }
  return pts;
}

struct Blob {
  Vec3 center;
  double sigma;
  Vec3 amplitude;
};

Vec3 random_front_direction(std::mt19937_64& rng, double cx_lo, double cx_hi, double cy_lo,
                            double cy_hi) {
  std::uniform_real_distribution<double> ux(cx_lo, cx_hi), uy(cy_lo, cy_hi);
  const double x = ux(rng), y = uy(rng);
  return Vec3(x, y, -std::sqrt(std::max(0.05, 1.0 - x * x - y * y))).normalized();
}

Vec3 blob_field(const std::vector<Blob>& blobs, const Vec3& d) {
  Vec3 acc = Vec3::Zero();
  for (const auto& b : blobs) acc += b.amplitude * gauss((d - b.center).squaredNorm(), b.sigma);
  return acc;
}

// Orthonormalize columns (thin Q) with a deterministic sign convention.
MatX orthonormal_columns(const MatX& m) {
  Eigen::HouseholderQR<MatX> qr(m);
  MatX q = qr.householderQ() * MatX::Identity(m.rows(), m.cols());
  for (int c = 0; c < q.cols(); ++c) {
    if (q.col(c).dot(m.col(c)) < 0.0) q.col(c) *= -1.0;
  }
  return q;
}

}  // namespace

FaceBasis synth_basis(std::uint64_t seed, const FaceDims& dims, int num_vertices) {
  require(dims.identity >= 1 && dims.albedo >= 1 && dims.expression >= 1,
          ErrorCode::kInvalidArgument, "basis dimensions must be >= 1");
  require(num_vertices >= 4, ErrorCode::kInvalidArgument, "vertex count must be >= 4");
  int levels = -1;
  for (int s = 0; s <= 8; ++s) {
    if (10 * (1 << (2 * s)) + 2 == num_vertices) levels = s;
  }
  require(levels >= 0, ErrorCode::kInvalidArgument,
          "vertex count must be an icosphere size (10*4^k+2)");
  require(levels >= 3, ErrorCode::kInvalidArgument,
          "vertex count too small to host region masks and 66 landmarks (need >= 642)");

  const Icosphere sphere = make_icosphere(levels);
  const int v_count = num_vertices;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  FaceBasis basis;
  basis.topology = std::make_shared<const MeshTopology>(sphere.triangles, v_count);
  const Vec3 radii(0.075, 0.1, 0.09);

  // Mean geometry: ellipsoid plus facial relief along the outward direction.
  basis.mean_geometry.resize(v_count, 3);
  basis.mean_albedo.resize(v_count, 3);
  basis.regions.assign(v_count, 0);
  basis.uv = MatX::Constant(v_count, 2, -1.0);
  const Vec3 skin(0.78, 0.57, 0.47), lips(0.62, 0.28, 0.28), iris(0.3, 0.24, 0.2),
      brow(0.3, 0.2, 0.15), hair(0.25, 0.18, 0.12);

  std::vector<Blob> freckles;
  for (int k = 0; k < 24; ++k) {
    Blob b;
    b.center = random_front_direction(rng, -0.9, 0.9, -0.8, 0.9);
    b.sigma = 0.06 + 0.06 * uniform(rng);
    const double shade = 0.08 * (uniform(rng) < 0.5 ? -1.0 : 1.0);
    b.amplitude = Vec3(shade, shade * 0.9, shade * 0.8);
    freckles.push_back(b);
  }

  for (int i = 0; i < v_count; ++i) {
    const Vec3& d = sphere.vertices[i];
    const double front = std::max(0.0, -d.z());
    const Vec2 f(d.x(), d.y());
    double relief = 0.0;
    relief += 0.022 * gauss((f - Vec2(0.0, 0.02)).squaredNorm(), 0.1) * front;
    relief -= 0.006 * gauss((f - Vec2(-0.4, -0.25)).squaredNorm(), 0.1) * front;
    relief -= 0.006 * gauss((f - Vec2(0.4, -0.25)).squaredNorm(), 0.1) * front;
    relief += 0.004 * gauss((f - Vec2(-0.4, -0.45)).squaredNorm(), 0.1) * front;
    relief += 0.004 * gauss((f - Vec2(0.4, -0.45)).squaredNorm(), 0.1) * front;
    relief += 0.003 * gauss((f - Vec2(0.0, 0.45)).squaredNorm(), 0.12) * front;
    relief += 0.005 * gauss((f - Vec2(0.0, 0.78)).squaredNorm(), 0.15) * front;
    basis.mean_geometry.row(i) = (d.cwiseProduct(radii) + relief * d).transpose();

    Vec3 color = skin;
    const double lip_w = 1.0 - smoothstep(0.7, 1.0, ellipse_level(d, 0.0, 0.45, 0.34, 0.13));
    color = color * (1.0 - lip_w) + lips * lip_w;
    for (double cx : {-0.4, 0.4}) {
      const double eye_w = 1.0 - smoothstep(0.5, 1.0, ellipse_level(d, cx, -0.25, 0.14, 0.07));
      color = color * (1.0 - eye_w) + iris * eye_w;
      const double brow_w = 1.0 - smoothstep(0.5, 1.0, ellipse_level(d, cx, -0.47, 0.2, 0.05));
      color = color * (1.0 - brow_w) + brow * brow_w;
    }
    const double hair_w = smoothstep(0.1, 0.4, d.z()) + smoothstep(-0.75, -0.95, d.y());
    color = color * (1.0 - std::min(1.0, hair_w)) + hair * std::min(1.0, hair_w);
    color += blob_field(freckles, d) * front;
    basis.mean_albedo.row(i) = color.cwiseMax(0.02).cwiseMin(0.98).transpose();

    if (d.z() < -0.15) {
      std::uint8_t r = d.y() <= 0.02 ? kRegionUpperFace : kRegionLowerFace;
      if (ellipse_level(d, -0.4, -0.25, 0.22, 0.14) < 1.0) r |= kRegionEyeLeft;
      if (ellipse_level(d, 0.4, -0.25, 0.22, 0.14) < 1.0) r |= kRegionEyeRight;
      if (ellipse_level(d, 0.0, 0.45, 0.42, 0.22) < 1.0) r |= kRegionMouth;
      basis.regions[i] = r;
    }
    if (d.z() < 0.0) basis.uv.row(i) = Vec2(0.5 * (d.x() + 1.0), 0.5 * (d.y() + 1.0)).transpose();
  }

  // Landmarks: nearest unused vertex to each layout point on the unit sphere.
  const auto layout = landmark_layout();
  std::vector<bool> used(v_count, false);
  for (int k = 0; k < kNumLandmarks; ++k) {
    const Vec2& p = layout[k];
    const Vec3 target = Vec3(p.x(), p.y(), -std::sqrt(std::max(0.05, 1.0 - p.squaredNorm()))).normalized();
    int best = -1;
    double best_dot = -2.0;
    for (int i = 0; i < v_count; ++i) {
      if (used[i]) continue;
      const double dot = sphere.vertices[i].dot(target);
      if (dot > best_dot) best_dot = dot, best = i;
    }
    used[best] = true;
    basis.landmark_vertex_ids[k] = best;
  }

  // Unit columns scaled to a per-vertex RMS displacement (meters) or color change.
  const double per_vertex = std::sqrt(static_cast<double>(v_count));

  // Identity: broad random displacement fields.
  MatX id_raw(3 * v_count, dims.identity);
  for (int c = 0; c < dims.identity; ++c) {
    std::vector<Blob> blobs;
    for (int k = 0; k < 8; ++k) {
      Blob b;
      b.center = random_front_direction(rng, -1.0, 1.0, -1.0, 1.0);
      if (uniform(rng) < 0.3) b.center.z() = -b.center.z();
      b.sigma = 0.35 + 0.25 * uniform(rng);
      b.amplitude = Vec3(normal(rng), normal(rng), normal(rng));
      blobs.push_back(b);
    }
    for (int i = 0; i < v_count; ++i) id_raw.block<3, 1>(3 * i, c) = blob_field(blobs, sphere.vertices[i]);
  }

  // Expression: localized fields around mouth, jaw, cheeks, eyes and brows.
  const std::array<std::array<double, 4>, 6> expression_sites = {{
      {-0.35, 0.35, 0.3, 0.6},    // mouth
      {-0.5, 0.5, 0.5, 0.85},     // jaw
      {-0.7, -0.2, 0.0, 0.5},     // left cheek
      {0.2, 0.7, 0.0, 0.5},       // right cheek
      {-0.6, 0.6, -0.35, -0.15},  // eyes
      {-0.7, 0.7, -0.55, -0.35},  // brows
  }};
  MatX exp_raw(3 * v_count, dims.expression);
  for (int c = 0; c < dims.expression; ++c) {
    const auto& site = expression_sites[c % expression_sites.size()];
    std::vector<Blob> blobs;
    for (int k = 0; k < 3; ++k) {
      Blob b;
      b.center = random_front_direction(rng, site[0], site[1], site[2], site[3]);
      b.sigma = 0.15 + 0.12 * uniform(rng);
      b.amplitude = Vec3(normal(rng), normal(rng), 0.5 * normal(rng));
      blobs.push_back(b);
    }
    for (int i = 0; i < v_count; ++i) {
      const Vec3& d = sphere.vertices[i];
      const double front = smoothstep(0.0, 0.3, -d.z());
      exp_raw.block<3, 1>(3 * i, c) = blob_field(blobs, d) * front;
    }
  }

  // Albedo: smooth color variations.
  MatX alb_raw(3 * v_count, dims.albedo);
  for (int c = 0; c < dims.albedo; ++c) {
    std::vector<Blob> blobs;
    for (int k = 0; k < 6; ++k) {
      Blob b;
      b.center = random_front_direction(rng, -1.0, 1.0, -1.0, 1.0);
      b.sigma = 0.3 + 0.3 * uniform(rng);
      b.amplitude = Vec3(normal(rng), normal(rng), normal(rng));
      blobs.push_back(b);
    }
    for (int i = 0; i < v_count; ++i) alb_raw.block<3, 1>(3 * i, c) = blob_field(blobs, sphere.vertices[i]);
  }

  basis.id_basis = orthonormal_columns(id_raw) * (0.004 * per_vertex);
  basis.exp_basis = orthonormal_columns(exp_raw) * (0.002 * per_vertex);
  basis.alb_basis = orthonormal_columns(alb_raw) * (0.015 * per_vertex);
  basis.sigma_id.resize(dims.identity);
  basis.sigma_alb.resize(dims.albedo);
  for (int i = 0; i < dims.identity; ++i) basis.sigma_id[i] = std::pow(0.9, i);
  for (int i = 0; i < dims.albedo; ++i) basis.sigma_alb[i] = 3.0 * std::pow(0.85, i);
  basis.sigma_exp = VecX::Ones(dims.expression);

  for (std::uint8_t bit : {kRegionUpperFace, kRegionLowerFace, kRegionEyeLeft, kRegionEyeRight, kRegionMouth}) {
    const auto mask = basis.vertex_mask(bit);
    require(std::count(mask.begin(), mask.end(), 1) >= 3, ErrorCode::kInvalidArgument,
            "vertex count too small to host region masks");
  }
  basis.validate();
  return basis;
}

// ---------------------------------------------------------------------------
// Binary container

namespace {

constexpr char kBasisMagic[4] = {'F', 'B', 'A', 'S'};
constexpr std::uint32_t kBasisVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4] = {};
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) fail(ErrorCode::kIo, "truncated basis file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
double get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

// Row-major dump.
void put_matrix(std::ostream& out, const MatX& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f32(out, m(r, c));
}

MatX get_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  MatX m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_f32(in);
  return m;
}

}  // namespace

void save_basis(const std::filesystem::path& path, const FaceBasis& basis) {
  basis.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string());
  const FaceDims dims = basis.dims();
  const int v = basis.num_vertices();
  out.write(kBasisMagic, 4);
  put_u32(out, kBasisVersion);
  put_u32(out, v);
  put_u32(out, static_cast<std::uint32_t>(basis.topology->triangles.size()));
  put_u32(out, dims.identity);
  put_u32(out, dims.albedo);
  put_u32(out, dims.expression);
  put_matrix(out, basis.mean_geometry);
  put_matrix(out, basis.mean_albedo);
  put_matrix(out, basis.id_basis);
  put_matrix(out, basis.alb_basis);
  put_matrix(out, basis.exp_basis);
  put_matrix(out, basis.sigma_id);
  put_matrix(out, basis.sigma_alb);
  put_matrix(out, basis.sigma_exp);
  put_matrix(out, basis.uv);
  for (const auto& t : basis.topology->triangles)
    for (int k = 0; k < 3; ++k) put_u32(out, t[k]);
  for (int id : basis.landmark_vertex_ids) put_u32(out, id);
  out.write(reinterpret_cast<const char*>(basis.regions.data()), v);
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

FaceBasis load_basis(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kBasisMagic, 4) != 0) fail(ErrorCode::kIo, "not a face basis file");
  const std::uint32_t version = get_u32(in);
  if (version != kBasisVersion) fail(ErrorCode::kIo, "unsupported basis version");
  const int v = static_cast<int>(get_u32(in));
  const int f = static_cast<int>(get_u32(in));
  FaceDims dims;
  dims.identity = static_cast<int>(get_u32(in));
  dims.albedo = static_cast<int>(get_u32(in));
  dims.expression = static_cast<int>(get_u32(in));
  if (v <= 0 || v > (1 << 24) || f <= 0 || f > (1 << 26) || dims.identity <= 0 ||
      dims.albedo <= 0 || dims.expression <= 0 || dims.identity > 4096 || dims.albedo > 4096 ||
      dims.expression > 4096)
    fail(ErrorCode::kIo, "implausible basis header");
  FaceBasis basis;
  basis.mean_geometry = get_matrix(in, v, 3);
  basis.mean_albedo = get_matrix(in, v, 3);
  basis.id_basis = get_matrix(in, 3 * v, dims.identity);
  basis.alb_basis = get_matrix(in, 3 * v, dims.albedo);
  basis.exp_basis = get_matrix(in, 3 * v, dims.expression);
  basis.sigma_id = get_matrix(in, dims.identity, 1);
  basis.sigma_alb = get_matrix(in, dims.albedo, 1);
  basis.sigma_exp = get_matrix(in, dims.expression, 1);
  basis.uv = get_matrix(in, v, 2);
  std::vector<Vec3i> tris(f);
  for (auto& t : tris)
    for (int k = 0; k < 3; ++k) t[k] = static_cast<int>(get_u32(in));
  for (auto& id : basis.landmark_vertex_ids) id = static_cast<int>(get_u32(in));
  basis.regions.resize(v);
  in.read(reinterpret_cast<char*>(basis.regions.data()), v);
  if (!in) fail(ErrorCode::kIo, "truncated basis file");
  basis.topology = std::make_shared<const MeshTopology>(std::move(tris), v);
  basis.validate();
  return basis;
}

// ---------------------------------------------------------------------------
// Camera

void Camera::validate() const {
  require(fx > 0.0 && fy > 0.0, ErrorCode::kInvalidArgument, "focal lengths must be positive");
  require(width > 0 && height > 0, ErrorCode::kInvalidArgument, "image size must be positive");
  require(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height, ErrorCode::kInvalidArgument,
          "principal point must lie inside the image");
  require((rotation.transpose() * rotation - Mat3::Identity()).norm() < 1e-6 &&
              rotation.determinant() > 0.0,
          ErrorCode::kInvalidArgument, "camera rotation is not a rotation");
}

Camera Camera::scaled(int factor) const {
  require(factor >= 1, ErrorCode::kInvalidArgument, "scale factor must be >= 1");
  Camera c = *this;
  c.fx = fx / factor;
  c.fy = fy / factor;
  c.cx = (cx + 0.5 * (factor - 1)) / factor;
  c.cy = (cy + 0.5 * (factor - 1)) / factor;
  c.width = width / factor;
  c.height = height / factor;
  return c;
}

nlohmann::json to_json(const Camera& camera) {
  std::vector<double> r(9);
  for (int i = 0; i < 9; ++i) r[i] = camera.rotation(i / 3, i % 3);
  return {{"fx", camera.fx},
          {"fy", camera.fy},
          {"cx", camera.cx},
          {"cy", camera.cy},
          {"width", camera.width},
          {"height", camera.height},
          {"rotation", r},
          {"translation", {camera.translation.x(), camera.translation.y(), camera.translation.z()}}};
}

Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  try {
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    c.width = j.at("width");
    c.height = j.at("height");
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    require(r.size() == 9 && t.size() == 3, ErrorCode::kInvalidArgument, "camera extrinsics size");
    for (int i = 0; i < 9; ++i) c.rotation(i / 3, i % 3) = r[i];
    c.translation = Vec3(t[0], t[1], t[2]);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed camera JSON: ") + e.what());
  }
  c.validate();
  return c;
}

Vec2 project(const Camera& camera, const Vec3& p) {
  if (!(p.z() > 0.0)) fail(ErrorCode::kBehindCamera, "point is behind the camera");
  return {camera.fx * p.x() / p.z() + camera.cx, camera.fy * p.y() / p.z() + camera.cy};
}

Vec3 backproject(const Camera& camera, const Vec2& pixel, double depth) {
  if (!(depth > 0.0)) fail(ErrorCode::kInvalidArgument, "depth must be positive");
  return {(pixel.x() - camera.cx) * depth / camera.fx, (pixel.y() - camera.cy) * depth / camera.fy, depth};
}

Eigen::Matrix<double, 2, 3> project_jacobian(const Camera& camera, const Vec3& p) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << camera.fx * iz, 0.0, -camera.fx * p.x() * iz * iz, 0.0, camera.fy * iz,
      -camera.fy * p.y() * iz * iz;
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation

MatX model_positions(const FaceBasis& basis, const VecX& alpha, const VecX& delta) {
  require(alpha.size() == basis.id_basis.cols() && delta.size() == basis.exp_basis.cols(),
          ErrorCode::kDimensionMismatch, "coefficient length does not match the basis");
  const VecX offsets = basis.id_basis * alpha + basis.exp_basis * delta;
  MatX pos = basis.mean_geometry;
  pos += Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(
      offsets.data(), basis.num_vertices(), 3);
  return pos;
}

MatX vertex_normals(const MatX& positions, const MeshTopology& topology) {
  MatX normals = MatX::Zero(positions.rows(), 3);
  for (const auto& t : topology.triangles) {
    const Vec3 a = positions.row(t[0]), b = positions.row(t[1]), c = positions.row(t[2]);
    const Vec3 n = (b - a).cross(c - a);
    for (int k = 0; k < 3; ++k) normals.row(t[k]) += n.transpose();
  }
  for (Eigen::Index i = 0; i < normals.rows(); ++i) {
    const double len = normals.row(i).norm();
    if (len > 0.0) normals.row(i) /= len;
  }
  return normals;
}

MeshGeometry eval_geometry(const FaceBasis& basis, const VecX& alpha, const VecX& delta,
                           const Mat3& rotation, const Vec3& translation) {
  const MatX model = model_positions(basis, alpha, delta);
  const MatX model_normals = vertex_normals(model, *basis.topology);
  MeshGeometry mesh;
  mesh.positions = (model * rotation.transpose()).rowwise() + translation.transpose();
  mesh.normals = model_normals * rotation.transpose();
  mesh.albedo = basis.mean_albedo;
  mesh.topology = basis.topology;
  return mesh;
}

MeshGeometry eval_geometry(const FaceBasis& basis, const ParamVector& x) {
  MeshGeometry mesh = eval_geometry(basis, x.alpha, x.delta, x.rotation_matrix(), x.translation);
  mesh.albedo = eval_albedo(basis, x.beta);
  return mesh;
}

MatX eval_albedo(const FaceBasis& basis, const VecX& beta) {
  require(beta.size() == basis.alb_basis.cols(), ErrorCode::kDimensionMismatch,
          "albedo coefficient length does not match the basis");
  const VecX offsets = basis.alb_basis * beta;
  MatX albedo = basis.mean_albedo;
  albedo += Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(
      offsets.data(), basis.num_vertices(), 3);
  return albedo;
}

namespace sh {
constexpr double kC0 = 0.282094791773878;  // 1 / (2 sqrt(pi))
constexpr double kC1 = 0.488602511902920;  // sqrt(3 / (4 pi))
constexpr double kC2 = 1.092548430592079;  // sqrt(15 / (4 pi))
constexpr double kC3 = 0.315391565252520;  // sqrt(5 / (16 pi))
constexpr double kC4 = 0.546274215296040;  // sqrt(15 / (16 pi))
}  // namespace sh

ShBasis sh_basis(const Vec3& n) {
  const double x = n.x(), y = n.y(), z = n.z();
  ShBasis b;
  b << sh::kC0, sh::kC1 * y, sh::kC1 * z, sh::kC1 * x, sh::kC2 * x * y, sh::kC2 * y * z,
      sh::kC3 * (3.0 * z * z - 1.0), sh::kC2 * x * z, sh::kC4 * (x * x - y * y);
  return b;
}

Eigen::Matrix<double, kNumShBands, 3> sh_basis_gradient(const Vec3& n) {
  const double x = n.x(), y = n.y(), z = n.z();
  Eigen::Matrix<double, kNumShBands, 3> g;
  g << 0, 0, 0,                                      //
      0, sh::kC1, 0,                                 //
      0, 0, sh::kC1,                                 //
      sh::kC1, 0, 0,                                 //
      sh::kC2 * y, sh::kC2 * x, 0,                   //
      0, sh::kC2 * z, sh::kC2 * y,                   //
      0, 0, 6.0 * sh::kC3 * z,                       //
      sh::kC2 * z, 0, sh::kC2 * x,                   //
      2.0 * sh::kC4 * x, -2.0 * sh::kC4 * y, 0;
  return g;
}

Vec3 sh_irradiance(const Vec3& normal, const ShCoeffs& gamma) {
  const ShBasis y = sh_basis(normal);
  Vec3 s;
  for (int c = 0; c < 3; ++c) s[c] = gamma.segment<kNumShBands>(c * kNumShBands).dot(y);
  return s;
}

Vec3 sh_shade(const Vec3& albedo, const Vec3& normal, const ShCoeffs& gamma) {
  require(std::abs(normal.norm() - 1.0) <= 1e-6, ErrorCode::kInvalidArgument,
          "sh_shade needs a unit normal");
  return albedo.cwiseProduct(sh_irradiance(normal, gamma));
}

ShCoeffs default_lighting() {
  ShCoeffs g = ShCoeffs::Zero();
  // Ambient plus a key light from the camera side, slightly above.
  const double dc[3] = {2.6, 2.5, 2.4};
  for (int c = 0; c < 3; ++c) {
    g[c * kNumShBands + 0] = dc[c];
    g[c * kNumShBands + 1] = -0.35;  // image y points down, so light from above is -y
    g[c * kNumShBands + 2] = -0.9;   // z: surfaces facing the camera (-z) get brighter
    g[c * kNumShBands + 3] = 0.2;
    g[c * kNumShBands + 6] = -0.1;
  }
  return g;
}

}  // namespace reenact
