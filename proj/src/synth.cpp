#include "reenact/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "reenact/raster.hpp"

namespace reenact {

namespace {

constexpr double kHeadDistance = 0.5;

VecX vec_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json json_from(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Smooth backdrop so that samples outside the face still carry texture.
Vec3 backdrop(double u, double v) {
  return {0.32 + 0.10 * std::sin(6.0 * u + 0.4) * std::cos(4.0 * v),
          0.30 + 0.08 * std::sin(5.0 * u + 1.3) * std::cos(3.0 * v + 0.5),
          0.28 + 0.09 * std::cos(7.0 * u) * std::sin(4.5 * v + 0.2)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Rig

Camera look_at_camera(const Vec3& center, const Vec3& target, double focal, int width, int height) {
  const Vec3 z = (target - center).normalized();
  const Vec3 y = (Vec3(0.0, 1.0, 0.0) - z * z.y()).normalized();
  const Vec3 x = y.cross(z);
  Camera c;
  c.fx = c.fy = focal;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.width = width;
  c.height = height;
  c.rotation.row(0) = x.transpose();
  c.rotation.row(1) = y.transpose();
  c.rotation.row(2) = z.transpose();
  c.translation = -c.rotation * center;
  c.validate();
  return c;
}

std::vector<Camera> make_rig(RigKind rig, int width, int height) {
  const Vec3 target(0.0, 0.0, kHeadDistance);
  const double focal = 1.2 * width;
  if (rig == RigKind::kMonoRgbd) return {look_at_camera(Vec3::Zero(), target, focal, width, height)};
  return {look_at_camera(Vec3(-0.05, 0.0, 0.0), target, focal, width, height),
          look_at_camera(Vec3(0.05, 0.0, 0.0), target, focal, width, height)};
}

ParamVector rest_pose(const FaceDims& dims) {
  ParamVector x = ParamVector::zeros(dims);
  x.translation = Vec3(0.0, 0.0, kHeadDistance);
  x.gamma = default_lighting();
  return x;
}

// ---------------------------------------------------------------------------
// Script

SceneScript SceneScript::make(std::uint64_t seed, RigKind rig, int num_frames) {
  require(num_frames >= 1, ErrorCode::kInvalidArgument, "a script needs at least one frame");
  SceneScript s;
  s.seed = seed;
  s.rig = rig;
  if (rig == RigKind::kMonoRgbd) {
    s.width = 160;
    s.height = 120;
  }
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x5151);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto draw = [&](int n, auto sigma) {
    VecX v(n);
    for (int i = 0; i < n; ++i) v[i] = sigma(i) * normal(rng);
    return v;
  };
  s.alpha = draw(s.dims.identity, [](int i) { return 0.7 * std::pow(0.9, i); });
  s.beta = draw(s.dims.albedo, [](int i) { return 0.5 * 3.0 * std::pow(0.85, i); });

  const double two_pi = 2.0 * std::numbers::pi;
  std::array<double, 9> phase;
  for (double& p : phase) p = two_pi * uniform(rng);
  std::vector<double> freq(s.dims.expression), amp(s.dims.expression), ephase(s.dims.expression);
  for (int i = 0; i < s.dims.expression; ++i) {
    freq[i] = 0.5 + uniform(rng);
    amp[i] = 0.3 + 0.6 * uniform(rng);
    ephase[i] = two_pi * uniform(rng);
  }
  ShCoeffs gamma = default_lighting();
  for (int c = 0; c < 3; ++c)
    for (int b = 1; b < kNumShBands; ++b) gamma[c * kNumShBands + b] += 0.05 * normal(rng);

  for (int f = 0; f < num_frames; ++f) {
    const double t = num_frames > 1 ? static_cast<double>(f) / (num_frames - 1) : 0.0;
    ParamVector x = rest_pose(s.dims);
    x.alpha = s.alpha;
    x.beta = s.beta;
    x.rotation = Vec3(0.06 * std::sin(two_pi * 0.7 * t + phase[0]), 0.12 * std::sin(two_pi * 0.8 * t + phase[1]),
                      0.03 * std::sin(two_pi * 0.6 * t + phase[2]));
    x.translation += Vec3(0.01 * std::sin(two_pi * 0.5 * t + phase[3]), 0.008 * std::sin(two_pi * 0.6 * t + phase[4]),
                          0.01 * std::sin(two_pi * 0.4 * t + phase[5]));
    for (int i = 0; i < s.dims.expression; ++i)
      x.delta[i] = amp[i] * std::sin(two_pi * freq[i] * t + ephase[i]);
    x.gamma = gamma;
    s.frames.push_back(std::move(x));
  }
  return s;
}

void SceneScript::validate() const {
  require(vertices >= 642, ErrorCode::kInvalidArgument, "script vertex count too small");
  require(width > 0 && height > 0, ErrorCode::kInvalidArgument, "script image size");
  require(alpha.size() == dims.identity && beta.size() == dims.albedo, ErrorCode::kDimensionMismatch,
          "script identity does not match dims");
  require(!frames.empty(), ErrorCode::kInvalidArgument, "script has no frames");
  for (const auto& x : frames) {
    require(x.dims() == dims, ErrorCode::kDimensionMismatch, "frame parameters do not match dims");
    require(x.finite(), ErrorCode::kInvalidArgument, "non-finite trajectory");
  }
  require(noise.color_sigma >= 0 && noise.depth_sigma >= 0 && noise.landmark_sigma >= 0,
          ErrorCode::kInvalidArgument, "noise sigmas must be non-negative");
}

nlohmann::json to_json(const SceneScript& s) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& x : s.frames) frames.push_back(to_json(x));
  return {{"seed", s.seed},
          {"basis_seed", s.basis_seed},
          {"dims", {s.dims.identity, s.dims.albedo, s.dims.expression}},
          {"vertices", s.vertices},
          {"rig", s.rig == RigKind::kStereoRgb ? "stereo" : "mono-rgbd"},
          {"width", s.width},
          {"height", s.height},
          {"alpha", json_from(s.alpha)},
          {"beta", json_from(s.beta)},
          {"frames", frames},
          {"noise", {{"color_sigma", s.noise.color_sigma},
                     {"depth_sigma", s.noise.depth_sigma},
                     {"landmark_sigma", s.noise.landmark_sigma}}},
          {"occlusion", s.occlusion},
          {"depth", s.depth}};
}

SceneScript scene_script_from_json(const nlohmann::json& j) {
  SceneScript s;
  try {
    s.seed = j.at("seed");
    s.basis_seed = j.value("basis_seed", std::uint64_t{7});
    const auto d = j.at("dims").get<std::vector<int>>();
    require(d.size() == 3, ErrorCode::kInvalidArgument, "dims needs 3 entries");
    s.dims = {d[0], d[1], d[2]};
    s.vertices = j.value("vertices", 2562);
    const std::string rig = j.at("rig");
    require(rig == "stereo" || rig == "mono-rgbd", ErrorCode::kInvalidArgument, "unknown rig " + rig);
    s.rig = rig == "stereo" ? RigKind::kStereoRgb : RigKind::kMonoRgbd;
    s.width = j.at("width");
    s.height = j.at("height");
    s.alpha = vec_from(j.at("alpha"));
    s.beta = vec_from(j.at("beta"));
    for (const auto& f : j.at("frames")) s.frames.push_back(param_vector_from_json(f));
    if (j.contains("noise")) {
      const auto& n = j["noise"];
      s.noise.color_sigma = n.value("color_sigma", 0.0);
      s.noise.depth_sigma = n.value("depth_sigma", 0.0);
      s.noise.landmark_sigma = n.value("landmark_sigma", 0.0);
    }
    s.occlusion = j.value("occlusion", false);
    s.depth = j.value("depth", false);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed scene script: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// HMD

HmdModel::HmdModel() {
  const double w = 0.05, h = 0.04, gap = 0.012, top = -0.058;
  for (int m = 0; m < 2; ++m) {
    const double x0 = m == 0 ? -gap - w : gap;
    corners[4 * m + 0] = Vec3(x0, top, front_z);
    corners[4 * m + 1] = Vec3(x0 + w, top, front_z);
    corners[4 * m + 2] = Vec3(x0 + w, top + h, front_z);
    corners[4 * m + 3] = Vec3(x0, top + h, front_z);
  }
}

namespace {

bool inside_marker(const HmdModel& hmd, const Vec3& p) {
  for (int m = 0; m < 2; ++m) {
    const Vec3& a = hmd.corners[4 * m];
    const Vec3& c = hmd.corners[4 * m + 2];
    if (p.x() >= a.x() && p.x() <= c.x() && p.y() >= a.y() && p.y() <= c.y()) return true;
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Observation synthesis

FrameObservation synth_observation(const FaceBasis& basis, const ParamVector& x, const Camera& camera,
                                   const SynthOptions& options, std::mt19937_64& rng) {
  const MeshGeometry mesh = eval_geometry(basis, x);
  const RenderOutput render = rasterize(mesh, camera, x.gamma);
  const int w = camera.width, h = camera.height;
  FrameObservation obs;
  obs.camera = camera;
  obs.rgb = ImageF(w, h, 3);
  ImageF depth(w, h, 1, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int px = 0; px < w; ++px) {
      const Vec3 bg = backdrop((px + 0.5) / w, (y + 0.5) / h);
      for (int c = 0; c < 3; ++c) obs.rgb.at(px, y, c) = static_cast<float>(bg[c]);
    }
  }
  for (const Fragment& f : render.visible) {
    for (int c = 0; c < 3; ++c) obs.rgb.at(f.x, f.y, c) = render.color.at(f.x, f.y, c);
    depth.at(f.x, f.y) = render.depth.at(f.x, f.y);
  }

  const Mat3 r = x.rotation_matrix();
  if (options.occlusion) {
    const HmdModel hmd;
    MatX plate(4, 3);
    plate << hmd.x_min, hmd.y_min, hmd.front_z, hmd.x_max, hmd.y_min, hmd.front_z, hmd.x_max, hmd.y_max,
        hmd.front_z, hmd.x_min, hmd.y_max, hmd.front_z;
    const MatX plate_world = (plate * r.transpose()).rowwise() + x.translation.transpose();
    const MeshTopology quad({Vec3i(0, 1, 2), Vec3i(0, 2, 3), Vec3i(0, 2, 1), Vec3i(0, 3, 2)}, 4);
    const RenderOutput hmd_render = rasterize_visibility(plate_world, quad, camera);
    for (const Fragment& f : hmd_render.visible) {
      const float z = hmd_render.depth.at(f.x, f.y);
      const float head_z = render.depth.at(f.x, f.y);
      if (!(z < head_z)) continue;
      const Vec3i& t = quad.triangles[f.triangle];
      const Vec3 p = f.bary[0] * plate.row(t[0]).transpose() + f.bary[1] * plate.row(t[1]).transpose() +
                     f.bary[2] * plate.row(t[2]).transpose();
      const float shade = inside_marker(hmd, p) ? 0.85f : 0.06f;
      for (int c = 0; c < 3; ++c) obs.rgb.at(f.x, f.y, c) = shade;
      depth.at(f.x, f.y) = z;
    }
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  if (options.noise.color_sigma > 0.0)
    for (float& v : obs.rgb.values()) v += static_cast<float>(options.noise.color_sigma * normal(rng));

  if (options.depth) {
    if (options.noise.depth_sigma > 0.0)
      for (float& d : depth.values())
        if (d > 0.0f) d += static_cast<float>(options.noise.depth_sigma * normal(rng));
    obs.depth = depth;
    obs.normals = depth_normals(obs.depth, camera);
  }

  const MatX model = model_positions(basis, x.alpha, x.delta);
  for (int k = 0; k < kNumLandmarks; ++k) {
    const int v = basis.landmark_vertex_ids[k];
    if (options.occlusion && (basis.regions[v] & kRegionUpperFace)) continue;
    const Vec3 pw = r * model.row(v).transpose() + x.translation;
    const Vec3 pc = camera.to_camera(pw);
    if (pc.z() <= 0.0) continue;
    Landmark l;
    l.index = k;
    const Vec2 err(options.noise.landmark_sigma * normal(rng), options.noise.landmark_sigma * normal(rng));
    l.position = project(camera, pc) + err;
    l.confidence = std::exp(-0.5 * err.squaredNorm());
    obs.landmarks.push_back(l);
  }

  if (options.occlusion) {
    const HmdModel hmd;
    for (int k = 0; k < 8; ++k) {
      const Vec3 pc = camera.to_camera(r * hmd.corners[k] + x.translation);
      const Vec2 err(options.noise.landmark_sigma * normal(rng), options.noise.landmark_sigma * normal(rng));
      obs.markers.push_back({project(camera, pc) + err, k});
    }
  }
  return obs;
}

Sequence synth_sequence(const SceneScript& script) {
  script.validate();
  Sequence seq;
  seq.basis = synth_basis(script.basis_seed, script.dims, script.vertices);
  seq.cameras = make_rig(script.rig, script.width, script.height);
  seq.occlusion = script.occlusion;
  SynthOptions options;
  options.noise = script.noise;
  options.depth = script.depth || script.rig == RigKind::kMonoRgbd;
  options.occlusion = script.occlusion;
  std::mt19937_64 rng(script.seed ^ 0xA5A5A5A5ULL);
  for (const ParamVector& x : script.frames) {
    std::vector<FrameObservation> views;
    for (const Camera& cam : seq.cameras) views.push_back(synth_observation(seq.basis, x, cam, options, rng));
    seq.frames.push_back(std::move(views));
    seq.truth.push_back(x);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Sequence directory

namespace {

std::string frame_dir(int f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d", f);
  return buf;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

nlohmann::json observation_json(const FrameObservation& obs) {
  nlohmann::json lms = nlohmann::json::array(), markers = nlohmann::json::array();
  for (const auto& l : obs.landmarks)
    lms.push_back({{"x", l.position.x()}, {"y", l.position.y()}, {"index", l.index}, {"confidence", l.confidence}});
  for (const auto& m : obs.markers)
    markers.push_back({{"x", m.position.x()}, {"y", m.position.y()}, {"corner", m.corner}});
  return {{"camera", to_json(obs.camera)}, {"landmarks", lms}, {"markers", markers}};
}

}  // namespace

void write_sequence(const std::filesystem::path& dir, const Sequence& seq) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string());
  save_basis(dir / "basis.bin", seq.basis);
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : seq.cameras) cams.push_back(to_json(c));
  write_json(dir / "sequence.json", {{"num_frames", seq.num_frames()},
                                     {"num_views", seq.cameras.size()},
                                     {"occlusion", seq.occlusion},
                                     {"cameras", cams}});
  for (int f = 0; f < seq.num_frames(); ++f) {
    const auto fdir = dir / frame_dir(f);
    std::filesystem::create_directories(fdir, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + fdir.string());
    for (size_t v = 0; v < seq.frames[f].size(); ++v) {
      const FrameObservation& obs = seq.frames[f][v];
      const std::string stem = "view_" + std::to_string(v);
      write_png(fdir / (stem + ".png"), obs.rgb);
      if (obs.has_depth()) write_pfm(fdir / (stem + "_depth.pfm"), obs.depth);
      write_json(fdir / (stem + ".json"), observation_json(obs));
    }
    if (f < static_cast<int>(seq.truth.size())) write_json(fdir / "truth.json", to_json(seq.truth[f]));
  }
}

Sequence read_sequence(const std::filesystem::path& dir) {
  Sequence seq;
  seq.basis = load_basis(dir / "basis.bin");
  const nlohmann::json meta = read_json(dir / "sequence.json");
  int num_frames = 0;
  try {
    num_frames = meta.at("num_frames");
    seq.occlusion = meta.value("occlusion", false);
    for (const auto& c : meta.at("cameras")) seq.cameras.push_back(camera_from_json(c));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed sequence.json: ") + e.what());
  }
  for (int f = 0; f < num_frames; ++f) {
    const auto fdir = dir / frame_dir(f);
    std::vector<FrameObservation> views;
    for (size_t v = 0; v < seq.cameras.size(); ++v) {
      const std::string stem = "view_" + std::to_string(v);
      FrameObservation obs;
      const nlohmann::json j = read_json(fdir / (stem + ".json"));
      try {
        obs.camera = camera_from_json(j.at("camera"));
        for (const auto& l : j.at("landmarks"))
          obs.landmarks.push_back({Vec2(l.at("x"), l.at("y")), l.at("index"), l.at("confidence")});
        for (const auto& m : j.at("markers")) obs.markers.push_back({Vec2(m.at("x"), m.at("y")), m.at("corner")});
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kIo, "malformed " + stem + ".json: " + e.what());
      }
      obs.rgb = read_png(fdir / (stem + ".png"));
      const auto depth_path = fdir / (stem + "_depth.pfm");
      if (std::filesystem::exists(depth_path)) {
        obs.depth = read_pfm(depth_path);
        obs.normals = depth_normals(obs.depth, obs.camera);
      }
      obs.validate();
      views.push_back(std::move(obs));
    }
    seq.frames.push_back(std::move(views));
    if (std::filesystem::exists(fdir / "truth.json"))
      seq.truth.push_back(param_vector_from_json(read_json(fdir / "truth.json")));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Markers

std::array<PixelRegion, 2> marker_regions(std::span<const MarkerCorner> corners, int width, int height) {
  std::array<PixelRegion, 2> regions;
  for (int m = 0; m < 2; ++m) {
    std::array<Vec2, 4> q;
    std::array<bool, 4> seen{};
    for (const auto& c : corners) {
      if (c.corner / 4 != m) continue;
      q[c.corner % 4] = c.position;
      seen[c.corner % 4] = true;
    }
    require(seen[0] && seen[1] && seen[2] && seen[3], ErrorCode::kInvalidArgument,
            "marker needs all four corners");
    double area = 0.0;
    for (int k = 0; k < 4; ++k) area += q[k].x() * q[(k + 1) % 4].y() - q[(k + 1) % 4].x() * q[k].y();
    const double sign = area >= 0.0 ? 1.0 : -1.0;
    double x0 = q[0].x(), x1 = x0, y0 = q[0].y(), y1 = y0;
    for (const auto& p : q) {
      x0 = std::min(x0, p.x());
      x1 = std::max(x1, p.x());
      y0 = std::min(y0, p.y());
      y1 = std::max(y1, p.y());
    }
    for (int y = std::max(0, static_cast<int>(y0)); y <= std::min(height - 1, static_cast<int>(y1)); ++y) {
      for (int x = std::max(0, static_cast<int>(x0)); x <= std::min(width - 1, static_cast<int>(x1)); ++x) {
        const Vec2 p(x + 0.5, y + 0.5);
        bool inside = true;
        for (int k = 0; k < 4 && inside; ++k) {
          const Vec2 e = q[(k + 1) % 4] - q[k];
          const Vec2 d = p - q[k];
          // Keep a one-pixel margin from the marker border.
          inside = sign * (e.x() * d.y() - e.y() * d.x()) / e.norm() > 1.0;
        }
        if (inside) regions[m].emplace_back(x, y);
      }
    }
  }
  return regions;
}

std::vector<Vec3> calibrate_marker_reference(const FrameObservation& view, const ParamVector& pose) {
  require(view.has_depth(), ErrorCode::kInvalidArgument, "marker calibration needs depth");
  const auto regions = marker_regions(view.markers, view.camera.width, view.camera.height);
  const auto corners = fit_marker_planes(view.depth, view.camera, regions, view.markers);
  const Mat3 r = pose.rotation_matrix();
  std::vector<Vec3> out;
  for (const Vec3& pc : corners) {
    const Vec3 pw = view.camera.rotation.transpose() * (pc - view.camera.translation);
    out.push_back(r.transpose() * (pw - pose.translation));
  }
  return out;
}

}  // namespace reenact
