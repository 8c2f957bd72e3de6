#include "reenact/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "reenact/raster.hpp"

namespace reenact {

std::string_view mode_name(TrackMode mode) {
  switch (mode) {
    case TrackMode::kStereo:
      return "stereo";
    case TrackMode::kMonoRgb:
      return "mono-rgb";
    case TrackMode::kMonoRgbd:
      return "mono-rgbd";
  }
  return "?";
}

TrackMode parse_track_mode(std::string_view name) {
  if (name == "stereo") return TrackMode::kStereo;
  if (name == "mono-rgb") return TrackMode::kMonoRgb;
  if (name == "mono-rgbd") return TrackMode::kMonoRgbd;
  fail(ErrorCode::kInvalidArgument, "unknown tracking mode " + std::string(name));
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

double mean_of(const std::vector<FrameMetrics>& frames, double FrameMetrics::*field) {
  if (frames.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : frames) s += f.*field;
  return s / static_cast<double>(frames.size());
}

double rmse(const VecX& a, const VecX& b) {
  if (a.size() == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

std::vector<double> MetricsReport::mean_photometric() const {
  if (frames.empty()) return {};
  std::vector<double> m(frames[0].photometric.size(), 0.0);
  for (const auto& f : frames)
    for (size_t v = 0; v < m.size(); ++v) m[v] += f.photometric[v];
  for (double& v : m) v /= static_cast<double>(frames.size());
  return m;
}

double MetricsReport::mean_geometric() const { return mean_of(frames, &FrameMetrics::geometric); }
double MetricsReport::mean_param_rmse() const { return mean_of(frames, &FrameMetrics::param_rmse); }
double MetricsReport::mean_delta_rmse() const { return mean_of(frames, &FrameMetrics::delta_rmse); }

void MetricsReport::validate() const {
  require(!frames.empty(), ErrorCode::kInvalidArgument, "empty metrics report");
  const size_t views = frames[0].photometric.size();
  require(views > 0, ErrorCode::kInvalidArgument, "metrics report without views");
  for (const auto& f : frames) {
    require(f.photometric.size() == views, ErrorCode::kDimensionMismatch, "per-view errors missing");
    for (double p : f.photometric) require(std::isfinite(p), ErrorCode::kNumerical, "non-finite photometric error");
    require(std::isfinite(f.geometric) && std::isfinite(f.param_rmse) && std::isfinite(f.delta_rmse),
            ErrorCode::kNumerical, "non-finite metric");
  }
  if (gaze_error) require(std::isfinite(*gaze_error), ErrorCode::kNumerical, "non-finite gaze error");
}

nlohmann::json MetricsReport::summary() const {
  nlohmann::json j = {{"mode", mode},
                      {"frames", frames.size()},
                      {"photometric", mean_photometric()},
                      {"geometric", mean_geometric()},
                      {"param_rmse", mean_param_rmse()},
                      {"delta_rmse", mean_delta_rmse()}};
  if (gaze_error) j["gaze_error"] = *gaze_error;
  return j;
}

void MetricsReport::write_csv(std::ostream& out) const {
  const size_t views = frames.empty() ? 0 : frames[0].photometric.size();
  out << "frame";
  for (size_t v = 0; v < views; ++v) out << ",photometric_" << v;
  out << ",geometric,param_rmse,delta_rmse\n";
  out.precision(9);
  for (size_t i = 0; i < frames.size(); ++i) {
    out << i;
    for (double p : frames[i].photometric) out << ',' << p;
    out << ',' << frames[i].geometric << ',' << frames[i].param_rmse << ',' << frames[i].delta_rmse << '\n';
  }
}

MetricsReport evaluate_tracking(const Sequence& sequence, std::span<const ParamVector> estimates,
                                std::string_view mode) {
  require(estimates.size() == sequence.frames.size(), ErrorCode::kDimensionMismatch,
          "one estimate per frame expected");
  require(sequence.truth.size() == sequence.frames.size(), ErrorCode::kInvalidArgument,
          "evaluation needs ground truth");
  MetricsReport report;
  report.mode = mode;
  const auto& topo = *sequence.basis.topology;
  for (size_t f = 0; f < estimates.size(); ++f) {
    const ParamVector& x = estimates[f];
    const ParamVector& truth = sequence.truth[f];
    const MeshGeometry est = eval_geometry(sequence.basis, x);
    const MeshGeometry gt = eval_geometry(sequence.basis, truth);
    FrameMetrics m;
    for (size_t v = 0; v < sequence.frames[f].size(); ++v) {
      const FrameObservation& obs = sequence.frames[f][v];
      const RenderOutput r = rasterize(est, obs.camera, x.gamma);
      Mask covered(r.width, r.height, 1, 0);
      for (const auto& frag : r.visible) covered.at(frag.x, frag.y) = 1;
      m.photometric.push_back(r.visible.empty() ? 1.0 : mean_color_error(r.color, obs.rgb, covered));
      if (v == 0) {
        const RenderOutput t = rasterize_visibility(gt.positions, topo, obs.camera);
        double s = 0.0;
        int n = 0;
        for (const auto& frag : r.visible) {
          const float zt = t.depth.at(frag.x, frag.y);
          if (!std::isfinite(zt)) continue;
          s += std::abs(static_cast<double>(r.depth.at(frag.x, frag.y)) - zt);
          ++n;
        }
        m.geometric = n > 0 ? s / n : 0.0;
      }
    }
    m.param_rmse = rmse(x.flatten(), truth.flatten());
    m.delta_rmse = rmse(x.delta, truth.delta);
    report.frames.push_back(std::move(m));
  }
  report.validate();
  return report;
}

// ---------------------------------------------------------------------------
// Tracking

TrackOptions::TrackOptions() {
  schedule.pcg_iterations = 10;
  schedule.passes = 3;
  first_frame.irls_iterations = {10, 5, 1};
  first_frame.pcg_iterations = 20;
  first_frame.passes = 3;
}

EnergyOptions TrackOptions::energy(bool occlusion) const {
  EnergyOptions o = mode == TrackMode::kMonoRgbd ? EnergyOptions::source() : EnergyOptions::target();
  if (mode == TrackMode::kMonoRgbd && !occlusion) {
    o.photometric_region = 0;
    o.use_landmarks = true;
    o.use_markers = false;
  }
  if (weights) {
    weights->validate();
    o.weights = *weights;
  }
  return o;
}

std::vector<FrameObservation> mode_views(const Sequence& sequence, int frame, TrackMode mode) {
  require(frame >= 0 && frame < sequence.num_frames(), ErrorCode::kInvalidArgument, "frame out of range");
  const auto& views = sequence.frames[frame];
  require(!views.empty(), ErrorCode::kInvalidArgument, "frame has no views");
  switch (mode) {
    case TrackMode::kStereo:
      require(views.size() >= 2, ErrorCode::kInvalidArgument, "stereo mode needs two views");
      return {views[0], views[1]};
    case TrackMode::kMonoRgb: {
      FrameObservation v = views[0];
      v.depth = ImageF();
      v.normals = ImageF();
      return {v};
    }
    case TrackMode::kMonoRgbd:
      require(views[0].has_depth(), ErrorCode::kInvalidArgument, "mono-rgbd mode needs depth in view 0");
      return {views[0]};
  }
  return {};
}

std::vector<ParamVector> track_sequence(const Sequence& sequence, const TrackOptions& options) {
  require(sequence.num_frames() > 0, ErrorCode::kInvalidArgument, "empty sequence");
  const FaceDims dims = sequence.basis.dims();
  const bool markers = options.mode == TrackMode::kMonoRgbd && sequence.occlusion;
  EnergyOptions energy = options.energy(sequence.occlusion);

  TrackingState state;
  if (options.init_from_truth) {
    require(!sequence.truth.empty(), ErrorCode::kInvalidArgument, "truth initialization needs ground truth");
    state.current = sequence.truth[0];
    state.identity_frozen = true;
  } else {
    state.current = rest_pose(dims);
  }
  state.previous = state.current;

  std::vector<ParamVector> out;
  std::vector<Vec3> marker_reference;
  for (int f = 0; f < sequence.num_frames(); ++f) {
    std::vector<FrameObservation> views = mode_views(sequence, f, options.mode);
    EnergyOptions e = energy;
    if (markers) {
      e.use_markers = !marker_reference.empty();
      for (auto& v : views) v.marker_reference = marker_reference;
    }
    const bool first = f == 0 && !options.init_from_truth;
    if (first && e.use_depth) {
      // Depth terms from the rest pose fall into a bad basin; start from the color fit.
      EnergyOptions color = e;
      color.use_depth = false;
      color.use_landmarks = true;
      track_frame(state, sequence.basis, views, color, options.first_frame);
    }
    track_frame(state, sequence.basis, views, e, first ? options.first_frame : options.schedule);
    state.identity_frozen = true;
    if (markers && f == 0) marker_reference = calibrate_marker_reference(views[0], state.current);
    out.push_back(state.current);
  }
  return out;
}

MetricsReport run_benchmark(TrackMode mode, const Sequence& sequence, const TrackOptions& options) {
  TrackOptions o = options;
  o.mode = mode;
  const auto estimates = track_sequence(sequence, o);
  return evaluate_tracking(sequence, estimates, mode_name(mode));
}

// ---------------------------------------------------------------------------
// Reenactment

double ReenactResult::mean_error() const {
  double s = 0.0;
  int n = 0;
  for (const auto& f : error)
    for (double e : f) {
      s += e;
      ++n;
    }
  return n > 0 ? s / n : 0.0;
}

Layer eye_layer(const Gray8& texture, const Mask& region) {
  require(!texture.empty(), ErrorCode::kInvalidArgument, "empty eye texture");
  Layer layer;
  layer.color = ImageF(region.width(), region.height(), 3, 0.0f);
  layer.mask = Mask(region.width(), region.height(), 1, 0);
  int x0 = region.width(), y0 = region.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < region.height(); ++y)
    for (int x = 0; x < region.width(); ++x)
      if (region.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return layer;
  ImageF gray(texture.width(), texture.height(), 1);
  for (int y = 0; y < texture.height(); ++y)
    for (int x = 0; x < texture.width(); ++x) gray.at(x, y) = texture.at(x, y) / 255.0f;
  const double sx = static_cast<double>(texture.width()) / (x1 - x0 + 1);
  const double sy = static_cast<double>(texture.height()) / (y1 - y0 + 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!region.at(x, y)) continue;
      const double v = sample_bilinear(gray, (x - x0 + 0.5) * sx - 0.5, (y - y0 + 0.5) * sy - 0.5, 0);
      for (int c = 0; c < 3; ++c) layer.color.at(x, y, c) = static_cast<float>(v);
      layer.mask.at(x, y) = 1;
    }
  return layer;
}

namespace {

std::vector<Vec2> mouth_pixels(const FaceBasis& basis, const ParamVector& x, const Camera& camera) {
  const MatX model = model_positions(basis, x.alpha, x.delta);
  const Mat3 r = x.rotation_matrix();
  std::vector<Vec2> out;
  for (int k = kMouthLandmarkBegin; k < kMouthLandmarkEnd; ++k) {
    const Vec3 pw = r * model.row(basis.landmark_vertex_ids[k]).transpose() + x.translation;
    out.push_back(project(camera, camera.to_camera(pw)));
  }
  return out;
}

// Mouth database over target frames, one per view.
MouthDatabase target_mouth_db(const Sequence& target, std::span<const ParamVector> params, int view, int frames,
                              double tau) {
  std::vector<MouthFrame> db;
  for (int f = 0; f < frames; ++f) {
    const Camera& cam = target.frames[f][view].camera;
    MouthFrame m;
    m.landmarks = mouth_pixels(target.basis, params[f], cam);
    m.signature = mouth_signature(target.basis, params[f].alpha, params[f].delta);
    m.texture = target.frames[f][view].rgb;
    db.push_back(std::move(m));
  }
  return build_mouth_db(db, tau);
}

}  // namespace

ReenactResult run_reenactment(const Sequence& target, std::span<const ParamVector> target_params,
                              const Sequence& source, std::span<const ParamVector> source_params,
                              const ReenactOptions& options, std::span<const std::array<Gray8, 2>> eyes) {
  const int frames = target.num_frames();
  require(frames > 0, ErrorCode::kInvalidArgument, "empty target sequence");
  require(static_cast<int>(target_params.size()) == frames, ErrorCode::kDimensionMismatch,
          "one target estimate per frame expected");
  require(source_params.size() >= target_params.size(), ErrorCode::kDimensionMismatch,
          "source stream shorter than the target");
  require(eyes.empty() || static_cast<int>(eyes.size()) >= frames, ErrorCode::kDimensionMismatch,
          "eye stream shorter than the target");
  const bool self = options.mode == ReenactMode::kSelf;
  if (self)
    require(source.num_frames() >= frames, ErrorCode::kDimensionMismatch, "source video shorter than the target");
  const FaceBasis& basis = target.basis;
  const TexelMap texels = texel_map(basis, options.texture_resolution);
  ExtractOptions extract;
  extract.resolution = options.texture_resolution;
  const auto mouth_region = basis.vertex_mask(kRegionMouth);
  const auto eye_regions = std::array{basis.vertex_mask(kRegionEyeLeft), basis.vertex_mask(kRegionEyeRight)};

  const int views = static_cast<int>(target.frames[0].size());
  std::vector<MouthDatabase> dbs;
  if (!self) {
    const int n = options.mouth_db_frames > 0 ? std::min(options.mouth_db_frames, frames) : frames;
    for (int v = 0; v < views; ++v) dbs.push_back(target_mouth_db(target, target_params, v, n, options.mouth_tau));
  }
  std::vector<std::optional<int>> previous_entry(views);

  ReenactResult result;
  for (int f = 0; f < frames; ++f) {
    const ParamVector x = transfer_expression(target_params[f], source_params[f].delta);
    std::vector<ImageF> outputs;
    std::vector<double> errors;
    for (int v = 0; v < views; ++v) {
      const FrameObservation& obs = target.frames[f][v];
      const AlbedoTexture texture = extract_texture(obs.rgb, target_params[f], obs.camera, basis, texels, extract);
      const TexturedRender face = render_textured(basis, x, obs.camera, texture);

      std::vector<Layer> eye_layers;
      if (!eyes.empty())
        for (int e = 0; e < 2; ++e)
          eye_layers.push_back(eye_layer(eyes[f][e], rasterize_mask(face.visibility, *basis.topology, eye_regions[e])));

      std::optional<Layer> mouth;
      if (self) {
        const int sv = std::min(v, static_cast<int>(source.frames[f].size()) - 1);
        const FrameObservation& src = source.frames[f][sv];
        try {
          const TexturePatch patch = cross_project_mouth(basis, src.rgb, source_params[f], src.camera, x, obs.camera,
                                                         options.min_mouth_coverage);
          mouth = Layer{blend_patch(patch, obs.rgb, options.poisson).image, patch.mask, 0.0};
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kDegenerate) throw;
        }
      } else {
        const MatX query = mouth_signature(basis, x.alpha, x.delta);
        const int k = retrieve_mouth(dbs[v], query, previous_entry[v]);
        previous_entry[v] = k;
        const auto& entry = dbs[v].entries[k];
        // Entries are stored in frame order.
        const auto src_contour = mouth_pixels(basis, target_params[k], target.frames[k][v].camera);
        const auto dst_contour = mouth_pixels(basis, x, obs.camera);
        const Mask mask = rasterize_mask(face.visibility, *basis.topology, mouth_region);
        bool any = false;
        for (auto m : mask.values()) any = any || m;
        if (any) {
          try {
            mouth = Layer{saliency_warp(entry.texture, src_contour, dst_contour).image, mask, 0.0};
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kDegenerate) throw;
          }
        }
      }
      if (!mouth) ++result.mouth_skipped;

      const ImageF out = composite_final(obs.rgb, Layer{face.color, face.mask, kFaceFeather}, eye_layers, mouth);
      errors.push_back(mean_color_error(out, obs.rgb, face.mask));
      outputs.push_back(out);
    }
    result.frames.push_back(std::move(outputs));
    result.error.push_back(std::move(errors));
  }
  return result;
}

}  // namespace reenact
