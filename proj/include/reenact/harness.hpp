#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reenact/composite.hpp"
#include "reenact/gaze.hpp"
#include "reenact/solver.hpp"
#include "reenact/synth.hpp"

namespace reenact {

// Tracker configurations compared by the benchmark. Mono modes read view 0.
enum class TrackMode { kStereo, kMonoRgb, kMonoRgbd };

std::string_view mode_name(TrackMode mode);
TrackMode parse_track_mode(std::string_view name);

struct FrameMetrics {
  std::vector<double> photometric;  // per view: mean RGB distance over the rendered face
  double geometric = 0.0;           // view 0: mean |z_est - z_true| where both render, meters
  double param_rmse = 0.0;          // over the flat parameter vector
  double delta_rmse = 0.0;
};

struct MetricsReport {
  std::string mode;
  std::vector<FrameMetrics> frames;
  std::optional<double> gaze_error;  // normalized screen units

  std::vector<double> mean_photometric() const;
  double mean_geometric() const;
  double mean_param_rmse() const;
  double mean_delta_rmse() const;

  void validate() const;
  nlohmann::json summary() const;
  // frame,photometric_0..photometric_{V-1},geometric,param_rmse,delta_rmse
  void write_csv(std::ostream& out) const;
};

struct TrackOptions {
  TrackMode mode = TrackMode::kStereo;
  SolverSchedule schedule;     // frames after the first, identity frozen; 10 PCG, 3 passes
  SolverSchedule first_frame;  // identity, albedo and everything else free
  bool init_from_truth = false;
  std::optional<EnergyWeights> weights;  // replaces the preset weights

  TrackOptions();
  EnergyOptions energy(bool occlusion) const;
};

// Views a mode consumes.
std::vector<FrameObservation> mode_views(const Sequence& sequence, int frame, TrackMode mode);

// Frame-sequential tracking from the rest pose (or the truth of frame 0). With
// depth, frame 0 is first fitted without it.
// Under occlusion in RGB-D mode the marker reference is calibrated from the
// frame-0 estimate and used from frame 1 on.
std::vector<ParamVector> track_sequence(const Sequence& sequence, const TrackOptions& options);

// Errors of estimated parameters against every view of the sequence,
// including views the mode did not observe.
MetricsReport evaluate_tracking(const Sequence& sequence, std::span<const ParamVector> estimates,
                                std::string_view mode);

MetricsReport run_benchmark(TrackMode mode, const Sequence& sequence, const TrackOptions& options = {});

// ---------------------------------------------------------------------------
// Reenactment

enum class ReenactMode { kSelf, kCross };

struct ReenactOptions {
  ReenactMode mode = ReenactMode::kSelf;
  int texture_resolution = 256;
  PoissonOptions poisson;
  double min_mouth_coverage = 0.5;
  double mouth_tau = 0.5;      // static/dynamic speed threshold, pixels per frame
  int mouth_db_frames = 0;     // target frames used for the mouth database, 0 = all
};

struct ReenactResult {
  std::vector<std::vector<ImageF>> frames;  // [frame][view]
  std::vector<std::vector<double>> error;   // mean RGB distance to the target frame over the face
  int mouth_skipped = 0;                    // frames x views without a mouth layer

  double mean_error() const;
};

// Pastes a grayscale eye texture over the bounding box of an eye region mask.
Layer eye_layer(const Gray8& texture, const Mask& region);

// Renders the target with the source's expression. `eyes`, when given, holds
// one left/right texture pair per frame.
ReenactResult run_reenactment(const Sequence& target, std::span<const ParamVector> target_params,
                              const Sequence& source, std::span<const ParamVector> source_params,
                              const ReenactOptions& options = {}, std::span<const std::array<Gray8, 2>> eyes = {});

}  // namespace reenact
