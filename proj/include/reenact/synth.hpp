#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "reenact/energy.hpp"
#include "reenact/facemodel.hpp"

namespace reenact {

enum class RigKind { kMonoRgbd, kStereoRgb };

struct NoiseModel {
  double color_sigma = 0.0;     // linear RGB units
  double depth_sigma = 0.0;     // meters
  double landmark_sigma = 0.0;  // pixels; confidence = exp(-err^2 / 2)
};

struct SceneScript {
  std::uint64_t seed = 0;
  std::uint64_t basis_seed = 7;
  FaceDims dims;
  int vertices = 2562;
  RigKind rig = RigKind::kStereoRgb;
  int width = 200;
  int height = 150;
  VecX alpha;
  VecX beta;
  std::vector<ParamVector> frames;  // ground truth per frame (alpha/beta repeated)
  NoiseModel noise;
  bool occlusion = false;  // HMD over the upper face plus 8 marker corners
  bool depth = false;      // depth maps for every view (always on for the mono RGB-D rig)

  // Smooth random head motion, expression and lighting trajectories.
  static SceneScript make(std::uint64_t seed, RigKind rig, int num_frames);
  void validate() const;
};

nlohmann::json to_json(const SceneScript& script);
SceneScript scene_script_from_json(const nlohmann::json& j);

// Default desk rigs: stereo 200x150 with two toed-in cameras 10 cm apart,
// mono 160x120. Cameras look at a head about 0.5 m in front of the origin.
std::vector<Camera> make_rig(RigKind rig, int width, int height);
Camera look_at_camera(const Vec3& center, const Vec3& target, double focal, int width, int height);

// Frame-0 pose used by every script: the face looks down the camera axis.
ParamVector rest_pose(const FaceDims& dims);

// HMD front plate and its two markers in face-model space.
struct HmdModel {
  double front_z = -0.125;
  double x_min = -0.095, x_max = 0.095;
  double y_min = -0.07, y_max = -0.004;
  std::array<Vec3, 8> corners;  // marker corners, 4 per marker, clockwise from top-left

  HmdModel();
};

struct SynthOptions {
  NoiseModel noise;
  bool depth = false;
  bool occlusion = false;
};

// Renders one observation with noisy landmarks (and marker corners under occlusion).
// Background pixels get a fixed smooth backdrop and invalid depth.
FrameObservation synth_observation(const FaceBasis& basis, const ParamVector& x, const Camera& camera,
                                   const SynthOptions& options, std::mt19937_64& rng);

struct Sequence {
  FaceBasis basis;
  std::vector<Camera> cameras;
  std::vector<std::vector<FrameObservation>> frames;  // [frame][view]
  std::vector<ParamVector> truth;
  bool occlusion = false;

  int num_frames() const { return static_cast<int>(frames.size()); }
};

Sequence synth_sequence(const SceneScript& script);

// Directory layout:
//   basis.bin, script.json, cameras.json
//   frame_NNNN/view_V.png, view_V_depth.pfm, view_V.json, truth.json
void write_sequence(const std::filesystem::path& dir, const Sequence& sequence);
Sequence read_sequence(const std::filesystem::path& dir);

// Pixels strictly inside the quad spanned by a marker's four detected corners.
std::array<PixelRegion, 2> marker_regions(std::span<const MarkerCorner> corners, int width, int height);

// Reference corners A_k in model space from one observation and a pose estimate.
std::vector<Vec3> calibrate_marker_reference(const FrameObservation& view, const ParamVector& pose);

}  // namespace reenact
