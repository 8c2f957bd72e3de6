#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "reenact/gaze.hpp"

namespace reenact {

// Procedural eye: almond opening, iris and pupil discs whose center moves
// linearly with the look-at, skin around it. Units are crop pixels.
struct EyeAppearance {
  Vec2 center{32.0, 24.0};
  double half_width = 24.0;
  double half_height = 13.0;
  double iris_radius = 9.0;
  double pupil_radius = 4.0;
  double range_x = 26.0;  // iris travel across the screen width
  double range_y = 14.0;
  double skin = 150.0;
  double sclera = 215.0;
  double iris = 95.0;
  double pupil = 25.0;
  double lash = 60.0;

  static EyeAppearance random(std::mt19937_64& rng);
};

struct GazeNoise {
  double pixel_sigma = 0.0;     // gray levels
  double gain_sigma = 0.0;      // relative brightness per frame
  double head_jitter = 0.0;     // pixels, per-frame shift of the whole eye
  double fixation_sigma = 0.0;  // look-at units, per-frame wobble around the dot

  static GazeNoise benchmark();
};

// openness 1 is fully open, 0 closed.
Gray8 render_eye(const EyeAppearance& eye, const Vec2& look_at, double openness, const Vec2& shift = Vec2::Zero(),
                 double gain = 1.0);

struct GazeSession {
  CalibrationSchedule schedule;
  EyeAppearance appearance;
  EyeStream calibration;
  EyeStream evaluation;  // times continue after the calibration
  std::vector<Vec2> eval_dot;     // per evaluation frame, the dot on screen
  std::vector<double> eval_age;   // seconds since that dot appeared
  std::vector<bool> eval_blink;   // lid closed in this frame
};

constexpr int kEvalDotPeriod = 80;  // frames between evaluation dots

// Calibration run over the schedule followed by `eval_dots` random dots.
// The eye reacts to each dot after a 0.15-0.3 s latency with a 50 ms saccade.
GazeSession synth_gaze_session(std::uint64_t seed, const CalibrationSchedule& schedule, const GazeNoise& noise,
                               int eval_dots = 30);

struct GazeBenchmark {
  double two_level = 0.0;  // mean look-at error, hierarchical
  double one_level = 0.0;  // fine ensemble alone
  double floor = 0.0;      // distance of each dot to its nearest cell center
  double two_level_ms = 0.0;  // mean classification time per crop
  int frames = 0;          // settled, open-eye evaluation frames
  int blink_frames = 0;
  int blink_hits = 0;      // blink frames classified as blink by the hierarchy
};

// Trains on the calibration half and scores the evaluation half on frames at
// least `settle` seconds after the dot appeared.
GazeBenchmark run_gaze_benchmark(const GazeSession& session, int num_ferns = 800, int depth = 5,
                                 std::uint64_t fern_seed = 1, double settle = 0.4);

}  // namespace reenact
