#include "reenact/eyesynth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace reenact {

namespace {

double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

double mix(double a, double b, double t) { return a + (b - a) * t; }

// Eye motion within one dot: fixation on `from` until the latency ends, a
// linear saccade, then fixation on `to`.
Vec2 saccade(const Vec2& from, const Vec2& to, double age, double latency) {
  constexpr double kSaccade = 0.05;
  const double t = std::clamp((age - latency) / kSaccade, 0.0, 1.0);
  return from + (to - from) * t;
}

struct Frame {
  Gray8 image;
  bool closed = false;
};

Frame noisy_frame(const EyeAppearance& eye, const Vec2& gaze, double openness, const GazeNoise& noise,
                  std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const Vec2 wobble(noise.fixation_sigma * n01(rng), noise.fixation_sigma * n01(rng));
  const Vec2 shift(noise.head_jitter * n01(rng), noise.head_jitter * n01(rng));
  const double gain = 1.0 + noise.gain_sigma * n01(rng);
  Frame f;
  f.image = render_eye(eye, (gaze + wobble).cwiseMax(0.0).cwiseMin(1.0), openness, shift, gain);
  if (noise.pixel_sigma > 0.0)
    for (auto& p : f.image.values())
      p = static_cast<std::uint8_t>(std::clamp(std::lround(p + noise.pixel_sigma * n01(rng)), 0L, 255L));
  f.closed = openness < 0.5;
  return f;
}

}  // namespace

EyeAppearance EyeAppearance::random(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  EyeAppearance e;
  e.center += Vec2(1.5 * u(rng), 1.0 * u(rng));
  e.half_width += 1.5 * u(rng);
  e.half_height += 1.0 * u(rng);
  e.iris_radius += 0.8 * u(rng);
  e.pupil_radius += 0.5 * u(rng);
  e.skin += 20.0 * u(rng);
  e.sclera += 10.0 * u(rng);
  e.iris += 25.0 * u(rng);
  e.pupil += 10.0 * u(rng);
  return e;
}

GazeNoise GazeNoise::benchmark() {
  GazeNoise n;
  n.pixel_sigma = 40.0;
  n.gain_sigma = 0.05;
  n.head_jitter = 1.5;
  n.fixation_sigma = 0.04;
  return n;
}

Gray8 render_eye(const EyeAppearance& e, const Vec2& look_at, double openness, const Vec2& shift, double gain) {
  require(openness >= 0.0 && openness <= 1.0, ErrorCode::kInvalidArgument, "eye openness must be in [0, 1]");
  Gray8 out(kEyeWidth, kEyeHeight, 1);
  const Vec2 c = e.center + shift;
  const Vec2 iris = c + Vec2((look_at.x() - 0.5) * e.range_x, (look_at.y() - 0.5) * e.range_y);
  // The upper lid follows the gaze down a little.
  const double droop = 0.3 * (look_at.y() - 0.5) * e.half_height;
  const double open_h = std::max(openness * e.half_height, 1e-3);
  for (int y = 0; y < kEyeHeight; ++y)
    for (int x = 0; x < kEyeWidth; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double u = (px - c.x()) / e.half_width;
      const double across = std::max(0.0, 1.0 - u * u);
      const double top = c.y() + droop * openness - open_h * across;
      const double bottom = c.y() + 0.7 * e.half_height * openness * across;
      double inside = coverage(std::abs(u) * e.half_width - e.half_width);
      inside *= coverage(top - py) * coverage(py - bottom);
      const double d_iris = (Vec2(px, py) - iris).norm();
      double eye = mix(e.sclera, e.iris, coverage(d_iris - e.iris_radius));
      eye = mix(eye, e.pupil, coverage(d_iris - e.pupil_radius));
      const double skin = e.skin + 8.0 * std::sin(0.19 * px + 0.5) * std::cos(0.23 * py);
      double v = mix(skin, eye, inside);
      // Lash line along the upper lid.
      v = mix(v, e.lash, 0.8 * coverage(std::abs(py - top) - 1.0) * coverage(std::abs(u) - 1.0));
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v * gain), 0L, 255L));
    }
  return out;
}

GazeSession synth_gaze_session(std::uint64_t seed, const CalibrationSchedule& schedule, const GazeNoise& noise,
                               int eval_dots) {
  schedule.validate();
  require(eval_dots >= 0, ErrorCode::kInvalidArgument, "negative evaluation dot count");
  std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ULL + 0xE7E);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GazeSession s;
  s.schedule = schedule;
  s.appearance = EyeAppearance::random(rng);
  const auto& eye = s.appearance;

  const long per_dot = std::lround(schedule.dwell * kEyeRate);
  Vec2 gaze(0.5, 0.5);
  long frame = 0;
  for (int cls : schedule.order) {
    const double latency = 0.15 + 0.15 * unit(rng);
    const bool blink = cls == schedule.blink_class();
    const Vec2 target = blink ? gaze : schedule.dots[cls];
    for (long k = 0; k < per_dot; ++k, ++frame) {
      const double age = (k + 1) / kEyeRate;
      const Vec2 g = saccade(gaze, target, age, latency);
      const double open = blink ? 1.0 - std::clamp((age - latency) / 0.1, 0.0, 1.0) : 1.0;
      s.calibration.times.push_back((frame + 1) / kEyeRate);
      s.calibration.images.push_back(noisy_frame(eye, g, open, noise, rng).image);
    }
    gaze = target;
  }

  for (int d = 0; d < eval_dots; ++d) {
    const Vec2 dot(unit(rng), unit(rng));
    const double latency = 0.15 + 0.15 * unit(rng);
    // Occasional 0.15 s blink in the settled part of the dot.
    const bool blinks = unit(rng) < 0.2;
    const double blink_at = 0.45 + 0.1 * unit(rng);
    for (long k = 0; k < kEvalDotPeriod; ++k, ++frame) {
      const double age = (k + 1) / kEyeRate;
      const Vec2 g = saccade(gaze, dot, age, latency);
      const double open = blinks && age > blink_at && age <= blink_at + 0.15 ? 0.0 : 1.0;
      const Frame f = noisy_frame(eye, g, open, noise, rng);
      s.evaluation.times.push_back((frame + 1) / kEyeRate);
      s.evaluation.images.push_back(f.image);
      s.eval_dot.push_back(dot);
      s.eval_age.push_back(age);
      s.eval_blink.push_back(f.closed);
    }
    gaze = dot;
  }
  return s;
}

GazeBenchmark run_gaze_benchmark(const GazeSession& s, int num_ferns, int depth, std::uint64_t fern_seed,
                                 double settle) {
  const LabeledEyeSet data = build_training_set(s.calibration, s.schedule);
  const GazeHierarchy h = train_hierarchy(data, s.schedule, num_ferns, depth, fern_seed);
  GazeBenchmark b;
  GazeState two, one;
  Vec2 last_two(0.5, 0.5), last_one(0.5, 0.5);
  double ms = 0.0;
  for (int i = 0; i < s.evaluation.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const GazeClass g2 = classify_hierarchical(h, s.evaluation.images[i], two);
    ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const GazeClass g1 = classify_flat(h, s.evaluation.images[i], one);
    if (!g2.blink) last_two = g2.look_at;
    if (!g1.blink) last_one = g1.look_at;
    if (s.eval_blink[i]) {
      ++b.blink_frames;
      b.blink_hits += g2.blink ? 1 : 0;
      continue;
    }
    if (s.eval_age[i] <= settle + 1e-9) continue;
    const Vec2& dot = s.eval_dot[i];
    double nearest = std::numeric_limits<double>::infinity();
    for (int c = 0; c < s.schedule.blink_class(); ++c)
      nearest = std::min(nearest, (s.schedule.dots[c] - dot).norm());
    b.floor += nearest;
    b.two_level += (last_two - dot).norm();
    b.one_level += (last_one - dot).norm();
    ++b.frames;
  }
  if (b.frames > 0) {
    b.floor /= b.frames;
    b.two_level /= b.frames;
    b.one_level /= b.frames;
  }
  if (s.evaluation.size() > 0) b.two_level_ms = ms / s.evaluation.size();
  return b;
}

}  // namespace reenact
