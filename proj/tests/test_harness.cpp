#include <gtest/gtest.h>

#include <sstream>

#include "reenact/harness.hpp"

using namespace reenact;

namespace {

// First `frames` frames of a smooth 30-frame script.
Sequence stereo_sequence(int frames, bool depth = true, NoiseModel noise = {}) {
  SceneScript s = SceneScript::make(0, RigKind::kStereoRgb, 30);
  s.frames.resize(frames);
  s.depth = depth;
  s.noise = noise;
  return synth_sequence(s);
}

const Sequence& short_stereo() {
  static const Sequence seq = stereo_sequence(4);
  return seq;
}

}  // namespace

TEST(Harness, ModeNames) {
  for (TrackMode m : {TrackMode::kStereo, TrackMode::kMonoRgb, TrackMode::kMonoRgbd})
    EXPECT_EQ(parse_track_mode(mode_name(m)), m);
  try {
    parse_track_mode("trinocular");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(Harness, ModeViews) {
  const Sequence& seq = short_stereo();
  EXPECT_EQ(mode_views(seq, 0, TrackMode::kStereo).size(), 2u);
  const auto mono = mode_views(seq, 0, TrackMode::kMonoRgb);
  ASSERT_EQ(mono.size(), 1u);
  EXPECT_FALSE(mono[0].has_depth());
  EXPECT_TRUE(mode_views(seq, 0, TrackMode::kMonoRgbd)[0].has_depth());

  const Sequence flat = stereo_sequence(1, false);
  EXPECT_THROW(mode_views(flat, 0, TrackMode::kMonoRgbd), Error);
  Sequence one_view = flat;
  one_view.frames[0].resize(1);
  EXPECT_THROW(mode_views(one_view, 0, TrackMode::kStereo), Error);
  EXPECT_THROW(mode_views(flat, 3, TrackMode::kMonoRgb), Error);
}

TEST(Harness, TruthScoresZero) {
  const Sequence& seq = short_stereo();
  const MetricsReport r = evaluate_tracking(seq, seq.truth, "truth");
  ASSERT_EQ(r.frames.size(), 4u);
  for (const auto& f : r.frames) {
    ASSERT_EQ(f.photometric.size(), 2u);
    EXPECT_LT(f.photometric[0], 1e-5);
    EXPECT_LT(f.photometric[1], 1e-5);
    EXPECT_EQ(f.geometric, 0.0);
    EXPECT_EQ(f.param_rmse, 0.0);
    EXPECT_EQ(f.delta_rmse, 0.0);
  }
  EXPECT_THROW(evaluate_tracking(seq, std::span(seq.truth).first(2), "short"), Error);
}

TEST(Harness, PerturbedEstimateScoresWorse) {
  const Sequence& seq = short_stereo();
  std::vector<ParamVector> est = seq.truth;
  for (auto& x : est) x.delta.array() += 0.5;
  const MetricsReport r = evaluate_tracking(seq, est, "bad");
  EXPECT_NEAR(r.mean_delta_rmse(), 0.5, 1e-12);
  EXPECT_GT(r.mean_photometric()[0], 1e-3);
  EXPECT_GT(r.mean_geometric(), 1e-5);
}

TEST(Harness, ReportCsvAndSummary) {
  MetricsReport r;
  r.mode = "stereo";
  r.frames = {{{0.1, 0.2}, 0.001, 0.5, 0.25}, {{0.3, 0.4}, 0.003, 0.7, 0.35}};
  r.validate();
  std::ostringstream out;
  r.write_csv(out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "frame,photometric_0,photometric_1,geometric,param_rmse,delta_rmse");
  const auto j = r.summary();
  EXPECT_NEAR(j["photometric"][1].get<double>(), 0.3, 1e-12);
  EXPECT_NEAR(j["geometric"].get<double>(), 0.002, 1e-12);
  EXPECT_FALSE(j.contains("gaze_error"));
  r.gaze_error = 0.12;
  EXPECT_NEAR(r.summary()["gaze_error"].get<double>(), 0.12, 0.0);

  r.frames[1].photometric.pop_back();
  EXPECT_THROW(r.validate(), Error);
  r.frames[1].photometric = {0.1, std::nan("")};
  EXPECT_THROW(r.validate(), Error);
}

TEST(Harness, TruthInitializedRunStaysAtTruth) {
  const Sequence& seq = short_stereo();
  TrackOptions o;
  o.init_from_truth = true;
  for (TrackMode m : {TrackMode::kStereo, TrackMode::kMonoRgb, TrackMode::kMonoRgbd}) {
    const MetricsReport r = run_benchmark(m, seq, o);
    EXPECT_EQ(r.mode, mode_name(m));
    EXPECT_LT(r.frames[0].param_rmse, 1e-3) << mode_name(m);
    EXPECT_LT(r.mean_param_rmse(), 0.02) << mode_name(m);
  }
}

TEST(Harness, TrackingIsDeterministic) {
  const Sequence seq = stereo_sequence(2);
  const auto a = track_sequence(seq, TrackOptions{});
  const auto b = track_sequence(seq, TrackOptions{});
  for (size_t f = 0; f < a.size(); ++f) EXPECT_EQ(a[f].flatten(), b[f].flatten());
}

TEST(Harness, OccludedRgbdUsesCalibratedMarkers) {
  SceneScript s = SceneScript::make(2, RigKind::kMonoRgbd, 30);
  s.frames.resize(4);
  s.occlusion = true;
  const Sequence seq = synth_sequence(s);
  ASSERT_FALSE(seq.frames[0][0].markers.empty());
  TrackOptions o;
  o.mode = TrackMode::kMonoRgbd;
  o.init_from_truth = true;
  EXPECT_TRUE(o.energy(true).use_markers);
  EXPECT_EQ(o.energy(true).photometric_region, kRegionLowerFace);
  EXPECT_EQ(o.energy(false).photometric_region, 0);
  const auto est = track_sequence(seq, o);
  const MetricsReport r = evaluate_tracking(seq, est, "mono-rgbd");
  for (size_t f = 0; f < est.size(); ++f)
    EXPECT_LT((est[f].translation - seq.truth[f].translation).norm(), 3e-3) << f;
  EXPECT_LT(r.mean_geometric(), 2e-3);
}

TEST(Harness, EyeLayerCoversRegion) {
  Gray8 eye(8, 4, 1, 0);
  for (int y = 0; y < 4; ++y)
    for (int x = 4; x < 8; ++x) eye.at(x, y) = 255;
  Mask region(20, 10, 1, 0);
  for (int y = 2; y < 6; ++y)
    for (int x = 3; x < 11; ++x) region.at(x, y) = 1;
  region.at(3, 2) = 0;
  const Layer l = eye_layer(eye, region);
  EXPECT_EQ(l.mask, region);
  EXPECT_NEAR(l.color.at(4, 4, 0), 0.0f, 1e-6f);
  EXPECT_NEAR(l.color.at(10, 4, 1), 1.0f, 1e-6f);
  EXPECT_EQ(l.color.at(0, 0, 2), 0.0f);
  const Layer empty = eye_layer(eye, Mask(20, 10, 1, 0));
  for (auto v : empty.mask.values()) EXPECT_EQ(v, 0);
}

TEST(Harness, SameStreamReenactmentReproducesTarget) {
  const Sequence seq = stereo_sequence(3, false);
  const ReenactResult r = run_reenactment(seq, seq.truth, seq, seq.truth);
  ASSERT_EQ(r.frames.size(), 3u);
  ASSERT_EQ(r.frames[0].size(), 2u);
  EXPECT_EQ(r.mouth_skipped, 0);
  EXPECT_LT(r.mean_error(), 2e-3);
  // Nothing outside the face changes.
  const ImageF& out = r.frames[1][0];
  const ImageF& in = seq.frames[1][0].rgb;
  EXPECT_EQ(out.at(0, 0, 0), in.at(0, 0, 0));
  EXPECT_EQ(out.at(out.width() - 1, out.height() - 1, 2), in.at(in.width() - 1, in.height() - 1, 2));
}

TEST(Harness, ExpressionChangeShowsInOutput) {
  const Sequence seq = stereo_sequence(2, false);
  std::vector<ParamVector> source = seq.truth;
  for (auto& x : source) x.delta.array() += 0.8;
  const ReenactResult same = run_reenactment(seq, seq.truth, seq, seq.truth);
  const ReenactResult moved = run_reenactment(seq, seq.truth, seq, source);
  EXPECT_GT(moved.mean_error(), same.mean_error() + 1e-3);
}

TEST(Harness, CrossModeRetrievesTargetMouths) {
  const Sequence seq = stereo_sequence(4, false);
  ReenactOptions o;
  o.mode = ReenactMode::kCross;
  const ReenactResult r = run_reenactment(seq, seq.truth, seq, seq.truth, o);
  EXPECT_EQ(r.mouth_skipped, 0);
  EXPECT_LT(r.mean_error(), 0.01);
}

TEST(Harness, EyeStreamAddsEyeLayers) {
  const Sequence seq = stereo_sequence(1, false);
  const std::vector<std::array<Gray8, 2>> eyes = {{Gray8(16, 12, 1, 255), Gray8(16, 12, 1, 255)}};
  const ReenactResult plain = run_reenactment(seq, seq.truth, seq, seq.truth);
  const ReenactResult white = run_reenactment(seq, seq.truth, seq, seq.truth, {}, eyes);
  EXPECT_GT(white.mean_error(), plain.mean_error());
  EXPECT_THROW(run_reenactment(seq, seq.truth, seq, std::span(seq.truth).first(0)), Error);
}
