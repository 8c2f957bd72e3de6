// Command-line front door: synthetic data, gaze calibration, tracking,
// reenactment and benchmarks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "reenact/eyesynth.hpp"
#include "reenact/harness.hpp"

namespace fs = std::filesystem;
using namespace reenact;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config

struct Config {
  json synth = json::object();
  json gaze = json::object();
  json reenact = json::object();
  TrackOptions track;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

void read_schedule(const json& j, SolverSchedule& s) {
  s.levels = j.value("levels", s.levels);
  if (j.contains("irls_iterations")) s.irls_iterations = j["irls_iterations"].get<std::vector<int>>();
  s.gn_steps = j.value("gn_steps", s.gn_steps);
  s.pcg_iterations = j.value("pcg_iterations", s.pcg_iterations);
  s.pcg_tolerance = j.value("pcg_tolerance", s.pcg_tolerance);
  s.damping = j.value("damping", s.damping);
  s.max_halvings = j.value("max_halvings", s.max_halvings);
  s.passes = j.value("passes", s.passes);
  s.validate();
}

Config load_config(const std::string& path) {
  Config c;
  if (path.empty()) return c;
  const json j = read_json_file(path);
  require(j.is_object(), ErrorCode::kInvalidArgument, "config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "weights") {
        EnergyWeights w;
        w.ste = value.value("ste", w.ste);
        w.lan = value.value("lan", w.lan);
        w.reg = value.value("reg", w.reg);
        w.rgb = value.value("rgb", w.rgb);
        w.geo = value.value("geo", w.geo);
        w.point = value.value("point", w.point);
        w.plane = value.value("plane", w.plane);
        w.sta = value.value("sta", w.sta);
        c.track.weights = w;
      } else if (key == "schedule") {
        read_schedule(value, c.track.schedule);
      } else if (key == "first_frame") {
        read_schedule(value, c.track.first_frame);
      } else if (key == "synth") {
        c.synth = value;
      } else if (key == "gaze") {
        c.gaze = value;
      } else if (key == "reenact") {
        c.reenact = value;
      } else {
        fail(ErrorCode::kInvalidArgument, "unknown config section '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad config: ") + e.what());
  }
  return c;
}

GazeNoise gaze_noise(const json& g, bool benchmark) {
  GazeNoise n = benchmark ? GazeNoise::benchmark() : GazeNoise{};
  if (g.contains("noise")) {
    const auto& j = g["noise"];
    n.pixel_sigma = j.value("pixel_sigma", n.pixel_sigma);
    n.gain_sigma = j.value("gain_sigma", n.gain_sigma);
    n.head_jitter = j.value("head_jitter", n.head_jitter);
    n.fixation_sigma = j.value("fixation_sigma", n.fixation_sigma);
  }
  return n;
}

ReenactOptions reenact_options(const json& r) {
  ReenactOptions o;
  o.texture_resolution = r.value("texture_resolution", o.texture_resolution);
  o.poisson.max_iterations = r.value("poisson_iterations", o.poisson.max_iterations);
  o.poisson.tolerance = r.value("poisson_tolerance", o.poisson.tolerance);
  o.min_mouth_coverage = r.value("min_mouth_coverage", o.min_mouth_coverage);
  o.mouth_tau = r.value("mouth_tau", o.mouth_tau);
  o.mouth_db_frames = r.value("mouth_db_frames", o.mouth_db_frames);
  return o;
}

std::string frame_name(const char* stem, int f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d", stem, f);
  return buf;
}

void write_params(const fs::path& dir, std::span<const ParamVector> params) {
  fs::create_directories(dir);
  for (size_t f = 0; f < params.size(); ++f)
    write_json_file(dir / (frame_name("frame", static_cast<int>(f)) + ".json"), to_json(params[f]));
}

std::vector<ParamVector> read_params(const fs::path& dir, int frames) {
  std::vector<ParamVector> out;
  for (int f = 0; f < frames; ++f)
    out.push_back(param_vector_from_json(read_json_file(dir / (frame_name("frame", f) + ".json"))));
  return out;
}

// Mean look-at error on settled, open-eye frames; blink holds the last look-at.
struct GazeTruth {
  std::vector<Vec2> dot;
  std::vector<double> age;
  std::vector<bool> blink;
};

GazeTruth read_gaze_truth(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  GazeTruth t;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    require(v.size() == 6, ErrorCode::kIo, "bad gaze truth row in " + path.string());
    t.dot.emplace_back(v[2], v[3]);
    t.age.push_back(v[4]);
    t.blink.push_back(v[5] != 0.0);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Verbs

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
};

int cmd_synth(const Globals& g, const Config& c, int frames, const std::string& rig, bool depth, bool occlusion,
              bool noise) {
  const json& s = c.synth;
  frames = s.value("frames", frames);
  const std::string rig_name = s.value("rig", rig);
  require(rig_name == "stereo" || rig_name == "mono-rgbd", ErrorCode::kInvalidArgument, "unknown rig " + rig_name);
  SceneScript script =
      SceneScript::make(g.seed, rig_name == "stereo" ? RigKind::kStereoRgb : RigKind::kMonoRgbd, frames);
  script.width = s.value("width", script.width);
  script.height = s.value("height", script.height);
  script.depth = s.value("depth", depth);
  script.occlusion = s.value("occlusion", occlusion);
  if (noise) script.noise = {0.01, 0.002, 0.5};
  if (s.contains("noise")) {
    script.noise.color_sigma = s["noise"].value("color_sigma", script.noise.color_sigma);
    script.noise.depth_sigma = s["noise"].value("depth_sigma", script.noise.depth_sigma);
    script.noise.landmark_sigma = s["noise"].value("landmark_sigma", script.noise.landmark_sigma);
  }
  write_sequence(g.out, synth_sequence(script));
  std::cout << json{{"out", g.out}, {"frames", frames}, {"rig", rig_name}}.dump() << '\n';
  return 0;
}

int cmd_calibrate(const Globals& g, const Config& c, int cols, int rows, int eval_dots, bool noise) {
  cols = c.gaze.value("cols", cols);
  rows = c.gaze.value("rows", rows);
  eval_dots = c.gaze.value("eval_dots", eval_dots);
  const CalibrationSchedule schedule = gen_calibration_schedule(cols, rows);
  const GazeSession s = synth_gaze_session(g.seed, schedule, gaze_noise(c.gaze, noise), eval_dots);
  const fs::path out = g.out;
  fs::create_directories(out);
  write_json_file(out / "schedule.json", to_json(schedule));
  save_eye_stream(out / "calibration.eyes", s.calibration);
  save_eye_stream(out / "evaluation.eyes", s.evaluation);
  auto csv = open_out(out / "evaluation.csv");
  csv << "frame,time,dot_x,dot_y,age,blink\n";
  csv.precision(9);
  for (int i = 0; i < s.evaluation.size(); ++i)
    csv << i << ',' << s.evaluation.times[i] << ',' << s.eval_dot[i].x() << ',' << s.eval_dot[i].y() << ','
        << s.eval_age[i] << ',' << (s.eval_blink[i] ? 1 : 0) << '\n';
  std::cout << json{{"classes", schedule.num_classes()},
                    {"calibration_frames", s.calibration.size()},
                    {"evaluation_frames", s.evaluation.size()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_train(const Globals& g, const Config& c, const std::string& input, int ferns, int depth) {
  ferns = c.gaze.value("ferns", ferns);
  depth = c.gaze.value("depth", depth);
  const CalibrationSchedule schedule = calibration_schedule_from_json(read_json_file(fs::path(input) / "schedule.json"));
  const LabeledEyeSet set = build_training_set(load_eye_stream(fs::path(input) / "calibration.eyes"), schedule);
  for (const auto& w : set.warnings) std::cerr << "warning: " << w << '\n';
  const GazeHierarchy h = train_hierarchy(set, schedule, ferns, depth, c.gaze.value("fern_seed", g.seed + 1));
  save_hierarchy(g.out, h);
  std::cout << json{{"out", g.out}, {"images", set.images.size()}, {"ferns", ferns}, {"depth", depth}}.dump() << '\n';
  return 0;
}

int cmd_classify(const Globals& g, const std::string& model, const std::string& stream_path,
                 const std::string& truth_path, bool flat, double settle) {
  const GazeHierarchy h = load_hierarchy(model);
  const EyeStream stream = load_eye_stream(stream_path);
  std::optional<GazeTruth> truth;
  if (!truth_path.empty()) {
    truth = read_gaze_truth(truth_path);
    require(static_cast<int>(truth->dot.size()) == stream.size(), ErrorCode::kDimensionMismatch,
            "truth rows do not match the stream");
  }
  fs::path out = g.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  auto csv = open_out(out);
  csv << "frame,time,fine,coarse,blink,look_x,look_y\n";
  csv.precision(9);
  GazeState state;
  Vec2 last = Vec2::Constant(0.5);
  double err = 0.0;
  int counted = 0;
  for (int i = 0; i < stream.size(); ++i) {
    const GazeClass k = flat ? classify_flat(h, stream.images[i], state)
                             : classify_hierarchical(h, stream.images[i], state);
    if (!k.blink) last = k.look_at;
    csv << i << ',' << stream.times[i] << ',' << k.fine << ',' << k.coarse << ',' << (k.blink ? 1 : 0) << ','
        << last.x() << ',' << last.y() << '\n';
    if (truth && !truth->blink[i] && truth->age[i] >= settle) {
      err += (last - truth->dot[i]).norm();
      ++counted;
    }
  }
  json summary = {{"frames", stream.size()}, {"out", g.out}};
  if (truth) summary["mean_error"] = counted > 0 ? err / counted : 0.0;
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_track(const Globals& g, const Config& c, const std::string& seq_dir, const std::string& mode_name_arg) {
  const Sequence seq = read_sequence(seq_dir);
  TrackOptions o = c.track;
  o.mode = parse_track_mode(mode_name_arg);
  const auto params = track_sequence(seq, o);
  const fs::path out = g.out;
  write_params(out / "params", params);
  json summary = {{"frames", params.size()}, {"mode", mode_name_arg}};
  if (seq.truth.size() == seq.frames.size()) {
    const MetricsReport r = evaluate_tracking(seq, params, mode_name_arg);
    auto csv = open_out(out / "errors.csv");
    r.write_csv(csv);
    summary = r.summary();
  }
  write_json_file(out / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_bundle(const Globals& g, const Config& c, const std::string& seq_dir, const std::string& mode_name_arg,
               const std::vector<int>& keyframes) {
  const Sequence seq = read_sequence(seq_dir);
  TrackOptions o = c.track;
  o.mode = parse_track_mode(mode_name_arg);
  std::vector<std::vector<FrameObservation>> views;
  std::vector<ParamVector> init;
  for (int k : keyframes) {
    views.push_back(mode_views(seq, k, o.mode));
    init.push_back(rest_pose(seq.basis.dims()));
  }
  const BundleResult b = bundle_identity(seq.basis, views, init, o.energy(seq.occlusion));
  auto vec = [](const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json j = {{"alpha", vec(b.alpha)}, {"beta", vec(b.beta)}, {"under_constrained", b.under_constrained},
            {"keyframes", keyframes}};
  if (!seq.truth.empty()) {
    const VecX& a = seq.truth[keyframes[0]].alpha;
    j["alpha_rmse"] = std::sqrt((b.alpha - a).squaredNorm() / static_cast<double>(a.size()));
  }
  fs::create_directories(g.out);
  write_json_file(fs::path(g.out) / "identity.json", j);
  std::cout << json{{"out", g.out}, {"under_constrained", b.under_constrained}}.dump() << '\n';
  return 0;
}

ImageF anaglyph(const ImageF& left, const ImageF& right) {
  ImageF out = left;
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      out.at(x, y, 1) = right.at(x, y, 1);
      out.at(x, y, 2) = right.at(x, y, 2);
    }
  return out;
}

int cmd_reenact(const Globals& g, const Config& c, const std::string& target_dir, const std::string& target_params,
                const std::string& source_dir, const std::string& source_params, const std::string& mode,
                const std::string& eye_calibration, const std::string& eye_classes, bool write_anaglyph) {
  require(mode == "self" || mode == "cross", ErrorCode::kInvalidArgument, "mode must be self or cross");
  const Sequence target = read_sequence(target_dir);
  const Sequence source = source_dir.empty() ? target : read_sequence(source_dir);
  const auto tp = read_params(target_params, target.num_frames());
  const auto sp = read_params(source_params, target.num_frames());
  ReenactOptions o = reenact_options(c.reenact);
  o.mode = mode == "self" ? ReenactMode::kSelf : ReenactMode::kCross;

  std::vector<std::array<Gray8, 2>> eyes;
  if (!eye_classes.empty()) {
    require(!eye_calibration.empty(), ErrorCode::kInvalidArgument, "--eye-classes needs --eye-calibration");
    const CalibrationSchedule schedule =
        calibration_schedule_from_json(read_json_file(fs::path(eye_calibration) / "schedule.json"));
    const EyeDatabase db =
        eye_database(build_training_set(load_eye_stream(fs::path(eye_calibration) / "calibration.eyes"), schedule));
    std::ifstream in(eye_classes);
    require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + eye_classes);
    std::string line;
    std::getline(in, line);
    EyeRetriever state;
    while (std::getline(in, line) && static_cast<int>(eyes.size()) < target.num_frames()) {
      std::istringstream ss(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      require(cells.size() >= 3, ErrorCode::kIo, "bad class row in " + eye_classes);
      const EyeRetrieval r = retrieve_eye_texture(db, std::stoi(cells[2]), state);
      Gray8 tex(r.texture.width(), r.texture.height(), 1);
      for (size_t i = 0; i < tex.size(); ++i)
        tex.data()[i] = static_cast<std::uint8_t>(std::clamp(r.texture.data()[i] * 255.0f + 0.5f, 0.0f, 255.0f));
      eyes.push_back({tex, tex});
    }
    require(static_cast<int>(eyes.size()) == target.num_frames(), ErrorCode::kDimensionMismatch,
            "eye class stream shorter than the target");
  }

  const ReenactResult r = run_reenactment(target, tp, source, sp, o, eyes);
  const fs::path out = g.out;
  fs::create_directories(out);
  auto csv = open_out(out / "errors.csv");
  csv << "frame";
  for (size_t v = 0; v < r.error[0].size(); ++v) csv << ",error_" << v;
  csv << '\n';
  csv.precision(9);
  for (size_t f = 0; f < r.frames.size(); ++f) {
    csv << f;
    for (size_t v = 0; v < r.frames[f].size(); ++v) {
      write_png(out / (frame_name("frame", static_cast<int>(f)) + "_view_" + std::to_string(v) + ".png"),
                r.frames[f][v]);
      csv << ',' << r.error[f][v];
    }
    csv << '\n';
    if (write_anaglyph && r.frames[f].size() >= 2)
      write_png(out / (frame_name("anaglyph", static_cast<int>(f)) + ".png"), anaglyph(r.frames[f][0], r.frames[f][1]));
  }
  const json summary = {{"frames", r.frames.size()}, {"mean_error", r.mean_error()}, {"mouth_skipped", r.mouth_skipped}};
  write_json_file(out / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_bench(const Globals& g, const Config& c, const std::string& seq_dir, int frames, int gaze_seeds) {
  Sequence seq;
  if (seq_dir.empty()) {
    SceneScript s = SceneScript::make(g.seed, RigKind::kStereoRgb, frames);
    s.depth = true;
    seq = synth_sequence(s);
  } else {
    seq = read_sequence(seq_dir);
  }
  const fs::path out = g.out;
  fs::create_directories(out);
  json all = json::array();
  for (TrackMode m : {TrackMode::kStereo, TrackMode::kMonoRgb, TrackMode::kMonoRgbd}) {
    if (m == TrackMode::kMonoRgbd && !seq.frames[0][0].has_depth()) continue;
    if (m == TrackMode::kStereo && seq.frames[0].size() < 2) continue;
    const MetricsReport r = run_benchmark(m, seq, c.track);
    auto csv = open_out(out / (std::string(mode_name(m)) + ".csv"));
    r.write_csv(csv);
    all.push_back(r.summary());
  }
  json summary = {{"tracking", all}};
  if (gaze_seeds > 0) {
    const CalibrationSchedule schedule = gen_calibration_schedule(c.gaze.value("cols", 7), c.gaze.value("rows", 5));
    double two = 0.0, one = 0.0;
    for (int s = 0; s < gaze_seeds; ++s) {
      const GazeSession session =
          synth_gaze_session(g.seed + s, schedule, gaze_noise(c.gaze, true), c.gaze.value("eval_dots", 30));
      const GazeBenchmark b = run_gaze_benchmark(session, c.gaze.value("ferns", 800), c.gaze.value("depth", 5));
      two += b.two_level;
      one += b.one_level;
    }
    summary["gaze"] = {{"seeds", gaze_seeds}, {"two_level", two / gaze_seeds}, {"one_level", one / gaze_seeds}};
  }
  write_json_file(out / "bench.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

void report_error(ErrorCode code, const std::string& message) {
  std::cerr << json{{"error", error_code_name(code)}, {"code", static_cast<int>(code)}, {"message", message}}.dump()
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face tracking, gaze classification and reenactment on synthetic data"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--out", g.out, "output path");

  int frames = 30;
  std::string rig = "stereo";
  bool depth = false, occlusion = false, noise = false;
  auto* synth = app.add_subcommand("synth", "render a synthetic sequence directory");
  synth->add_option("--frames", frames);
  synth->add_option("--rig", rig, "stereo | mono-rgbd");
  synth->add_flag("--depth", depth, "depth maps for every view");
  synth->add_flag("--occlusion", occlusion, "HMD over the upper face plus markers");
  synth->add_flag("--noise", noise, "color 0.01, depth 2 mm, landmarks 0.5 px");

  int cols = 7, rows = 5, eval_dots = 30;
  bool gaze_noise_flag = false;
  auto* calibrate = app.add_subcommand("calibrate", "emit a calibration schedule and synthetic eye streams");
  calibrate->add_option("--cols", cols);
  calibrate->add_option("--rows", rows);
  calibrate->add_option("--eval-dots", eval_dots);
  calibrate->add_flag("--noise", gaze_noise_flag, "benchmark eye noise");

  std::string input;
  int ferns = 800, fern_depth = 5;
  auto* train = app.add_subcommand("train-ferns", "train the two-level fern classifier");
  train->add_option("--input", input, "calibrate output directory")->required();
  train->add_option("--ferns", ferns);
  train->add_option("--depth", fern_depth);

  std::string model, stream, truth;
  bool flat = false;
  double settle = 0.4;
  auto* classify_cmd = app.add_subcommand("classify", "classify an eye stream into gaze classes (CSV)");
  classify_cmd->add_option("--model", model, "train-ferns output directory")->required();
  classify_cmd->add_option("--stream", stream, "eye stream file")->required();
  classify_cmd->add_option("--truth", truth, "evaluation.csv for the error summary");
  classify_cmd->add_flag("--flat", flat, "fine ensemble only");
  classify_cmd->add_option("--settle", settle, "seconds after a dot before frames count");

  std::string sequence, mode = "stereo";
  auto* track = app.add_subcommand("track", "track a sequence directory");
  track->add_option("--sequence", sequence)->required();
  track->add_option("--mode", mode, "stereo | mono-rgb | mono-rgbd");

  std::vector<int> keyframes = {0};
  auto* bundle = app.add_subcommand("bundle", "fit a shared identity to keyframes");
  bundle->add_option("--sequence", sequence)->required();
  bundle->add_option("--mode", mode);
  bundle->add_option("--keyframes", keyframes)->delimiter(',');

  std::string target, target_params, source, source_params, reenact_mode = "self", eye_cal, eye_classes;
  bool anaglyph_flag = false;
  auto* reenact_cmd = app.add_subcommand("reenact", "render the target with the source expressions");
  reenact_cmd->add_option("--target", target)->required();
  reenact_cmd->add_option("--target-params", target_params, "track output params directory")->required();
  reenact_cmd->add_option("--source", source, "source sequence (default: the target)");
  reenact_cmd->add_option("--source-params", source_params)->required();
  reenact_cmd->add_option("--mode", reenact_mode, "self | cross");
  reenact_cmd->add_option("--eye-calibration", eye_cal, "calibrate output directory");
  reenact_cmd->add_option("--eye-classes", eye_classes, "classify output CSV");
  reenact_cmd->add_flag("--anaglyph", anaglyph_flag);

  int gaze_seeds = 0;
  auto* bench = app.add_subcommand("bench", "compare tracking modes (and optionally the gaze classifier)");
  bench->add_option("--sequence", sequence, "sequence directory (default: synthesize)");
  bench->add_option("--frames", frames);
  bench->add_option("--gaze-seeds", gaze_seeds);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    report_error(ErrorCode::kInvalidArgument, e.what());
    return static_cast<int>(ErrorCode::kInvalidArgument);
  }

  try {
    const Config c = load_config(g.config);
    if (*synth) return cmd_synth(g, c, frames, rig, depth, occlusion, noise);
    if (*calibrate) return cmd_calibrate(g, c, cols, rows, eval_dots, gaze_noise_flag);
    if (*train) return cmd_train(g, c, input, ferns, fern_depth);
    if (*classify_cmd) return cmd_classify(g, model, stream, truth, flat, settle);
    if (*track) return cmd_track(g, c, sequence, mode);
    if (*bundle) return cmd_bundle(g, c, sequence, mode, keyframes);
    if (*reenact_cmd)
      return cmd_reenact(g, c, target, target_params, source, source_params, reenact_mode, eye_cal, eye_classes,
                         anaglyph_flag);
    if (*bench) return cmd_bench(g, c, sequence, frames, gaze_seeds);
  } catch (const Error& e) {
    report_error(e.code(), e.what());
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    report_error(ErrorCode::kIo, e.what());
    return static_cast<int>(ErrorCode::kIo);
  }
  return 0;
}
