#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reenact/image.hpp"

namespace reenact {

constexpr int kEyeWidth = 64;
constexpr int kEyeHeight = 48;
constexpr double kEyeRate = 120.0;  // Hz

// Calibration dots on a cols x rows grid plus a terminal blink class.
// Class id of cell (c, r) is r * cols + c; the blink class is cols * rows.
struct CalibrationSchedule {
  int cols = 7;
  int rows = 5;
  double dwell = 2.0;   // seconds per dot
  double reject = 0.4;  // leading seconds discarded per dot
  int frames_per_class = 50;
  std::vector<Vec2> dots;  // per class, normalized screen position; blink last
  std::vector<int> order;  // class ids in visit order

  int num_classes() const { return cols * rows + 1; }
  int blink_class() const { return cols * rows; }
  int cell_class(int c, int r) const { return r * cols + c; }
  double duration() const { return dwell * static_cast<double>(order.size()); }
  void validate() const;
};

CalibrationSchedule gen_calibration_schedule(int cols = 7, int rows = 5);

// Timestamped eye crops. times[i] is the end of exposure of images[i],
// relative to the start of the calibration.
struct EyeStream {
  std::vector<double> times;
  std::vector<Gray8> images;

  int size() const { return static_cast<int>(images.size()); }
};

// "REEYES\0\0", u32 version, u32 frames, width, height, then per frame an
// f64 time and width * height bytes.
void save_eye_stream(const std::filesystem::path& path, const EyeStream& stream);
EyeStream load_eye_stream(const std::filesystem::path& path);

nlohmann::json to_json(const CalibrationSchedule& schedule);
CalibrationSchedule calibration_schedule_from_json(const nlohmann::json& j);

struct LabeledEyeSet {
  int width = kEyeWidth;
  int height = kEyeHeight;
  int num_classes = 0;
  int blink_class = -1;
  std::vector<Gray8> images;
  std::vector<int> labels;
  std::vector<Gray8> representatives;  // per class
  std::vector<Vec2> look_at;           // per class; the blink entry is unused
  std::vector<std::string> warnings;

  void validate() const;
};

// Indices of the frames in (reject, dwell] of the dot visited at `slot`.
std::vector<int> calibration_window(const EyeStream& stream, const CalibrationSchedule& schedule, int slot);

// Keeps frames in (reject, dwell] of each dot, subsamples to frames_per_class,
// adds the 9 one-pixel shifts of each and takes the per-pixel median of the
// kept frames as the class representative.
LabeledEyeSet build_training_set(const EyeStream& stream, const CalibrationSchedule& schedule);

// Image shifted by (dx, dy) with clamped borders: out(x, y) = in(x + dx, y + dy).
Gray8 shift_clamped(const Gray8& image, int dx, int dy);
Gray8 median_image(std::span<const Gray8> images);

struct FernTest {
  int a = 0;  // linear pixel index
  int b = 0;
};

// M ferns of S tests I(a) < I(b). log_likelihood is laid out [fern][bin][class].
struct FernEnsemble {
  int width = 0;
  int height = 0;
  int num_classes = 0;
  int num_ferns = 0;
  int depth = 0;  // S
  std::uint64_t seed = 0;
  std::vector<FernTest> tests;  // num_ferns * depth
  std::vector<double> log_likelihood;

  int bins() const { return 1 << depth; }
  double& ll(int fern, int bin, int c) {
    return log_likelihood[(static_cast<size_t>(fern) * bins() + bin) * num_classes + c];
  }
  double ll(int fern, int bin, int c) const {
    return log_likelihood[(static_cast<size_t>(fern) * bins() + bin) * num_classes + c];
  }
  int bin(int fern, const Gray8& image) const;
  void validate() const;
};

FernEnsemble train_ferns(const LabeledEyeSet& data, int num_ferns, int depth, std::uint64_t seed);

// Same, with class labels remapped: sample i counts for every class in classes_of[labels[i]].
FernEnsemble train_ferns(const LabeledEyeSet& data, int num_classes, std::span<const std::vector<int>> classes_of,
                         int num_ferns, int depth, std::uint64_t seed);

struct Classification {
  int label = -1;
  VecX log_posterior;
};

// Sum over ferns of the log-likelihood of the observed bin, per class.
VecX fern_log_likelihood(const FernEnsemble& ensemble, const Gray8& image);

// prior holds non-negative per-class weights; zero weights give -inf.
// Ties go to the lowest index. An empty prior is uniform.
Classification classify(const FernEnsemble& ensemble, const Gray8& image, const VecX& prior = VecX());

// argmax of values over `candidates`, lowest index on ties.
int argmax_over(const VecX& values, std::span<const int> candidates);

void save_ferns(std::ostream& out, const FernEnsemble& ensemble);
FernEnsemble load_ferns(std::istream& in);
void save_ferns(const std::filesystem::path& path, const FernEnsemble& ensemble);
FernEnsemble load_ferns(const std::filesystem::path& path);

constexpr double kStayRatio = 1.05;

// p1 = r / (1 + r) for the previous class, 1 / (1 + r) for every other one;
// uniform 1 / C without a previous class.
VecX temporal_prior(std::optional<int> previous, int num_classes, double ratio = kStayRatio);

struct GazeHierarchy {
  int cols = 7;
  int rows = 5;
  FernEnsemble fine;
  FernEnsemble coarse;
  std::vector<std::vector<int>> members;    // per superclass, fine classes
  std::vector<std::vector<int>> supers_of;  // per fine class, superclasses
  std::vector<Vec2> look_at;                // per fine class

  int fine_blink() const { return cols * rows; }
  int coarse_blink() const { return (cols - 1) * (rows - 1); }
  void validate() const;
};

// 2x2 blocks of adjacent cells with overlap one, row-major, blink last.
std::vector<std::vector<int>> superclass_members(int cols, int rows);

GazeHierarchy train_hierarchy(const LabeledEyeSet& data, const CalibrationSchedule& schedule, int num_ferns,
                              int depth, std::uint64_t seed);

// Directory with hierarchy.json (grid size, look-ats), fine.ferns, coarse.ferns.
void save_hierarchy(const std::filesystem::path& dir, const GazeHierarchy& hierarchy);
GazeHierarchy load_hierarchy(const std::filesystem::path& dir);

struct GazeState {
  std::optional<int> coarse;
  std::optional<int> fine;
};

struct GazeClass {
  int fine = -1;
  int coarse = -1;
  Vec2 look_at = Vec2::Constant(0.5);
  bool blink = false;
};

GazeClass classify_hierarchical(const GazeHierarchy& hierarchy, const Gray8& image, GazeState& state);

// Fine ensemble alone with the temporal prior on all classes.
GazeClass classify_flat(const GazeHierarchy& hierarchy, const Gray8& image, GazeState& state);

struct EyeDatabase {
  std::vector<ImageF> textures;  // per class
  std::vector<Vec2> look_at;     // per class; the blink entry is unused
  int blink_class = -1;

  void validate() const;
};

EyeDatabase eye_database(const LabeledEyeSet& data);

struct EyeRetriever {
  int window = 3;
  double blend = 0.8;
  std::deque<Vec2> recent;
  ImageF previous;
};

struct EyeRetrieval {
  ImageF texture;
  Vec2 look_at = Vec2::Constant(0.5);
  int retrieved = -1;
};

Vec2 correct_gaze(const Vec2& look_at, const Vec2& delta);

// Averages the look-at over the last `window` frames, fetches the class nearest
// to it (or the blink texture) and blends with the previous output.
EyeRetrieval retrieve_eye_texture(const EyeDatabase& db, int label, EyeRetriever& state,
                                  const Vec2& delta = Vec2::Zero());

}  // namespace reenact
