#include "reenact/gaze.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace reenact {

namespace {

constexpr char kFernMagic[8] = {'R', 'E', 'F', 'E', 'R', 'N', 'S', '\0'};
constexpr std::uint32_t kFernVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  require(static_cast<bool>(in), ErrorCode::kIo, "truncated fern file");
  return value;
}

}  // namespace

// ---------------------------------------------------------------------------
// Calibration

void CalibrationSchedule::validate() const {
  require(cols >= 2 && rows >= 2, ErrorCode::kInvalidArgument, "calibration grid must be at least 2x2");
  require(dwell > reject && reject >= 0.0, ErrorCode::kInvalidArgument, "rejection window must fit in the dwell");
  require(frames_per_class >= 1, ErrorCode::kInvalidArgument, "frames_per_class must be positive");
  require(static_cast<int>(dots.size()) == num_classes() && static_cast<int>(order.size()) == num_classes(),
          ErrorCode::kDimensionMismatch, "schedule needs one dot and one visit per class");
  std::vector<int> seen(num_classes(), 0);
  for (int c : order) {
    require(c >= 0 && c < num_classes(), ErrorCode::kInvalidArgument, "visit order holds an unknown class");
    require(++seen[c] == 1, ErrorCode::kInvalidArgument, "visit order repeats a class");
  }
  require(order.back() == blink_class(), ErrorCode::kInvalidArgument, "blink must be visited last");
}

CalibrationSchedule gen_calibration_schedule(int cols, int rows) {
  require(cols >= 2 && rows >= 2, ErrorCode::kInvalidArgument, "calibration grid must be at least 2x2");
  CalibrationSchedule s;
  s.cols = cols;
  s.rows = rows;
  s.dots.resize(cols * rows + 1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) s.dots[s.cell_class(c, r)] = Vec2((c + 0.5) / cols, (r + 0.5) / rows);
  s.dots.back() = Vec2::Constant(0.5);
  for (int r = 0; r < rows; ++r)
    for (int i = 0; i < cols; ++i) s.order.push_back(s.cell_class(r % 2 == 0 ? i : cols - 1 - i, r));
  s.order.push_back(s.blink_class());
  return s;
}

nlohmann::json to_json(const CalibrationSchedule& s) {
  nlohmann::json dots = nlohmann::json::array();
  for (const Vec2& d : s.dots) dots.push_back({d.x(), d.y()});
  return {{"cols", s.cols},   {"rows", s.rows}, {"dwell", s.dwell},          {"reject", s.reject},
          {"frames_per_class", s.frames_per_class}, {"dots", dots}, {"order", s.order}};
}

CalibrationSchedule calibration_schedule_from_json(const nlohmann::json& j) {
  CalibrationSchedule s;
  try {
    s = gen_calibration_schedule(j.at("cols"), j.at("rows"));
    s.dwell = j.value("dwell", s.dwell);
    s.reject = j.value("reject", s.reject);
    s.frames_per_class = j.value("frames_per_class", s.frames_per_class);
    if (j.contains("order")) s.order = j["order"].get<std::vector<int>>();
    if (j.contains("dots")) {
      s.dots.clear();
      for (const auto& d : j["dots"]) s.dots.emplace_back(d.at(0).get<double>(), d.at(1).get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad calibration schedule: ") + e.what());
  }
  s.validate();
  return s;
}

Gray8 shift_clamped(const Gray8& image, int dx, int dy) {
  Gray8 out(image.width(), image.height(), image.channels());
  for (int y = 0; y < image.height(); ++y) {
    const int sy = std::clamp(y + dy, 0, image.height() - 1);
    for (int x = 0; x < image.width(); ++x) {
      const int sx = std::clamp(x + dx, 0, image.width() - 1);
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(sx, sy, c);
    }
  }
  return out;
}

Gray8 median_image(std::span<const Gray8> images) {
  require(!images.empty(), ErrorCode::kInvalidArgument, "median of no images");
  const Gray8& first = images.front();
  for (const auto& im : images)
    require(im.width() == first.width() && im.height() == first.height() && im.channels() == first.channels(),
            ErrorCode::kDimensionMismatch, "median images differ in size");
  Gray8 out(first.width(), first.height(), first.channels());
  std::vector<int> v(images.size());
  const size_t n = v.size();
  for (size_t p = 0; p < first.size(); ++p) {
    for (size_t i = 0; i < n; ++i) v[i] = images[i].data()[p];
    std::sort(v.begin(), v.end());
    const int m = n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2] + 1) / 2;
    out.data()[p] = static_cast<std::uint8_t>(m);
  }
  return out;
}

void LabeledEyeSet::validate() const {
  require(width > 0 && height > 0 && num_classes >= 1, ErrorCode::kInvalidArgument, "empty eye set");
  require(images.size() == labels.size(), ErrorCode::kDimensionMismatch, "one label per eye image");
  require(static_cast<int>(look_at.size()) == num_classes, ErrorCode::kDimensionMismatch,
          "one look-at per class");
  for (size_t i = 0; i < images.size(); ++i) {
    require(images[i].width() == width && images[i].height() == height && images[i].channels() == 1,
            ErrorCode::kDimensionMismatch, "eye crops must share one grayscale size");
    require(labels[i] >= 0 && labels[i] < num_classes, ErrorCode::kInvalidArgument, "eye label out of range");
  }
}

std::vector<int> calibration_window(const EyeStream& stream, const CalibrationSchedule& schedule, int slot) {
  require(slot >= 0 && slot < static_cast<int>(schedule.order.size()), ErrorCode::kInvalidArgument,
          "calibration slot out of range");
  constexpr double eps = 1e-9;
  const double t0 = schedule.dwell * static_cast<double>(slot);
  std::vector<int> window;
  for (int i = 0; i < stream.size(); ++i) {
    const double rel = stream.times[i] - t0;
    if (rel > schedule.reject + eps && rel <= schedule.dwell + eps) window.push_back(i);
  }
  return window;
}

LabeledEyeSet build_training_set(const EyeStream& stream, const CalibrationSchedule& schedule) {
  schedule.validate();
  require(stream.times.size() == stream.images.size(), ErrorCode::kDimensionMismatch,
          "one timestamp per eye frame");
  require(!stream.images.empty() && stream.times.back() >= schedule.duration() - 1e-9,
          ErrorCode::kInvalidArgument, "eye stream ends before the calibration schedule");

  LabeledEyeSet set;
  set.width = stream.images.front().width();
  set.height = stream.images.front().height();
  set.num_classes = schedule.num_classes();
  set.blink_class = schedule.blink_class();
  set.look_at = schedule.dots;
  set.representatives.resize(set.num_classes);

  for (size_t slot = 0; slot < schedule.order.size(); ++slot) {
    const int label = schedule.order[slot];
    const std::vector<int> window = calibration_window(stream, schedule, static_cast<int>(slot));
    require(!window.empty(), ErrorCode::kInvalidArgument, "no eye frames for a calibration dot");
    const int n = static_cast<int>(window.size());
    const int k = schedule.frames_per_class;
    if (n < k)
      set.warnings.push_back("class " + std::to_string(label) + ": " + std::to_string(n) + " frames, padded to " +
                             std::to_string(k));
    std::vector<Gray8> kept;
    kept.reserve(k);
    for (int j = 0; j < k; ++j) {
      const int idx = n >= k ? static_cast<int>((static_cast<long>(j) * n) / k) : j % n;
      kept.push_back(stream.images[window[idx]]);
    }
    for (const auto& im : kept)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          set.images.push_back(shift_clamped(im, dx, dy));
          set.labels.push_back(label);
        }
    set.representatives[label] = median_image(kept);
  }
  set.validate();
  return set;
}

// ---------------------------------------------------------------------------
// Ferns

int FernEnsemble::bin(int fern, const Gray8& image) const {
  const std::uint8_t* p = image.data();
  const FernTest* t = tests.data() + static_cast<size_t>(fern) * depth;
  int b = 0;
  for (int s = 0; s < depth; ++s) b = (b << 1) | (p[t[s].a] < p[t[s].b] ? 1 : 0);
  return b;
}

void FernEnsemble::validate() const {
  require(width > 0 && height > 0 && num_classes >= 1 && num_ferns >= 1 && depth >= 1 && depth <= 20,
          ErrorCode::kInvalidArgument, "fern ensemble dimensions out of range");
  require(tests.size() == static_cast<size_t>(num_ferns) * depth, ErrorCode::kDimensionMismatch,
          "fern test count must be M * S");
  require(log_likelihood.size() == static_cast<size_t>(num_ferns) * bins() * num_classes,
          ErrorCode::kDimensionMismatch, "fern table must be M * 2^S * C");
  const int pixels = width * height;
  for (const auto& t : tests)
    require(t.a >= 0 && t.b >= 0 && t.a < pixels && t.b < pixels && t.a != t.b, ErrorCode::kInvalidArgument,
            "fern test pixel out of range");
  for (double v : log_likelihood)
    require(std::isfinite(v), ErrorCode::kNumerical, "fern log-likelihood is not finite");
}

FernEnsemble train_ferns(const LabeledEyeSet& data, int num_classes, std::span<const std::vector<int>> classes_of,
                         int num_ferns, int depth, std::uint64_t seed) {
  data.validate();
  require(num_ferns >= 1 && depth >= 1 && depth <= 20, ErrorCode::kInvalidArgument, "need M >= 1, 1 <= S <= 20");
  require(static_cast<int>(classes_of.size()) == data.num_classes, ErrorCode::kDimensionMismatch,
          "class map must cover every label");
  const long pixels = static_cast<long>(data.width) * data.height;
  require(pixels * (pixels - 1) / 2 >= depth, ErrorCode::kInvalidArgument,
          "eye crop has too few pixels for distinct tests");

  FernEnsemble e;
  e.width = data.width;
  e.height = data.height;
  e.num_classes = num_classes;
  e.num_ferns = num_ferns;
  e.depth = depth;
  e.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(pixels) - 1);
  e.tests.reserve(static_cast<size_t>(num_ferns) * depth);
  for (int m = 0; m < num_ferns; ++m) {
    const size_t begin = e.tests.size();
    while (e.tests.size() < begin + depth) {
      FernTest t{pick(rng), pick(rng)};
      if (t.a == t.b) continue;
      const auto same = [&](const FernTest& o) {
        return std::min(o.a, o.b) == std::min(t.a, t.b) && std::max(o.a, o.b) == std::max(t.a, t.b);
      };
      if (std::any_of(e.tests.begin() + static_cast<long>(begin), e.tests.end(), same)) continue;
      e.tests.push_back(t);
    }
  }

  const int bins = e.bins();
  std::vector<double> counts(static_cast<size_t>(num_ferns) * bins * num_classes, 1.0);
  std::vector<int> seen(num_classes, 0);
  for (size_t i = 0; i < data.images.size(); ++i) {
    const auto& targets = classes_of[data.labels[i]];
    for (int c : targets) {
      require(c >= 0 && c < num_classes, ErrorCode::kInvalidArgument, "mapped class out of range");
      ++seen[c];
    }
    for (int m = 0; m < num_ferns; ++m) {
      const int b = e.bin(m, data.images[i]);
      double* row = &counts[(static_cast<size_t>(m) * bins + b) * num_classes];
      for (int c : targets) row[c] += 1.0;
    }
  }
  for (int c = 0; c < num_classes; ++c)
    require(seen[c] > 0, ErrorCode::kInvalidArgument, "class " + std::to_string(c) + " has no samples");

  e.log_likelihood.resize(counts.size());
  for (int m = 0; m < num_ferns; ++m)
    for (int c = 0; c < num_classes; ++c) {
      double total = 0.0;
      for (int b = 0; b < bins; ++b) total += counts[(static_cast<size_t>(m) * bins + b) * num_classes + c];
      for (int b = 0; b < bins; ++b) {
        const size_t k = (static_cast<size_t>(m) * bins + b) * num_classes + c;
        e.log_likelihood[k] = std::log(counts[k] / total);
      }
    }
  return e;
}

FernEnsemble train_ferns(const LabeledEyeSet& data, int num_ferns, int depth, std::uint64_t seed) {
  std::vector<std::vector<int>> identity(data.num_classes);
  for (int c = 0; c < data.num_classes; ++c) identity[c] = {c};
  return train_ferns(data, data.num_classes, identity, num_ferns, depth, seed);
}

VecX fern_log_likelihood(const FernEnsemble& e, const Gray8& image) {
  require(image.width() == e.width && image.height() == e.height && image.channels() == 1,
          ErrorCode::kDimensionMismatch, "eye crop does not match the ensemble");
  VecX sum = VecX::Zero(e.num_classes);
  for (int m = 0; m < e.num_ferns; ++m) {
    const int b = e.bin(m, image);
    sum += Eigen::Map<const VecX>(&e.log_likelihood[(static_cast<size_t>(m) * e.bins() + b) * e.num_classes],
                                  e.num_classes);
  }
  return sum;
}

int argmax_over(const VecX& values, std::span<const int> candidates) {
  require(!candidates.empty(), ErrorCode::kInvalidArgument, "argmax over no candidates");
  int best = -1;
  for (int c : candidates) {
    if (best < 0 || values[c] > values[best] || (values[c] == values[best] && c < best)) best = c;
  }
  return best;
}

Classification classify(const FernEnsemble& e, const Gray8& image, const VecX& prior) {
  Classification out;
  out.log_posterior = fern_log_likelihood(e, image);
  if (prior.size() > 0) {
    require(prior.size() == e.num_classes, ErrorCode::kDimensionMismatch, "prior must have one entry per class");
    for (int c = 0; c < e.num_classes; ++c) {
      require(prior[c] >= 0.0 && std::isfinite(prior[c]), ErrorCode::kInvalidArgument,
              "prior weights must be finite and non-negative");
      out.log_posterior[c] += prior[c] > 0.0 ? std::log(prior[c]) : -std::numeric_limits<double>::infinity();
    }
  }
  out.label = 0;
  for (int c = 1; c < e.num_classes; ++c)
    if (out.log_posterior[c] > out.log_posterior[out.label]) out.label = c;
  return out;
}

void save_ferns(std::ostream& out, const FernEnsemble& e) {
  e.validate();
  out.write(kFernMagic, sizeof kFernMagic);
  put<std::uint32_t>(out, kFernVersion);
  put<std::int32_t>(out, e.width);
  put<std::int32_t>(out, e.height);
  put<std::int32_t>(out, e.num_classes);
  put<std::int32_t>(out, e.num_ferns);
  put<std::int32_t>(out, e.depth);
  put<std::uint64_t>(out, e.seed);
  for (const auto& t : e.tests) {
    put<std::int32_t>(out, t.a);
    put<std::int32_t>(out, t.b);
  }
  for (double v : e.log_likelihood) put<double>(out, v);
  require(static_cast<bool>(out), ErrorCode::kIo, "failed to write fern ensemble");
}

FernEnsemble load_ferns(std::istream& in) {
  char magic[sizeof kFernMagic];
  in.read(magic, sizeof magic);
  require(in && std::memcmp(magic, kFernMagic, sizeof magic) == 0, ErrorCode::kIo, "not a fern ensemble file");
  const auto version = get<std::uint32_t>(in);
  require(version == kFernVersion, ErrorCode::kIo, "unsupported fern file version " + std::to_string(version));
  FernEnsemble e;
  e.width = get<std::int32_t>(in);
  e.height = get<std::int32_t>(in);
  e.num_classes = get<std::int32_t>(in);
  e.num_ferns = get<std::int32_t>(in);
  e.depth = get<std::int32_t>(in);
  e.seed = get<std::uint64_t>(in);
  require(e.width > 0 && e.height > 0 && e.num_classes > 0 && e.num_ferns > 0 && e.depth > 0 && e.depth <= 20 &&
              static_cast<long>(e.num_ferns) * e.depth < (1L << 28),
          ErrorCode::kIo, "corrupt fern header");
  e.tests.resize(static_cast<size_t>(e.num_ferns) * e.depth);
  for (auto& t : e.tests) {
    t.a = get<std::int32_t>(in);
    t.b = get<std::int32_t>(in);
  }
  e.log_likelihood.resize(static_cast<size_t>(e.num_ferns) * e.bins() * e.num_classes);
  for (double& v : e.log_likelihood) v = get<double>(in);
  e.validate();
  return e;
}

void save_ferns(const std::filesystem::path& path, const FernEnsemble& e) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string());
  save_ferns(out, e);
}

FernEnsemble load_ferns(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return load_ferns(in);
}

namespace {

constexpr char kStreamMagic[8] = {'R', 'E', 'E', 'Y', 'E', 'S', '\0', '\0'};
constexpr std::uint32_t kStreamVersion = 1;

}  // namespace

void save_eye_stream(const std::filesystem::path& path, const EyeStream& stream) {
  require(stream.times.size() == stream.images.size(), ErrorCode::kDimensionMismatch, "one time per eye frame");
  const int w = stream.images.empty() ? kEyeWidth : stream.images[0].width();
  const int h = stream.images.empty() ? kEyeHeight : stream.images[0].height();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string());
  out.write(kStreamMagic, sizeof kStreamMagic);
  put<std::uint32_t>(out, kStreamVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stream.images.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  for (size_t i = 0; i < stream.images.size(); ++i) {
    const Gray8& im = stream.images[i];
    require(im.width() == w && im.height() == h && im.channels() == 1, ErrorCode::kDimensionMismatch,
            "eye frames differ in size");
    put<double>(out, stream.times[i]);
    out.write(reinterpret_cast<const char*>(im.data()), static_cast<std::streamsize>(im.size()));
  }
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

EyeStream load_eye_stream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  char magic[sizeof kStreamMagic];
  in.read(magic, sizeof magic);
  require(in && std::memcmp(magic, kStreamMagic, sizeof magic) == 0, ErrorCode::kIo, "not an eye stream file");
  const auto version = get<std::uint32_t>(in);
  require(version == kStreamVersion, ErrorCode::kIo, "unsupported eye stream version " + std::to_string(version));
  const auto n = get<std::uint32_t>(in);
  const auto w = get<std::uint32_t>(in);
  const auto h = get<std::uint32_t>(in);
  require(w > 0 && h > 0 && w <= 4096 && h <= 4096, ErrorCode::kIo, "bad eye stream frame size");
  EyeStream s;
  for (std::uint32_t i = 0; i < n; ++i) {
    s.times.push_back(get<double>(in));
    Gray8 im(static_cast<int>(w), static_cast<int>(h), 1);
    in.read(reinterpret_cast<char*>(im.data()), static_cast<std::streamsize>(im.size()));
    require(static_cast<bool>(in), ErrorCode::kIo, "truncated eye stream");
    s.images.push_back(std::move(im));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Hierarchy

VecX temporal_prior(std::optional<int> previous, int num_classes, double ratio) {
  require(num_classes >= 1 && ratio > 0.0, ErrorCode::kInvalidArgument, "bad temporal prior arguments");
  if (!previous) return VecX::Constant(num_classes, 1.0 / num_classes);
  require(*previous >= 0 && *previous < num_classes, ErrorCode::kInvalidArgument, "previous class out of range");
  VecX p = VecX::Constant(num_classes, 1.0 / (1.0 + ratio));
  p[*previous] = ratio / (1.0 + ratio);
  return p;
}

std::vector<std::vector<int>> superclass_members(int cols, int rows) {
  require(cols >= 2 && rows >= 2, ErrorCode::kInvalidArgument, "hierarchy needs at least a 2x2 grid");
  std::vector<std::vector<int>> out;
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c)
      out.push_back({r * cols + c, r * cols + c + 1, (r + 1) * cols + c, (r + 1) * cols + c + 1});
  out.push_back({cols * rows});
  return out;
}

void GazeHierarchy::validate() const {
  fine.validate();
  coarse.validate();
  require(fine.num_classes == cols * rows + 1 && coarse.num_classes == (cols - 1) * (rows - 1) + 1,
          ErrorCode::kDimensionMismatch, "hierarchy class counts do not match the grid");
  require(static_cast<int>(members.size()) == coarse.num_classes &&
              static_cast<int>(supers_of.size()) == fine.num_classes &&
              static_cast<int>(look_at.size()) == fine.num_classes,
          ErrorCode::kDimensionMismatch, "hierarchy maps do not match the class counts");
  require(fine.width == coarse.width && fine.height == coarse.height, ErrorCode::kDimensionMismatch,
          "hierarchy levels use different crop sizes");
}

namespace {

GazeHierarchy hierarchy_layout(int cols, int rows, std::vector<Vec2> look_at) {
  GazeHierarchy h;
  h.cols = cols;
  h.rows = rows;
  h.members = superclass_members(cols, rows);
  h.supers_of.assign(cols * rows + 1, {});
  for (int s = 0; s < static_cast<int>(h.members.size()); ++s)
    for (int f : h.members[s]) h.supers_of[f].push_back(s);
  h.look_at = std::move(look_at);
  return h;
}

}  // namespace

GazeHierarchy train_hierarchy(const LabeledEyeSet& data, const CalibrationSchedule& schedule, int num_ferns,
                              int depth, std::uint64_t seed) {
  schedule.validate();
  require(data.num_classes == schedule.num_classes(), ErrorCode::kDimensionMismatch,
          "eye set does not match the schedule");
  GazeHierarchy h = hierarchy_layout(schedule.cols, schedule.rows, schedule.dots);
  h.fine = train_ferns(data, num_ferns, depth, seed);
  h.coarse = train_ferns(data, static_cast<int>(h.members.size()), h.supers_of, num_ferns, depth,
                         seed ^ 0xC0A125EULL);
  h.validate();
  return h;
}

namespace {

GazeClass finish(const GazeHierarchy& h, int fine, int coarse) {
  GazeClass g;
  g.fine = fine;
  g.coarse = coarse;
  g.blink = fine == h.fine_blink();
  if (!g.blink) g.look_at = h.look_at[fine];
  return g;
}

}  // namespace

GazeClass classify_hierarchical(const GazeHierarchy& h, const Gray8& image, GazeState& state) {
  const Classification coarse = classify(h.coarse, image, temporal_prior(state.coarse, h.coarse.num_classes));
  const int sc = coarse.label;
  int fine = h.fine_blink();
  if (sc != h.coarse_blink()) {
    const auto& cand = h.members[sc];
    std::optional<int> prev;
    if (state.coarse == sc && state.fine &&
        std::find(cand.begin(), cand.end(), *state.fine) != cand.end())
      prev = state.fine;
    VecX post = fern_log_likelihood(h.fine, image);
    if (prev) post += temporal_prior(prev, h.fine.num_classes).array().log().matrix();
    fine = argmax_over(post, cand);
  }
  state.coarse = sc;
  state.fine = fine;
  return finish(h, fine, sc);
}

GazeClass classify_flat(const GazeHierarchy& h, const Gray8& image, GazeState& state) {
  const Classification c = classify(h.fine, image, temporal_prior(state.fine, h.fine.num_classes));
  state.fine = c.label;
  state.coarse.reset();
  return finish(h, c.label, -1);
}

// ---------------------------------------------------------------------------
// Eye textures

void EyeDatabase::validate() const {
  require(!textures.empty() && textures.size() == look_at.size(), ErrorCode::kDimensionMismatch,
          "eye database needs one texture and look-at per class");
  require(blink_class >= 0 && blink_class < static_cast<int>(textures.size()), ErrorCode::kInvalidArgument,
          "eye database has no blink class");
  for (const auto& t : textures)
    require(t.width() == textures.front().width() && t.height() == textures.front().height() &&
                t.channels() == textures.front().channels(),
            ErrorCode::kDimensionMismatch, "eye textures differ in size");
}

EyeDatabase eye_database(const LabeledEyeSet& data) {
  require(data.blink_class >= 0, ErrorCode::kInvalidArgument, "eye set has no blink class");
  EyeDatabase db;
  db.blink_class = data.blink_class;
  db.look_at = data.look_at;
  for (const auto& rep : data.representatives) {
    ImageF t(rep.width(), rep.height(), 1);
    for (size_t i = 0; i < rep.size(); ++i) t.data()[i] = rep.data()[i] / 255.0f;
    db.textures.push_back(std::move(t));
  }
  db.validate();
  return db;
}

Vec2 correct_gaze(const Vec2& look_at, const Vec2& delta) {
  return (look_at + delta).cwiseMax(0.0).cwiseMin(1.0);
}

EyeRetrieval retrieve_eye_texture(const EyeDatabase& db, int label, EyeRetriever& state, const Vec2& delta) {
  require(label >= 0 && label < static_cast<int>(db.textures.size()), ErrorCode::kInvalidArgument,
          "eye class out of range");
  require(state.window >= 1, ErrorCode::kInvalidArgument, "look-at window must be positive");
  EyeRetrieval out;
  if (label == db.blink_class) {
    out.retrieved = label;
  } else {
    state.recent.push_back(correct_gaze(db.look_at[label], delta));
    while (static_cast<int>(state.recent.size()) > state.window) state.recent.pop_front();
  }
  if (!state.recent.empty()) {
    Vec2 mean = Vec2::Zero();
    for (const auto& v : state.recent) mean += v;
    out.look_at = mean / static_cast<double>(state.recent.size());
  }
  if (out.retrieved < 0) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < static_cast<int>(db.look_at.size()); ++c) {
      if (c == db.blink_class) continue;
      const double d = (db.look_at[c] - out.look_at).squaredNorm();
      if (d < best) {
        best = d;
        out.retrieved = c;
      }
    }
  }
  const ImageF& fetched = db.textures[out.retrieved];
  if (state.previous.empty()) {
    out.texture = fetched;
  } else {
    out.texture = ImageF(fetched.width(), fetched.height(), fetched.channels());
    const float a = static_cast<float>(state.blend);
    for (size_t i = 0; i < fetched.size(); ++i)
      out.texture.data()[i] = a * fetched.data()[i] + (1.0f - a) * state.previous.data()[i];
  }
  state.previous = out.texture;
  return out;
}

void save_hierarchy(const std::filesystem::path& dir, const GazeHierarchy& h) {
  h.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir.string());
  nlohmann::json look = nlohmann::json::array();
  for (const Vec2& p : h.look_at) look.push_back({p.x(), p.y()});
  std::ofstream out(dir / "hierarchy.json");
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + (dir / "hierarchy.json").string());
  out << nlohmann::json{{"cols", h.cols}, {"rows", h.rows}, {"look_at", look}}.dump(1) << '\n';
  save_ferns(dir / "fine.ferns", h.fine);
  save_ferns(dir / "coarse.ferns", h.coarse);
}

GazeHierarchy load_hierarchy(const std::filesystem::path& dir) {
  std::ifstream in(dir / "hierarchy.json");
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + (dir / "hierarchy.json").string());
  GazeHierarchy h;
  try {
    const auto j = nlohmann::json::parse(in);
    std::vector<Vec2> look;
    for (const auto& p : j.at("look_at")) look.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    h = hierarchy_layout(j.at("cols"), j.at("rows"), std::move(look));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("bad hierarchy.json: ") + e.what());
  }
  h.fine = load_ferns(dir / "fine.ferns");
  h.coarse = load_ferns(dir / "coarse.ferns");
  h.validate();
  return h;
}

}  // namespace reenact
