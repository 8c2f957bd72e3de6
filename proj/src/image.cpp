#include "reenact/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace reenact {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kBehindCamera: return "behind_camera";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kTrackingLost: return "tracking_lost";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kNumerical: return "numerical";
  }
  return "unknown";
}

float srgb_encode(float linear) {
  const float v = std::clamp(linear, 0.0f, 1.0f);
  return v <= 0.0031308f ? 12.92f * v : 1.055f * std::pow(v, 1.0f / 2.4f) - 0.055f;
}

float srgb_decode(float encoded) {
  const float v = std::clamp(encoded, 0.0f, 1.0f);
  return v <= 0.04045f ? v / 12.92f : std::pow((v + 0.055f) / 1.055f, 2.4f);
}

namespace {

void write_png_raw(const std::filesystem::path& path, int width, int height, bool rgb,
                   const std::vector<std::uint8_t>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    fail(ErrorCode::kIo, "cannot write PNG " + path.string() + ": " + image.message);
  }
}

std::vector<std::uint8_t> read_png_raw(const std::filesystem::path& path, bool rgb, int& width,
                                       int& height) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    fail(ErrorCode::kIo, "cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    fail(ErrorCode::kIo, "cannot decode PNG " + path.string() + ": " + image.message);
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return bytes;
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageF& rgb) {
  require(rgb.channels() == 3, ErrorCode::kInvalidArgument, "write_png expects 3 channels");
  std::vector<std::uint8_t> bytes(rgb.size());
  for (size_t i = 0; i < rgb.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(std::lround(srgb_encode(rgb.data()[i]) * 255.0f));
  }
  write_png_raw(path, rgb.width(), rgb.height(), true, bytes);
}

ImageF read_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = read_png_raw(path, true, w, h);
  ImageF out(w, h, 3);
  for (size_t i = 0; i < bytes.size(); ++i) out.data()[i] = srgb_decode(bytes[i] / 255.0f);
  return out;
}

void write_png_gray(const std::filesystem::path& path, const Gray8& image) {
  require(image.channels() == 1, ErrorCode::kInvalidArgument, "expected 1 channel");
  write_png_raw(path, image.width(), image.height(), false, image.values());
}

Gray8 read_png_gray(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_png_raw(path, false, w, h);
  Gray8 out(w, h, 1);
  out.values() = std::move(bytes);
  return out;
}

void write_pfm(const std::filesystem::path& path, const ImageF& image) {
  require(image.channels() == 1 || image.channels() == 3, ErrorCode::kInvalidArgument,
          "PFM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string());
  out << (image.channels() == 3 ? "PF" : "Pf") << "\n"
      << image.width() << " " << image.height() << "\n-1.0\n";
  const size_t row = static_cast<size_t>(image.width()) * image.channels();
  for (int y = image.height() - 1; y >= 0; --y) {
    const float* src = image.data() + static_cast<size_t>(y) * row;
    for (size_t i = 0; i < row; ++i) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(src[i]);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

ImageF read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  in.get();
  if ((magic != "PF" && magic != "Pf") || width <= 0 || height <= 0 || !in) {
    fail(ErrorCode::kIo, "malformed PFM header in " + path.string());
  }
  const int channels = magic == "PF" ? 3 : 1;
  const bool little = scale < 0.0;
  ImageF image(width, height, channels);
  const size_t row = static_cast<size_t>(width) * channels;
  for (int y = height - 1; y >= 0; --y) {
    float* dst = image.data() + static_cast<size_t>(y) * row;
    for (size_t i = 0; i < row; ++i) {
      std::uint32_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), 4);
      const bool swap = little != (std::endian::native == std::endian::little);
      if (swap) bits = __builtin_bswap32(bits);
      dst[i] = std::bit_cast<float>(bits);
    }
  }
  if (!in) fail(ErrorCode::kIo, "truncated PFM " + path.string());
  return image;
}

namespace {

constexpr double kPole = -0.2679491924311228;  // sqrt(3) - 2

// In-place prefilter of n samples spaced by stride.
void prefilter_line(double* s, int n) {
  if (n < 2) return;
  for (int k = 0; k < n; ++k) s[k] *= 6.0;
  // Whole-sample mirror extension has period 2n - 2.
  const int period = 2 * n - 2;
  double sum = 0.0, zk = 1.0;
  for (int k = 0; k < period; ++k) {
    const int m = k < n ? k : period - k;
    sum += zk * s[m];
    zk *= kPole;
  }
  s[0] = sum / (1.0 - zk);
  for (int k = 1; k < n; ++k) s[k] += kPole * s[k - 1];
  s[n - 1] = (kPole / (kPole * kPole - 1.0)) * (s[n - 1] + kPole * s[n - 2]);
  for (int k = n - 2; k >= 0; --k) s[k] = kPole * (s[k + 1] - s[k]);
}

int mirror_index(int k, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  k %= period;
  if (k < 0) k += period;
  return k < n ? k : period - k;
}

std::array<double, 4> bspline_weights(double t) {
  const double u = 1.0 - t, t2 = t * t, t3 = t2 * t;
  return {u * u * u / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
          t3 / 6.0};
}

std::array<double, 4> bspline_derivatives(double t) {
  const double u = 1.0 - t, t2 = t * t;
  return {-0.5 * u * u, 1.5 * t2 - 2.0 * t, -1.5 * t2 + t + 0.5, 0.5 * t2};
}

}  // namespace

ImageF bspline_coefficients(const ImageF& image) {
  const int w = image.width(), h = image.height();
  ImageF out(w, h, image.channels());
  std::vector<double> line(static_cast<size_t>(std::max(w, h)));
  for (int c = 0; c < image.channels(); ++c) {
    std::vector<double> plane(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) plane[static_cast<size_t>(y) * w + x] = image.at(x, y, c);
    for (int y = 0; y < h; ++y) prefilter_line(plane.data() + static_cast<size_t>(y) * w, w);
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) line[y] = plane[static_cast<size_t>(y) * w + x];
      prefilter_line(line.data(), h);
      for (int y = 0; y < h; ++y) out.at(x, y, c) = static_cast<float>(line[y]);
    }
  }
  return out;
}

Sample sample_bspline(const ImageF& coefficients, double x, double y, int channel) {
  const double sx = x - 0.5, sy = y - 0.5;
  const double fx = std::floor(sx), fy = std::floor(sy);
  const double tx = sx - fx, ty = sy - fy;
  const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
  const auto wx = bspline_weights(tx), wy = bspline_weights(ty);
  const auto dwx = bspline_derivatives(tx), dwy = bspline_derivatives(ty);
  Sample s;
  for (int j = 0; j < 4; ++j) {
    const int yy = mirror_index(iy - 1 + j, coefficients.height());
    double row = 0.0, drow = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double v = coefficients.at(mirror_index(ix - 1 + i, coefficients.width()), yy, channel);
      row += wx[i] * v;
      drow += dwx[i] * v;
    }
    s.value += wy[j] * row;
    s.dx += wy[j] * drow;
    s.dy += dwy[j] * row;
  }
  return s;
}

double sample_bilinear(const ImageF& image, double x, double y, int channel) {
  const double sx = x - 0.5, sy = y - 0.5;
  const double fx = std::floor(sx), fy = std::floor(sy);
  const double tx = sx - fx, ty = sy - fy;
  const int x0 = std::clamp(static_cast<int>(fx), 0, image.width() - 1);
  const int y0 = std::clamp(static_cast<int>(fy), 0, image.height() - 1);
  const int x1 = std::clamp(static_cast<int>(fx) + 1, 0, image.width() - 1);
  const int y1 = std::clamp(static_cast<int>(fy) + 1, 0, image.height() - 1);
  const double top = (1.0 - tx) * image.at(x0, y0, channel) + tx * image.at(x1, y0, channel);
  const double bottom = (1.0 - tx) * image.at(x0, y1, channel) + tx * image.at(x1, y1, channel);
  return (1.0 - ty) * top + ty * bottom;
}

ImageF downsample_box(const ImageF& image, int factor) {
  require(factor >= 1, ErrorCode::kInvalidArgument, "downsample factor must be >= 1");
  ImageF out(image.width() / factor, image.height() / factor, image.channels());
  const double norm = 1.0 / (factor * factor);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < image.channels(); ++c) {
        double sum = 0.0;
        for (int j = 0; j < factor; ++j)
          for (int i = 0; i < factor; ++i) sum += image.at(x * factor + i, y * factor + j, c);
        out.at(x, y, c) = static_cast<float>(sum * norm);
      }
  return out;
}

}  // namespace reenact
