#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "reenact/common.hpp"

namespace reenact {

// Interleaved, row-major image. Pixel (x, y) covers [x, x+1) x [y, y+1);
// its center sits at (x + 0.5, y + 0.5) in continuous coordinates.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<size_t>(width) * height * channels, fill) {
    require(width >= 0 && height >= 0 && channels > 0, ErrorCode::kInvalidArgument,
            "image dimensions must be non-negative");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  friend bool operator==(const Image& a, const Image& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.channels_ == b.channels_ &&
           a.data_ == b.data_;
  }

 private:
  size_t index(int x, int y, int c) const {
    return (static_cast<size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

using ImageF = Image<float>;
using Gray8 = Image<std::uint8_t>;
using Mask = Image<std::uint8_t>;

float srgb_encode(float linear);
float srgb_decode(float encoded);

// 8-bit sRGB PNG. Linear [0,1] RGB in memory.
void write_png(const std::filesystem::path& path, const ImageF& rgb);
ImageF read_png(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const Gray8& image);
Gray8 read_png_gray(const std::filesystem::path& path);

// Portable float map, 1 or 3 channels, little-endian, bottom-to-top rows.
void write_pfm(const std::filesystem::path& path, const ImageF& image);
ImageF read_pfm(const std::filesystem::path& path);

struct Sample {
  double value = 0.0;
  double dx = 0.0;  // derivative w.r.t. continuous x
  double dy = 0.0;
};

// Interpolating cubic B-spline coefficients, per channel, mirrored borders.
ImageF bspline_coefficients(const ImageF& image);

// C2 bicubic sample of a coefficient image from bspline_coefficients.
// Interpolates the source image at pixel centers.
Sample sample_bspline(const ImageF& coefficients, double x, double y, int channel);

// Bilinear sample at continuous coordinates with clamped borders.
double sample_bilinear(const ImageF& image, double x, double y, int channel);

// Mean over factor x factor blocks; trailing rows and columns are dropped.
ImageF downsample_box(const ImageF& image, int factor);

// Keeps every factor-th pixel starting at 0 so coarse pixel centers are fine
// pixel centers (see Camera::scaled).
template <typename T>
Image<T> decimate(const Image<T>& image, int factor) {
  require(factor >= 1, ErrorCode::kInvalidArgument, "decimation factor must be >= 1");
  Image<T> out(image.width() / factor, image.height() / factor, image.channels());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(x * factor, y * factor, c);
  return out;
}

}  // namespace reenact
