#pragma once

// Raster containers and pixel I/O.
//
// Pixel addressing is (x = column, y = row) with row-major storage, so
// pixel (x, y) lives at data[y * width + x]. Every module follows this.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mbsif {

class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::uint8_t fill = 0);
  GrayImage(int width, int height, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t at(int x, int y) const { return data_[index(x, y)]; }
  std::uint8_t& at(int x, int y) { return data_[index(x, y)]; }

  const std::vector<std::uint8_t>& data() const { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

class FloatImage {
 public:
  FloatImage() = default;
  FloatImage(int width, int height, double fill = 0.0);
  FloatImage(int width, int height, std::vector<double> data);

  static FloatImage from_gray(const GrayImage& image);

  int width() const { return width_; }
  int height() const { return height_; }

  double at(int x, int y) const { return data_[index(x, y)]; }
  double& at(int x, int y) { return data_[index(x, y)]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  /// Rounds and clamps to [0, 255].
  GrayImage to_gray() const;

  friend bool operator==(const FloatImage&, const FloatImage&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

struct Circle {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.0;

  bool contains(double x, double y) const;
};

/// Boolean raster annotating an image; true marks an occluded pixel.
class BitMask {
 public:
  BitMask() = default;
  BitMask(int width, int height, bool fill = false);

  /// Pixels >= 128 become true.
  static BitMask from_gray(const GrayImage& image);

  int width() const { return width_; }
  int height() const { return height_; }

  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool value) { bits_[index(x, y)] = value ? 1 : 0; }

  std::size_t count() const;
  bool matches(int width, int height) const { return width == width_ && height == height_; }

  /// 255 for occluded, 0 otherwise.
  GrayImage to_gray() const;

  friend bool operator==(const BitMask&, const BitMask&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Reads a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG.
/// Throws IoError or FormatError naming the path.
GrayImage load_gray(const std::filesystem::path& path);

/// Writes a binary PGM. Optional comment lines are placed in the header.
void save_gray(const GrayImage& image, const std::filesystem::path& path,
               const std::vector<std::string>& comments = {});

/// Writes a 16-bit binary PGM (maxval 65535, big-endian samples).
void save_gray16(int width, int height, const std::vector<std::uint16_t>& data,
                 const std::filesystem::path& path,
                 const std::vector<std::string>& comments = {});

/// Bilinear interpolation at sub-pixel (x, y). Throws ValidationError outside
/// [0, width-1] x [0, height-1].
double bilinear_sample(const GrayImage& image, double x, double y);

}  // namespace mbsif
