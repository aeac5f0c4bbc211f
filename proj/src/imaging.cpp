#include "mbsif/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

#include "mbsif/errors.hpp"

namespace mbsif {

namespace {

void check_dims(int width, int height) {
  if (width < 1 || height < 1) {
    throw ValidationError("image dimensions must be positive, got " + std::to_string(width) + "x" +
                          std::to_string(height));
  }
}

std::size_t area(int width, int height) {
  return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
}

[[noreturn]] void bad_file(const std::filesystem::path& path, const std::string& reason) {
  throw FormatError(path.string() + ": " + reason);
}

// Cursor over a PNM header: whitespace and '#' comments separate tokens.
class PnmHeaderReader {
 public:
  PnmHeaderReader(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  long read_int(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      bad_file(path_, std::string("malformed header (expected ") + what + ")");
    }
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000'000L) bad_file(path_, std::string("malformed header (") + what + " too large)");
      ++pos_;
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) bad_file(path_, "malformed header (missing raster separator)");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 2;
};

GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  PnmHeaderReader header(bytes, path);
  const long width = header.read_int("width");
  const long height = header.read_int("height");
  const long maxval = header.read_int("maxval");
  if (width < 1 || height < 1) bad_file(path, "malformed header (zero dimension)");
  if (maxval != 255) bad_file(path, "unsupported bit depth (maxval " + std::to_string(maxval) + ", expected 255)");
  const std::size_t offset = header.raster_offset();
  const std::size_t n = area(static_cast<int>(width), static_cast<int>(height));
  if (bytes.size() < offset + n) bad_file(path, "truncated raster");
  std::vector<std::uint8_t> data(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(offset + n));
  return GrayImage(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

GrayImage decode_png(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  // IHDR is always the first chunk: bit depth at byte 24, colour type at 25.
  if (bytes.size() < 33 || std::string(bytes.begin() + 12, bytes.begin() + 16) != "IHDR") {
    bad_file(path, "corrupt PNG header");
  }
  const int bit_depth = bytes[24];
  const int color_type = bytes[25];
  if (color_type != 0) bad_file(path, "unsupported PNG colour type " + std::to_string(color_type) + " (expected grayscale)");
  if (bit_depth != 8) bad_file(path, "unsupported bit depth " + std::to_string(bit_depth) + " (expected 8)");

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    bad_file(path, std::string("corrupt PNG stream: ") + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, data.data(), 0, nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    bad_file(path, "corrupt PNG stream: " + message);
  }
  return GrayImage(static_cast<int>(image.width), static_cast<int>(image.height), std::move(data));
}

void write_file(const std::filesystem::path& path, const std::string& header, const char* payload, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload, static_cast<std::streamsize>(size));
  if (!out) throw IoError(path.string() + ": write failed");
}

std::string pgm_header(int width, int height, int maxval, const std::vector<std::string>& comments) {
  std::ostringstream header;
  header << "P5\n";
  for (const auto& comment : comments) {
    std::string line = comment;
    std::replace(line.begin(), line.end(), '\n', ' ');
    std::replace(line.begin(), line.end(), '\r', ' ');
    header << "# " << line << "\n";
  }
  header << width << " " << height << "\n" << maxval << "\n";
  return header.str();
}

}  // namespace

GrayImage::GrayImage(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  check_dims(width, height);
  data_.assign(area(width, height), fill);
}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dims(width, height);
  if (data_.size() != area(width, height)) {
    throw ValidationError("pixel buffer holds " + std::to_string(data_.size()) + " values, expected " +
                          std::to_string(area(width, height)));
  }
}

FloatImage::FloatImage(int width, int height, double fill) : width_(width), height_(height) {
  check_dims(width, height);
  data_.assign(area(width, height), fill);
}

FloatImage::FloatImage(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dims(width, height);
  if (data_.size() != area(width, height)) {
    throw ValidationError("pixel buffer holds " + std::to_string(data_.size()) + " values, expected " +
                          std::to_string(area(width, height)));
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw ValidationError("float image contains a non-finite value");
  }
}

FloatImage FloatImage::from_gray(const GrayImage& image) {
  std::vector<double> data(image.data().begin(), image.data().end());
  return FloatImage(image.width(), image.height(), std::move(data));
}

GrayImage FloatImage::to_gray() const {
  std::vector<std::uint8_t> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  });
  return GrayImage(width_, height_, std::move(out));
}

bool Circle::contains(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  return dx * dx + dy * dy < r * r;
}

BitMask::BitMask(int width, int height, bool fill) : width_(width), height_(height) {
  check_dims(width, height);
  bits_.assign(area(width, height), fill ? 1 : 0);
}

BitMask BitMask::from_gray(const GrayImage& image) {
  BitMask mask(image.width(), image.height());
  for (std::size_t i = 0; i < image.data().size(); ++i) mask.bits_[i] = image.data()[i] >= 128 ? 1 : 0;
  return mask;
}

std::size_t BitMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

GrayImage BitMask::to_gray() const {
  std::vector<std::uint8_t> out(bits_.size());
  std::transform(bits_.begin(), bits_.end(), out.begin(), [](std::uint8_t b) { return b ? 255 : 0; });
  return GrayImage(width_, height_, std::move(out));
}

GrayImage load_gray(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string() + ": read failed");

  static constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(std::begin(kPngSignature), std::end(kPngSignature), bytes.begin())) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path);
  bad_file(path, "not a binary PGM (P5) or PNG file");
}

void save_gray(const GrayImage& image, const std::filesystem::path& path, const std::vector<std::string>& comments) {
  const std::string header = pgm_header(image.width(), image.height(), 255, comments);
  write_file(path, header, reinterpret_cast<const char*>(image.data().data()), image.data().size());
}

void save_gray16(int width, int height, const std::vector<std::uint16_t>& data, const std::filesystem::path& path,
                 const std::vector<std::string>& comments) {
  check_dims(width, height);
  if (data.size() != area(width, height)) throw ValidationError("16-bit raster size does not match dimensions");
  std::vector<char> payload(data.size() * 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    payload[2 * i] = static_cast<char>(data[i] >> 8);
    payload[2 * i + 1] = static_cast<char>(data[i] & 0xff);
  }
  write_file(path, pgm_header(width, height, 65535, comments), payload.data(), payload.size());
}

double bilinear_sample(const GrayImage& image, double x, double y) {
  const double max_x = image.width() - 1;
  const double max_y = image.height() - 1;
  if (!(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y)) {
    std::ostringstream msg;
    msg << "bilinear sample (" << x << ", " << y << ") outside image of size " << image.width() << "x"
        << image.height();
    throw ValidationError(msg.str());
  }
  const int x0 = std::min(static_cast<int>(std::floor(x)), image.width() - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), image.height() - 1);
  const int x1 = std::min(x0 + 1, image.width() - 1);
  const int y1 = std::min(y0 + 1, image.height() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = image.at(x0, y0) * (1.0 - fx) + image.at(x1, y0) * fx;
  const double bottom = image.at(x0, y1) * (1.0 - fx) + image.at(x1, y1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

}  // namespace mbsif
