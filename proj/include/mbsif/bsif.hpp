#pragma once

// Binarised statistical image features over normalised iris strips.
//
// Rows of a strip are the radial axis, columns the angular axis. Boundary
// handling is a per-axis policy; the pad width is always (l - 1) / 2.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mbsif/filter_learning.hpp"
#include "mbsif/imaging.hpp"
#include "mbsif/iris.hpp"

namespace mbsif {

enum class PadMode { wrap, replicate, zero, reflect };

std::string to_string(PadMode mode);
PadMode parse_pad_mode(const std::string& text);

struct PaddingStrategy {
  PadMode radial = PadMode::wrap;
  PadMode angular = PadMode::wrap;

  /// Wrap on both axes: the strip's bottom rows appear above its top rows.
  static PaddingStrategy traditional() { return {PadMode::wrap, PadMode::wrap}; }
  /// Replicate the first/last row radially; the angular axis stays periodic.
  static PaddingStrategy modified() { return {PadMode::replicate, PadMode::wrap}; }
  static PaddingStrategy full_replicate() { return {PadMode::replicate, PadMode::replicate}; }

  friend bool operator==(const PaddingStrategy&, const PaddingStrategy&) = default;
};

/// Preset name ("traditional", "modified", "full-replicate") or
/// "<radial>/<angular>" with each of wrap, replicate, zero, reflect.
PaddingStrategy parse_padding(const std::string& text);
std::string to_string(const PaddingStrategy& padding);

/// Source index for padded coordinate `index` (may be negative or >= extent),
/// or -1 when the mode writes zero there. Reflect mirrors without repeating
/// the edge sample and is periodic with period 2 * (extent - 1).
int pad_source_index(int index, int extent, PadMode mode);

/// Pads by (l-1)/2 on every side. Output is (width + l - 1) x (height + l - 1).
/// Throws ValidationError for even l.
FloatImage pad_image(const FloatImage& strip, int filter_size, const PaddingStrategy& padding);

struct ResponseStack {
  std::vector<FloatImage> responses;

  int bits() const { return static_cast<int>(responses.size()); }
};

/// Correlation (no kernel flip) of every filter with the padded strip:
/// response_i(x, y) = sum_{u,v} W_i(u, v) * padded(x + u, y + v).
ResponseStack filter_responses(const FloatImage& strip, const FilterBank& bank, const PaddingStrategy& padding);

struct CodeImage {
  int bits = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> codes;
  BitMask mask;

  std::uint32_t at(int x, int y) const { return codes[static_cast<std::size_t>(y) * width + x]; }
};

/// code(x, y) = sum_i [response_i(x, y) > 0] * 2^i for filters i = 0..n-1.
CodeImage encode(const FloatImage& strip, const BitMask& mask, const FilterBank& bank,
                 const PaddingStrategy& padding);

enum class FeatureKind { full_image, histogram };
enum class HistogramMode { mask_zeroed, mask_excluded };

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& text);
std::string to_string(HistogramMode mode);
HistogramMode parse_histogram_mode(const std::string& text);

struct FeatureVector {
  FeatureKind kind = FeatureKind::histogram;
  std::vector<double> values;
  Gender label = Gender::unknown;
  std::string source_id;
  Eye eye = Eye::left;
};

/// L1-normalised 2^n-bin code histogram. mask_zeroed counts every pixel;
/// mask_excluded skips masked pixels and throws if none remain.
FeatureVector histogram_feature(const CodeImage& code, HistogramMode mode = HistogramMode::mask_zeroed);

/// Row-major flattening of the codes.
FeatureVector full_image_feature(const CodeImage& code);

/// Saves codes as an 8-bit PGM (n <= 8) or 16-bit PGM (n <= 16).
void save_code_image(const CodeImage& code, const std::filesystem::path& path,
                     const std::vector<std::string>& comments = {});

/// Feature CSV: optional '#' provenance lines, a header row
/// "sample_id,eye,gender,kind,v0,...,vk", then one row per vector.
void write_feature_csv(std::ostream& out, const std::vector<FeatureVector>& features,
                       const std::vector<std::string>& provenance = {});
std::vector<FeatureVector> read_feature_csv(std::istream& in, const std::string& context = "feature CSV");

}  // namespace mbsif
