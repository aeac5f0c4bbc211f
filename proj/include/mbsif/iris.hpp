#pragma once

#include <string>

#include "mbsif/imaging.hpp"

namespace mbsif {

enum class Eye { left, right };
enum class Gender { male, female, unknown };

std::string to_string(Eye eye);
std::string to_string(Gender gender);
Eye parse_eye(const std::string& text);
Gender parse_gender(const std::string& text);

/// Pupil and iris boundaries plus the source-image occlusion mask.
struct IrisAnnotation {
  Circle pupil;
  Circle iris;
  BitMask occlusion;

  /// Throws ValidationError unless pupil.r < iris.r and the pupil centre lies
  /// strictly inside the iris circle.
  void validate() const;
};

/// Polar strip: rows are radial samples (row 0 on the pupil boundary), columns
/// are angular samples.
struct NormalizedIris {
  FloatImage strip;
  BitMask mask;
  std::string source_id;
  Eye eye = Eye::left;
  Gender gender = Gender::unknown;
};

inline constexpr int kDefaultRadialSamples = 20;
inline constexpr int kDefaultAngularSamples = 240;

/// Source-image point sampled for strip cell (row, column).
///
/// The ray leaves the pupil centre at angle 2*pi*column/angular, where angle 0
/// points along +x and angles grow counter-clockwise as displayed (towards -y).
/// Radial positions interpolate linearly between the ray's intersections with
/// the pupil and iris circles.
struct SamplePoint {
  double x;
  double y;
};
SamplePoint rubber_sheet_point(const Circle& pupil, const Circle& iris, double angle, double radial_fraction);

/// Daugman rubber-sheet unwrapping of the annotated iris.
///
/// Samples outside the image are taken at the clamped position and flagged in
/// the mask. Mask cells copy the occlusion bit of the nearest source pixel.
NormalizedIris rubber_sheet(const GrayImage& image, const IrisAnnotation& annotation,
                            int radial = kDefaultRadialSamples, int angular = kDefaultAngularSamples);

/// Zeroes every strip value whose mask bit is set.
NormalizedIris apply_mask_zero(NormalizedIris iris);

}  // namespace mbsif
