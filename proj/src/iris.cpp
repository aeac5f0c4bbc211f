#include "mbsif/iris.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mbsif/errors.hpp"

namespace mbsif {

std::string to_string(Eye eye) { return eye == Eye::left ? "left" : "right"; }

std::string to_string(Gender gender) {
  switch (gender) {
    case Gender::male:
      return "male";
    case Gender::female:
      return "female";
    case Gender::unknown:
      break;
  }
  return "unknown";
}

Eye parse_eye(const std::string& text) {
  if (text == "left" || text == "L" || text == "l") return Eye::left;
  if (text == "right" || text == "R" || text == "r") return Eye::right;
  throw ValidationError("unknown eye '" + text + "' (expected left or right)");
}

Gender parse_gender(const std::string& text) {
  if (text == "male" || text == "M" || text == "m") return Gender::male;
  if (text == "female" || text == "F" || text == "f") return Gender::female;
  if (text == "unknown" || text.empty() || text == "?") return Gender::unknown;
  throw ValidationError("unknown gender '" + text + "' (expected male, female or unknown)");
}

void IrisAnnotation::validate() const {
  std::ostringstream msg;
  if (!(pupil.r >= 0.0) || !(iris.r >= 0.0)) {
    msg << "circle radii must be non-negative (pupil " << pupil.r << ", iris " << iris.r << ")";
    throw ValidationError(msg.str());
  }
  if (!(pupil.r < iris.r)) {
    msg << "pupil radius " << pupil.r << " must be smaller than iris radius " << iris.r;
    throw ValidationError(msg.str());
  }
  if (!iris.contains(pupil.cx, pupil.cy)) {
    msg << "pupil centre (" << pupil.cx << ", " << pupil.cy << ") lies outside the iris circle";
    throw ValidationError(msg.str());
  }
}

SamplePoint rubber_sheet_point(const Circle& pupil, const Circle& iris, double angle, double radial_fraction) {
  const double dx = std::cos(angle);
  const double dy = -std::sin(angle);
  // Solve |p + t d - c| = r_iris for t > 0, with p the pupil centre.
  const double ox = pupil.cx - iris.cx;
  const double oy = pupil.cy - iris.cy;
  const double b = ox * dx + oy * dy;
  const double c = ox * ox + oy * oy - iris.r * iris.r;
  const double t_iris = -b + std::sqrt(std::max(0.0, b * b - c));
  const double t = pupil.r + (t_iris - pupil.r) * radial_fraction;
  return {pupil.cx + t * dx, pupil.cy + t * dy};
}

NormalizedIris rubber_sheet(const GrayImage& image, const IrisAnnotation& annotation, int radial, int angular) {
  annotation.validate();
  if (radial < 1 || angular < 1) throw ValidationError("strip resolution must be positive");
  if (!annotation.occlusion.matches(image.width(), image.height())) {
    throw ValidationError("occlusion mask dimensions do not match the eye image");
  }

  NormalizedIris out{FloatImage(angular, radial), BitMask(angular, radial), {}, Eye::left, Gender::unknown};
  const double max_x = image.width() - 1;
  const double max_y = image.height() - 1;
  for (int j = 0; j < angular; ++j) {
    const double angle = 2.0 * std::numbers::pi * j / angular;
    for (int i = 0; i < radial; ++i) {
      const double fraction = radial > 1 ? static_cast<double>(i) / (radial - 1) : 0.0;
      const SamplePoint p = rubber_sheet_point(annotation.pupil, annotation.iris, angle, fraction);
      const bool inside = p.x >= 0.0 && p.x <= max_x && p.y >= 0.0 && p.y <= max_y;
      const double x = std::clamp(p.x, 0.0, max_x);
      const double y = std::clamp(p.y, 0.0, max_y);
      out.strip.at(j, i) = bilinear_sample(image, x, y);
      const int nx = static_cast<int>(std::lround(x));
      const int ny = static_cast<int>(std::lround(y));
      out.mask.set(j, i, !inside || annotation.occlusion.at(nx, ny));
    }
  }
  return out;
}

NormalizedIris apply_mask_zero(NormalizedIris iris) {
  if (!iris.mask.matches(iris.strip.width(), iris.strip.height())) {
    throw ValidationError("strip mask dimensions do not match the strip");
  }
  for (int y = 0; y < iris.strip.height(); ++y) {
    for (int x = 0; x < iris.strip.width(); ++x) {
      if (iris.mask.at(x, y)) iris.strip.at(x, y) = 0.0;
    }
  }
  return iris;
}

}  // namespace mbsif
