#include "mbsif/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "mbsif/errors.hpp"
#include "mbsif/rng.hpp"

namespace mbsif {

namespace {

constexpr double kPi = std::numbers::pi;

struct Grating {
  double kx;
  double ky;
  double phase;
  double amplitude;

  double at(double x, double y) const { return amplitude * std::cos(kx * x + ky * y + phase); }
};

Grating random_grating(Rng& rng, double orientation, double wavelength, double amplitude) {
  const double k = 2.0 * kPi / wavelength;
  return {k * std::cos(orientation), k * std::sin(orientation), rng.uniform(0.0, 2.0 * kPi), amplitude};
}

double degrees(double d) { return d * kPi / 180.0; }

std::string subject_name(int index) {
  std::ostringstream s;
  s << "s" << std::setw(4) << std::setfill('0') << index;
  return s.str();
}

// Eyelid and specular occlusion in strip coordinates. Upper eyelid sits near
// column angular/4 (theta = 90 deg), lower eyelid near 3*angular/4; both cover
// the outer radial rows.
BitMask random_strip_mask(Rng& rng, int radial, int angular) {
  BitMask mask(angular, radial);
  auto eyelid = [&](double centre, double half_width, double depth) {
    for (int x = 0; x < angular; ++x) {
      double dx = std::remainder(x - centre, static_cast<double>(angular));
      const double t = dx / half_width;
      if (std::abs(t) >= 1.0) continue;
      const int rows = static_cast<int>(std::lround(depth * (1.0 - t * t)));
      for (int y = std::max(0, radial - rows); y < radial; ++y) mask.set(x, y, true);
    }
  };
  eyelid(angular / 4.0 + rng.uniform(-0.05, 0.05) * angular, rng.uniform(0.08, 0.30) * angular,
         rng.uniform(0.15, 0.60) * radial);
  if (rng.uniform01() < 0.6) {
    eyelid(3.0 * angular / 4.0 + rng.uniform(-0.05, 0.05) * angular, rng.uniform(0.05, 0.18) * angular,
           rng.uniform(0.10, 0.35) * radial);
  }
  const int highlights = static_cast<int>(rng.uniform_index(3));
  for (int h = 0; h < highlights; ++h) {
    const double cx = rng.uniform(0.0, angular);
    const double cy = rng.uniform(0.0, radial);
    const double r = rng.uniform(1.0, 2.5);
    for (int y = 0; y < radial; ++y) {
      for (int x = 0; x < angular; ++x) {
        const double dx = std::remainder(x - cx, static_cast<double>(angular));
        if (dx * dx + (y - cy) * (y - cy) <= r * r) mask.set(x, y, true);
      }
    }
  }
  return mask;
}

struct SubjectStyle {
  double brightness;
  std::vector<Grating> background;
  double band_orientation;
  double band_wavelength;
  double band_amplitude;
};

FloatImage render_strip(const SubjectStyle& style, int radial, int angular, int informative_rows, Rng& rng) {
  // Angular gratings must be periodic over the strip width.
  auto periodic = [&](Grating g) {
    const double cycles = std::round(g.kx * angular / (2.0 * kPi));
    g.kx = 2.0 * kPi * cycles / angular;
    return g;
  };
  std::vector<Grating> background;
  for (const auto& g : style.background) {
    Grating copy = periodic(g);
    copy.phase = rng.uniform(0.0, 2.0 * kPi);
    background.push_back(copy);
  }
  const Grating band = periodic(random_grating(rng, style.band_orientation + degrees(rng.normal() * 4.0),
                                               style.band_wavelength, style.band_amplitude));
  // Per-sample radial illumination gradient.
  const double ramp = rng.uniform(-30.0, 30.0);
  FloatImage strip(angular, radial);
  for (int y = 0; y < radial; ++y) {
    for (int x = 0; x < angular; ++x) {
      double v = style.brightness + ramp * y / std::max(1, radial - 1);
      for (const auto& g : background) v += g.at(x, y);
      if (y < informative_rows) v += band.at(x, y);
      v += 3.0 * rng.normal();
      strip.at(x, y) = std::clamp(v, 0.0, 255.0);
    }
  }
  return strip;
}

}  // namespace

Corpus make_synthetic_corpus(const SyntheticCorpusOptions& options) {
  if (options.subjects < 2) throw ValidationError("synthetic corpus needs at least two subjects");
  if (options.radial < 1 || options.angular < 8) throw ValidationError("synthetic strip resolution too small");
  Corpus corpus;
  corpus.reserve(static_cast<std::size_t>(options.subjects) * 2);
  const int males = options.subjects / 2;
  for (int s = 0; s < options.subjects; ++s) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(s)));
    const Gender gender = s < males ? Gender::male : Gender::female;
    SubjectStyle style;
    style.brightness = rng.uniform(90.0, 140.0);
    // Class-independent background: one grating per orientation sector with
    // wavelengths spread over [4, 16), so every subject shares its spectrum.
    const int components = 12;
    for (int c = 0; c < components; ++c) {
      style.background.push_back(random_grating(rng, kPi * (c + rng.uniform01()) / components,
                                                4.0 + 12.0 * ((c * 5) % components) / components, 5.0));
    }
    style.band_orientation = gender == Gender::male ? degrees(rng.normal() * 6.0) : degrees(45.0 + rng.normal() * 6.0);
    style.band_wavelength = rng.uniform(5.0, 8.0);
    style.band_amplitude = rng.uniform(14.0, 26.0);

    const std::string subject = subject_name(s);
    for (Eye eye : {Eye::left, Eye::right}) {
      Sample sample;
      sample.subject_id = subject;
      sample.sample_id = subject + (eye == Eye::left ? "_L" : "_R");
      sample.eye = eye;
      sample.gender = gender;
      sample.iris.strip = render_strip(style, options.radial, options.angular, options.informative_rows, rng);
      sample.iris.mask = random_strip_mask(rng, options.radial, options.angular);
      sample.iris.source_id = sample.sample_id;
      sample.iris.eye = eye;
      sample.iris.gender = gender;
      corpus.push_back(std::move(sample));
    }
  }
  return corpus;
}

SyntheticEye render_eye(const FloatImage& strip, const BitMask& mask, std::uint64_t seed, int width, int height) {
  if (!mask.matches(strip.width(), strip.height())) throw ValidationError("strip mask dimensions do not match");
  Rng rng(seed);
  const double scale = std::min(width, height) / 240.0;
  Circle pupil{width / 2.0 + rng.uniform(-6.0, 6.0) * scale, height / 2.0 + rng.uniform(-4.0, 4.0) * scale,
               rng.uniform(24.0, 34.0) * scale};
  Circle iris{pupil.cx + rng.uniform(-2.0, 2.0) * scale, pupil.cy + rng.uniform(-2.0, 2.0) * scale,
              rng.uniform(78.0, 92.0) * scale};
  const double skin = rng.uniform(130.0, 170.0);
  const double sclera = rng.uniform(185.0, 215.0);
  const double pupil_level = rng.uniform(10.0, 30.0);
  const double opening_a = iris.r * rng.uniform(1.7, 2.0);
  const double opening_b = iris.r * rng.uniform(1.05, 1.25);

  GrayImage image(width, height);
  BitMask occlusion(width, height);
  const int radial = strip.height();
  const int angular = strip.width();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double v;
      bool occluded = false;
      const double ex = (x - iris.cx) / opening_a;
      const double ey = (y - iris.cy) / opening_b;
      const bool in_opening = ex * ex + ey * ey <= 1.0;
      const double dx = x - pupil.cx;
      const double dy = y - pupil.cy;
      const double t = std::hypot(dx, dy);
      if (pupil.contains(x, y)) {
        v = pupil_level;
      } else if (iris.contains(x, y)) {
        double angle = std::atan2(-dy, dx);
        if (angle < 0.0) angle += 2.0 * kPi;
        const SamplePoint edge = rubber_sheet_point(pupil, iris, angle, 1.0);
        const double t_iris = std::hypot(edge.x - pupil.cx, edge.y - pupil.cy);
        const double fraction = std::clamp((t - pupil.r) / (t_iris - pupil.r), 0.0, 1.0);
        const double row = fraction * (radial - 1);
        double column = angle / (2.0 * kPi) * angular;
        const int r0 = std::min(static_cast<int>(row), radial - 1);
        const int r1 = std::min(r0 + 1, radial - 1);
        const int c0 = static_cast<int>(std::floor(column)) % angular;
        const int c1 = (c0 + 1) % angular;
        const double fr = row - r0;
        const double fc = column - std::floor(column);
        occluded = mask.at(static_cast<int>(std::lround(column)) % angular, static_cast<int>(std::lround(row)));
        if (occluded) {
          v = skin * 0.9;
        } else {
          v = (strip.at(c0, r0) * (1 - fc) + strip.at(c1, r0) * fc) * (1 - fr) +
              (strip.at(c0, r1) * (1 - fc) + strip.at(c1, r1) * fc) * fr;
        }
      } else if (in_opening) {
        v = sclera - 25.0 * (ex * ex + ey * ey);
      } else {
        v = skin + 10.0 * std::sin(0.02 * x + 0.013 * y);
      }
      image.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v + rng.normal() * 2.0), 0L, 255L));
      occlusion.set(x, y, occluded);
    }
  }
  // Specular highlight on the pupil edge, occluding whatever iris it covers.
  const double hx = pupil.cx + pupil.r * rng.uniform(-0.8, 0.8);
  const double hy = pupil.cy + pupil.r * rng.uniform(-0.8, 0.8);
  const double hr = rng.uniform(3.0, 6.0) * scale;
  for (int y = std::max(0, static_cast<int>(hy - hr)); y <= std::min(height - 1, static_cast<int>(hy + hr) + 1); ++y) {
    for (int x = std::max(0, static_cast<int>(hx - hr)); x <= std::min(width - 1, static_cast<int>(hx + hr) + 1); ++x) {
      if ((x - hx) * (x - hx) + (y - hy) * (y - hy) > hr * hr) continue;
      image.at(x, y) = 250;
      if (iris.contains(x, y) && !pupil.contains(x, y)) occlusion.set(x, y, true);
    }
  }
  return {std::move(image), IrisAnnotation{pupil, iris, std::move(occlusion)}};
}

GrayImage synthetic_eye_image(std::uint64_t seed, int width, int height) {
  Rng rng(seed);
  constexpr int kRadial = 48;
  constexpr int kAngular = 512;
  // Iris texture: radial furrows, a collarette ring and dark crypts.
  FloatImage strip(kAngular, kRadial);
  std::vector<Grating> furrows;
  for (int c = 0; c < 8; ++c) {
    const double cycles = std::round(rng.uniform(20.0, 90.0));
    furrows.push_back({2.0 * kPi * cycles / kAngular, rng.uniform(-0.05, 0.05), rng.uniform(0.0, 2.0 * kPi),
                       rng.uniform(4.0, 12.0)});
  }
  const double base = rng.uniform(70.0, 120.0);
  const double collarette = rng.uniform(0.2, 0.45) * kRadial;
  struct Crypt {
    double x, y, r, depth;
  };
  std::vector<Crypt> crypts;
  for (int c = 0; c < 25; ++c) {
    crypts.push_back({rng.uniform(0.0, kAngular), rng.uniform(0.0, kRadial), rng.uniform(2.0, 6.0), rng.uniform(15.0, 40.0)});
  }
  for (int y = 0; y < kRadial; ++y) {
    for (int x = 0; x < kAngular; ++x) {
      double v = base + 18.0 * std::exp(-0.5 * std::pow((y - collarette) / 2.5, 2.0)) - 0.4 * y;
      for (const auto& g : furrows) v += g.at(x, y);
      for (const auto& c : crypts) {
        const double dx = std::remainder(x - c.x, static_cast<double>(kAngular));
        const double d2 = (dx * dx) / (4.0 * c.r * c.r) + (y - c.y) * (y - c.y) / (c.r * c.r);
        if (d2 < 1.0) v -= c.depth * (1.0 - d2);
      }
      strip.at(x, y) = std::clamp(v + rng.normal() * 3.0, 0.0, 255.0);
    }
  }
  const BitMask mask = random_strip_mask(rng, kRadial, kAngular);
  SyntheticEye eye = render_eye(strip, mask, derive_seed(seed, 7), width, height);

  // Upper eyelid with lashes over the top of the opening.
  const auto& iris = eye.annotation.iris;
  const double lid_y = iris.cy - iris.r * rng.uniform(0.4, 0.8);
  const double curvature = rng.uniform(0.002, 0.004) / (std::min(width, height) / 240.0);
  const double lid_shade = rng.uniform(120.0, 160.0);
  for (int x = 0; x < width; ++x) {
    const double edge = lid_y + curvature * (x - iris.cx) * (x - iris.cx);
    for (int y = 0; y < std::min(height, static_cast<int>(edge)); ++y) {
      eye.image.at(x, y) = static_cast<std::uint8_t>(std::clamp(lid_shade + rng.normal() * 3.0, 0.0, 255.0));
    }
  }
  const int lashes = 40 + static_cast<int>(rng.uniform_index(40));
  for (int l = 0; l < lashes; ++l) {
    const double x0 = iris.cx + rng.uniform(-1.6, 1.6) * iris.r;
    const double y0 = lid_y + curvature * (x0 - iris.cx) * (x0 - iris.cx);
    const double angle = kPi / 2.0 + rng.uniform(-0.5, 0.5);
    const double length = rng.uniform(8.0, 25.0);
    for (double s = 0.0; s < length; s += 0.5) {
      const int x = static_cast<int>(std::lround(x0 + s * std::cos(angle)));
      const int y = static_cast<int>(std::lround(y0 + s * std::sin(angle)));
      if (x >= 0 && x < width && y >= 0 && y < height) eye.image.at(x, y) = static_cast<std::uint8_t>(rng.uniform(15.0, 45.0));
    }
  }
  return std::move(eye.image);
}

GrayImage synthetic_natural_image(std::uint64_t seed, int width, int height) {
  Rng rng(seed);
  FloatImage canvas(width, height, rng.uniform(60.0, 180.0));
  // Dead leaves: occluding shapes with power-law sizes, drawn back to front.
  const int shapes = 300;
  const double max_r = std::min(width, height) / 3.0;
  for (int s = 0; s < shapes; ++s) {
    const double r = max_r * std::pow(rng.uniform(0.02, 1.0), 2.0);
    const double cx = rng.uniform(-r, width + r);
    const double cy = rng.uniform(-r, height + r);
    const double level = rng.uniform(10.0, 245.0);
    const double gx = rng.uniform(-0.5, 0.5);
    const double gy = rng.uniform(-0.5, 0.5);
    const bool rect = rng.uniform01() < 0.4;
    const double aspect = rng.uniform(0.4, 1.0);
    const double rot = rng.uniform(0.0, kPi);
    const double c = std::cos(rot);
    const double sn = std::sin(rot);
    for (int y = std::max(0, static_cast<int>(cy - r)); y < std::min(height, static_cast<int>(cy + r) + 1); ++y) {
      for (int x = std::max(0, static_cast<int>(cx - r)); x < std::min(width, static_cast<int>(cx + r) + 1); ++x) {
        const double u = (x - cx) * c + (y - cy) * sn;
        const double v = (-(x - cx) * sn + (y - cy) * c) / aspect;
        const bool inside = rect ? (std::abs(u) <= r && std::abs(v) <= r) : (u * u + v * v <= r * r);
        if (inside) canvas.at(x, y) = level + gx * (x - cx) + gy * (y - cy);
      }
    }
  }
  // 1/f texture.
  std::vector<Grating> texture;
  for (int k = 0; k < 60; ++k) {
    const double wavelength = std::exp(rng.uniform(std::log(3.0), std::log(128.0)));
    texture.push_back(random_grating(rng, rng.uniform(0.0, kPi), wavelength, 0.12 * wavelength));
  }
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double v = canvas.at(x, y);
      for (const auto& g : texture) v += g.at(x, y);
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v + rng.normal() * 2.0), 0L, 255L));
    }
  }
  return out;
}

std::vector<GrayImage> synthetic_eye_images(int count, std::uint64_t seed) {
  std::vector<GrayImage> out;
  for (int i = 0; i < count; ++i) out.push_back(synthetic_eye_image(derive_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

std::vector<GrayImage> synthetic_natural_images(int count, std::uint64_t seed) {
  std::vector<GrayImage> out;
  for (int i = 0; i < count; ++i) out.push_back(synthetic_natural_image(derive_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

}  // namespace mbsif
