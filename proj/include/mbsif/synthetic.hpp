#pragma once

// Procedural stand-ins for restricted iris databases and filter-learning
// corpora.

#include <cstdint>
#include <vector>

#include "mbsif/experiment.hpp"
#include "mbsif/imaging.hpp"
#include "mbsif/iris.hpp"

namespace mbsif {

struct SyntheticCorpusOptions {
  int subjects = 400;  // first half male, second half female
  int radial = kDefaultRadialSamples;
  int angular = kDefaultAngularSamples;
  std::uint64_t seed = 1;
  /// Class-dependent texture lives in rows [0, informative_rows), next to the
  /// pupil boundary; the remaining rows carry class-independent texture.
  int informative_rows = 4;
};

/// One left and one right strip per subject. Subjects are "s0000", "s0001", ...
/// Males carry a near-vertical grating in the informative band, females a
/// diagonal one; eyelid and specular masks vary per sample.
Corpus make_synthetic_corpus(const SyntheticCorpusOptions& options);

struct SyntheticEye {
  GrayImage image;
  IrisAnnotation annotation;
};

/// Draws an eye whose iris annulus is textured by `strip` (rows radial from the
/// pupil boundary, columns angular). Strip cells flagged in `mask` are drawn
/// as eyelid and occluded in the returned annotation.
SyntheticEye render_eye(const FloatImage& strip, const BitMask& mask, std::uint64_t seed, int width = 320,
                        int height = 240);

/// Eye image with iris furrows, eyelids, lashes and a specular highlight.
GrayImage synthetic_eye_image(std::uint64_t seed, int width = 320, int height = 240);

/// Dead-leaves occlusion image plus 1/f texture.
GrayImage synthetic_natural_image(std::uint64_t seed, int width = 256, int height = 256);

std::vector<GrayImage> synthetic_eye_images(int count, std::uint64_t seed);
std::vector<GrayImage> synthetic_natural_images(int count, std::uint64_t seed);

}  // namespace mbsif
