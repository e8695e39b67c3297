#pragma once

#include "scob/render/renderer.hpp"
#include "scob/util/rng.hpp"

namespace scob {

// Conventional multiview augmentation: a mild rotation and rescale about the
// image centre, brightness/contrast jitter, optional grayscale and optional
// Gaussian blur. Geometric strengths are deliberately low.
struct AugmentConfig {
  double max_rotation_deg = 3.0;
  double max_scale_delta = 0.05;
  double color_jitter = 0.2;  // brightness and contrast, relative
  double gray_prob = 0.2;
  double blur_prob = 0.3;
  double blur_max_radius = 1.0;

  void validate() const;  // throws ConfigError
};

/// Augmented copy of `sample`, same size. Word boxes (and character boxes)
/// are mapped through the geometric transform as enclosing boxes clipped
/// to the image; words whose box leaves the image entirely lose it.
RenderedSample augment(const RenderedSample& sample, const AugmentConfig& config, Rng& rng);

}  // namespace scob
