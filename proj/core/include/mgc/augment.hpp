#pragma once

#include "mgc/geometry_types.hpp"
#include "mgc/image.hpp"
#include "mgc/rng.hpp"

namespace mgc::augment {

/// Photometric and geometric augmentation parameters. Defaults follow the
/// standard two-transform recipe: transform 1 always blurs and never
/// solarizes, transform 2 blurs with probability 0.1 and solarizes with
/// probability 0.2.
struct AugmentParams {
  double crop_area_min = 0.08, crop_area_max = 1.0;
  double aspect_min = 3.0 / 4.0, aspect_max = 4.0 / 3.0;
  double hflip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.4, contrast = 0.4, saturation = 0.2, hue = 0.1;
  double grayscale_prob = 0.2;
  double blur_prob_t1 = 1.0, blur_prob_t2 = 0.1;
  double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  double solarize_prob_t1 = 0.0, solarize_prob_t2 = 0.2;
  double min_overlap_frac = 0.01;  // of the smaller crop's area
  int max_retries = 10;
  int out_side = 224;

  void validate() const;
};

/// Two augmented views of one source image with their exact geometry.
struct ViewPair {
  Image image1, image2;            // out_side x out_side, values in [0, 1]
  geometry::CropBox crop1, crop2;  // source-image coordinates, flip included
  std::uint64_t seed = 0;
};

/// Random resized crop geometry only (continuous coordinates, box always
/// inside the source image).
geometry::CropBox sample_crop(int src_h, int src_w, const AugmentParams& params, Rng& rng);

/// Bilinear resample of the source through a crop box to out_side^2, with
/// border clamping; honors crop.hflip.
Image resample(const Image& src, const geometry::CropBox& crop, int out_side);

/// Photometric chain for one transform column (1 or 2):
/// jitter -> grayscale -> blur -> solarize.
Image apply_photometric(const Image& img, int which, const AugmentParams& params, Rng& rng);

/// Sample a positive view pair. Crop pairs are resampled until their overlap
/// area reaches min_overlap_frac of the smaller crop (or retries run out, in
/// which case crop2 is set to crop1).
ViewPair sample_view_pair(const Image& src, const AugmentParams& params, Rng& rng);

}  // namespace mgc::augment
