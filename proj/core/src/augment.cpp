#include "mgc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mgc::augment {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = std::fmod(std::fmod(h, 1.0) + 1.0, 1.0) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void adjust_brightness(Image& img, double f) {
  for (double& v : img.pix) v = clamp01(v * f);
}

void adjust_contrast(Image& img, double f) {
  double mean = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      mean += luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
  mean /= static_cast<double>(img.height) * img.width;
  for (double& v : img.pix) v = clamp01(mean + f * (v - mean));
}

void adjust_saturation(Image& img, double f) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double g = luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp01(g + f * (img.at(y, x, c) - g));
    }
}

void adjust_hue(Image& img, double delta) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double h, s, v;
      rgb_to_hsv(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), h, s, v);
      hsv_to_rgb(h + delta, s, v, img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
    }
}

void to_grayscale(Image& img) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double g = luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
      img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = g;
    }
}

void gaussian_blur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& k : kernel) k /= sum;

  Image tmp(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, img.width - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, img.height - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(yy, x, c);
        }
        img.at(y, x, c) = acc;
      }
}

void solarize(Image& img, double threshold = 0.5) {
  for (double& v : img.pix)
    if (v > threshold) v = 1.0 - v;
}

}  // namespace

void AugmentParams::validate() const {
  const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(crop_area_min > 0.0 && crop_area_min <= crop_area_max && crop_area_max <= 1.0))
    throw std::invalid_argument("crop area range must satisfy 0 < min <= max <= 1");
  if (!(aspect_min > 0.0 && aspect_min <= aspect_max))
    throw std::invalid_argument("aspect ratio range out of order");
  if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max))
    throw std::invalid_argument("blur sigma range out of order");
  for (double p : {hflip_prob, jitter_prob, grayscale_prob, blur_prob_t1, blur_prob_t2,
                   solarize_prob_t1, solarize_prob_t2})
    if (!prob(p)) throw std::invalid_argument("probability outside [0,1]");
  if (max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
  if (out_side < 1) throw std::invalid_argument("out_side must be >= 1");
}

geometry::CropBox sample_crop(int src_h, int src_w, const AugmentParams& params, Rng& rng) {
  const double src_area = static_cast<double>(src_h) * src_w;
  geometry::CropBox box;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = uniform(rng, params.crop_area_min, params.crop_area_max) * src_area;
    const double ratio =
        std::exp(uniform(rng, std::log(params.aspect_min), std::log(params.aspect_max)));
    const double w = std::sqrt(area * ratio);
    const double h = std::sqrt(area / ratio);
    if (w <= src_w && h <= src_h) {
      box.w = w;
      box.h = h;
      box.x = uniform(rng, 0.0, src_w - w);
      box.y = uniform(rng, 0.0, src_h - h);
      box.hflip = uniform(rng) < params.hflip_prob;
      return box;
    }
  }
  // Fallback: largest centered box with a clamped aspect ratio.
  const double in_ratio = static_cast<double>(src_w) / src_h;
  double w, h;
  if (in_ratio < params.aspect_min) {
    w = src_w;
    h = w / params.aspect_min;
  } else if (in_ratio > params.aspect_max) {
    h = src_h;
    w = h * params.aspect_max;
  } else {
    w = src_w;
    h = src_h;
  }
  box.w = w;
  box.h = h;
  box.x = (src_w - w) / 2.0;
  box.y = (src_h - h) / 2.0;
  box.hflip = uniform(rng) < params.hflip_prob;
  return box;
}

Image resample(const Image& src, const geometry::CropBox& crop, int out_side) {
  Image out(out_side, out_side);
  const double sx_step = crop.w / out_side;
  const double sy_step = crop.h / out_side;
  for (int y = 0; y < out_side; ++y) {
    const double sy = crop.y + (y + 0.5) * sy_step - 0.5;
    const double syc = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(syc));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fy = syc - y0;
    for (int x = 0; x < out_side; ++x) {
      const int xs = crop.hflip ? out_side - 1 - x : x;
      const double sx = crop.x + (xs + 0.5) * sx_step - 0.5;
      const double sxc = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(std::floor(sxc));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double fx = sxc - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(y0, x0, c) * (1.0 - fx) + src.at(y0, x1, c) * fx;
        const double bot = src.at(y1, x0, c) * (1.0 - fx) + src.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Image apply_photometric(const Image& img, int which, const AugmentParams& params, Rng& rng) {
  if (which != 1 && which != 2) throw std::invalid_argument("transform column must be 1 or 2");
  Image out = img;
  if (uniform(rng) < params.jitter_prob) {
    // Factors are drawn uniformly from 1 +- max intensity (clamped at 0);
    // hue shift is uniform in +- max, as a fraction of the hue circle.
    adjust_brightness(out, std::max(0.0, uniform(rng, 1.0 - params.brightness, 1.0 + params.brightness)));
    adjust_contrast(out, std::max(0.0, uniform(rng, 1.0 - params.contrast, 1.0 + params.contrast)));
    adjust_saturation(out, std::max(0.0, uniform(rng, 1.0 - params.saturation, 1.0 + params.saturation)));
    adjust_hue(out, uniform(rng, -params.hue, params.hue));
  }
  if (uniform(rng) < params.grayscale_prob) to_grayscale(out);
  const double blur_prob = which == 1 ? params.blur_prob_t1 : params.blur_prob_t2;
  if (uniform(rng) < blur_prob)
    gaussian_blur(out, uniform(rng, params.blur_sigma_min, params.blur_sigma_max));
  const double solarize_prob = which == 1 ? params.solarize_prob_t1 : params.solarize_prob_t2;
  if (uniform(rng) < solarize_prob) solarize(out);
  return out;
}

ViewPair sample_view_pair(const Image& src, const AugmentParams& params, Rng& rng) {
  params.validate();
  if (src.height < 32 || src.width < 32)
    throw std::invalid_argument("source image must be at least 32x32");

  ViewPair pair;
  geometry::CropBox c1, c2;
  bool ok = false;
  for (int attempt = 0; attempt <= params.max_retries; ++attempt) {
    c1 = sample_crop(src.height, src.width, params, rng);
    c2 = sample_crop(src.height, src.width, params, rng);
    const double ox = std::min(c1.x + c1.w, c2.x + c2.w) - std::max(c1.x, c2.x);
    const double oy = std::min(c1.y + c1.h, c2.y + c2.h) - std::max(c1.y, c2.y);
    const double overlap = std::max(0.0, ox) * std::max(0.0, oy);
    if (overlap >= params.min_overlap_frac * std::min(c1.area(), c2.area())) {
      ok = true;
      break;
    }
  }
  if (!ok) c2 = c1;  // guarantees full overlap

  pair.crop1 = c1;
  pair.crop2 = c2;
  pair.image1 = apply_photometric(resample(src, c1, params.out_side), 1, params, rng);
  pair.image2 = apply_photometric(resample(src, c2, params.out_side), 2, params, rng);
  return pair;
}

}  // namespace mgc::augment
