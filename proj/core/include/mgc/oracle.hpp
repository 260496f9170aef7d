#pragma once

#include <functional>
#include <span>
#include <string>

#include "mgc/geometry_types.hpp"
#include "mgc/rng.hpp"

namespace mgc::oracle {

// Brute-force reference implementations used to validate the geometry and
// contrast modules. This module shares only the plain types with geometry;
// it deliberately reimplements every computation it checks.

struct RasterSpec {
  double cell = 0.25;  // sub-pixel raster step
};

/// Interval-intersection overlap area, written independently of the
/// geometry module's rect code.
double exact_overlap_area(const geometry::Rect& r1, const geometry::Rect& r2);

/// Overlap area accumulated over a sub-pixel raster anchored at the source
/// origin: each raster cell contributes its clipped coverage of both rects.
double raster_overlap_area(const geometry::Rect& r1, const geometry::Rect& r2,
                           const RasterSpec& spec = {});

/// Exhaustive correspondence table: every query cell against every key cell,
/// no candidate-range shortcuts.
geometry::CorrespondenceTable brute_correspondences(const geometry::CropBox& crop1,
                                                    const geometry::CropBox& crop2,
                                                    const geometry::PatchGrid& grid, int c);

/// Same exhaustive loop with the rasterized area in place of the exact one.
geometry::CorrespondenceTable raster_correspondences(const geometry::CropBox& crop1,
                                                     const geometry::CropBox& crop2,
                                                     const geometry::PatchGrid& grid, int c,
                                                     const RasterSpec& spec = {});

/// One scalar parameter to check: where it lives and the analytic gradient
/// the implementation claims for it.
struct FdParam {
  double* value = nullptr;
  double analytic = 0.0;
  std::string name;
};

struct FdOptions {
  double eps = 1e-5;
  std::size_t sample_count = 200;  // at least this many parameters perturbed
  std::uint64_t seed = 0;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_name;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  std::size_t checked = 0;
  bool non_finite = false;
  std::string non_finite_name;
};

/// Central finite-difference gradient check. Perturbs a uniformly sampled
/// subset of at least options.sample_count parameters (all of them if fewer)
/// and reports the worst relative error
/// |g_an - g_fd| / max(|g_an|, |g_fd|, 1e-12).
FdReport fd_gradient_check(const std::function<double()>& loss_fn, std::span<FdParam> params,
                           const FdOptions& options = {});

}  // namespace mgc::oracle
