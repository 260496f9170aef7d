#include "mgc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace mgc::oracle {

namespace {

// Cell rect computation local to the oracle; the only thing it shares with
// the geometry module is the CropBox/Rect definitions.
struct CellGeometry {
  double origin_x, origin_y, cell_w, cell_h;
  int rows, cols;
  bool hflip;

  geometry::Rect rect(int k, int l) const {
    const int col = hflip ? cols - 1 - l : l;
    return {origin_x + col * cell_w, origin_y + k * cell_h, cell_w, cell_h};
  }
};

CellGeometry cell_geometry(const geometry::CropBox& crop, const geometry::PatchGrid& grid,
                           int c) {
  if (c <= 0 || grid.rows % c != 0 || grid.cols % c != 0)
    throw std::invalid_argument("granularity does not divide grid");
  CellGeometry g;
  g.origin_x = crop.x;
  g.origin_y = crop.y;
  g.rows = grid.rows / c;
  g.cols = grid.cols / c;
  g.cell_w = crop.w * c / grid.cols;
  g.cell_h = crop.h * c / grid.rows;
  g.hflip = crop.hflip;
  return g;
}

using AreaFn = std::function<double(const geometry::Rect&, const geometry::Rect&)>;

geometry::CorrespondenceTable exhaustive_table(const geometry::CropBox& crop1,
                                               const geometry::CropBox& crop2,
                                               const geometry::PatchGrid& grid, int c,
                                               const AreaFn& area) {
  const CellGeometry g1 = cell_geometry(crop1, grid, c);
  const CellGeometry g2 = cell_geometry(crop2, grid, c);

  geometry::CorrespondenceTable table;
  table.c = c;
  table.query_rows = g1.rows;
  table.query_cols = g1.cols;
  table.key_rows = g2.rows;
  table.key_cols = g2.cols;
  table.queries.resize(static_cast<std::size_t>(g1.rows) * g1.cols);

  for (int k = 0; k < g1.rows; ++k) {
    for (int l = 0; l < g1.cols; ++l) {
      const geometry::Rect q = g1.rect(k, l);
      std::vector<geometry::CorrEntry> entries;
      double total = 0.0;
      for (int s = 0; s < g2.rows; ++s) {
        for (int t = 0; t < g2.cols; ++t) {
          const double a = area(q, g2.rect(s, t));
          if (a <= 0.0) continue;
          entries.push_back({s, t, a});
          total += a;
        }
      }
      auto& query = table.queries[static_cast<std::size_t>(k) * g1.cols + l];
      if (entries.empty()) continue;
      for (auto& e : entries) e.weight /= total;
      std::sort(entries.begin(), entries.end(),
                [](const geometry::CorrEntry& a, const geometry::CorrEntry& b) {
                  return a.s != b.s ? a.s < b.s : a.t < b.t;
                });
      query.has_overlap = true;
      query.keys = std::move(entries);
    }
  }
  return table;
}

}  // namespace

double exact_overlap_area(const geometry::Rect& r1, const geometry::Rect& r2) {
  const double w = std::min(r1.x + r1.w, r2.x + r2.w) - std::max(r1.x, r2.x);
  const double h = std::min(r1.y + r1.h, r2.y + r2.h) - std::max(r1.y, r2.y);
  return std::max(0.0, w) * std::max(0.0, h);
}

double raster_overlap_area(const geometry::Rect& r1, const geometry::Rect& r2,
                           const RasterSpec& spec) {
  if (spec.cell <= 0.0) throw std::invalid_argument("raster cell must be positive");
  // The intersection of axis-aligned rects factorizes, so the raster sweep
  // runs per axis: each raster cell contributes the length of its clipped
  // coverage of both intervals. The raster grid is anchored at the source
  // origin rather than at either rect.
  const auto axis_sum = [&](double lo1, double hi1, double lo2, double hi2) {
    const double lo = std::max(lo1, lo2);
    const double hi = std::min(hi1, hi2);
    if (hi <= lo) return 0.0;
    const long long first = static_cast<long long>(std::floor(lo / spec.cell));
    const long long last = static_cast<long long>(std::ceil(hi / spec.cell));
    double sum = 0.0;
    for (long long i = first; i < last; ++i) {
      const double a = std::max(lo, i * spec.cell);
      const double b = std::min(hi, (i + 1) * spec.cell);
      if (b > a) sum += b - a;
    }
    return sum;
  };
  return axis_sum(r1.x, r1.x + r1.w, r2.x, r2.x + r2.w) *
         axis_sum(r1.y, r1.y + r1.h, r2.y, r2.y + r2.h);
}

geometry::CorrespondenceTable brute_correspondences(const geometry::CropBox& crop1,
                                                    const geometry::CropBox& crop2,
                                                    const geometry::PatchGrid& grid, int c) {
  return exhaustive_table(crop1, crop2, grid, c, &exact_overlap_area);
}

geometry::CorrespondenceTable raster_correspondences(const geometry::CropBox& crop1,
                                                     const geometry::CropBox& crop2,
                                                     const geometry::PatchGrid& grid, int c,
                                                     const RasterSpec& spec) {
  return exhaustive_table(crop1, crop2, grid, c,
                          [&spec](const geometry::Rect& a, const geometry::Rect& b) {
                            return raster_overlap_area(a, b, spec);
                          });
}

namespace {

// Central difference over a doubling ladder of step sizes. No single step
// works across this loss: small-gradient directions need large steps (the
// difference of two O(100) loss values carries a few-ulp noise floor),
// while directions threading many ReLU pre-activations are only smooth
// below the nearest-kink distance and need tiny ones. The ladder walks up
// from eps; the first step pair that agrees tightly (or failing that, the
// most consistent consecutive triple) marks the smooth regime, and one
// Richardson step on that pair cancels the leading h^2 truncation term.
double refined_central_difference(const std::function<double()>& loss_fn, double* value,
                                  double eps, bool& finite) {
  constexpr int kLevels = 14;
  const double saved = *value;
  double loss_scale = 1.0;
  const auto central = [&](double h) {
    *value = saved + h;
    const double plus = loss_fn();
    *value = saved - h;
    const double minus = loss_fn();
    *value = saved;
    loss_scale = std::max({loss_scale, std::abs(plus), std::abs(minus)});
    return (plus - minus) / (2.0 * h);
  };
  const auto richardson = [](double fine, double coarse) {
    return (4.0 * fine - coarse) / 3.0;
  };
  // The forward pass reproduces to a few ulps of the loss, so the
  // difference quotient at step h carries about this much noise.
  const auto noise_at = [&](double h) {
    return 8.0 * std::numeric_limits<double>::epsilon() * loss_scale / (2.0 * h);
  };

  // Walk up from the smallest step and accept the first adjacent pair that
  // (a) agrees to 1e-6 relative and (b) sits clearly above the rounding
  // noise floor. Small steps are preferred because any step beyond the
  // distance to the nearest ReLU kink measures a smeared slope, and such
  // false plateaus never agree this tightly. Directions whose gradient is
  // too small to clear the noise gate anywhere fall back to the pair with
  // the best combined disagreement + modeled-noise score.
  double d[kLevels];
  double hs[kLevels];
  for (int k = 0; k < kLevels; ++k) {
    hs[k] = eps * static_cast<double>(1 << k);
    d[k] = central(hs[k]);
    if (!std::isfinite(d[k])) {
      finite = false;
      return 0.0;
    }
    if (k > 0) {
      const double err = std::abs(d[k - 1] - d[k]);
      const double scale = std::max(std::abs(d[k - 1]), std::abs(d[k]));
      if (err <= 1e-6 * scale && noise_at(hs[k - 1]) <= 1e-6 * scale)
        return richardson(d[k - 1], d[k]);
    }
  }
  bool all_zero = true;
  for (int k = 0; k < kLevels; ++k) all_zero = all_zero && d[k] == 0.0;
  if (all_zero) return 0.0;  // e.g. a path gated off by a dead ReLU

  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (int k = 0; k + 1 < kLevels; ++k) {
    const double scale = std::max({std::abs(d[k]), std::abs(d[k + 1]), 1e-300});
    const double score = (std::abs(d[k] - d[k + 1]) + noise_at(hs[k])) / scale;
    if (score < best_score) {
      best_score = score;
      best = k;
    }
  }
  return richardson(d[best], d[best + 1]);
}

}  // namespace

FdReport fd_gradient_check(const std::function<double()>& loss_fn, std::span<FdParam> params,
                           const FdOptions& options) {
  FdReport report;
  if (params.empty()) return report;

  std::vector<std::size_t> order(params.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(options.seed, rngtag::gradcheck);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1)]);
  const std::size_t count = std::min(params.size(), std::max<std::size_t>(options.sample_count, 1));

  for (std::size_t n = 0; n < count; ++n) {
    FdParam& p = params[order[n]];
    bool finite = std::isfinite(p.analytic);
    const double fd = finite ? refined_central_difference(loss_fn, p.value, options.eps, finite)
                             : 0.0;
    if (!finite) {
      report.non_finite = true;
      report.non_finite_name = p.name;
      continue;
    }
    const double rel = std::abs(p.analytic - fd) /
                       std::max({std::abs(p.analytic), std::abs(fd), 1e-12});
    ++report.checked;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_name = p.name;
      report.worst_analytic = p.analytic;
      report.worst_fd = fd;
    }
  }
  return report;
}

}  // namespace mgc::oracle
