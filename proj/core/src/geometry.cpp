#include "mgc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace mgc::geometry {

namespace {

constexpr double kEdgeTol = 1e-9;

void check_granularity(const PatchGrid& grid, int c) {
  if (c <= 0 || grid.rows % c != 0 || grid.cols % c != 0)
    throw std::invalid_argument("granularity " + std::to_string(c) +
                                " does not divide the " + std::to_string(grid.rows) + "x" +
                                std::to_string(grid.cols) + " patch grid");
}

int mirror_index(int idx, int n, bool flip) { return flip ? n - 1 - idx : idx; }

Rect intersect(const Rect& a, const Rect& b) {
  const double x0 = std::max(a.x, b.x);
  const double y0 = std::max(a.y, b.y);
  const double x1 = std::min(a.x + a.w, b.x + b.w);
  const double y1 = std::min(a.y + a.h, b.y + b.h);
  if (x1 <= x0 || y1 <= y0) return {};
  return {x0, y0, x1 - x0, y1 - y0};
}

// Rect of a cell addressed by content-space indices (no flip applied).
Rect content_cell_rect(const CropBox& crop, double wc, double hc, int k, int l) {
  return {crop.x + l * wc, crop.y + k * hc, wc, hc};
}

double interval_overlap(double lo1, double hi1, double lo2, double hi2) {
  return std::min(hi1, hi2) - std::max(lo1, lo2);
}

// Floor/ceil candidate range for cells of size `cell` anchored at `origin`
// against the interval [lo, hi], clamped to [0, n-1] and trimmed of
// zero-overlap boundary cells.
IndexRange tight_cell_range(double origin, double cell, double lo, double hi, int n) {
  IndexRange r;
  r.lo = static_cast<int>(std::floor((lo - origin) / cell));
  r.hi = static_cast<int>(std::ceil((hi - origin) / cell));
  r.lo = std::max(r.lo, 0);
  r.hi = std::min(r.hi, n - 1);
  while (r.lo <= r.hi &&
         interval_overlap(origin + r.lo * cell, origin + (r.lo + 1) * cell, lo, hi) <= 0.0)
    ++r.lo;
  while (r.lo <= r.hi &&
         interval_overlap(origin + r.hi * cell, origin + (r.hi + 1) * cell, lo, hi) <= 0.0)
    --r.hi;
  return r;
}

IndexRange mirrored(const IndexRange& r, int n, bool flip) {
  if (!flip || r.empty()) return r;
  return {n - 1 - r.hi, n - 1 - r.lo};
}

}  // namespace

std::pair<double, double> patch_footprint(const CropBox& crop, const PatchGrid& grid, int c) {
  check_granularity(grid, c);
  return {c * crop.w / grid.cols, c * crop.h / grid.rows};
}

Rect patch_rect(const CropBox& crop, const PatchGrid& grid, int c, int k, int l) {
  const auto [wc, hc] = patch_footprint(crop, grid, c);
  const int rows = grid.rows / c;
  const int cols = grid.cols / c;
  if (k < 0 || k >= rows || l < 0 || l >= cols)
    throw std::out_of_range("patch index (" + std::to_string(k) + "," + std::to_string(l) +
                            ") outside " + std::to_string(rows) + "x" + std::to_string(cols) +
                            " grid");
  return content_cell_rect(crop, wc, hc, k, mirror_index(l, cols, crop.hflip));
}

std::optional<Rect> overlap_region(const CropBox& crop1, const CropBox& crop2) {
  const Rect r = intersect({crop1.x, crop1.y, crop1.w, crop1.h},
                           {crop2.x, crop2.y, crop2.w, crop2.h});
  if (r.area() <= 0.0) return std::nullopt;
  return r;
}

OverlapIndexRanges::OverlapIndexRanges(const CropBox& crop1, const CropBox& crop2,
                                       const PatchGrid& grid, int c)
    : crop1_(crop1), crop2_(crop2), grid_(grid), c_(c) {
  check_granularity(grid, c);
  const auto region = overlap_region(crop1, crop2);
  if (!region) return;  // ranges stay empty
  const auto [w1c, h1c] = patch_footprint(crop1, grid, c);
  rows_ = tight_cell_range(crop1.y, h1c, region->y, region->y + region->h, grid.rows / c);
  cols_ = tight_cell_range(crop1.x, w1c, region->x, region->x + region->w, grid.cols / c);
  cols_ = mirrored(cols_, grid.cols / c, crop1.hflip);
}

std::pair<IndexRange, IndexRange> OverlapIndexRanges::key_ranges(int k, int l) const {
  const int cols1 = grid_.cols / c_;
  const auto [w1c, h1c] = patch_footprint(crop1_, grid_, c_);
  const auto [w2c, h2c] = patch_footprint(crop2_, grid_, c_);
  const Rect q = content_cell_rect(crop1_, w1c, h1c, k, mirror_index(l, cols1, crop1_.hflip));
  IndexRange s = tight_cell_range(crop2_.y, h2c, q.y, q.y + q.h, grid_.rows / c_);
  IndexRange t = tight_cell_range(crop2_.x, w2c, q.x, q.x + q.w, grid_.cols / c_);
  t = mirrored(t, grid_.cols / c_, crop2_.hflip);
  return {s, t};
}

OverlapIndexRanges overlap_index_ranges(const CropBox& crop1, const CropBox& crop2,
                                        const PatchGrid& grid, int c) {
  return OverlapIndexRanges(crop1, crop2, grid, c);
}

double relative_overlap_score(const Rect& r1, const Rect& r2) {
  const double inter = intersect(r1, r2).area();
  if (inter <= 0.0) return 0.0;
  const double denom = r1.area() + r2.area();
  return denom > 0.0 ? inter / denom : 0.0;
}

CorrespondenceTable correspondence_weights(const CropBox& crop1, const CropBox& crop2,
                                           const PatchGrid& grid, int c) {
  check_granularity(grid, c);
  const int rows = grid.rows / c;
  const int cols = grid.cols / c;
  const auto [w1c, h1c] = patch_footprint(crop1, grid, c);
  const auto [w2c, h2c] = patch_footprint(crop2, grid, c);

  CorrespondenceTable table;
  table.c = c;
  table.query_rows = table.key_rows = rows;
  table.query_cols = table.key_cols = cols;
  table.queries.resize(static_cast<std::size_t>(rows) * cols);

  for (int k = 0; k < rows; ++k) {
    for (int lc = 0; lc < cols; ++lc) {
      // Enumerate in content space so the arithmetic (and in particular the
      // accumulation order of the normalizer) is independent of flip state.
      const Rect q = content_cell_rect(crop1, w1c, h1c, k, lc);
      const IndexRange sr = tight_cell_range(crop2.y, h2c, q.y, q.y + q.h, rows);
      const IndexRange tr = tight_cell_range(crop2.x, w2c, q.x, q.x + q.w, cols);

      std::vector<CorrEntry> entries;
      double total = 0.0;
      for (int s = sr.lo; s <= sr.hi; ++s) {
        for (int t = tr.lo; t <= tr.hi; ++t) {
          const double a = intersect(q, content_cell_rect(crop2, w2c, h2c, s, t)).area();
          if (a <= 0.0) continue;
          entries.push_back({s, mirror_index(t, cols, crop2.hflip), a});
          total += a;
        }
      }

      auto& query = table.at(k, mirror_index(lc, cols, crop1.hflip));
      if (entries.empty()) continue;
      for (auto& e : entries) e.weight /= total;
      std::sort(entries.begin(), entries.end(),
                [](const CorrEntry& a, const CorrEntry& b) {
                  return a.s != b.s ? a.s < b.s : a.t < b.t;
                });
      query.has_overlap = true;
      query.keys = std::move(entries);
    }
  }
  return table;
}

namespace {

// Everything localize needs about one key cell: the content-space ranges of
// the view-1 cells overlapping it, the per-axis area ratios, and whether the
// key is fully covered by view 1 along each axis.
struct KeyOverlapDetail {
  Rect key;                    // source coordinates
  int key_row_content = 0, key_col_content = 0;
  IndexRange rows, cols;       // overlapping view-1 cells, content indices
  std::vector<double> e_w, e_h;
  bool covered_x = false, covered_y = false;
};

KeyOverlapDetail key_overlap_detail(const CropBox& crop1, const CropBox& crop2,
                                    const PatchGrid& grid, int c, int key_row, int key_col) {
  check_granularity(grid, c);
  const int rows = grid.rows / c;
  const int cols = grid.cols / c;
  if (key_row < 0 || key_row >= rows || key_col < 0 || key_col >= cols)
    throw std::out_of_range("key index outside grid");

  KeyOverlapDetail d;
  d.key_row_content = key_row;
  d.key_col_content = mirror_index(key_col, cols, crop2.hflip);
  const auto [w1c, h1c] = patch_footprint(crop1, grid, c);
  const auto [w2c, h2c] = patch_footprint(crop2, grid, c);
  d.key = content_cell_rect(crop2, w2c, h2c, d.key_row_content, d.key_col_content);

  d.rows = tight_cell_range(crop1.y, h1c, d.key.y, d.key.y + d.key.h, rows);
  d.cols = tight_cell_range(crop1.x, w1c, d.key.x, d.key.x + d.key.w, cols);
  if (d.rows.empty() || d.cols.empty())
    throw std::invalid_argument("no overlap at key (" + std::to_string(key_row) + "," +
                                std::to_string(key_col) + ")");

  // Area ratios along x at a fixed overlapping row, and along y at a fixed
  // overlapping column. Same-height rows make these equal to length ratios.
  const int r0 = d.rows.lo;
  double total_w = 0.0;
  for (int j = d.cols.lo; j <= d.cols.hi; ++j) {
    const double a = intersect(content_cell_rect(crop1, w1c, h1c, r0, j), d.key).area();
    d.e_w.push_back(a);
    total_w += a;
  }
  for (auto& e : d.e_w) e /= total_w;

  const int c0 = d.cols.lo;
  double total_h = 0.0;
  for (int i = d.rows.lo; i <= d.rows.hi; ++i) {
    const double a = intersect(content_cell_rect(crop1, w1c, h1c, i, c0), d.key).area();
    d.e_h.push_back(a);
    total_h += a;
  }
  for (auto& e : d.e_h) e /= total_h;

  d.covered_x = crop1.x <= d.key.x + kEdgeTol &&
                crop1.x + crop1.w >= d.key.x + d.key.w - kEdgeTol;
  d.covered_y = crop1.y <= d.key.y + kEdgeTol &&
                crop1.y + crop1.h >= d.key.y + d.key.h - kEdgeTol;
  return d;
}

}  // namespace

EdgeRatios edge_ratios(const CropBox& crop1, const CropBox& crop2, const PatchGrid& grid, int c,
                       int key_row, int key_col) {
  const auto d = key_overlap_detail(crop1, crop2, grid, c, key_row, key_col);
  return {d.e_w, d.e_h};
}

std::vector<LocalizeEntry> localize(const CropBox& crop1, const CropBox& crop2,
                                    const PatchGrid& grid, int c, int key_row, int key_col) {
  const auto d = key_overlap_detail(crop1, crop2, grid, c, key_row, key_col);
  const auto [w1c, h1c] = patch_footprint(crop1, grid, c);
  const auto [w2c, h2c] = patch_footprint(crop2, grid, c);
  const int cols = grid.cols / c;

  // Recovered coordinates use only the area ratios, the cell footprints and
  // the key index; the validity flags are diagnostics computed from the true
  // rects.
  std::vector<double> xs(d.e_w.size()), ys(d.e_h.size());
  std::vector<bool> vx(d.e_w.size()), vy(d.e_h.size());
  double cum = 0.0;
  for (std::size_t j = 0; j < d.e_w.size(); ++j) {
    cum += d.e_w[j];
    xs[j] = (d.key_col_content + cum) * w2c - w1c;
    const double right_edge = crop1.x + (d.cols.lo + static_cast<int>(j) + 1) * w1c;
    vx[j] = d.covered_x && right_edge <= d.key.x + d.key.w + kEdgeTol;
  }
  cum = 0.0;
  for (std::size_t i = 0; i < d.e_h.size(); ++i) {
    cum += d.e_h[i];
    ys[i] = (d.key_row_content + cum) * h2c - h1c;
    const double bottom_edge = crop1.y + (d.rows.lo + static_cast<int>(i) + 1) * h1c;
    vy[i] = d.covered_y && bottom_edge <= d.key.y + d.key.h + kEdgeTol;
  }

  std::vector<LocalizeEntry> out;
  out.reserve(xs.size() * ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) {
    for (std::size_t j = 0; j < xs.size(); ++j) {
      LocalizeEntry e;
      e.k = d.rows.lo + static_cast<int>(i);
      e.l = mirror_index(d.cols.lo + static_cast<int>(j), cols, crop1.hflip);
      e.x = xs[j];
      e.y = ys[i];
      e.valid_x = vx[j];
      e.valid_y = vy[i];
      out.push_back(e);
    }
  }
  return out;
}

void write_jsonl(std::ostream& out, const CorrespondenceTable& table) {
  char buf[64];
  for (int k = 0; k < table.query_rows; ++k) {
    for (int l = 0; l < table.query_cols; ++l) {
      const auto& q = table.at(k, l);
      if (!q.has_overlap) continue;
      out << "{\"c\":" << table.c << ",\"k\":" << k << ",\"l\":" << l << ",\"keys\":[";
      for (std::size_t i = 0; i < q.keys.size(); ++i) {
        const auto& e = q.keys[i];
        std::snprintf(buf, sizeof(buf), "%.16e", e.weight);
        out << (i ? "," : "") << '[' << e.s << ',' << e.t << ',' << buf << ']';
      }
      out << "]}\n";
    }
  }
}

}  // namespace mgc::geometry
