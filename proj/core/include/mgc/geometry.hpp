#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <utility>

#include "mgc/geometry_types.hpp"

namespace mgc::geometry {

/// Footprint (width, height) of one granularity-c cell in source pixels.
std::pair<double, double> patch_footprint(const CropBox& crop, const PatchGrid& grid, int c);

/// Source-image rectangle of cell (k, l) at granularity c. For a flipped
/// crop the column index is mirrored first so the rect always refers to the
/// un-flipped source content.
Rect patch_rect(const CropBox& crop, const PatchGrid& grid, int c, int k, int l);

/// Axis-aligned intersection of two crops; empty when the intersection has
/// zero area (edge-touching boxes count as disjoint).
std::optional<Rect> overlap_region(const CropBox& crop1, const CropBox& crop2);

struct IndexRange {
  int lo = 0;
  int hi = -1;  // inclusive
  bool empty() const { return hi < lo; }
  bool contains(int i) const { return i >= lo && i <= hi; }
};

/// Closed index ranges of view-1 cells overlapping view 2, plus per-query
/// ranges of view-2 cells. The floor/ceil candidate ranges are clamped to
/// the grid and trimmed of zero-area boundary cells, so the returned ranges
/// are tight. All indices are display indices (flips already applied).
class OverlapIndexRanges {
 public:
  OverlapIndexRanges(const CropBox& crop1, const CropBox& crop2, const PatchGrid& grid, int c);

  const IndexRange& rows() const { return rows_; }  // k
  const IndexRange& cols() const { return cols_; }  // l

  /// Ranges of key cells (s, t) overlapping query cell (k, l).
  std::pair<IndexRange, IndexRange> key_ranges(int k, int l) const;

 private:
  CropBox crop1_, crop2_;
  PatchGrid grid_;
  int c_;
  IndexRange rows_, cols_;
};

OverlapIndexRanges overlap_index_ranges(const CropBox& crop1, const CropBox& crop2,
                                        const PatchGrid& grid, int c);

/// Relative overlap metric: intersection area over the sum of both areas.
double relative_overlap_score(const Rect& r1, const Rect& r2);

/// Normalized overlap-area weights between every view-1 query cell and the
/// view-2 key cells, at granularity c. Flip states of both crops are
/// respected via patch_rect.
CorrespondenceTable correspondence_weights(const CropBox& crop1, const CropBox& crop2,
                                           const PatchGrid& grid, int c);

/// Per-axis overlap-area shares of the view-1 cells covering one view-2 key
/// cell: e_w over the overlapping columns (at a fixed overlapping row) and
/// e_h over the overlapping rows. Each list sums to 1.
struct EdgeRatios {
  std::vector<double> e_w;
  std::vector<double> e_h;
};
EdgeRatios edge_ratios(const CropBox& crop1, const CropBox& crop2, const PatchGrid& grid, int c,
                       int key_row, int key_col);

/// One recovered view-1 cell position, expressed in view-2 crop-frame
/// coordinates (source pixels minus the view-2 crop origin). The validity
/// flags mark the entries for which the area-ratio reconstruction is exact:
/// the recovery clips at the key cell's far edge, so cells extending past it
/// (and every cell of a key not fully covered by view 1 along that axis)
/// carry approximate values and are flagged invalid.
struct LocalizeEntry {
  int k = 0;  // view-1 cell display row
  int l = 0;  // view-1 cell display column
  double x = 0.0;
  double y = 0.0;
  bool valid_x = false;
  bool valid_y = false;
};

/// Recover the positions of all view-1 cells overlapping the given view-2
/// key cell from area ratios alone (plus the cell footprints and the key
/// index), following the localization analysis.
std::vector<LocalizeEntry> localize(const CropBox& crop1, const CropBox& crop2,
                                    const PatchGrid& grid, int c, int key_row, int key_col);

/// JSON Lines serialization: one record per query with overlap,
/// {"c":..,"k":..,"l":..,"keys":[[s,t,w],...]}, weights printed with 17
/// significant digits.
void write_jsonl(std::ostream& out, const CorrespondenceTable& table);

}  // namespace mgc::geometry
