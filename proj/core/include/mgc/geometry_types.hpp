#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mgc::geometry {

/// An augmented view's geometry in source-image pixel coordinates.
/// Coordinates are continuous doubles; nothing is snapped to the pixel grid.
struct CropBox {
  double x = 0.0;  // left edge
  double y = 0.0;  // top edge
  double w = 0.0;
  double h = 0.0;
  bool hflip = false;

  double area() const { return w * h; }
};

/// Number of patch cells along rows (U) and columns (V) of the resized view.
struct PatchGrid {
  int rows = 14;  // U
  int cols = 14;  // V
};

/// Ordered granularity coefficients; every coefficient must divide the grid.
struct GranularitySet {
  std::vector<int> coefficients{1, 2, 7, 14};

  void validate(const PatchGrid& grid) const {
    int prev = 0;
    for (int c : coefficients) {
      if (c <= 0) throw std::invalid_argument("granularity must be positive");
      if (c <= prev) throw std::invalid_argument("granularities must be strictly increasing");
      if (grid.rows % c != 0 || grid.cols % c != 0)
        throw std::invalid_argument("granularity " + std::to_string(c) +
                                    " does not divide the patch grid");
      prev = c;
    }
  }
};

/// Axis-aligned rectangle; zero width or height means "no extent".
struct Rect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
};

struct CorrEntry {
  int s = 0;  // key row
  int t = 0;  // key column
  double weight = 0.0;
};

/// Per-granularity normalized correspondence weights between query cells of
/// view 1 and key cells of view 2. Queries are stored row-major over the
/// (rows/c) x (cols/c) query grid.
struct CorrespondenceTable {
  int c = 1;
  int query_rows = 0;
  int query_cols = 0;
  int key_rows = 0;
  int key_cols = 0;

  struct Query {
    bool has_overlap = false;
    std::vector<CorrEntry> keys;  // sorted by (s, t)
  };
  std::vector<Query> queries;

  const Query& at(int k, int l) const {
    if (k < 0 || k >= query_rows || l < 0 || l >= query_cols)
      throw std::out_of_range("query index outside table");
    return queries[static_cast<std::size_t>(k) * query_cols + l];
  }
  Query& at(int k, int l) {
    if (k < 0 || k >= query_rows || l < 0 || l >= query_cols)
      throw std::out_of_range("query index outside table");
    return queries[static_cast<std::size_t>(k) * query_cols + l];
  }
};

}  // namespace mgc::geometry
