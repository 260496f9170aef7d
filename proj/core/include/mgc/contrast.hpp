#pragma once

#include <map>
#include <vector>

#include "mgc/geometry_types.hpp"
#include "mgc/model.hpp"

namespace mgc::contrast {

using model::Matrix;

/// Grid of granularity-c pooled representations.
struct GranularityFeatures {
  int c = 1;
  int rows = 0, cols = 0;
  Matrix feats;  // (rows*cols) x D, cell (k,l) at row k*cols + l
};

/// Non-overlapping c x c mean pooling with stride c.
GranularityFeatures aggregate(const model::FeatureMap& fm, int c);

/// Scatter a pooled-grid gradient back to token gradients (each token
/// receives d_pooled / c^2).
Matrix aggregate_backward(const Matrix& d_pooled, int c, int token_rows, int token_cols);

/// Per-image sparse cell selection: sampled query cells per granularity and
/// the key support (every key with nonzero weight for a sampled query).
struct SparseSample {
  struct PerGranularity {
    std::vector<std::pair<int, int>> queries;  // (k, l), sorted
    std::vector<std::pair<int, int>> keys;     // (s, t), sorted union
  };
  std::map<int, PerGranularity> by_c;
};

/// Sample counts[c] query cells uniformly without replacement among queries
/// with overlap (all of them if fewer exist).
SparseSample sample_sparse(const std::map<int, geometry::CorrespondenceTable>& tables,
                           const std::map<int, int>& counts, Rng& rng);

struct LossConfig {
  double temperature = 0.2;
  std::map<int, int> sample_counts{{1, 10}, {2, 10}, {7, 2}, {14, 1}};
  bool symmetrize = false;

  void validate() const;
};

/// Cosine similarity of two nonzero vectors, in [-1, 1].
double similarity(const Eigen::VectorXd& q, const Eigen::VectorXd& z);

/// One soft-target assignment: query row i matches key row j with weight w.
struct SoftTarget {
  int query = 0;
  int key = 0;
  double weight = 0.0;
};

/// Soft-target cross entropy at one granularity:
///   -(1/batch) * sum_targets w * log softmax(sim(q, z) / tau)
/// with the softmax denominator spanning every key row (all images). Each
/// query's weights must sum to 1. If d_q is non-null the gradient w.r.t. the
/// raw (pre-normalization) query vectors is written there.
double loss_granularity(const Matrix& q, const Matrix& z,
                        const std::vector<SoftTarget>& targets, int batch, double tau,
                        Matrix* d_q = nullptr);

/// Correspondence targets and sparse samples for one view pair, in the
/// direction "view 1 queries -> view 2 keys". `reverse` carries the swapped
/// direction and is only consulted when the loss is symmetrized.
struct PairTargets {
  std::map<int, geometry::CorrespondenceTable> tables;
  SparseSample sample;
  std::map<int, geometry::CorrespondenceTable> reverse_tables;
  SparseSample reverse_sample;
};

struct LossOptions {
  bool training = true;       // batch statistics in head norms
  bool update_stats = true;   // advance running statistics
  bool with_grad = true;      // accumulate gradients into base params
};

struct LossBreakdown {
  double total = 0.0;
  std::map<int, double> per_granularity;
  int skipped = 0;  // granularities with no overlapping query anywhere
};

/// The multi-grained objective over a batch: base branch encodes view 1
/// (encode -> aggregate -> sample -> project -> predict), momentum branch
/// encodes view 2 (encode -> aggregate -> project, no gradient), and the
/// per-granularity losses are summed. Views must already be normalized.
/// With symmetrize the view-swapped term is added and the result halved.
LossBreakdown total_loss(model::ModelPair& pair, const std::vector<Image>& views1,
                         const std::vector<Image>& views2,
                         const std::vector<PairTargets>& targets, const LossConfig& cfg,
                         const LossOptions& opts = {});

}  // namespace mgc::contrast
