#include "mgc/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mgc::contrast {

GranularityFeatures aggregate(const model::FeatureMap& fm, int c) {
  if (c <= 0 || fm.rows % c != 0 || fm.cols % c != 0)
    throw std::invalid_argument("granularity " + std::to_string(c) +
                                " does not divide the feature grid");
  GranularityFeatures out;
  out.c = c;
  out.rows = fm.rows / c;
  out.cols = fm.cols / c;
  out.feats = Matrix::Zero(static_cast<Eigen::Index>(out.rows) * out.cols, fm.dim);
  for (int u = 0; u < fm.rows; ++u)
    for (int v = 0; v < fm.cols; ++v)
      out.feats.row((u / c) * out.cols + v / c) += fm.tokens.row(u * fm.cols + v);
  out.feats /= static_cast<double>(c) * c;
  return out;
}

Matrix aggregate_backward(const Matrix& d_pooled, int c, int token_rows, int token_cols) {
  const int prows = token_rows / c, pcols = token_cols / c;
  if (d_pooled.rows() != static_cast<Eigen::Index>(prows) * pcols)
    throw std::invalid_argument("pooled gradient shape mismatch");
  Matrix d_tokens(static_cast<Eigen::Index>(token_rows) * token_cols, d_pooled.cols());
  const double inv = 1.0 / (static_cast<double>(c) * c);
  for (int u = 0; u < token_rows; ++u)
    for (int v = 0; v < token_cols; ++v)
      d_tokens.row(u * token_cols + v) = d_pooled.row((u / c) * pcols + v / c) * inv;
  return d_tokens;
}

SparseSample sample_sparse(const std::map<int, geometry::CorrespondenceTable>& tables,
                           const std::map<int, int>& counts, Rng& rng) {
  SparseSample sample;
  for (const auto& [c, count] : counts) {
    const auto it = tables.find(c);
    if (it == tables.end())
      throw std::invalid_argument("no correspondence table for granularity " +
                                  std::to_string(c));
    if (count <= 0) throw std::invalid_argument("sample count must be positive");
    const auto& table = it->second;

    std::vector<std::pair<int, int>> available;
    for (int k = 0; k < table.query_rows; ++k)
      for (int l = 0; l < table.query_cols; ++l)
        if (table.at(k, l).has_overlap) available.emplace_back(k, l);

    auto& per = sample.by_c[c];
    if (available.empty()) continue;  // granularity contributes no loss term
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(count),
                                                   available.size());
    // Partial Fisher-Yates: the first `take` slots end up a uniform draw
    // without replacement.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = static_cast<std::size_t>(
          uniform_int(rng, static_cast<std::int64_t>(i),
                      static_cast<std::int64_t>(available.size()) - 1));
      std::swap(available[i], available[j]);
    }
    per.queries.assign(available.begin(), available.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(per.queries.begin(), per.queries.end());

    std::vector<std::pair<int, int>> keys;
    for (const auto& [k, l] : per.queries)
      for (const auto& e : table.at(k, l).keys) keys.emplace_back(e.s, e.t);
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    per.keys = std::move(keys);
  }
  return sample;
}

void LossConfig::validate() const {
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
  if (sample_counts.empty()) throw std::invalid_argument("no granularities configured");
  for (const auto& [c, n] : sample_counts) {
    if (c <= 0) throw std::invalid_argument("granularity must be positive");
    if (n <= 0) throw std::invalid_argument("sample count must be positive");
  }
}

double similarity(const Eigen::VectorXd& q, const Eigen::VectorXd& z) {
  const double nq = q.norm(), nz = z.norm();
  if (nq == 0.0 || nz == 0.0)
    throw std::invalid_argument("cosine similarity of a zero vector is undefined");
  return q.dot(z) / (nq * nz);
}

double loss_granularity(const Matrix& q, const Matrix& z,
                        const std::vector<SoftTarget>& targets, int batch, double tau,
                        Matrix* d_q) {
  if (batch <= 0) throw std::invalid_argument("batch must be positive");
  if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");
  if (q.cols() != z.cols()) throw std::invalid_argument("query/key dimension mismatch");
  const Eigen::Index mq = q.rows(), mk = z.rows();

  Eigen::VectorXd qnorm(mq), row_weight = Eigen::VectorXd::Zero(mq);
  Matrix qn(mq, q.cols()), zn(mk, z.cols());
  for (Eigen::Index i = 0; i < mq; ++i) {
    qnorm(i) = q.row(i).norm();
    if (qnorm(i) == 0.0) throw std::invalid_argument("zero query vector");
    qn.row(i) = q.row(i) / qnorm(i);
  }
  for (Eigen::Index j = 0; j < mk; ++j) {
    const double n = z.row(j).norm();
    if (n == 0.0) throw std::invalid_argument("zero key vector");
    zn.row(j) = z.row(j) / n;
  }
  for (const auto& t : targets) {
    if (t.query < 0 || t.query >= mq || t.key < 0 || t.key >= mk)
      throw std::invalid_argument("target references a missing query or key row");
    row_weight(t.query) += t.weight;
  }
  for (Eigen::Index i = 0; i < mq; ++i)
    if (row_weight(i) != 0.0 && std::abs(row_weight(i) - 1.0) > 1e-9)
      throw std::invalid_argument("query weights must sum to 1");

  const Matrix sim = qn * zn.transpose();
  Matrix logp = sim / tau;
  Eigen::VectorXd lse(mq);
  for (Eigen::Index i = 0; i < mq; ++i) {
    const double mx = logp.row(i).maxCoeff();
    lse(i) = mx + std::log((logp.row(i).array() - mx).exp().sum());
    logp.row(i).array() -= lse(i);
  }

  double loss = 0.0;
  for (const auto& t : targets) loss -= t.weight * logp(t.query, t.key);
  loss /= static_cast<double>(batch);

  if (d_q) {
    // dL/dlogits = (rowsum(W) * softmax - W) / batch, then chain through the
    // cosine normalization of q.
    Matrix g = logp.array().exp().matrix();
    g = (g.array().colwise() * row_weight.array()).matrix();
    for (const auto& t : targets) g(t.query, t.key) -= t.weight;
    g /= static_cast<double>(batch);

    Matrix a = g * zn;                                        // mq x d
    const Eigen::VectorXd rowdot = g.cwiseProduct(sim).rowwise().sum();
    d_q->resize(mq, q.cols());
    for (Eigen::Index i = 0; i < mq; ++i)
      d_q->row(i) = (a.row(i) - rowdot(i) * qn.row(i)) / (tau * qnorm(i));
  }
  return loss;
}

namespace {

struct DirectionalResult {
  std::map<int, double> per_granularity;
  int skipped = 0;
};

// One direction of the objective: `q_views` through the base branch,
// `k_views` through the momentum branch.
DirectionalResult directional_loss(model::ModelPair& pair, const std::vector<Image>& q_views,
                                   const std::vector<Image>& k_views,
                                   const std::vector<PairTargets>& targets, bool use_reverse,
                                   const LossConfig& cfg, const LossOptions& opts) {
  const std::size_t batch = q_views.size();
  const int grid = pair.vit_cfg.grid_side();
  const int dim = pair.vit_cfg.embed_dim;

  std::vector<model::VisionTransformer::Cache> caches(opts.with_grad ? batch : 0);
  std::vector<model::FeatureMap> base_maps(batch), momentum_maps(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    base_maps[i] = pair.base_vit.encode(q_views[i], opts.with_grad ? &caches[i] : nullptr);
    momentum_maps[i] = pair.momentum_vit.encode(k_views[i]);
  }

  // Gather every granularity's sampled query cells and key-support cells
  // into one flattened row batch, so the shared heads (and their batch
  // normalization) run once per branch over all granularities.
  struct RowRef {
    std::size_t image;
    int c;
    int cell;  // row in the pooled grid
  };
  struct Slice {
    int c;
    Eigen::Index q_begin = 0, q_count = 0;
    Eigen::Index k_begin = 0, k_count = 0;
    std::vector<SoftTarget> soft;  // rows local to the slice
  };
  std::vector<RowRef> q_rows, k_rows;
  std::vector<Slice> slices;
  std::map<std::pair<std::size_t, int>, GranularityFeatures> q_pooled, k_pooled;

  DirectionalResult result;
  for (const auto& [c, count] : cfg.sample_counts) {
    (void)count;
    const int pcols = grid / c;
    Slice slice;
    slice.c = c;
    slice.q_begin = static_cast<Eigen::Index>(q_rows.size());
    slice.k_begin = static_cast<Eigen::Index>(k_rows.size());

    for (std::size_t i = 0; i < batch; ++i) {
      const auto& pt = targets[i];
      const auto& sample = use_reverse ? pt.reverse_sample : pt.sample;
      const auto& tables = use_reverse ? pt.reverse_tables : pt.tables;
      const auto sit = sample.by_c.find(c);
      if (sit == sample.by_c.end() || sit->second.queries.empty()) continue;
      const auto tit = tables.find(c);
      if (tit == tables.end())
        throw std::invalid_argument("missing correspondence table for granularity " +
                                    std::to_string(c));

      q_pooled.emplace(std::make_pair(i, c), aggregate(base_maps[i], c));
      k_pooled.emplace(std::make_pair(i, c), aggregate(momentum_maps[i], c));

      std::map<std::pair<int, int>, int> key_row_of;
      for (const auto& [s, t] : sit->second.keys) {
        key_row_of[{s, t}] = static_cast<int>(k_rows.size() - slice.k_begin);
        k_rows.push_back({i, c, s * pcols + t});
      }
      for (const auto& [k, l] : sit->second.queries) {
        const int qrow = static_cast<int>(q_rows.size() - slice.q_begin);
        q_rows.push_back({i, c, k * pcols + l});
        for (const auto& e : tit->second.at(k, l).keys) {
          const auto kit = key_row_of.find({e.s, e.t});
          if (kit == key_row_of.end())
            throw std::logic_error("sampled key support misses a positive key");
          slice.soft.push_back({qrow, kit->second, e.weight});
        }
      }
    }

    slice.q_count = static_cast<Eigen::Index>(q_rows.size()) - slice.q_begin;
    slice.k_count = static_cast<Eigen::Index>(k_rows.size()) - slice.k_begin;
    if (slice.q_count == 0)
      ++result.skipped;
    else
      slices.push_back(std::move(slice));
  }

  if (slices.empty()) return result;

  Matrix q_in(static_cast<Eigen::Index>(q_rows.size()), dim);
  for (std::size_t r = 0; r < q_rows.size(); ++r)
    q_in.row(static_cast<Eigen::Index>(r)) =
        q_pooled.at({q_rows[r].image, q_rows[r].c}).feats.row(q_rows[r].cell);
  Matrix k_in(static_cast<Eigen::Index>(k_rows.size()), dim);
  for (std::size_t r = 0; r < k_rows.size(); ++r)
    k_in.row(static_cast<Eigen::Index>(r)) =
        k_pooled.at({k_rows[r].image, k_rows[r].c}).feats.row(k_rows[r].cell);

  model::MlpHead::Cache proj_cache, pred_cache;
  const Matrix projected = pair.projector.forward(q_in, opts.training, opts.update_stats,
                                                  opts.with_grad ? &proj_cache : nullptr);
  const Matrix predicted = pair.predictor.forward(projected, opts.training, opts.update_stats,
                                                  opts.with_grad ? &pred_cache : nullptr);
  // Momentum branch: projector only, never any gradient (stop-gradient).
  const Matrix keys = pair.momentum_projector.forward(k_in, opts.training, opts.update_stats,
                                                      nullptr);

  Matrix d_pred;
  if (opts.with_grad) d_pred = Matrix::Zero(predicted.rows(), predicted.cols());
  for (const auto& slice : slices) {
    Matrix d_slice;
    const double loss = loss_granularity(
        predicted.middleRows(slice.q_begin, slice.q_count),
        keys.middleRows(slice.k_begin, slice.k_count), slice.soft, static_cast<int>(batch),
        cfg.temperature, opts.with_grad ? &d_slice : nullptr);
    result.per_granularity[slice.c] += loss;
    if (opts.with_grad) d_pred.middleRows(slice.q_begin, slice.q_count) = d_slice;
  }

  if (opts.with_grad) {
    const Matrix d_proj = pair.predictor.backward(pred_cache, d_pred);
    const Matrix d_qin = pair.projector.backward(proj_cache, d_proj);

    std::vector<Matrix> d_tokens(batch,
                                 Matrix::Zero(static_cast<Eigen::Index>(grid) * grid, dim));
    std::map<std::pair<std::size_t, int>, Matrix> d_pooled;
    for (std::size_t r = 0; r < q_rows.size(); ++r) {
      const auto key = std::make_pair(q_rows[r].image, q_rows[r].c);
      auto [it, inserted] = d_pooled.try_emplace(key);
      if (inserted) {
        const int pcols = grid / q_rows[r].c;
        it->second = Matrix::Zero(static_cast<Eigen::Index>(pcols) * pcols, dim);
      }
      it->second.row(q_rows[r].cell) += d_qin.row(static_cast<Eigen::Index>(r));
    }
    for (const auto& [key, dp] : d_pooled)
      d_tokens[key.first] += aggregate_backward(dp, key.second, grid, grid);
    for (std::size_t i = 0; i < batch; ++i)
      if (d_tokens[i].squaredNorm() != 0.0) pair.base_vit.backward(caches[i], d_tokens[i]);
  }

  return result;
}

}  // namespace

LossBreakdown total_loss(model::ModelPair& pair, const std::vector<Image>& views1,
                         const std::vector<Image>& views2,
                         const std::vector<PairTargets>& targets, const LossConfig& cfg,
                         const LossOptions& opts) {
  cfg.validate();
  if (views1.size() != views2.size() || views1.size() != targets.size())
    throw std::invalid_argument("batch size mismatch between views and targets");
  if (views1.empty()) throw std::invalid_argument("empty batch");

  LossBreakdown out;
  const DirectionalResult fwd =
      directional_loss(pair, views1, views2, targets, /*use_reverse=*/false, cfg, opts);
  out.skipped = fwd.skipped;
  for (const auto& [c, l] : fwd.per_granularity) out.per_granularity[c] += l;

  if (cfg.symmetrize) {
    const DirectionalResult rev =
        directional_loss(pair, views2, views1, targets, /*use_reverse=*/true, cfg, opts);
    for (const auto& [c, l] : rev.per_granularity) out.per_granularity[c] += l;
    for (auto& [c, l] : out.per_granularity) l *= 0.5;
  }

  for (const auto& [c, l] : out.per_granularity) out.total += l;

  // With symmetrize the halving must also reach the accumulated gradients.
  if (cfg.symmetrize && opts.with_grad)
    pair.visit_base([](model::Param& p) { p.grad *= 0.5; });

  return out;
}

}  // namespace mgc::contrast
