#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgc/image.hpp"
#include "mgc/rng.hpp"

namespace mgc::model {

using Matrix = Eigen::MatrixXd;

struct ViTConfig {
  int image_side = 224;
  int patch_size = 16;
  int embed_dim = 384;
  int depth = 12;
  int num_heads = 6;
  double mlp_ratio = 4.0;
  bool use_class_token = false;

  static ViTConfig vit_s16() { return {}; }
  /// Small preset sized so the full suite runs on a laptop CPU in minutes.
  static ViTConfig desk() {
    ViTConfig c;
    c.embed_dim = 64;
    c.depth = 4;
    c.num_heads = 4;
    return c;
  }

  int grid_side() const { return image_side / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;
};

struct HeadConfig {
  std::vector<int> projector{2048, 2048, 128};
  std::vector<int> predictor{2048, 128};

  static HeadConfig desk() { return {{128, 128, 64}, {128, 64}}; }
  void validate() const;
};

/// One trainable tensor: value plus accumulated gradient.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;  // false for 1-D params and positional embeddings

  Param(std::string n, int rows, int cols, bool decay_)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)),
        decay(decay_) {}
};

/// Non-trainable state (batch-norm running statistics).
struct Buffer {
  std::string name;
  Matrix value;
  Buffer(std::string n, int rows, int cols) : name(std::move(n)), value(Matrix::Zero(rows, cols)) {}
};

using ParamVisitor = std::function<void(Param&)>;
using BufferVisitor = std::function<void(Buffer&)>;

class Linear {
 public:
  Linear(const std::string& name, int in, int out, bool with_bias = true);
  Matrix forward(const Matrix& x) const;                  // x: n x in -> n x out
  Matrix backward(const Matrix& x, const Matrix& dy);     // accumulates grads, returns dx
  void visit(const ParamVisitor& fn) {
    fn(W);
    if (b) fn(*b);
  }
  Param W;                 // out x in
  std::optional<Param> b;  // 1 x out; heads omit it (no-op before batch norm)
};

class LayerNorm {
 public:
  /// The final backbone norm drops the learnable shift: behind the heads'
  /// batch normalization a uniform feature shift cancels exactly, so the
  /// shift would be a frozen zero-gradient parameter.
  explicit LayerNorm(const std::string& name, int dim, bool with_shift = true);
  struct Cache {
    Matrix xhat;
    Eigen::VectorXd inv_std;
  };
  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void visit(const ParamVisitor& fn) {
    fn(gamma);
    if (beta) fn(*beta);
  }
  Param gamma;  // 1 x dim
  std::optional<Param> beta;
  double eps = 1e-6;
};

/// Batch normalization over the row (sample) axis of an n x d matrix.
class BatchNorm1d {
 public:
  BatchNorm1d(const std::string& name, int dim, bool affine);
  struct Cache {
    Matrix xhat;
    Eigen::RowVectorXd inv_std;
  };
  /// Training mode uses batch statistics and requires n >= 2.
  Matrix forward(const Matrix& x, bool training, bool update_stats, Cache* cache);
  Matrix backward(const Cache& cache, const Matrix& dy);
  void visit(const ParamVisitor& fn) {
    if (affine) {
      fn(*gamma);
      fn(*beta);
    }
  }
  void visit_buffers(const BufferVisitor& fn) {
    fn(running_mean);
    fn(running_var);
  }
  bool affine;
  std::optional<Param> gamma, beta;
  Buffer running_mean, running_var;
  double eps = 1e-5;
  double stat_momentum = 0.1;
};

/// Query/key activations of the final block, for attention-based matching.
struct AttnProbe {
  Matrix q, k;  // n x dim (heads concatenated)
  double scale = 1.0;
};

class TransformerBlock {
 public:
  TransformerBlock(const std::string& name, int dim, int heads, double mlp_ratio);
  struct Cache {
    LayerNorm::Cache ln1c, ln2c;
    Matrix x, h, qkv, attn_out, out1, h2, mlp_pre, mlp_act;
    std::vector<Matrix> probs;  // per-head attention rows
  };
  Matrix forward(const Matrix& x, Cache* cache, AttnProbe* probe = nullptr);
  Matrix backward(const Cache& cache, const Matrix& dy);
  void visit(const ParamVisitor& fn);

  LayerNorm ln1, ln2;
  Linear qkv, proj, fc1, fc2;
  int heads;
  int dim;
};

/// U x V grid of patch representations.
struct FeatureMap {
  int rows = 0, cols = 0, dim = 0;
  Matrix tokens;  // (rows*cols) x dim, cell (k,l) at row k*cols + l
  int view = 0;
};

class VisionTransformer {
 public:
  explicit VisionTransformer(const ViTConfig& cfg, const std::string& prefix = "vit");
  struct Cache {
    Matrix patches;  // n x patch_dim
    Matrix embedded;
    std::vector<TransformerBlock::Cache> blocks;
    LayerNorm::Cache normc;
  };
  /// Patch tokens after the final layer norm; the class token (if enabled)
  /// is dropped from the returned grid.
  FeatureMap encode(const Image& normalized_view, Cache* cache = nullptr,
                    AttnProbe* probe = nullptr);
  /// Backprop d(loss)/d(tokens) through the backbone; gradients accumulate
  /// into the params.
  void backward(const Cache& cache, const Matrix& d_tokens);

  void init_params(Rng& rng);
  void visit(const ParamVisitor& fn);
  std::size_t parameter_count();

  ViTConfig cfg;
  Linear patch_embed;
  Param pos_embed;
  std::optional<Param> cls_token;
  std::vector<TransformerBlock> blocks;
  LayerNorm norm;
};

/// Projection / prediction MLP: Linear+BN+ReLU blocks with a final
/// Linear+BN whose normalization has no learnable affine.
class MlpHead {
 public:
  MlpHead(const std::string& prefix, int in_dim, const std::vector<int>& widths);
  struct Cache {
    std::vector<Matrix> inputs;    // input to each linear
    std::vector<Matrix> bn_out;    // post-BN activations (pre-ReLU)
    std::vector<BatchNorm1d::Cache> bn;
  };
  Matrix forward(const Matrix& x, bool training, bool update_stats, Cache* cache);
  Matrix backward(const Cache& cache, const Matrix& dy);
  void init_params(Rng& rng);
  void visit(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
  int out_dim() const { return widths.empty() ? 0 : widths.back(); }

  std::vector<int> widths;
  std::vector<Linear> linears;
  std::vector<BatchNorm1d> norms;
};

/// Base encoder (backbone + projector + predictor) plus its momentum copy
/// (backbone + projector). Momentum parameters never receive gradients and
/// follow the base by exponential moving average.
struct ModelPair {
  ViTConfig vit_cfg;
  HeadConfig head_cfg;
  VisionTransformer base_vit;
  MlpHead projector;
  MlpHead predictor;
  VisionTransformer momentum_vit;
  MlpHead momentum_projector;

  ModelPair(const ViTConfig& vcfg, const HeadConfig& hcfg);

  void init(Rng& rng);                 // init base, then copy into momentum
  void init_momentum_from_base();      // exact copy of backbone + projector
  void ema_update(double m);           // xi <- m*xi + (1-m)*theta

  /// Trainable parameters (base branch only), in a fixed order.
  void visit_base(const ParamVisitor& fn);
  /// Momentum parameters, same order as the matching base subset.
  void visit_momentum(const ParamVisitor& fn);
  /// Every tensor that must be checkpointed, with a stable prefix.
  void visit_state(const std::function<void(const std::string&, Matrix&)>& fn);

  void zero_grad();
};

/// Per-channel (v - mean) / std normalization applied before encoding.
Image normalize(const Image& img, const std::array<double, 3>& mean,
                const std::array<double, 3>& stddev);

}  // namespace mgc::model
