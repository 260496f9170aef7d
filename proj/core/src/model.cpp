#include "mgc/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mgc::model {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void init_linear(Linear& layer, Rng& rng, double sigma = 0.02) {
  for (Eigen::Index i = 0; i < layer.W.value.rows(); ++i)
    for (Eigen::Index j = 0; j < layer.W.value.cols(); ++j)
      layer.W.value(i, j) = truncated_normal(rng, sigma);
  if (layer.b) layer.b->value.setZero();
}

void init_param(Param& p, Rng& rng, double sigma = 0.02) {
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = truncated_normal(rng, sigma);
}

}  // namespace

void ViTConfig::validate() const {
  if (image_side <= 0 || patch_size <= 0 || image_side % patch_size != 0)
    throw std::invalid_argument("image_side must be a positive multiple of patch_size");
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
    throw std::invalid_argument("embed_dim must be a positive multiple of num_heads");
  if (depth <= 0) throw std::invalid_argument("depth must be positive");
  if (mlp_ratio <= 0.0) throw std::invalid_argument("mlp_ratio must be positive");
}

void HeadConfig::validate() const {
  if (projector.empty() || predictor.empty())
    throw std::invalid_argument("head width lists must be non-empty");
  if (projector.back() != predictor.back())
    throw std::invalid_argument("projector and predictor output widths must match");
  for (int w : projector)
    if (w <= 0) throw std::invalid_argument("head widths must be positive");
  for (int w : predictor)
    if (w <= 0) throw std::invalid_argument("head widths must be positive");
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in, int out, bool with_bias)
    : W(name + ".W", out, in, true) {
  if (with_bias) b.emplace(name + ".b", 1, out, false);
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = x * W.value.transpose();
  if (b) y.rowwise() += b->value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  W.grad.noalias() += dy.transpose() * x;
  if (b) b->grad.row(0) += dy.colwise().sum();
  return dy * W.value;
}

// -------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(const std::string& name, int dim, bool with_shift)
    : gamma(name + ".gamma", 1, dim, false) {
  if (with_shift) beta.emplace(name + ".beta", 1, dim, false);
  gamma.value.setOnes();
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const Eigen::Index n = x.rows(), d = x.cols();
  Cache local;
  Cache& c = cache ? *cache : local;
  c.xhat.resize(n, d);
  c.inv_std.resize(n);
  Matrix out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().sum() / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    c.inv_std(i) = inv;
    c.xhat.row(i) = ((x.row(i).array() - mu) * inv).matrix();
    out.row(i) = c.xhat.row(i).cwiseProduct(gamma.value.row(0));
    if (beta) out.row(i) += beta->value.row(0);
  }
  return out;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  Matrix dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(gamma.value.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) =
        ((dxhat.array() - m1 - cache.xhat.row(i).array() * m2) * cache.inv_std(i)).matrix();
    gamma.grad.row(0) += dy.row(i).cwiseProduct(cache.xhat.row(i));
    if (beta) beta->grad.row(0) += dy.row(i);
  }
  return dx;
}

// ------------------------------------------------------------ BatchNorm1d

BatchNorm1d::BatchNorm1d(const std::string& name, int dim, bool affine_)
    : affine(affine_),
      running_mean(name + ".running_mean", 1, dim),
      running_var(name + ".running_var", 1, dim) {
  if (affine) {
    gamma.emplace(name + ".gamma", 1, dim, false);
    beta.emplace(name + ".beta", 1, dim, false);
    gamma->value.setOnes();
  }
  running_var.value.setOnes();
}

Matrix BatchNorm1d::forward(const Matrix& x, bool training, bool update_stats, Cache* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Eigen::RowVectorXd mean(d), inv(d);
  if (training) {
    if (n < 2)
      throw std::runtime_error(
          "batch normalization requires at least 2 rows in training mode");
    mean = x.colwise().mean();
    const Eigen::RowVectorXd var =
        ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n))
            .matrix();
    inv = (var.array() + eps).rsqrt();
    if (update_stats) {
      const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
      running_mean.value.row(0) =
          (1.0 - stat_momentum) * running_mean.value.row(0) + stat_momentum * mean;
      running_var.value.row(0) =
          (1.0 - stat_momentum) * running_var.value.row(0) + stat_momentum * (var * unbias);
    }
  } else {
    mean = running_mean.value.row(0);
    inv = (running_var.value.row(0).array() + eps).rsqrt();
  }

  Cache local;
  Cache& c = cache ? *cache : local;
  c.inv_std = inv;
  c.xhat = ((x.rowwise() - mean).array().rowwise() * inv.array()).matrix();

  Matrix out = c.xhat;
  if (affine) {
    out = (out.array().rowwise() * gamma->value.row(0).array()).matrix();
    out.rowwise() += beta->value.row(0);
  }
  return out;
}

Matrix BatchNorm1d::backward(const Cache& cache, const Matrix& dy) {
  const Eigen::Index n = dy.rows();
  Matrix dxhat = dy;
  if (affine) {
    gamma->grad.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
    beta->grad.row(0) += dy.colwise().sum();
    dxhat = (dy.array().rowwise() * gamma->value.row(0).array()).matrix();
  }
  const Eigen::RowVectorXd m1 = dxhat.colwise().mean();
  const Eigen::RowVectorXd m2 = dxhat.cwiseProduct(cache.xhat).colwise().mean();
  Matrix dx = dxhat;
  dx.rowwise() -= m1;
  dx -= (cache.xhat.array().rowwise() * m2.array()).matrix();
  dx = (dx.array().rowwise() * cache.inv_std.array()).matrix();
  return dx;
}

// ------------------------------------------------------- TransformerBlock

TransformerBlock::TransformerBlock(const std::string& name, int dim_, int heads_,
                                   double mlp_ratio)
    : ln1(name + ".ln1", dim_),
      ln2(name + ".ln2", dim_),
      qkv(name + ".qkv", dim_, 3 * dim_),
      proj(name + ".proj", dim_, dim_),
      fc1(name + ".mlp.fc1", dim_, static_cast<int>(std::lround(dim_ * mlp_ratio))),
      fc2(name + ".mlp.fc2", static_cast<int>(std::lround(dim_ * mlp_ratio)), dim_),
      heads(heads_),
      dim(dim_) {}

Matrix TransformerBlock::forward(const Matrix& x, Cache* cache, AttnProbe* probe) {
  const Eigen::Index n = x.rows();
  const int dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Cache local;
  Cache& c = cache ? *cache : local;
  c.x = x;
  c.h = ln1.forward(x, &c.ln1c);
  c.qkv = qkv.forward(c.h);
  c.probs.assign(static_cast<std::size_t>(heads), Matrix());

  c.attn_out.resize(n, dim);
  for (int a = 0; a < heads; ++a) {
    const auto Q = c.qkv.block(0, a * dh, n, dh);
    const auto K = c.qkv.block(0, dim + a * dh, n, dh);
    const auto V = c.qkv.block(0, 2 * dim + a * dh, n, dh);
    Matrix S = Q * K.transpose() * scale;
    // row-stable softmax
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = S.row(i).maxCoeff();
      S.row(i) = (S.row(i).array() - mx).exp();
      S.row(i) /= S.row(i).sum();
    }
    c.probs[static_cast<std::size_t>(a)] = S;
    c.attn_out.block(0, a * dh, n, dh) = S * V;
  }
  if (probe) {
    probe->q = c.qkv.block(0, 0, n, dim);
    probe->k = c.qkv.block(0, dim, n, dim);
    probe->scale = scale;
  }

  c.out1 = x + proj.forward(c.attn_out);
  c.h2 = ln2.forward(c.out1, &c.ln2c);
  c.mlp_pre = fc1.forward(c.h2);
  c.mlp_act = c.mlp_pre.unaryExpr([](double v) { return gelu(v); });
  return c.out1 + fc2.forward(c.mlp_act);
}

Matrix TransformerBlock::backward(const Cache& c, const Matrix& dy) {
  const Eigen::Index n = dy.rows();
  const int dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dact = fc2.backward(c.mlp_act, dy);
  Matrix dpre = dact.cwiseProduct(c.mlp_pre.unaryExpr([](double v) { return gelu_grad(v); }));
  Matrix dh2 = fc1.backward(c.h2, dpre);
  Matrix dout1 = dy + ln2.backward(c.ln2c, dh2);

  Matrix dattn = proj.backward(c.attn_out, dout1);
  Matrix dqkv = Matrix::Zero(n, 3 * dim);
  for (int a = 0; a < heads; ++a) {
    const auto Q = c.qkv.block(0, a * dh, n, dh);
    const auto K = c.qkv.block(0, dim + a * dh, n, dh);
    const auto V = c.qkv.block(0, 2 * dim + a * dh, n, dh);
    const Matrix& P = c.probs[static_cast<std::size_t>(a)];
    const auto dO = dattn.block(0, a * dh, n, dh);

    Matrix dP = dO * V.transpose();
    const Eigen::VectorXd rowdot = dP.cwiseProduct(P).rowwise().sum();
    Matrix dS = P.cwiseProduct(dP.colwise() - rowdot);
    dqkv.block(0, a * dh, n, dh).noalias() += dS * K * scale;
    dqkv.block(0, dim + a * dh, n, dh).noalias() += dS.transpose() * Q * scale;
    dqkv.block(0, 2 * dim + a * dh, n, dh).noalias() += P.transpose() * dO;
  }
  Matrix dhin = qkv.backward(c.h, dqkv);
  return dout1 + ln1.backward(c.ln1c, dhin);
}

void TransformerBlock::visit(const ParamVisitor& fn) {
  ln1.visit(fn);
  qkv.visit(fn);
  proj.visit(fn);
  ln2.visit(fn);
  fc1.visit(fn);
  fc2.visit(fn);
}

// ---------------------------------------------------- VisionTransformer

VisionTransformer::VisionTransformer(const ViTConfig& cfg_, const std::string& prefix)
    : cfg(cfg_),
      patch_embed(prefix + ".patch_embed", cfg_.patch_dim(), cfg_.embed_dim),
      pos_embed(prefix + ".pos_embed", cfg_.num_patches() + (cfg_.use_class_token ? 1 : 0),
                cfg_.embed_dim, false),
      norm(prefix + ".norm", cfg_.embed_dim, /*with_shift=*/false) {
  cfg.validate();
  if (cfg.use_class_token) cls_token.emplace(prefix + ".cls_token", 1, cfg.embed_dim, false);
  blocks.reserve(static_cast<std::size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i)
    blocks.emplace_back(prefix + ".blocks." + std::to_string(i), cfg.embed_dim, cfg.num_heads,
                        cfg.mlp_ratio);
}

FeatureMap VisionTransformer::encode(const Image& view, Cache* cache, AttnProbe* probe) {
  if (view.height != cfg.image_side || view.width != cfg.image_side)
    throw std::invalid_argument("view size does not match ViTConfig.image_side");
  const int g = cfg.grid_side();
  const int p = cfg.patch_size;
  const int np = cfg.num_patches();

  Cache local;
  Cache& c = cache ? *cache : local;
  c.patches.resize(np, cfg.patch_dim());
  for (int k = 0; k < g; ++k)
    for (int l = 0; l < g; ++l) {
      const int row = k * g + l;
      int col = 0;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int ch = 0; ch < 3; ++ch)
            c.patches(row, col++) = view.at(k * p + py, l * p + px, ch);
    }

  Matrix x = patch_embed.forward(c.patches);
  if (cls_token) {
    Matrix with_cls(np + 1, cfg.embed_dim);
    with_cls.row(0) = cls_token->value.row(0);
    with_cls.bottomRows(np) = x;
    x = std::move(with_cls);
  }
  x += pos_embed.value;
  c.embedded = x;

  c.blocks.resize(static_cast<std::size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i) {
    AttnProbe* block_probe = (probe && i == cfg.depth - 1) ? probe : nullptr;
    x = blocks[static_cast<std::size_t>(i)].forward(x, &c.blocks[static_cast<std::size_t>(i)],
                                                    block_probe);
  }
  x = norm.forward(x, &c.normc);

  FeatureMap fm;
  fm.rows = fm.cols = g;
  fm.dim = cfg.embed_dim;
  if (cls_token)
    fm.tokens = x.bottomRows(np);
  else
    fm.tokens = std::move(x);
  return fm;
}

void VisionTransformer::backward(const Cache& c, const Matrix& d_tokens) {
  const int np = cfg.num_patches();
  Matrix d = d_tokens;
  if (cls_token) {
    Matrix full = Matrix::Zero(np + 1, cfg.embed_dim);
    full.bottomRows(np) = d_tokens;
    d = std::move(full);
  }
  d = norm.backward(c.normc, d);
  for (int i = cfg.depth - 1; i >= 0; --i)
    d = blocks[static_cast<std::size_t>(i)].backward(c.blocks[static_cast<std::size_t>(i)], d);
  pos_embed.grad += d;
  if (cls_token) {
    cls_token->grad.row(0) += d.row(0);
    patch_embed.backward(c.patches, d.bottomRows(np));
  } else {
    patch_embed.backward(c.patches, d);
  }
}

void VisionTransformer::init_params(Rng& rng) {
  init_linear(patch_embed, rng);
  init_param(pos_embed, rng);
  if (cls_token) init_param(*cls_token, rng);
  for (auto& block : blocks) {
    init_linear(block.qkv, rng);
    init_linear(block.proj, rng);
    init_linear(block.fc1, rng);
    init_linear(block.fc2, rng);
    block.ln1.gamma.value.setOnes();
    block.ln1.beta->value.setZero();
    block.ln2.gamma.value.setOnes();
    block.ln2.beta->value.setZero();
  }
  norm.gamma.value.setOnes();
}

void VisionTransformer::visit(const ParamVisitor& fn) {
  patch_embed.visit(fn);
  fn(pos_embed);
  if (cls_token) fn(*cls_token);
  for (auto& block : blocks) block.visit(fn);
  norm.visit(fn);
}

std::size_t VisionTransformer::parameter_count() {
  std::size_t n = 0;
  visit([&n](Param& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

// ----------------------------------------------------------------- MlpHead

MlpHead::MlpHead(const std::string& prefix, int in_dim, const std::vector<int>& widths_)
    : widths(widths_) {
  if (widths.empty()) throw std::invalid_argument("head needs at least one layer");
  int prev = in_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    linears.emplace_back(prefix + ".linear" + std::to_string(i), prev, widths[i],
                         /*with_bias=*/false);
    norms.emplace_back(prefix + ".bn" + std::to_string(i), widths[i],
                       /*affine=*/i + 1 < widths.size());
    prev = widths[i];
  }
}

Matrix MlpHead::forward(const Matrix& x, bool training, bool update_stats, Cache* cache) {
  Cache local;
  Cache& c = cache ? *cache : local;
  c.inputs.resize(linears.size());
  c.bn_out.resize(linears.size());
  c.bn.resize(linears.size());

  Matrix cur = x;
  for (std::size_t i = 0; i < linears.size(); ++i) {
    c.inputs[i] = cur;
    Matrix z = linears[i].forward(cur);
    z = norms[i].forward(z, training, update_stats, &c.bn[i]);
    if (i + 1 < linears.size()) {
      c.bn_out[i] = z;
      cur = z.cwiseMax(0.0);
    } else {
      cur = std::move(z);
    }
  }
  return cur;
}

Matrix MlpHead::backward(const Cache& c, const Matrix& dy) {
  Matrix d = dy;
  for (std::size_t i = linears.size(); i-- > 0;) {
    if (i + 1 < linears.size())
      d = d.cwiseProduct(
          c.bn_out[i].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    d = norms[i].backward(c.bn[i], d);
    d = linears[i].backward(c.inputs[i], d);
  }
  return d;
}

void MlpHead::init_params(Rng& rng) {
  for (std::size_t i = 0; i < linears.size(); ++i) {
    init_linear(linears[i], rng);
    if (norms[i].affine) {
      norms[i].gamma->value.setOnes();
      norms[i].beta->value.setZero();
    }
    norms[i].running_mean.value.setZero();
    norms[i].running_var.value.setOnes();
  }
}

void MlpHead::visit(const ParamVisitor& fn) {
  for (std::size_t i = 0; i < linears.size(); ++i) {
    linears[i].visit(fn);
    norms[i].visit(fn);
  }
}

void MlpHead::visit_buffers(const BufferVisitor& fn) {
  for (auto& bn : norms) bn.visit_buffers(fn);
}

// --------------------------------------------------------------- ModelPair

ModelPair::ModelPair(const ViTConfig& vcfg, const HeadConfig& hcfg)
    : vit_cfg(vcfg),
      head_cfg(hcfg),
      base_vit(vcfg, "vit"),
      projector("projector", vcfg.embed_dim, hcfg.projector),
      predictor("predictor", hcfg.projector.back(), hcfg.predictor),
      momentum_vit(vcfg, "vit"),
      momentum_projector("projector", vcfg.embed_dim, hcfg.projector) {
  hcfg.validate();
}

void ModelPair::init(Rng& rng) {
  base_vit.init_params(rng);
  projector.init_params(rng);
  predictor.init_params(rng);
  init_momentum_from_base();
}

namespace {

void collect_ema_tensors(VisionTransformer& vit, MlpHead& head, std::vector<Matrix*>& out) {
  vit.visit([&out](Param& p) { out.push_back(&p.value); });
  head.visit([&out](Param& p) { out.push_back(&p.value); });
  head.visit_buffers([&out](Buffer& b) { out.push_back(&b.value); });
}

}  // namespace

void ModelPair::init_momentum_from_base() {
  std::vector<Matrix*> src, dst;
  collect_ema_tensors(base_vit, projector, src);
  collect_ema_tensors(momentum_vit, momentum_projector, dst);
  if (src.size() != dst.size()) throw std::logic_error("ema tensor lists out of sync");
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = *src[i];
}

void ModelPair::ema_update(double m) {
  if (m < 0.0 || m > 1.0) throw std::invalid_argument("ema momentum must be in [0,1]");
  std::vector<Matrix*> src, dst;
  collect_ema_tensors(base_vit, projector, src);
  collect_ema_tensors(momentum_vit, momentum_projector, dst);
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (dst[i]->rows() != src[i]->rows() || dst[i]->cols() != src[i]->cols())
      throw std::logic_error("ema tensor shape mismatch");
    *dst[i] = m * *dst[i] + (1.0 - m) * *src[i];
  }
}

void ModelPair::visit_base(const ParamVisitor& fn) {
  base_vit.visit(fn);
  projector.visit(fn);
  predictor.visit(fn);
}

void ModelPair::visit_momentum(const ParamVisitor& fn) {
  momentum_vit.visit(fn);
  momentum_projector.visit(fn);
}

void ModelPair::visit_state(const std::function<void(const std::string&, Matrix&)>& fn) {
  visit_base([&fn](Param& p) { fn("base/" + p.name, p.value); });
  projector.visit_buffers([&fn](Buffer& b) { fn("base/" + b.name, b.value); });
  predictor.visit_buffers([&fn](Buffer& b) { fn("base/" + b.name, b.value); });
  visit_momentum([&fn](Param& p) { fn("momentum/" + p.name, p.value); });
  momentum_projector.visit_buffers([&fn](Buffer& b) { fn("momentum/" + b.name, b.value); });
}

void ModelPair::zero_grad() {
  visit_base([](Param& p) { p.grad.setZero(); });
  visit_momentum([](Param& p) { p.grad.setZero(); });
}

Image normalize(const Image& img, const std::array<double, 3>& mean,
                const std::array<double, 3>& stddev) {
  Image out = img;
  for (int c = 0; c < 3; ++c)
    if (stddev[static_cast<std::size_t>(c)] == 0.0)
      throw std::invalid_argument("normalization std must be nonzero");
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = (out.at(y, x, c) - mean[static_cast<std::size_t>(c)]) /
                          stddev[static_cast<std::size_t>(c)];
  return out;
}

}  // namespace mgc::model
