#include "mgc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "mgc/checkpoint.hpp"
#include "mgc/config.hpp"
#include "mgc/geometry.hpp"

namespace mgc::trainer {

namespace fs = std::filesystem;

TrainConfig TrainConfig::desk() {
  TrainConfig cfg;
  cfg.vit = model::ViTConfig::desk();
  cfg.heads = model::HeadConfig::desk();
  cfg.batch_size = 8;
  cfg.epochs = 13;
  cfg.warmup_epochs = 1;
  cfg.max_steps = 100;
  cfg.checkpoint_every = 50;
  cfg.log_every = 1;
  cfg.seed = 42;
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (epochs > 0 && warmup_epochs >= epochs)
    throw std::invalid_argument("warmup_epochs must be smaller than epochs");
  if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
  if (batch_size < 2)
    throw std::invalid_argument("batch_size must be >= 2 (head batch statistics)");
  if (!(lr_max > 0.0) || !(lr_min > 0.0) || lr_min > lr_max)
    throw std::invalid_argument("learning rates must satisfy 0 < lr_min <= lr_max");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (ema_momentum < 0.0 || ema_momentum > 1.0)
    throw std::invalid_argument("ema_momentum must be in [0,1]");
  if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be >= 0");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
  loss.validate();
  vit.validate();
  heads.validate();
  augment.validate();
  for (double s : norm_std)
    if (s <= 0.0) throw std::invalid_argument("norm_std entries must be positive");
  const int grid = vit.grid_side();
  for (const auto& [c, n] : loss.sample_counts) {
    (void)n;
    if (grid % c != 0)
      throw std::invalid_argument("granularity " + std::to_string(c) +
                                  " does not divide the " + std::to_string(grid) + "-cell grid");
  }
}

double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
             double lr_max, double lr_min) {
  if (total_steps <= 0) throw std::invalid_argument("total_steps must be positive");
  if (warmup_steps < 0 || warmup_steps > total_steps)
    throw std::invalid_argument("warmup_steps out of range");
  if (step < 0) throw std::invalid_argument("step must be >= 0");
  if (step >= total_steps) return lr_min;
  if (step < warmup_steps) return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step == warmup_steps) return lr_max;
  const double p =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * p));
}

AdamW::AdamW(double beta1_, double beta2_, double eps_) : beta1(beta1_), beta2(beta2_), eps(eps_) {}

void AdamW::attach(std::vector<model::Param*> params_) {
  params = std::move(params_);
  m.clear();
  v.clear();
  for (const auto* p : params) {
    m.push_back(model::Matrix::Zero(p->value.rows(), p->value.cols()));
    v.push_back(model::Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(double lr, double weight_decay) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    model::Param& p = *params[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * p.grad;
    v[i] = beta2 * v[i] + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
    const model::Matrix mhat = m[i] / bc1;
    const model::Matrix vhat = v[i] / bc2;
    if (p.decay && weight_decay > 0.0) p.value -= lr * weight_decay * p.value;
    p.value -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
  }
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.augment.out_side = cfg_.vit.image_side;  // views feed the backbone directly
  cfg_.validate();
  pair_ = std::make_unique<model::ModelPair>(cfg_.vit, cfg_.heads);
  Rng rng = make_rng(cfg_.seed, rngtag::init);
  pair_->init(rng);
  std::vector<model::Param*> params;
  pair_->visit_base([&params](model::Param& p) { params.push_back(&p); });
  opt_.attach(std::move(params));
  schedule_total_ = cfg_.max_steps > 0 ? cfg_.max_steps : std::numeric_limits<std::int64_t>::max() / 2;
  schedule_warmup_ = 0;
}

void Trainer::set_schedule(std::int64_t total, std::int64_t warmup) {
  if (total <= 0 || warmup < 0 || warmup > total)
    throw std::invalid_argument("invalid schedule");
  schedule_total_ = total;
  schedule_warmup_ = warmup;
}

std::int64_t Trainer::steps_per_epoch(std::size_t dataset_size) const {
  std::int64_t n = static_cast<std::int64_t>(dataset_size) / cfg_.batch_size;
  const std::int64_t rem = static_cast<std::int64_t>(dataset_size) % cfg_.batch_size;
  if (rem >= 2) ++n;
  return n;
}

std::int64_t Trainer::total_steps(std::size_t dataset_size) const {
  std::int64_t total = static_cast<std::int64_t>(cfg_.epochs) * steps_per_epoch(dataset_size);
  if (cfg_.max_steps > 0) total = std::min(total, cfg_.max_steps);
  return total;
}

StepMetrics Trainer::train_step(const std::vector<Image>& batch,
                                const std::vector<std::size_t>& batch_ids) {
  const auto t0 = std::chrono::steady_clock::now();
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const geometry::PatchGrid grid{cfg_.vit.grid_side(), cfg_.vit.grid_side()};

  std::vector<Image> views1, views2;
  std::vector<contrast::PairTargets> targets;
  views1.reserve(batch.size());
  views2.reserve(batch.size());
  targets.reserve(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng arng = make_rng(cfg_.seed, rngtag::augment, static_cast<std::uint64_t>(step_), i);
    const augment::ViewPair vp = augment::sample_view_pair(batch[i], cfg_.augment, arng);

    contrast::PairTargets pt;
    for (const auto& [c, n] : cfg_.loss.sample_counts) {
      (void)n;
      pt.tables[c] = geometry::correspondence_weights(vp.crop1, vp.crop2, grid, c);
    }
    Rng srng = make_rng(cfg_.seed, rngtag::sample, static_cast<std::uint64_t>(step_), i);
    pt.sample = contrast::sample_sparse(pt.tables, cfg_.loss.sample_counts, srng);
    if (cfg_.loss.symmetrize) {
      for (const auto& [c, n] : cfg_.loss.sample_counts) {
        (void)n;
        pt.reverse_tables[c] = geometry::correspondence_weights(vp.crop2, vp.crop1, grid, c);
      }
      pt.reverse_sample = contrast::sample_sparse(pt.reverse_tables, cfg_.loss.sample_counts, srng);
    }
    targets.push_back(std::move(pt));
    views1.push_back(model::normalize(vp.image1, cfg_.norm_mean, cfg_.norm_std));
    views2.push_back(model::normalize(vp.image2, cfg_.norm_mean, cfg_.norm_std));
  }

  pair_->zero_grad();
  const contrast::LossBreakdown breakdown =
      contrast::total_loss(*pair_, views1, views2, targets, cfg_.loss, {});

  if (!std::isfinite(breakdown.total)) {
    std::ostringstream msg;
    msg << "non-finite loss " << breakdown.total << " at step " << (step_ + 1) << " (seed "
        << cfg_.seed << ", batch ids [";
    for (std::size_t i = 0; i < batch_ids.size(); ++i) msg << (i ? "," : "") << batch_ids[i];
    msg << "])";
    throw NonFiniteLossError(msg.str(), step_ + 1, cfg_.seed, batch_ids);
  }

  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    pair_->visit_base([&sq](model::Param& p) { sq += p.grad.squaredNorm(); });
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) {
      const double scale = cfg_.grad_clip / norm;
      pair_->visit_base([scale](model::Param& p) { p.grad *= scale; });
    }
  }

  StepMetrics metrics;
  metrics.step = step_ + 1;
  metrics.lr = lr_at(metrics.step, schedule_total_, schedule_warmup_, cfg_.lr_max, cfg_.lr_min);
  opt_.step(metrics.lr, cfg_.weight_decay);
  pair_->ema_update(cfg_.ema_momentum);
  ++step_;

  metrics.loss = breakdown.total;
  metrics.per_granularity = breakdown.per_granularity;
  metrics.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return metrics;
}

std::vector<StepMetrics> Trainer::fit(const data::ImageSource& source,
                                      const std::string& out_dir) {
  if (source.size() == 0) throw std::invalid_argument("dataset is empty");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path dir(out_dir);
  std::ofstream metrics_out(dir / "metrics.jsonl", step_ == 0 ? std::ios::trunc : std::ios::app);
  if (!metrics_out) throw std::runtime_error(out_dir + ": cannot write metrics.jsonl");

  const std::int64_t spe = steps_per_epoch(source.size());
  if (spe == 0) throw std::invalid_argument("dataset smaller than one batch");
  const std::int64_t total = total_steps(source.size());
  set_schedule(std::max<std::int64_t>(total, 1), cfg_.warmup_epochs * spe);

  if (step_ == 0) save_checkpoint((dir / "ckpt_0.mgc").string());

  std::vector<StepMetrics> logged;
  const auto log_line = [&](const StepMetrics& m, int epoch) {
    nlohmann::json j{{"step", m.step}, {"epoch", epoch},      {"lr", m.lr},
                     {"loss", m.loss}, {"time_s", m.seconds}};
    for (const auto& [c, l] : m.per_granularity) j["loss_c" + std::to_string(c)] = l;
    metrics_out << j.dump() << "\n";
    metrics_out.flush();
  };

  bool done = step_ >= total;
  for (int epoch = static_cast<int>(step_ / spe); !done && epoch < cfg_.epochs; ++epoch) {
    std::vector<std::size_t> order(source.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg_.seed, rngtag::shuffle, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(uniform_int(shuffle_rng, 0,
                                                           static_cast<std::int64_t>(i) - 1))]);

    for (std::int64_t chunk = step_ % spe; chunk < spe; ++chunk) {
      if (step_ >= total) {
        done = true;
        break;
      }
      const std::size_t begin = static_cast<std::size_t>(chunk) * cfg_.batch_size;
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(cfg_.batch_size), source.size());
      std::vector<Image> images;
      std::vector<std::size_t> ids;
      for (std::size_t i = begin; i < end; ++i) {
        ids.push_back(order[i]);
        images.push_back(source.get(order[i]));
      }
      const StepMetrics m = train_step(images, ids);
      if (m.step % cfg_.log_every == 0 || m.step == total) {
        log_line(m, epoch);
        logged.push_back(m);
      }
      if (cfg_.checkpoint_every > 0 && m.step % cfg_.checkpoint_every == 0)
        save_checkpoint((dir / ("ckpt_" + std::to_string(m.step) + ".mgc")).string());
    }
  }

  save_checkpoint((dir / "ckpt_final.mgc").string());
  return logged;
}

void Trainer::save_checkpoint(const std::string& path) const {
  std::vector<std::pair<std::string, const model::Matrix*>> tensors;
  auto* self = const_cast<Trainer*>(this);
  self->pair_->visit_state([&tensors](const std::string& name, model::Matrix& m) {
    tensors.emplace_back(name, &m);
  });
  for (std::size_t i = 0; i < opt_.params.size(); ++i) {
    tensors.emplace_back("adam_m/" + opt_.params[i]->name, &opt_.m[i]);
    tensors.emplace_back("adam_v/" + opt_.params[i]->name, &opt_.v[i]);
  }

  nlohmann::json meta;
  meta["step"] = step_;
  meta["adam_t"] = opt_.t;
  meta["schedule"] = {{"total", schedule_total_}, {"warmup", schedule_warmup_}};
  // All randomness is derived from (seed, purpose, step), so the rng state
  // is exactly this pair.
  meta["rng"] = {{"seed", cfg_.seed}, {"step", step_}};
  meta["config"] = config::to_kv(cfg_);
  checkpoint::save(path, tensors, meta);
}

std::unique_ptr<Trainer> Trainer::resume(const std::string& checkpoint_path) {
  const checkpoint::Loaded loaded = checkpoint::load(checkpoint_path);
  std::map<std::string, std::string> kv =
      loaded.meta.at("config").get<std::map<std::string, std::string>>();
  auto trainer = std::make_unique<Trainer>(config::make_train_config(kv));

  trainer->pair_->visit_state([&loaded, &checkpoint_path](const std::string& name,
                                                          model::Matrix& m) {
    const auto it = loaded.tensors.find(name);
    if (it == loaded.tensors.end())
      throw std::runtime_error(checkpoint_path + ": missing tensor " + name);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
      throw std::runtime_error(checkpoint_path + ": shape mismatch for " + name);
    m = it->second;
  });
  for (std::size_t i = 0; i < trainer->opt_.params.size(); ++i) {
    const std::string& pname = trainer->opt_.params[i]->name;
    trainer->opt_.m[i] = loaded.tensors.at("adam_m/" + pname);
    trainer->opt_.v[i] = loaded.tensors.at("adam_v/" + pname);
  }
  trainer->opt_.t = loaded.meta.at("adam_t").get<std::int64_t>();
  trainer->step_ = loaded.meta.at("step").get<std::int64_t>();
  trainer->schedule_total_ = loaded.meta.at("schedule").at("total").get<std::int64_t>();
  trainer->schedule_warmup_ = loaded.meta.at("schedule").at("warmup").get<std::int64_t>();
  return trainer;
}

}  // namespace mgc::trainer
