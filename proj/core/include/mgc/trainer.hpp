#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgc/augment.hpp"
#include "mgc/contrast.hpp"
#include "mgc/data.hpp"
#include "mgc/model.hpp"

namespace mgc::trainer {

struct TrainConfig {
  int epochs = 800;
  int warmup_epochs = 10;
  int batch_size = 256;
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  double weight_decay = 0.05;
  double ema_momentum = 0.996;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  std::uint64_t seed = 0;
  std::int64_t max_steps = 0;  // 0 = all epochs
  int checkpoint_every = 0;    // steps, 0 = final checkpoint only
  int log_every = 1;

  contrast::LossConfig loss;
  model::ViTConfig vit;
  model::HeadConfig heads;
  augment::AugmentParams augment;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.25, 0.25, 0.25};

  std::string data = "synthetic";  // "synthetic" or a folder of .ppm files
  std::size_t synthetic_count = 64;

  static TrainConfig paper_defaults() { return {}; }
  /// Laptop-scale configuration: desk backbone and heads, small batch,
  /// enough steps for the training smoke check.
  static TrainConfig desk();
  void validate() const;
};

/// Linear warmup from 0 to lr_max over warmup_steps, then cosine decay to
/// lr_min at total_steps. Steps past the schedule clamp to lr_min.
double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
             double lr_max, double lr_min);

/// Decoupled-weight-decay Adam. Decay skips params flagged decay=false
/// (biases, norm scales, positional embeddings).
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void attach(std::vector<model::Param*> params);
  void step(double lr, double weight_decay);

  double beta1, beta2, eps;
  std::int64_t t = 0;
  std::vector<model::Param*> params;
  std::vector<model::Matrix> m, v;
};

struct StepMetrics {
  std::int64_t step = 0;  // 1-based
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::map<int, double> per_granularity;
  double seconds = 0.0;
};

/// Raised when a training step produces a non-finite loss; carries the state
/// needed to reproduce the step.
struct NonFiniteLossError : std::runtime_error {
  NonFiniteLossError(const std::string& what, std::int64_t step_, std::uint64_t seed_,
                     std::vector<std::size_t> batch_ids_)
      : std::runtime_error(what), step(step_), seed(seed_), batch_ids(std::move(batch_ids_)) {}
  std::int64_t step;
  std::uint64_t seed;
  std::vector<std::size_t> batch_ids;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  /// One optimization step on a batch of raw [0,1] source images:
  /// augment -> encode both branches -> correspondence tables -> aggregate
  /// -> sample -> heads -> loss -> backward -> AdamW -> EMA.
  StepMetrics train_step(const std::vector<Image>& batch,
                         const std::vector<std::size_t>& batch_ids = {});

  /// Epoch loop over the shuffled dataset with periodic checkpoints and
  /// JSONL metrics. Returns the metrics of every logged step.
  std::vector<StepMetrics> fit(const data::ImageSource& source, const std::string& out_dir);

  void save_checkpoint(const std::string& path) const;
  static std::unique_ptr<Trainer> resume(const std::string& checkpoint_path);

  model::ModelPair& model() { return *pair_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t step() const { return step_; }

  /// Number of batches per epoch for a dataset (trailing remainders smaller
  /// than 2 images are dropped).
  std::int64_t steps_per_epoch(std::size_t dataset_size) const;
  std::int64_t total_steps(std::size_t dataset_size) const;

  /// fit() derives the learning-rate schedule from the dataset; callers
  /// composing their own loops can pin it here.
  void set_schedule(std::int64_t total, std::int64_t warmup);

 private:
  TrainConfig cfg_;
  std::unique_ptr<model::ModelPair> pair_;
  AdamW opt_;
  std::int64_t step_ = 0;  // completed steps
  std::int64_t schedule_total_ = 0;
  std::int64_t schedule_warmup_ = 0;
};

}  // namespace mgc::trainer
