#pragma once

#include "mgc/oracle.hpp"
#include "mgc/trainer.hpp"

namespace mgc::gradcheck {

struct Result {
  oracle::FdReport report;
  double loss = 0.0;
  std::size_t total_params = 0;
};

/// End-to-end gradient check of the full objective: builds the model from
/// the config, prepares one synthetic batch with the usual augmentation and
/// sampling path, computes analytic gradients once, and compares a sampled
/// parameter subset against central finite differences.
Result check_total_loss(const trainer::TrainConfig& cfg, std::size_t sample_count = 200,
                        double eps = 1e-5);

}  // namespace mgc::gradcheck
