#include "mgc/gradcheck.hpp"

#include "mgc/data.hpp"
#include "mgc/geometry.hpp"

namespace mgc::gradcheck {

Result check_total_loss(const trainer::TrainConfig& cfg_in, std::size_t sample_count,
                        double eps) {
  trainer::TrainConfig cfg = cfg_in;
  cfg.augment.out_side = cfg.vit.image_side;
  cfg.validate();
  model::ModelPair pair(cfg.vit, cfg.heads);
  Rng init_rng = make_rng(cfg.seed, rngtag::init);
  pair.init(init_rng);

  const auto source = data::synthetic({static_cast<std::size_t>(cfg.batch_size), cfg.seed});
  const geometry::PatchGrid grid{cfg.vit.grid_side(), cfg.vit.grid_side()};

  std::vector<Image> views1, views2;
  std::vector<contrast::PairTargets> targets;
  for (int i = 0; i < cfg.batch_size; ++i) {
    Rng arng = make_rng(cfg.seed, rngtag::augment, 0, static_cast<std::uint64_t>(i));
    const augment::ViewPair vp =
        augment::sample_view_pair(source->get(static_cast<std::size_t>(i)), cfg.augment, arng);
    contrast::PairTargets pt;
    for (const auto& [c, n] : cfg.loss.sample_counts) {
      (void)n;
      pt.tables[c] = geometry::correspondence_weights(vp.crop1, vp.crop2, grid, c);
      if (cfg.loss.symmetrize)
        pt.reverse_tables[c] = geometry::correspondence_weights(vp.crop2, vp.crop1, grid, c);
    }
    Rng srng = make_rng(cfg.seed, rngtag::sample, 0, static_cast<std::uint64_t>(i));
    pt.sample = contrast::sample_sparse(pt.tables, cfg.loss.sample_counts, srng);
    if (cfg.loss.symmetrize)
      pt.reverse_sample = contrast::sample_sparse(pt.reverse_tables, cfg.loss.sample_counts, srng);
    targets.push_back(std::move(pt));
    views1.push_back(model::normalize(vp.image1, cfg.norm_mean, cfg.norm_std));
    views2.push_back(model::normalize(vp.image2, cfg.norm_mean, cfg.norm_std));
  }

  // Running statistics stay frozen so the loss is a pure function of the
  // parameters.
  const contrast::LossOptions forward_only{true, false, false};
  const auto loss_fn = [&]() {
    return contrast::total_loss(pair, views1, views2, targets, cfg.loss, forward_only).total;
  };

  pair.zero_grad();
  Result result;
  result.loss =
      contrast::total_loss(pair, views1, views2, targets, cfg.loss, {true, false, true}).total;

  std::vector<oracle::FdParam> fd;
  pair.visit_base([&fd](model::Param& p) {
    for (Eigen::Index i = 0; i < p.value.rows(); ++i)
      for (Eigen::Index j = 0; j < p.value.cols(); ++j)
        fd.push_back({&p.value(i, j), p.grad(i, j),
                      p.name + "[" + std::to_string(i) + "," + std::to_string(j) + "]"});
  });
  result.total_params = fd.size();

  oracle::FdOptions options;
  options.eps = eps;
  options.sample_count = sample_count;
  options.seed = cfg.seed;
  result.report = oracle::fd_gradient_check(loss_fn, fd, options);
  return result;
}

}  // namespace mgc::gradcheck
