#pragma once

#include <functional>
#include <string>
#include <vector>

#include "paths/config.hpp"
#include "paths/features.hpp"
#include "paths/model.hpp"
#include "paths/survival.hpp"

namespace paths {

struct SlideData {
  std::string slide_id;
  std::vector<FeatureGrid> grids;
  SurvivalRecord record;
};

struct DatasetSplit {
  std::vector<size_t> train, val, test;
};

// Deterministic 70/15/15 shuffle split.
DatasetSplit split_dataset(size_t n, uint64_t seed);

struct EpochStats {
  double train_loss = 0.0;
  double val_cindex = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;       // epoch whose weights were kept
  double best_val_cindex = 0.0;
  double test_cindex = 0.0;  // computed with checkpoint-precision weights
  double wall_seconds = 0.0;
  uint64_t seed = 0;
  std::string to_json(const PathsConfig& config) const;
};

struct TrainResult {
  ProcessorParams params;  // best-epoch weights, f32 round-tripped
  std::vector<double> bucket_edges;
  TrainReport report;
};

TrainResult train_model(const std::vector<SlideData>& slides,
                        const PathsConfig& config);

// Casts every weight through float, matching checkpoint precision.
void quantise_params_f32(ProcessorParams& params);

double slide_risk(const SlideData& slide, const ProcessorParams& params,
                  const PathsConfig& config, uint64_t selection_seed = 0);

// Adam with bias correction; state layout follows for_each_param order.
class AdamOptimizer {
 public:
  AdamOptimizer(ProcessorParams& params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  // grads must align with for_each_param order.
  void step(const std::vector<Eigen::MatrixXd>& grads);

 private:
  ProcessorParams* params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Eigen::MatrixXd*> slots_;
  std::vector<Eigen::MatrixXd> m_, v_;
};

struct GradientProbe {
  std::string name;
  int row = 0, col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradientCheckResult {
  double max_rel_err = 0.0;
  std::vector<GradientProbe> probes;
};

// Central finite differences on randomly probed coordinates. rel_err uses
// |fd - an| / max(|fd|, |an|), falling back to the absolute difference when
// both magnitudes are below 1e-6.
GradientCheckResult gradient_check(
    ProcessorParams& params, const std::function<double()>& loss_fn,
    const std::function<std::vector<Eigen::MatrixXd>()>& grads_fn,
    int n_probes, double fd_eps, uint64_t seed);

}  // namespace paths
