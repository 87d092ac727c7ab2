#include "paths/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "paths/common.hpp"

namespace paths {

DatasetSplit split_dataset(size_t n, uint64_t seed) {
  if (n < 3) throw DataError("split_dataset: need at least 3 slides");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "dataset-split"));
  for (size_t i = n - 1; i > 0; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)));
    std::swap(idx[i], idx[j]);
  }
  size_t n_train = std::max<size_t>(1, n * 70 / 100);
  size_t n_val = std::max<size_t>(1, n * 15 / 100);
  if (n_train + n_val >= n) n_train = n - n_val - 1;
  DatasetSplit split;
  split.train.assign(idx.begin(), idx.begin() + n_train);
  split.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  split.test.assign(idx.begin() + n_train + n_val, idx.end());
  return split;
}

std::string TrainReport::to_json(const PathsConfig& config) const {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(config_to_json(config));
  j["seed"] = seed;
  j["best_epoch"] = best_epoch;
  j["best_val_cindex"] = best_val_cindex;
  j["test_cindex"] = test_cindex;
  j["wall_seconds"] = wall_seconds;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs)
    j["epochs"].push_back(
        {{"train_loss", e.train_loss}, {"val_cindex", e.val_cindex}});
  return j.dump(2);
}

void quantise_params_f32(ProcessorParams& params) {
  for_each_param(params, [](const std::string&, Eigen::MatrixXd& m) {
    for (int i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  });
}

double slide_risk(const SlideData& slide, const ProcessorParams& params,
                  const PathsConfig& config, uint64_t selection_seed) {
  GridFeatureProvider provider(slide.grids);
  ForwardOutputs out =
      run_forward(provider, params, config, config.ablation, selection_seed);
  return risk_from_logits(out.pred.logits);
}

AdamOptimizer::AdamOptimizer(ProcessorParams& params, double lr, double beta1,
                             double beta2, double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for_each_param(params, [&](const std::string&, Eigen::MatrixXd& m) {
    slots_.push_back(&m);
    m_.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    v_.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  });
}

void AdamOptimizer::step(const std::vector<Eigen::MatrixXd>& grads) {
  if (grads.size() != slots_.size())
    throw ShapeError("AdamOptimizer: gradient list misaligned");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < slots_.size(); ++i) {
    const Eigen::MatrixXd& g = grads[i];
    if (g.rows() != slots_[i]->rows() || g.cols() != slots_[i]->cols())
      throw ShapeError("AdamOptimizer: gradient shape mismatch");
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    Eigen::ArrayXXd mhat = m_[i].array() / bc1;
    Eigen::ArrayXXd vhat = v_[i].array() / bc2;
    slots_[i]->array() -= lr_ * mhat / (vhat.sqrt() + eps_);
  }
}

namespace {

// Forward + loss for one slide; accumulates parameter gradients.
double slide_loss_and_grads(const SlideData& slide,
                            const ProcessorParams& params,
                            const PathsConfig& config, uint64_t selection_seed,
                            std::vector<Eigen::MatrixXd>* grads) {
  Tape tape;
  ParamBinder binder(tape);
  GridFeatureProvider provider(slide.grids);
  ForwardOutputs out = paths_forward(tape, binder, provider, params, config,
                                     config.ablation, selection_seed);
  Var loss = nll_surv_loss_node(tape, out.logits, slide.record.bucket,
                                slide.record.censored, config.loss_alpha);
  double loss_val = tape.value(loss)(0, 0);
  if (!std::isfinite(loss_val))
    throw NumericError("train: non-finite loss on slide " + slide.slide_id);
  if (grads) {
    tape.backward(loss);
    size_t i = 0;
    for_each_param(params,
                   [&](const std::string&, const Eigen::MatrixXd& m) {
                     if (auto v = binder.lookup(m)) (*grads)[i] += tape.grad(*v);
                     ++i;
                   });
  }
  return loss_val;
}

double eval_cindex(const std::vector<SlideData>& slides,
                   const std::vector<size_t>& subset,
                   const ProcessorParams& params, const PathsConfig& config,
                   uint64_t selection_seed) {
  std::vector<double> risks;
  std::vector<SurvivalRecord> records;
  for (size_t i : subset) {
    risks.push_back(slide_risk(slides[i], params, config, selection_seed));
    records.push_back(slides[i].record);
  }
  return concordance_index(risks, records);
}

}  // namespace

TrainResult train_model(const std::vector<SlideData>& slides,
                        const PathsConfig& config) {
  config.validate();
  auto t0 = std::chrono::steady_clock::now();
  DatasetSplit split = split_dataset(slides.size(), config.seed);

  // Bucket edges come from the training fold only.
  std::vector<SurvivalRecord> train_records;
  for (size_t i : split.train) train_records.push_back(slides[i].record);
  QuantisationResult q = quantise_survival(train_records, config.b);

  std::vector<SlideData> data = slides;
  for (auto& s : data) s.record.bucket = bucket_of(s.record.time, q.edges);

  ProcessorParams params = init_params(config, config.seed);
  AdamOptimizer opt(params, config.lr);

  size_t n_params = 0;
  for_each_param(params,
                 [&](const std::string&, const Eigen::MatrixXd&) { ++n_params; });

  TrainReport report;
  report.seed = config.seed;
  ProcessorParams best = params;
  double best_val = -1.0;

  std::vector<size_t> order = split.train;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(
        derive_seed(config.seed, "epoch-shuffle-" + std::to_string(epoch)));
    for (size_t i = order.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(
          shuffle_rng.uniform_int(0, static_cast<int64_t>(i)));
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    size_t done = 0;
    while (done < order.size()) {
      size_t batch = std::min<size_t>(config.batch_size, order.size() - done);
      std::vector<Eigen::MatrixXd> grads(n_params);
      {
        size_t gi = 0;
        for_each_param(params, [&](const std::string&, Eigen::MatrixXd& m) {
          grads[gi++] = Eigen::MatrixXd::Zero(m.rows(), m.cols());
        });
      }
      for (size_t k = 0; k < batch; ++k) {
        size_t idx = order[done + k];
        uint64_t sel_seed = derive_seed(
            config.seed, "select-" + std::to_string(epoch) + "-" +
                             std::to_string(idx));
        epoch_loss +=
            slide_loss_and_grads(data[idx], params, config, sel_seed, &grads);
      }
      for (auto& g : grads) g /= static_cast<double>(batch);
      opt.step(grads);
      done += batch;
    }

    EpochStats stats;
    stats.train_loss = epoch_loss / static_cast<double>(order.size());
    uint64_t val_seed = derive_seed(config.seed, "val-selection");
    stats.val_cindex = eval_cindex(data, split.val, params, config, val_seed);
    report.epochs.push_back(stats);
    if (stats.val_cindex > best_val) {
      best_val = stats.val_cindex;
      best = params;
      report.best_epoch = epoch;
    }
  }
  report.best_val_cindex = best_val;

  // Evaluate at checkpoint precision so a reloaded model reproduces exactly
  // the reported test score.
  quantise_params_f32(best);
  uint64_t test_seed = derive_seed(config.seed, "test-selection");
  report.test_cindex = eval_cindex(data, split.test, best, config, test_seed);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  TrainResult result;
  result.params = std::move(best);
  result.bucket_edges = q.edges;
  result.report = std::move(report);
  return result;
}

GradientCheckResult gradient_check(
    ProcessorParams& params, const std::function<double()>& loss_fn,
    const std::function<std::vector<Eigen::MatrixXd>()>& grads_fn,
    int n_probes, double fd_eps, uint64_t seed) {
  std::vector<Eigen::MatrixXd*> slots;
  std::vector<std::string> names;
  for_each_param(params, [&](const std::string& name, Eigen::MatrixXd& m) {
    slots.push_back(&m);
    names.push_back(name);
  });
  std::vector<Eigen::MatrixXd> analytic = grads_fn();
  if (analytic.size() != slots.size())
    throw ShapeError("gradient_check: gradient list misaligned");

  Rng rng(derive_seed(seed, "gradient-check"));
  GradientCheckResult result;
  for (int p = 0; p < n_probes; ++p) {
    size_t s = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(slots.size()) - 1));
    Eigen::MatrixXd& m = *slots[s];
    int r = static_cast<int>(rng.uniform_int(0, m.rows() - 1));
    int c = static_cast<int>(rng.uniform_int(0, m.cols() - 1));

    double saved = m(r, c);
    m(r, c) = saved + fd_eps;
    double up = loss_fn();
    m(r, c) = saved - fd_eps;
    double down = loss_fn();
    m(r, c) = saved;

    GradientProbe probe;
    probe.name = names[s];
    probe.row = r;
    probe.col = c;
    probe.numeric = (up - down) / (2.0 * fd_eps);
    probe.analytic = analytic[s](r, c);
    double scale = std::max(std::abs(probe.numeric), std::abs(probe.analytic));
    double diff = std::abs(probe.numeric - probe.analytic);
    probe.rel_err = scale < 1e-6 ? diff : diff / scale;
    result.max_rel_err = std::max(result.max_rel_err, probe.rel_err);
    result.probes.push_back(probe);
  }
  return result;
}

}  // namespace paths
