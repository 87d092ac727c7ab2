#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "paths/autodiff.hpp"
#include "paths/config.hpp"
#include "paths/features.hpp"
#include "paths/selection.hpp"

namespace paths {

// Recurrent unit shared by all levels. Gate order in W/b is i,f,g,o.
struct LstmParams {
  Eigen::MatrixXd W;     // 4h x (d+h)
  Eigen::MatrixXd b;     // 1 x 4h
  Eigen::MatrixXd proj;  // d x h, bias-free so a zero state gives a zero offset
};

struct ImportanceMlpParams {
  Eigen::MatrixXd w1;  // h_imp x d
  Eigen::MatrixXd b1;  // 1 x h_imp
  Eigen::MatrixXd w2;  // 1 x h_imp
  Eigen::MatrixXd b2;  // 1 x 1
};

struct AttnLayerParams {
  Eigen::MatrixXd wq, bq, wk, bk, wv, bv, wo, bo;
  Eigen::MatrixXd ln1_g, ln1_b, ln2_g, ln2_b;
  Eigen::MatrixXd ff1, ff1_b;  // 2w x w, 1 x 2w
  Eigen::MatrixXd ff2, ff2_b;  // w x 2w, 1 x w
};

struct AggregatorParams {
  Eigen::MatrixXd in_proj;  // w x d
  Eigen::MatrixXd in_bias;  // 1 x w
  Eigen::MatrixXd token;    // 1 x w, learned aggregation token
  std::vector<AttnLayerParams> layers;
};

struct HeadParams {
  Eigen::MatrixXd W;  // b x w
  Eigen::MatrixXd b;  // 1 x b
};

struct ProcessorParams {
  int n = 0, d = 0, w = 0, h = 0, h_imp = 0, L = 0, heads = 0, buckets = 0;
  LstmParams rnn;  // single shared instance across levels
  std::vector<ImportanceMlpParams> importance;  // per level
  std::vector<AggregatorParams> agg;            // per level
  HeadParams head;
};

ProcessorParams init_params(const PathsConfig& config, uint64_t seed);

// Visits every parameter matrix with a stable name, in a fixed order shared
// by the optimizer and the checkpoint format.
void for_each_param(
    ProcessorParams& p,
    const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn);
void for_each_param(
    const ProcessorParams& p,
    const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn);

void save_checkpoint(const ProcessorParams& params, const PathsConfig& config,
                     const std::filesystem::path& file);
std::pair<ProcessorParams, PathsConfig> load_checkpoint(
    const std::filesystem::path& file);

// First w/2 components encode u, last w/2 encode v; interleaved sin/cos at
// geometrically spaced frequencies (base 10000) on raw grid coordinates.
Eigen::VectorXd positional_encoding_2d(int u, int v, int w);

// Binds parameter matrices onto a tape lazily, one leaf per matrix.
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape) : tape_(&tape) {}
  Var operator()(const Eigen::MatrixXd& m) {
    auto it = map_.find(&m);
    if (it != map_.end()) return it->second;
    Var v = tape_->leaf(m);
    map_.emplace(&m, v);
    return v;
  }
  std::optional<Var> lookup(const Eigen::MatrixXd& m) const {
    auto it = map_.find(&m);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

 private:
  Tape* tape_;
  std::unordered_map<const Eigen::MatrixXd*, Var> map_;
};

// Abstracts precomputed grids vs on-demand patch embedding.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual int n_levels() const = 0;
  virtual int grid_w(int level) const = 0;
  virtual int grid_h(int level) const = 0;
  virtual bool foreground(int level, int u, int v) const = 0;
  virtual Eigen::VectorXd fetch(int level, int u, int v) const = 0;
};

class GridFeatureProvider : public FeatureProvider {
 public:
  explicit GridFeatureProvider(const std::vector<FeatureGrid>& grids)
      : grids_(&grids) {}
  int n_levels() const override { return static_cast<int>(grids_->size()); }
  int grid_w(int level) const override { return (*grids_)[level].grid_w; }
  int grid_h(int level) const override { return (*grids_)[level].grid_h; }
  bool foreground(int level, int u, int v) const override {
    return (*grids_)[level].is_foreground(u, v);
  }
  Eigen::VectorXd fetch(int level, int u, int v) const override {
    return (*grids_)[level].vector(u, v);
  }

 private:
  const std::vector<FeatureGrid>* grids_;
};

// Embeds patches lazily from the pyramid; counts embeds per level so the
// latency benchmark can report exactly what was touched.
class LazyPyramidProvider : public FeatureProvider {
 public:
  LazyPyramidProvider(const PyramidImage& pyramid, const PatchEncoder& enc,
                      const std::vector<TissueMask>& masks)
      : pyramid_(&pyramid), enc_(&enc), masks_(&masks),
        embed_counts_(pyramid.n_levels(), 0) {}
  int n_levels() const override { return pyramid_->n_levels(); }
  int grid_w(int level) const override { return pyramid_->grid_w(level); }
  int grid_h(int level) const override { return pyramid_->grid_h(level); }
  bool foreground(int level, int u, int v) const override {
    return (*masks_)[level].at(u, v);
  }
  Eigen::VectorXd fetch(int level, int u, int v) const override {
    ++embed_counts_[level];
    return enc_->embed(extract_patch(*pyramid_, PatchRef{level, u, v}),
                       pyramid_->patch_size);
  }
  const std::vector<int64_t>& embed_counts() const { return embed_counts_; }

 private:
  const PyramidImage* pyramid_;
  const PatchEncoder* enc_;
  const std::vector<TissueMask>* masks_;
  mutable std::vector<int64_t> embed_counts_;
};

struct HazardPrediction {
  Eigen::VectorXd logits;
  Eigen::VectorXd hazards;  // sigmoid(logits)
};

struct SlideContext {
  std::vector<Eigen::VectorXd> features;  // [F^1 ... F^n], each w-dim
};

// --- single-level building blocks (rows are patches) ---

struct LstmStepOut {
  Var h, c;
};
LstmStepOut lstm_step(Tape& tape, ParamBinder& P, const LstmParams& rnn,
                      Var x, Var h_prev, Var c_prev);

struct ContextualiseOut {
  Var y;  // contextualised embeddings, N x d
  Var h, c;
};
// prev == nullopt means no ancestors: offset is zero and the new state is the
// zero state advanced one step on the patch's own embedding.
ContextualiseOut contextualise(Tape& tape, ParamBinder& P,
                               const LstmParams& rnn, Var embeddings,
                               std::optional<LstmStepOut> prev,
                               bool hierarchical_context_on = true);

Var importance_scores(Tape& tape, ParamBinder& P,
                      const ImportanceMlpParams& mlp, Var y);  // N x 1

// Empty coords -> zero vector. Output is 1 x w.
Var global_aggregate(Tape& tape, ParamBinder& P, const AggregatorParams& agg,
                     Var z, const std::vector<std::pair<int, int>>& coords,
                     int w, int heads);

struct ProcessorOut {
  Var F;      // 1 x w
  Var alpha;  // N x 1
  Var h, c;   // updated recurrent states, N x h
};
ProcessorOut processor_forward(Tape& tape, ParamBinder& P,
                               const ProcessorParams& params, int level,
                               Var embeddings, std::optional<LstmStepOut> prev,
                               const std::vector<std::pair<int, int>>& coords,
                               bool hierarchical_context_on = true);

Var predict_head(Tape& tape, ParamBinder& P, const HeadParams& head,
                 const std::vector<Var>& slide_context,
                 bool slide_level_context_on = true);

// --- full slide forward (Alg. 2) ---

struct ForwardOutputs {
  HazardPrediction pred;
  Var logits;  // 1 x b, on the tape
  std::vector<SelectionState> selections;  // per level, value snapshots
  std::vector<ImportanceMap> alphas;       // learned importance per level
  SlideContext ctx;
};

ForwardOutputs paths_forward(Tape& tape, ParamBinder& P,
                             const FeatureProvider& features,
                             const ProcessorParams& params,
                             const PathsConfig& config,
                             const AblationMode& mode = {},
                             uint64_t selection_seed = 0);

// Convenience wrapper owning its tape; for inference-only callers.
ForwardOutputs run_forward(const FeatureProvider& features,
                           const ProcessorParams& params,
                           const PathsConfig& config,
                           const AblationMode& mode = {},
                           uint64_t selection_seed = 0);

}  // namespace paths
