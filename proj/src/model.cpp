#include "paths/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "paths/common.hpp"

namespace paths {

using nlohmann::json;

namespace {

Eigen::MatrixXd uniform_fan_in(Rng& rng, int rows, int cols) {
  double a = 1.0 / std::sqrt(static_cast<double>(cols));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
  return m;
}

}  // namespace

ProcessorParams init_params(const PathsConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "model-init"));
  ProcessorParams p;
  p.n = config.n;
  p.d = config.d;
  p.w = config.w;
  p.h = config.h;
  p.h_imp = config.h_imp;
  p.L = config.L;
  p.heads = config.heads;
  p.buckets = config.b;

  p.rnn.W = uniform_fan_in(rng, 4 * p.h, p.d + p.h);
  p.rnn.b = Eigen::MatrixXd::Zero(1, 4 * p.h);
  p.rnn.b.block(0, p.h, 1, p.h).setConstant(1.0);  // forget-gate bias
  p.rnn.proj = uniform_fan_in(rng, p.d, p.h);

  for (int i = 0; i < p.n; ++i) {
    ImportanceMlpParams mlp;
    mlp.w1 = uniform_fan_in(rng, p.h_imp, p.d);
    mlp.b1 = Eigen::MatrixXd::Zero(1, p.h_imp);
    mlp.w2 = uniform_fan_in(rng, 1, p.h_imp);
    mlp.b2 = Eigen::MatrixXd::Zero(1, 1);
    p.importance.push_back(std::move(mlp));

    AggregatorParams agg;
    agg.in_proj = uniform_fan_in(rng, p.w, p.d);
    agg.in_bias = Eigen::MatrixXd::Zero(1, p.w);
    agg.token = Eigen::MatrixXd::Zero(1, p.w);
    for (int l = 0; l < p.L; ++l) {
      AttnLayerParams layer;
      layer.wq = uniform_fan_in(rng, p.w, p.w);
      layer.bq = Eigen::MatrixXd::Zero(1, p.w);
      layer.wk = uniform_fan_in(rng, p.w, p.w);
      layer.bk = Eigen::MatrixXd::Zero(1, p.w);
      layer.wv = uniform_fan_in(rng, p.w, p.w);
      layer.bv = Eigen::MatrixXd::Zero(1, p.w);
      layer.wo = uniform_fan_in(rng, p.w, p.w);
      layer.bo = Eigen::MatrixXd::Zero(1, p.w);
      layer.ln1_g = Eigen::MatrixXd::Ones(1, p.w);
      layer.ln1_b = Eigen::MatrixXd::Zero(1, p.w);
      layer.ln2_g = Eigen::MatrixXd::Ones(1, p.w);
      layer.ln2_b = Eigen::MatrixXd::Zero(1, p.w);
      layer.ff1 = uniform_fan_in(rng, 2 * p.w, p.w);
      layer.ff1_b = Eigen::MatrixXd::Zero(1, 2 * p.w);
      layer.ff2 = uniform_fan_in(rng, p.w, 2 * p.w);
      layer.ff2_b = Eigen::MatrixXd::Zero(1, p.w);
      agg.layers.push_back(std::move(layer));
    }
    p.agg.push_back(std::move(agg));
  }

  p.head.W = uniform_fan_in(rng, p.buckets, p.w);
  p.head.b = Eigen::MatrixXd::Zero(1, p.buckets);
  return p;
}

template <typename Params, typename Fn>
static void visit_params(Params& p, const Fn& fn) {
  fn("rnn.W", p.rnn.W);
  fn("rnn.b", p.rnn.b);
  fn("rnn.proj", p.rnn.proj);
  for (size_t i = 0; i < p.importance.size(); ++i) {
    std::string base = "imp[" + std::to_string(i) + "].";
    fn(base + "w1", p.importance[i].w1);
    fn(base + "b1", p.importance[i].b1);
    fn(base + "w2", p.importance[i].w2);
    fn(base + "b2", p.importance[i].b2);
  }
  for (size_t i = 0; i < p.agg.size(); ++i) {
    std::string base = "agg[" + std::to_string(i) + "].";
    fn(base + "in_proj", p.agg[i].in_proj);
    fn(base + "in_bias", p.agg[i].in_bias);
    fn(base + "token", p.agg[i].token);
    for (size_t l = 0; l < p.agg[i].layers.size(); ++l) {
      std::string lb = base + "layer[" + std::to_string(l) + "].";
      auto& layer = p.agg[i].layers[l];
      fn(lb + "wq", layer.wq);
      fn(lb + "bq", layer.bq);
      fn(lb + "wk", layer.wk);
      fn(lb + "bk", layer.bk);
      fn(lb + "wv", layer.wv);
      fn(lb + "bv", layer.bv);
      fn(lb + "wo", layer.wo);
      fn(lb + "bo", layer.bo);
      fn(lb + "ln1_g", layer.ln1_g);
      fn(lb + "ln1_b", layer.ln1_b);
      fn(lb + "ln2_g", layer.ln2_g);
      fn(lb + "ln2_b", layer.ln2_b);
      fn(lb + "ff1", layer.ff1);
      fn(lb + "ff1_b", layer.ff1_b);
      fn(lb + "ff2", layer.ff2);
      fn(lb + "ff2_b", layer.ff2_b);
    }
  }
  fn("head.W", p.head.W);
  fn("head.b", p.head.b);
}

void for_each_param(
    ProcessorParams& p,
    const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn) {
  visit_params(p, fn);
}

void for_each_param(
    const ProcessorParams& p,
    const std::function<void(const std::string&, const Eigen::MatrixXd&)>&
        fn) {
  visit_params(p, fn);
}

Eigen::VectorXd positional_encoding_2d(int u, int v, int w) {
  if (w % 4 != 0)
    throw ConfigError("positional encoding width must be divisible by 4");
  Eigen::VectorXd pe(w);
  const int half = w / 2;
  const int pairs = half / 2;
  for (int k = 0; k < pairs; ++k) {
    double omega = std::pow(10000.0, -2.0 * k / half);
    pe[2 * k] = std::sin(u * omega);
    pe[2 * k + 1] = std::cos(u * omega);
    pe[half + 2 * k] = std::sin(v * omega);
    pe[half + 2 * k + 1] = std::cos(v * omega);
  }
  return pe;
}

LstmStepOut lstm_step(Tape& tape, ParamBinder& P, const LstmParams& rnn,
                      Var x, Var h_prev, Var c_prev) {
  const int h = static_cast<int>(rnn.proj.cols());
  Var z = tape.concat_cols(x, h_prev);
  Var gates = tape.row_broadcast_add(
      tape.matmul(z, tape.transpose(P(rnn.W))), P(rnn.b));
  Var gi = tape.sigmoid_(tape.slice_cols(gates, 0, h));
  Var gf = tape.sigmoid_(tape.slice_cols(gates, h, h));
  Var gg = tape.tanh_(tape.slice_cols(gates, 2 * h, h));
  Var go = tape.sigmoid_(tape.slice_cols(gates, 3 * h, h));
  Var c = tape.add(tape.cmul(gf, c_prev), tape.cmul(gi, gg));
  Var hh = tape.cmul(go, tape.tanh_(c));
  return {hh, c};
}

ContextualiseOut contextualise(Tape& tape, ParamBinder& P,
                               const LstmParams& rnn, Var embeddings,
                               std::optional<LstmStepOut> prev,
                               bool hierarchical_context_on) {
  if (!tape.value(embeddings).allFinite())
    throw NumericError("contextualise: non-finite embeddings");
  const int n_rows = static_cast<int>(tape.value(embeddings).rows());
  const int h = static_cast<int>(rnn.proj.cols());

  LstmStepOut state;
  Var y;
  if (prev) {
    // Offset from the ancestor chain only; the patch's own embedding enters
    // the state passed to its children, not its own offset.
    Var offset = tape.matmul(prev->h, tape.transpose(P(rnn.proj)));
    y = hierarchical_context_on ? tape.add(embeddings, offset) : embeddings;
    state = lstm_step(tape, P, rnn, embeddings, prev->h, prev->c);
  } else {
    y = embeddings;
    Var zeros = tape.constant(Eigen::MatrixXd::Zero(n_rows, h));
    state = lstm_step(tape, P, rnn, embeddings, zeros, zeros);
  }
  return {y, state.h, state.c};
}

Var importance_scores(Tape& tape, ParamBinder& P,
                      const ImportanceMlpParams& mlp, Var y) {
  if (tape.value(y).rows() == 0)
    throw StateError("importance_scores: empty input set");
  Var a1 = tape.tanh_(tape.row_broadcast_add(
      tape.matmul(y, tape.transpose(P(mlp.w1))), P(mlp.b1)));
  return tape.sigmoid_(tape.row_broadcast_add(
      tape.matmul(a1, tape.transpose(P(mlp.w2))), P(mlp.b2)));
}

namespace {

Var attention_layer(Tape& tape, ParamBinder& P, const AttnLayerParams& p,
                    Var x, int heads) {
  const int w = static_cast<int>(tape.value(x).cols());
  const int dh = w / heads;
  auto linear = [&](Var in, const Eigen::MatrixXd& wgt,
                    const Eigen::MatrixXd& bias) {
    return tape.row_broadcast_add(tape.matmul(in, tape.transpose(P(wgt))),
                                  P(bias));
  };

  // Pre-norm self-attention block.
  Var ln1 = tape.row_broadcast_add(
      tape.row_broadcast_mul(tape.layer_norm_rows(x), P(p.ln1_g)), P(p.ln1_b));
  Var q = linear(ln1, p.wq, p.bq);
  Var k = linear(ln1, p.wk, p.bk);
  Var v = linear(ln1, p.wv, p.bv);
  Var merged;
  for (int a = 0; a < heads; ++a) {
    Var qa = tape.slice_cols(q, a * dh, dh);
    Var ka = tape.slice_cols(k, a * dh, dh);
    Var va = tape.slice_cols(v, a * dh, dh);
    Var scores = tape.scale(tape.matmul(qa, tape.transpose(ka)),
                            1.0 / std::sqrt(static_cast<double>(dh)));
    Var attended = tape.matmul(tape.softmax_rows(scores), va);
    merged = a == 0 ? attended : tape.concat_cols(merged, attended);
  }
  Var attn_out = linear(merged, p.wo, p.bo);
  Var x1 = tape.add(x, attn_out);

  // Pre-norm feed-forward block.
  Var ln2 = tape.row_broadcast_add(
      tape.row_broadcast_mul(tape.layer_norm_rows(x1), P(p.ln2_g)),
      P(p.ln2_b));
  Var f = tape.gelu(linear(ln2, p.ff1, p.ff1_b));
  return tape.add(x1, linear(f, p.ff2, p.ff2_b));
}

}  // namespace

Var global_aggregate(Tape& tape, ParamBinder& P, const AggregatorParams& agg,
                     Var z, const std::vector<std::pair<int, int>>& coords,
                     int w, int heads) {
  if (coords.empty()) return tape.constant(Eigen::MatrixXd::Zero(1, w));
  if (static_cast<int>(coords.size()) != tape.value(z).rows())
    throw ShapeError("global_aggregate: coordinate/feature count mismatch");

  Var x = tape.row_broadcast_add(
      tape.matmul(z, tape.transpose(P(agg.in_proj))), P(agg.in_bias));
  Eigen::MatrixXd pos(coords.size(), w);
  for (size_t i = 0; i < coords.size(); ++i)
    pos.row(i) =
        positional_encoding_2d(coords[i].first, coords[i].second, w)
            .transpose();
  x = tape.add(x, tape.constant(pos));

  // The aggregation token is seeded with the mean of the projected inputs so
  // the degenerate zero-layer aggregator already pools the set.
  Var token0 = tape.add(P(agg.token), tape.mean_rows(x));
  Var seq = tape.concat_rows(token0, x);
  for (const auto& layer : agg.layers)
    seq = attention_layer(tape, P, layer, seq, heads);
  return tape.slice_rows(seq, 0, 1);
}

ProcessorOut processor_forward(Tape& tape, ParamBinder& P,
                               const ProcessorParams& params, int level,
                               Var embeddings, std::optional<LstmStepOut> prev,
                               const std::vector<std::pair<int, int>>& coords,
                               bool hierarchical_context_on) {
  ContextualiseOut ctx = contextualise(tape, P, params.rnn, embeddings, prev,
                                       hierarchical_context_on);
  Var alpha = importance_scores(tape, P, params.importance[level], ctx.y);
  Var z = tape.scale_rows(ctx.y, alpha);
  Var F = global_aggregate(tape, P, params.agg[level], z, coords, params.w,
                           params.heads);
  return {F, alpha, ctx.h, ctx.c};
}

Var predict_head(Tape& tape, ParamBinder& P, const HeadParams& head,
                 const std::vector<Var>& slide_context,
                 bool slide_level_context_on) {
  if (slide_context.empty()) throw StateError("predict_head: empty context");
  Var total;
  if (slide_level_context_on) {
    total = slide_context[0];
    for (size_t i = 1; i < slide_context.size(); ++i)
      total = tape.add(total, slide_context[i]);
  } else {
    total = slide_context.back();
  }
  return tape.row_broadcast_add(tape.matmul(total, tape.transpose(P(head.W))),
                                P(head.b));
}

ForwardOutputs paths_forward(Tape& tape, ParamBinder& P,
                             const FeatureProvider& features,
                             const ProcessorParams& params,
                             const PathsConfig& config,
                             const AblationMode& mode,
                             uint64_t selection_seed) {
  const int n = config.n;
  const int M = config.M;
  if (features.n_levels() < n)
    throw StateError("paths_forward: feature levels missing");
  const bool hier_on = mode.context == ContextMode::kBoth ||
                       mode.context == ContextMode::kHierarchicalOnly;
  const bool slide_on = mode.context == ContextMode::kBoth ||
                        mode.context == ContextMode::kSlideLevelOnly;
  Rng sel_rng(derive_seed(selection_seed, "random-selection"));

  // Level 0 starts from every foreground patch of the coarsest grid.
  std::vector<PatchRef> refs;
  for (int u = 0; u < features.grid_w(0); ++u)
    for (int v = 0; v < features.grid_h(0); ++v)
      if (features.foreground(0, u, v)) refs.push_back(PatchRef{0, u, v});
  if (refs.empty())
    throw DataError("paths_forward: no foreground patches at the top level");

  ForwardOutputs out;
  std::optional<LstmStepOut> prev_state;
  std::vector<std::vector<Eigen::VectorXd>> chains(refs.size());
  std::vector<Var> slide_ctx;

  for (int level = 0; level < n; ++level) {
    const int count = static_cast<int>(refs.size());

    SelectionState snapshot;
    snapshot.level_index = level;
    snapshot.selected = refs;
    ImportanceMap learned;
    learned.level_index = level;

    Var F;
    ProcessorOut proc;
    Eigen::MatrixXd emb(count, params.d);
    if (count > 0) {
      std::vector<std::pair<int, int>> coords(count);
      for (int i = 0; i < count; ++i) {
        emb.row(i) = features.fetch(level, refs[i].u, refs[i].v).transpose();
        coords[i] = {refs[i].u, refs[i].v};
      }
      proc = processor_forward(tape, P, params, level, tape.constant(emb),
                               prev_state, coords, hier_on);
      F = proc.F;
      for (int i = 0; i < count; ++i)
        learned.entries[{refs[i].u, refs[i].v}] = tape.value(proc.alpha)(i, 0);
      for (int i = 0; i < count; ++i) {
        RnnStateValue sv;
        sv.h = tape.value(proc.h).row(i).transpose();
        sv.c = tape.value(proc.c).row(i).transpose();
        snapshot.context_states.push_back(std::move(sv));
      }
      snapshot.context_embeddings = chains;
    } else {
      // Degenerate level: contributes a zero aggregate and the recursion
      // continues.
      F = tape.constant(Eigen::MatrixXd::Zero(1, params.w));
    }
    slide_ctx.push_back(F);
    out.ctx.features.push_back(tape.value(F).row(0).transpose());
    out.selections.push_back(std::move(snapshot));
    out.alphas.push_back(learned);

    if (level == n - 1) break;

    if (count == 0) {
      refs.clear();
      chains.clear();
      prev_state.reset();
      continue;
    }

    // Filter with learned or randomized importance, then magnify.
    ImportanceMap selection_map = learned;
    if (mode.selection == SelectionMode::kRandom)
      for (auto& [coord, a] : selection_map.entries) a = sel_rng.uniform();
    std::vector<size_t> keep = top_k_indices(refs, selection_map, config.K);

    SelectionState filtered;
    filtered.level_index = level;
    for (size_t i : keep) filtered.selected.push_back(refs[i]);

    TissueMask next_mask;
    next_mask.level_index = level + 1;
    next_mask.grid_w = features.grid_w(level + 1);
    next_mask.grid_h = features.grid_h(level + 1);
    next_mask.grid.assign(
        static_cast<size_t>(next_mask.grid_w) * next_mask.grid_h, 0);
    for (int v = 0; v < next_mask.grid_h; ++v)
      for (int u = 0; u < next_mask.grid_w; ++u)
        next_mask.grid[static_cast<size_t>(v) * next_mask.grid_w + u] =
            features.foreground(level + 1, u, v) ? 1 : 0;
    MagnifyResult magnified = magnify(filtered, next_mask, M, n);

    std::vector<PatchRef> next_refs = magnified.state.selected;
    std::vector<int> parent_rows(next_refs.size());
    std::vector<std::vector<Eigen::VectorXd>> next_chains(next_refs.size());
    for (size_t j = 0; j < next_refs.size(); ++j) {
      size_t orig = keep[magnified.parent_of[j]];
      parent_rows[j] = static_cast<int>(orig);
      next_chains[j] = chains[orig];
      next_chains[j].push_back(emb.row(orig).transpose());
    }

    if (next_refs.empty()) {
      prev_state.reset();
    } else {
      prev_state = LstmStepOut{tape.gather_rows(proc.h, parent_rows),
                               tape.gather_rows(proc.c, parent_rows)};
    }
    refs = std::move(next_refs);
    chains = std::move(next_chains);
  }

  out.logits = predict_head(tape, P, params.head, slide_ctx, slide_on);
  out.pred.logits = tape.value(out.logits).row(0).transpose();
  out.pred.hazards =
      (1.0 / (1.0 + (-out.pred.logits.array()).exp())).matrix();
  return out;
}

ForwardOutputs run_forward(const FeatureProvider& features,
                           const ProcessorParams& params,
                           const PathsConfig& config, const AblationMode& mode,
                           uint64_t selection_seed) {
  Tape tape;
  ParamBinder binder(tape);
  return paths_forward(tape, binder, features, params, config, mode,
                       selection_seed);
}

void save_checkpoint(const ProcessorParams& params, const PathsConfig& config,
                     const std::filesystem::path& file) {
  json manifest;
  manifest["config"] = json::parse(config_to_json(config));
  json plist = json::array();
  std::vector<const Eigen::MatrixXd*> order;
  for_each_param(params, [&](const std::string& name,
                             const Eigen::MatrixXd& m) {
    plist.push_back({{"name", name},
                     {"rows", static_cast<int>(m.rows())},
                     {"cols", static_cast<int>(m.cols())}});
    order.push_back(&m);
  });
  manifest["params"] = plist;
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out << manifest.dump() << "\n";
  for (const Eigen::MatrixXd* m : order) {
    for (int i = 0; i < m->rows(); ++i)
      for (int j = 0; j < m->cols(); ++j) {
        float v = static_cast<float>((*m)(i, j));
        out.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
  }
  if (!out) throw DataError("short write to " + file.string());
}

std::pair<ProcessorParams, PathsConfig> load_checkpoint(
    const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line))
    throw FormatError(file.string() + ": missing manifest");
  json manifest;
  try {
    manifest = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": bad manifest: " + e.what());
  }
  PathsConfig config = config_from_json(manifest.at("config").dump());
  ProcessorParams params = init_params(config, 0);
  size_t index = 0;
  const auto& plist = manifest.at("params");
  bool ok = true;
  std::string err;
  for_each_param(params, [&](const std::string& name, Eigen::MatrixXd& m) {
    if (!ok) return;
    if (index >= plist.size()) {
      ok = false;
      err = "manifest lists too few parameters";
      return;
    }
    const auto& entry = plist.at(index++);
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<int>() != m.rows() ||
        entry.at("cols").get<int>() != m.cols()) {
      ok = false;
      err = "manifest entry mismatch for " + name;
      return;
    }
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) {
        float v;
        in.read(reinterpret_cast<char*>(&v), sizeof(float));
        if (!in) {
          ok = false;
          err = "truncated payload in " + name;
          return;
        }
        m(i, j) = v;
      }
  });
  if (!ok) throw FormatError(file.string() + ": " + err);
  if (index != plist.size())
    throw FormatError(file.string() + ": manifest lists extra parameters");
  return {std::move(params), config};
}

}  // namespace paths
