#include "paths/selection.hpp"

#include <algorithm>

#include "paths/common.hpp"

namespace paths {

std::vector<size_t> top_k_indices(const std::vector<PatchRef>& coords,
                                  const ImportanceMap& alpha, int K) {
  if (K <= 0) throw ConfigError("filter_top_k: K must be positive");
  if (alpha.entries.size() != coords.size())
    throw StateError("filter_top_k: alpha does not cover the selection");
  std::vector<size_t> order(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    double aa = alpha.at(coords[a].u, coords[a].v);
    double ab = alpha.at(coords[b].u, coords[b].v);
    if (aa != ab) return aa > ab;
    return std::pair{coords[a].u, coords[a].v} <
           std::pair{coords[b].u, coords[b].v};
  });
  order.resize(std::min<size_t>(K, order.size()));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::pair{coords[a].u, coords[a].v} <
           std::pair{coords[b].u, coords[b].v};
  });
  return order;
}

SelectionState filter_top_k(const SelectionState& state,
                            const ImportanceMap& alpha, int K) {
  std::vector<size_t> keep = top_k_indices(state.selected, alpha, K);
  SelectionState out;
  out.level_index = state.level_index;
  for (size_t i : keep) {
    out.selected.push_back(state.selected[i]);
    if (!state.context_states.empty())
      out.context_states.push_back(state.context_states[i]);
    if (!state.context_embeddings.empty())
      out.context_embeddings.push_back(state.context_embeddings[i]);
  }
  return out;
}

MagnifyResult magnify(const SelectionState& state, const TissueMask& next_mask,
                      int M, int n_levels) {
  if (state.level_index + 1 >= n_levels)
    throw StateError("magnify: hierarchy exhausted");
  MagnifyResult res;
  res.state.level_index = state.level_index + 1;
  for (size_t p = 0; p < state.selected.size(); ++p) {
    const PatchRef& parent = state.selected[p];
    for (int b = 0; b < M; ++b) {
      for (int a = 0; a < M; ++a) {
        int cu = M * parent.u + a;
        int cv = M * parent.v + b;
        if (cu >= next_mask.grid_w || cv >= next_mask.grid_h) continue;
        if (!next_mask.at(cu, cv)) continue;
        res.state.selected.push_back(PatchRef{state.level_index + 1, cu, cv});
        res.parent_of.push_back(p);
        if (!state.context_states.empty())
          res.state.context_states.push_back(state.context_states[p]);
        if (!state.context_embeddings.empty())
          res.state.context_embeddings.push_back(state.context_embeddings[p]);
      }
    }
  }
  // Canonical lexicographic (u,v) order.
  std::vector<size_t> order(res.state.selected.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::pair{res.state.selected[a].u, res.state.selected[a].v} <
           std::pair{res.state.selected[b].u, res.state.selected[b].v};
  });
  MagnifyResult sorted;
  sorted.state.level_index = res.state.level_index;
  for (size_t i : order) {
    sorted.state.selected.push_back(res.state.selected[i]);
    sorted.parent_of.push_back(res.parent_of[i]);
    if (!res.state.context_states.empty())
      sorted.state.context_states.push_back(res.state.context_states[i]);
    if (!res.state.context_embeddings.empty())
      sorted.state.context_embeddings.push_back(
          res.state.context_embeddings[i]);
  }
  return sorted;
}

std::vector<Eigen::VectorXd> hierarchical_context(
    const PatchRef& ref, const std::vector<FeatureGrid>& grids, int M) {
  if (ref.level >= static_cast<int>(grids.size()))
    throw StateError("hierarchical_context: missing grid level");
  // Walk up to the coarsest ancestor, then report coarse -> fine.
  std::vector<Eigen::VectorXd> context(ref.level);
  int u = ref.u, v = ref.v;
  for (int j = ref.level - 1; j >= 0; --j) {
    auto [pu, pv] = parent_coords(u, v, M);
    context[j] = grids[j].vector(pu, pv);
    u = pu;
    v = pv;
  }
  return context;
}

}  // namespace paths
