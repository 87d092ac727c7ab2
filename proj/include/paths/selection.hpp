#pragma once

#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "paths/features.hpp"
#include "paths/pyramid.hpp"

namespace paths {

// Importance values for exactly the currently selected patches of one level.
struct ImportanceMap {
  int level_index = 0;
  std::map<std::pair<int, int>, double> entries;

  double at(int u, int v) const { return entries.at({u, v}); }
};

struct RnnStateValue {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
};

// The selected patch set of one level with each patch's inherited recurrent
// state and raw parent-embedding chain.
struct SelectionState {
  int level_index = 0;
  std::vector<PatchRef> selected;
  std::vector<RnnStateValue> context_states;
  std::vector<std::vector<Eigen::VectorXd>> context_embeddings;
};

inline std::pair<int, int> parent_coords(int u, int v, int M) {
  return {u / M, v / M};
}

// Indices into `coords` of the K highest-alpha entries, ties broken by
// lexicographic (u,v) ascending; result ordered lexicographically.
std::vector<size_t> top_k_indices(const std::vector<PatchRef>& coords,
                                  const ImportanceMap& alpha, int K);

SelectionState filter_top_k(const SelectionState& state,
                            const ImportanceMap& alpha, int K);

// Children of retained patches at the next level, background children
// dropped; each child inherits its parent's state and embedding chain.
// `parent_of[j]` gives the index of child j's parent in the input state.
struct MagnifyResult {
  SelectionState state;
  std::vector<size_t> parent_of;
};
MagnifyResult magnify(const SelectionState& state, const TissueMask& next_mask,
                      int M, int n_levels);

// Raw ancestor embeddings, coarsest first; length == ref.level.
std::vector<Eigen::VectorXd> hierarchical_context(
    const PatchRef& ref, const std::vector<FeatureGrid>& grids, int M);

}  // namespace paths
