#include <doctest.h>

#include <set>

#include "paths/common.hpp"
#include "paths/selection.hpp"

using namespace paths;

namespace {

SelectionState state_of(int level, std::vector<std::pair<int, int>> coords,
                        int h = 4) {
  SelectionState s;
  s.level_index = level;
  for (auto [u, v] : coords) {
    s.selected.push_back(PatchRef{level, u, v});
    s.context_states.push_back(
        {Eigen::VectorXd::Constant(h, u * 10 + v), Eigen::VectorXd::Zero(h)});
    s.context_embeddings.push_back({});
  }
  return s;
}

TissueMask full_mask(int level, int gw, int gh) {
  TissueMask m;
  m.level_index = level;
  m.grid_w = gw;
  m.grid_h = gh;
  m.grid.assign(static_cast<size_t>(gw) * gh, 1);
  return m;
}

}  // namespace

TEST_CASE("parent coordinates floor-divide") {
  CHECK(parent_coords(5, 3, 2) == std::make_pair(2, 1));
  CHECK(parent_coords(0, 0, 2) == std::make_pair(0, 0));
  CHECK(parent_coords(7, 7, 4) == std::make_pair(1, 1));
}

TEST_CASE("top-K keeps the highest-importance patches") {
  SelectionState s = state_of(1, {{0, 0}, {0, 1}, {1, 0}});
  ImportanceMap alpha;
  alpha.level_index = 1;
  alpha.entries = {{{0, 0}, 0.9}, {{0, 1}, 0.5}, {{1, 0}, 0.7}};
  SelectionState out = filter_top_k(s, alpha, 2);
  REQUIRE(out.selected.size() == 2);
  CHECK(out.selected[0].u == 0);
  CHECK(out.selected[0].v == 0);
  CHECK(out.selected[1].u == 1);
  CHECK(out.selected[1].v == 0);
  // Context rides along with the retained patch.
  CHECK(out.context_states[1].h[0] == doctest::Approx(10.0));
}

TEST_CASE("top-K with large K is the identity") {
  SelectionState s = state_of(1, {{0, 0}, {0, 1}, {1, 0}});
  ImportanceMap alpha;
  alpha.level_index = 1;
  alpha.entries = {{{0, 0}, 0.9}, {{0, 1}, 0.5}, {{1, 0}, 0.7}};
  SelectionState out = filter_top_k(s, alpha, 10);
  CHECK(out.selected == s.selected);
}

TEST_CASE("top-K ties break lexicographically") {
  SelectionState s = state_of(1, {{0, 0}, {0, 1}, {1, 0}});
  ImportanceMap alpha;
  alpha.level_index = 1;
  alpha.entries = {{{0, 0}, 0.5}, {{0, 1}, 0.5}, {{1, 0}, 0.5}};
  SelectionState out = filter_top_k(s, alpha, 2);
  REQUIRE(out.selected.size() == 2);
  CHECK(out.selected[0] == PatchRef{1, 0, 0});
  CHECK(out.selected[1] == PatchRef{1, 0, 1});
}

TEST_CASE("top-K rejects non-positive K and missing coverage") {
  SelectionState s = state_of(1, {{0, 0}});
  ImportanceMap alpha;
  alpha.level_index = 1;
  alpha.entries = {{{0, 0}, 0.5}};
  CHECK_THROWS_AS(filter_top_k(s, alpha, 0), ConfigError);
  ImportanceMap missing;
  missing.level_index = 1;
  CHECK_THROWS_AS(filter_top_k(s, missing, 1), StateError);
}

TEST_CASE("top-K output is a subset of the input") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::set<std::pair<int, int>> coords;
    while (coords.size() < 12)
      coords.insert({static_cast<int>(rng.uniform_int(0, 7)),
                     static_cast<int>(rng.uniform_int(0, 7))});
    SelectionState s = state_of(1, {coords.begin(), coords.end()});
    ImportanceMap alpha;
    alpha.level_index = 1;
    for (auto c : coords) alpha.entries[c] = rng.uniform();
    int K = static_cast<int>(rng.uniform_int(1, 15));
    SelectionState out = filter_top_k(s, alpha, K);
    CHECK(out.selected.size() ==
          std::min<size_t>(K, s.selected.size()));
    std::set<PatchRef> in(s.selected.begin(), s.selected.end());
    for (const auto& r : out.selected) CHECK(in.count(r) == 1);
  }
}

TEST_CASE("magnify expands each parent into M^2 children") {
  SelectionState s = state_of(0, {{3, 1}});
  TissueMask mask = full_mask(1, 8, 8);
  MagnifyResult r = magnify(s, mask, 2, 3);
  REQUIRE(r.state.selected.size() == 4);
  std::set<std::pair<int, int>> got;
  for (const auto& ref : r.state.selected) got.insert({ref.u, ref.v});
  std::set<std::pair<int, int>> expect = {{6, 2}, {6, 3}, {7, 2}, {7, 3}};
  CHECK(got == expect);
  for (size_t j = 0; j < r.parent_of.size(); ++j) CHECK(r.parent_of[j] == 0);
  // Children inherit the parent state.
  for (const auto& st : r.state.context_states)
    CHECK(st.h[0] == doctest::Approx(31.0));
}

TEST_CASE("background children are dropped") {
  SelectionState s = state_of(0, {{0, 0}});
  TissueMask mask = full_mask(1, 4, 4);
  mask.grid.assign(mask.grid.size(), 0);
  MagnifyResult r = magnify(s, mask, 2, 3);
  CHECK(r.state.selected.empty());
}

TEST_CASE("twenty parents at M=2 give exactly eighty children") {
  std::vector<std::pair<int, int>> coords;
  for (int i = 0; i < 20; ++i) coords.push_back({i % 8, i / 8});
  SelectionState s = state_of(0, coords);
  TissueMask mask = full_mask(1, 16, 16);
  MagnifyResult r = magnify(s, mask, 2, 3);
  CHECK(r.state.selected.size() == 80);
}

TEST_CASE("magnify past the finest level is an error") {
  SelectionState s = state_of(2, {{0, 0}});
  TissueMask mask = full_mask(3, 4, 4);
  CHECK_THROWS_AS(magnify(s, mask, 2, 3), StateError);
}

TEST_CASE("children belong to retained parents only") {
  Rng rng(91);
  for (int trial = 0; trial < 20; ++trial) {
    std::set<std::pair<int, int>> coords;
    int count = static_cast<int>(rng.uniform_int(1, 10));
    while (static_cast<int>(coords.size()) < count)
      coords.insert({static_cast<int>(rng.uniform_int(0, 7)),
                     static_cast<int>(rng.uniform_int(0, 7))});
    SelectionState s = state_of(0, {coords.begin(), coords.end()});
    TissueMask mask = full_mask(1, 16, 16);
    for (auto& g : mask.grid) g = rng.uniform() < 0.7 ? 1 : 0;
    MagnifyResult r = magnify(s, mask, 2, 2);
    CHECK(r.state.selected.size() <= coords.size() * 4);
    for (const auto& ref : r.state.selected) {
      CHECK(mask.at(ref.u, ref.v));
      CHECK(coords.count(parent_coords(ref.u, ref.v, 2)) == 1);
    }
  }
}

TEST_CASE("hierarchical context walks the ancestor chain") {
  // Three grids with recognizable constant embeddings per cell.
  std::vector<FeatureGrid> grids;
  int dims[3] = {2, 4, 8};
  for (int i = 0; i < 3; ++i) {
    FeatureGrid g;
    g.level_index = i;
    g.grid_w = dims[i];
    g.grid_h = dims[i];
    g.d = 2;
    g.data.assign(static_cast<size_t>(dims[i]) * dims[i] * 2, 0.0f);
    g.foreground.assign(static_cast<size_t>(dims[i]) * dims[i], 1);
    for (int v = 0; v < dims[i]; ++v)
      for (int u = 0; u < dims[i]; ++u) {
        g.feature(u, v)[0] = static_cast<float>(i);
        g.feature(u, v)[1] = static_cast<float>(u * 100 + v);
      }
    grids.push_back(std::move(g));
  }

  CHECK(hierarchical_context(PatchRef{0, 1, 1}, grids, 2).empty());

  auto ctx = hierarchical_context(PatchRef{2, 5, 3}, grids, 2);
  REQUIRE(ctx.size() == 2);
  CHECK(ctx[0][0] == doctest::Approx(0.0));    // level 0 first
  CHECK(ctx[0][1] == doctest::Approx(100.0));  // (1, 0)
  CHECK(ctx[1][0] == doctest::Approx(1.0));
  CHECK(ctx[1][1] == doctest::Approx(201.0));  // (2, 1)

  // context(child) == context(parent) + [embedding(parent)]
  PatchRef child{2, 5, 3};
  PatchRef parent{1, 2, 1};
  auto child_ctx = hierarchical_context(child, grids, 2);
  auto parent_ctx = hierarchical_context(parent, grids, 2);
  REQUIRE(child_ctx.size() == parent_ctx.size() + 1);
  for (size_t i = 0; i < parent_ctx.size(); ++i)
    CHECK(child_ctx[i] == parent_ctx[i]);
  CHECK(child_ctx.back() == grids[1].vector(parent.u, parent.v));
}
