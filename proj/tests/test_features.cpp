#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "paths/common.hpp"
#include "paths/features.hpp"

using namespace paths;
namespace fs = std::filesystem;

namespace {

PathsConfig small_config() {
  PathsConfig c;
  c.n = 3;
  c.M = 2;
  c.s = 16;
  return c;
}

std::pair<PyramidImage, GroundTruth> make_slide(uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.grid_w = 16;
  spec.grid_h = 16;
  spec.lesion_count = 2;
  spec.lesion_grades = {0.5, 0.8};
  return generate_synthetic_slide(spec, small_config());
}

PyramidImage uniform_pyramid(int n, int grid, int s, uint8_t value) {
  PyramidImage p;
  p.patch_size = s;
  for (int i = 0; i < n; ++i) {
    int cells = grid >> (n - 1 - i);
    LevelImage level;
    level.width = cells * s;
    level.height = cells * s;
    level.pixels.assign(static_cast<size_t>(level.width) * level.height * 3,
                        value);
    p.levels.push_back(std::move(level));
  }
  return p;
}

std::vector<TissueMask> all_foreground_masks(const PyramidImage& p) {
  std::vector<TissueMask> masks;
  for (int i = 0; i < p.n_levels(); ++i) {
    TissueMask m;
    m.level_index = i;
    m.grid_w = p.grid_w(i);
    m.grid_h = p.grid_h(i);
    m.grid.assign(static_cast<size_t>(m.grid_w) * m.grid_h, 1);
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace

TEST_CASE("embedding is deterministic and bounded") {
  PatchEncoder enc(32, 7);
  Rng rng(1);
  std::vector<uint8_t> patch(16 * 16 * 3);
  for (auto& b : patch) b = static_cast<uint8_t>(rng.uniform_int(0, 255));
  Eigen::VectorXd a = enc.embed(patch, 16);
  Eigen::VectorXd b = enc.embed(patch, 16);
  CHECK(a == b);
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a[i] > -1.0);
    CHECK(a[i] < 1.0);
  }
}

TEST_CASE("black patch embeds to the zero vector") {
  // All pooled pixels, means and variances vanish, so the projection output
  // and its tanh are exactly zero.
  PatchEncoder enc(32, 7);
  std::vector<uint8_t> black(16 * 16 * 3, 0);
  Eigen::VectorXd e = enc.embed(black, 16);
  CHECK(e.isZero(0.0));
}

TEST_CASE("wrong patch shape is rejected") {
  PatchEncoder enc(32, 7);
  std::vector<uint8_t> bad(10);
  CHECK_THROWS_AS(enc.embed(bad, 16), ShapeError);
}

TEST_CASE("projection is a pure function of the seed") {
  PatchEncoder a(32, 7), b(32, 7), c(32, 8);
  CHECK(a.projection() == b.projection());
  CHECK(a.projection() != c.projection());
}

TEST_CASE("preprocessing overhead stays under 4/3 at M=2") {
  PyramidImage p = uniform_pyramid(5, 16, 16, 100);
  auto masks = all_foreground_masks(p);
  int64_t total = 0;
  for (const auto& m : masks) total += m.count();
  int64_t finest = masks.back().count();
  double ratio = static_cast<double>(total) / static_cast<double>(finest);
  CHECK(ratio == doctest::Approx(1.0 + 0.25 + 0.0625 + 0.015625 + 0.00390625));
  CHECK(ratio <= 4.0 / 3.0 + 1e-9);

  PatchEncoder enc(8, 1);
  auto grids = precompute_feature_grids(p, enc, masks);
  int64_t embedded = 0;
  for (const auto& g : grids)
    for (int v = 0; v < g.grid_h; ++v)
      for (int u = 0; u < g.grid_w; ++u)
        if (g.is_foreground(u, v)) ++embedded;
  CHECK(embedded == total);
}

TEST_CASE("all-background pyramid embeds nothing") {
  PyramidImage p = uniform_pyramid(2, 4, 16, 255);
  std::vector<TissueMask> masks;
  for (int i = 0; i < 2; ++i) {
    TissueMask m;
    m.level_index = i;
    m.grid_w = p.grid_w(i);
    m.grid_h = p.grid_h(i);
    m.grid.assign(static_cast<size_t>(m.grid_w) * m.grid_h, 0);
    masks.push_back(std::move(m));
  }
  PatchEncoder enc(8, 1);
  auto grids = precompute_feature_grids(p, enc, masks);
  for (const auto& g : grids) {
    for (float x : g.data) CHECK(x == 0.0f);
    for (uint8_t f : g.foreground) CHECK(f == 0);
  }
}

TEST_CASE("feature grids are worker-count independent") {
  auto [pyramid, truth] = make_slide(19);
  auto masks = compute_all_masks(pyramid, 0.1);
  PatchEncoder enc(32, 5);
  auto g1 = precompute_feature_grids(pyramid, enc, masks, 1);
  auto g3 = precompute_feature_grids(pyramid, enc, masks, 3);
  auto g8 = precompute_feature_grids(pyramid, enc, masks, 8);
  REQUIRE(g1.size() == g3.size());
  for (size_t i = 0; i < g1.size(); ++i) {
    CHECK(std::memcmp(g1[i].data.data(), g3[i].data.data(),
                      g1[i].data.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(g1[i].data.data(), g8[i].data.data(),
                      g1[i].data.size() * sizeof(float)) == 0);
    CHECK(g1[i].foreground == g3[i].foreground);
  }
}

TEST_CASE("mask and level count mismatch is rejected") {
  auto [pyramid, truth] = make_slide(2);
  auto masks = compute_all_masks(pyramid, 0.1);
  masks.pop_back();
  PatchEncoder enc(32, 5);
  CHECK_THROWS_AS(precompute_feature_grids(pyramid, enc, masks), ShapeError);
}

TEST_CASE("feature grid files round-trip bit-exactly") {
  auto [pyramid, truth] = make_slide(23);
  auto masks = compute_all_masks(pyramid, 0.1);
  PatchEncoder enc(32, 5);
  auto grids = precompute_feature_grids(pyramid, enc, masks);
  fs::path f = fs::temp_directory_path() / "paths_test_grid.bin";
  for (const auto& g : grids) {
    write_feature_grid(g, f);
    FeatureGrid back = read_feature_grid(f);
    CHECK(back.level_index == g.level_index);
    CHECK(back.grid_w == g.grid_w);
    CHECK(back.grid_h == g.grid_h);
    CHECK(back.d == g.d);
    CHECK(back.foreground == g.foreground);
    REQUIRE(back.data.size() == g.data.size());
    CHECK(std::memcmp(back.data.data(), g.data.data(),
                      g.data.size() * sizeof(float)) == 0);
  }
  fs::remove(f);
}

TEST_CASE("empty grid round-trips") {
  FeatureGrid g;
  g.level_index = 0;
  g.grid_w = 0;
  g.grid_h = 0;
  g.d = 4;
  fs::path f = fs::temp_directory_path() / "paths_test_empty_grid.bin";
  write_feature_grid(g, f);
  FeatureGrid back = read_feature_grid(f);
  CHECK(back.grid_w == 0);
  CHECK(back.data.empty());
  fs::remove(f);
}

TEST_CASE("truncated feature files raise format errors") {
  auto [pyramid, truth] = make_slide(29);
  auto masks = compute_all_masks(pyramid, 0.1);
  PatchEncoder enc(16, 5);
  auto grids = precompute_feature_grids(pyramid, enc, masks);
  fs::path f = fs::temp_directory_path() / "paths_test_trunc.bin";
  write_feature_grid(grids[0], f);
  fs::resize_file(f, fs::file_size(f) - 7);
  CHECK_THROWS_AS(read_feature_grid(f), FormatError);
  fs::remove(f);
}
