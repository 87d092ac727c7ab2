#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "paths/analysis.hpp"
#include "paths/common.hpp"
#include "paths/features.hpp"
#include "paths/train.hpp"

using namespace paths;
namespace fs = std::filesystem;

namespace {

ImportanceMap map_of(int level,
                     std::vector<std::tuple<int, int, double>> entries) {
  ImportanceMap m;
  m.level_index = level;
  for (auto [u, v, a] : entries) m.entries[{u, v}] = a;
  return m;
}

// Cell-by-cell reference enumeration.
double heat_oracle(const std::vector<ImportanceMap>& alphas, int u, int v,
                   int M, int n) {
  double heat = 0;
  for (int level = 0; level < n; ++level) {
    int span = 1;
    for (int i = level; i < n - 1; ++i) span *= M;
    auto it = alphas[level].entries.find({u / span, v / span});
    if (it != alphas[level].entries.end())
      heat += it->second / std::pow(2.0, level + 1);
  }
  return heat;
}

}  // namespace

TEST_CASE("nested unit importances sum to three quarters") {
  // Levels are 1-based in the weighting, so the coarsest carries 1/2.
  std::vector<ImportanceMap> alphas = {map_of(0, {{0, 0, 1.0}}),
                                       map_of(1, {{0, 0, 1.0}})};
  HeatmapResult map = importance_heatmap(alphas, 2, 2, 2, 2);
  CHECK(map.at(0, 0) == doctest::Approx(0.75));
  CHECK(map.at(1, 1) == doctest::Approx(0.5));  // covered only at level 0
}

TEST_CASE("unselected cells stay at zero") {
  std::vector<ImportanceMap> alphas = {map_of(0, {{0, 0, 0.8}}),
                                       map_of(1, {{1, 1, 0.6}})};
  HeatmapResult map = importance_heatmap(alphas, 4, 4, 2, 2);
  CHECK(map.at(3, 3) == 0.0);
  CHECK(map.at(2, 2) == 0.0);
  CHECK(map.at(1, 1) == doctest::Approx(0.8 / 2 + 0.6 / 4));
}

TEST_CASE("heat grid matches the per-cell oracle") {
  Rng rng(61);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 3, M = 2, gw = 8, gh = 8;
    std::vector<ImportanceMap> alphas;
    for (int level = 0; level < n; ++level) {
      ImportanceMap m;
      m.level_index = level;
      int dim = gw >> (n - 1 - level);
      for (int v = 0; v < dim; ++v)
        for (int u = 0; u < dim; ++u)
          if (rng.uniform() < 0.5) m.entries[{u, v}] = rng.uniform();
      alphas.push_back(std::move(m));
    }
    HeatmapResult map = importance_heatmap(alphas, gw, gh, M, n);
    for (int v = 0; v < gh; ++v)
      for (int u = 0; u < gw; ++u) {
        double expect = heat_oracle(alphas, u, v, M, n);
        CHECK(map.at(u, v) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(map.at(u, v) >= 0.0);
        CHECK(map.at(u, v) < 1.0);
        if (expect == 0.0) CHECK(map.at(u, v) == 0.0);
      }
  }
}

TEST_CASE("heatmap pgm has a valid 16-bit payload") {
  std::vector<ImportanceMap> alphas = {map_of(0, {{0, 0, 0.5}})};
  HeatmapResult map = importance_heatmap(alphas, 2, 2, 2, 1);
  fs::path f = fs::temp_directory_path() / "paths_test_heat.pgm";
  write_heatmap_pgm(map, f);
  std::ifstream in(f, std::ios::binary);
  std::string magic, hash, word, scale;
  in >> magic >> hash >> word >> scale;
  CHECK(magic == "P5");
  CHECK(hash == "#");
  CHECK(scale == "65535");
  int w, h, maxval;
  in >> w >> h >> maxval;
  CHECK(w == 2);
  CHECK(h == 2);
  CHECK(maxval == 65535);
  in.get();
  std::vector<uint8_t> payload(8);
  in.read(reinterpret_cast<char*>(payload.data()), 8);
  CHECK(in.gcount() == 8);
  // First cell: round(0.25 * 65535) big-endian.
  int expect = static_cast<int>(std::lround(0.25 * 65535));
  CHECK((payload[0] << 8 | payload[1]) == expect);
  CHECK((payload[6] << 8 | payload[7]) == 0);
  fs::remove(f);
}

TEST_CASE("selection csv lists every scored patch") {
  std::vector<ImportanceMap> alphas = {map_of(0, {{1, 0, 0.5}, {0, 0, 0.25}}),
                                       map_of(1, {{2, 3, 0.125}})};
  fs::path f = fs::temp_directory_path() / "paths_test_sel.csv";
  write_selection_csv(alphas, f);
  std::ifstream in(f);
  std::string line;
  std::getline(in, line);
  CHECK(line == "level,u,v,alpha");
  std::getline(in, line);
  CHECK(line == "0,0,0,0.25");
  std::getline(in, line);
  CHECK(line == "0,1,0,0.5");
  std::getline(in, line);
  CHECK(line == "1,2,3,0.125");
  CHECK_FALSE(std::getline(in, line));
  fs::remove(f);
}

TEST_CASE("benchmark counts selected and full patches exactly") {
  PathsConfig c;
  c.n = 3;
  c.M = 2;
  c.K = 4;
  c.s = 16;
  c.d = 16;
  c.w = 16;
  c.h = 8;
  c.h_imp = 8;
  c.L = 1;
  c.heads = 2;
  c.seed = 3;

  SyntheticSpec spec;
  spec.seed = 17;
  spec.grid_w = 16;
  spec.grid_h = 16;
  spec.lesion_count = 2;
  spec.lesion_grades = {0.5, 0.7};
  auto [pyramid, truth] = generate_synthetic_slide(spec, c);
  auto masks = compute_all_masks(pyramid, c.min_tissue_fraction);
  PatchEncoder enc(c.d, c.seed);
  ProcessorParams params = init_params(c, c.seed);

  BenchReport report = run_benchmark(pyramid, enc, masks, params, c, 2);
  CHECK(report.full_total == masks.back().count());
  REQUIRE(report.paths_patches_per_level.size() == 3);

  // Cross-check against the grid-based forward pass.
  auto grids = precompute_feature_grids(pyramid, enc, masks);
  GridFeatureProvider provider(grids);
  ForwardOutputs out = run_forward(provider, params, c, {}, c.seed);
  int64_t total = 0;
  for (int i = 0; i < 3; ++i) {
    auto selected = static_cast<int64_t>(out.selections[i].selected.size());
    CHECK(report.paths_patches_per_level[i] == selected);
    total += selected;
  }
  CHECK(report.paths_total == total);
  CHECK(report.paths_total <=
        static_cast<int64_t>(out.selections[0].selected.size()) +
            (c.n - 1) * c.M * c.M * c.K);
  CHECK(report.patch_ratio ==
        doctest::Approx(static_cast<double>(total) / report.full_total));
  CHECK(report.repeats == 2);
  CHECK(report.paths_run.mean_ms > 0.0);

  CHECK_THROWS_AS(run_benchmark(pyramid, enc, masks, params, c, 0),
                  ConfigError);
}

TEST_CASE("report json carries the count fields") {
  BenchReport r;
  r.paths_patches_per_level = {4, 8};
  r.paths_total = 12;
  r.full_total = 64;
  r.patch_ratio = 12.0 / 64.0;
  std::string j = r.to_json();
  CHECK(j.find("\"paths_total\": 12") != std::string::npos);
  CHECK(j.find("\"full_total\": 64") != std::string::npos);
}
