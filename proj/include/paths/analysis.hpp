#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "paths/config.hpp"
#include "paths/model.hpp"

namespace paths {

// Finest-resolution attention map. Each finest cell accumulates
// alpha / 2^i from its scored ancestor at level i (1-based, coarsest = 1),
// so values stay in [0, 1).
struct HeatmapResult {
  int grid_w = 0;
  int grid_h = 0;
  std::vector<double> heat;  // v-major

  double at(int u, int v) const {
    return heat[static_cast<size_t>(v) * grid_w + u];
  }
};

HeatmapResult importance_heatmap(const std::vector<ImportanceMap>& alphas,
                                 int grid_w, int grid_h, int M, int n);

// 16-bit binary PGM (P5, maxval 65535); pixel = round(heat * 65535).
void write_heatmap_pgm(const HeatmapResult& map,
                       const std::filesystem::path& file);

// CSV `level,u,v,alpha`, rows ordered by level then (u,v).
void write_selection_csv(const std::vector<ImportanceMap>& alphas,
                         const std::filesystem::path& file);

struct BenchStat {
  double mean_ms = 0.0;
  double sem_ms = 0.0;
};

struct BenchReport {
  std::vector<int64_t> paths_patches_per_level;
  int64_t paths_total = 0;
  int64_t full_total = 0;  // every foreground patch at the finest level
  double patch_ratio = 0.0;
  BenchStat paths_run;   // lazy embed + forward
  BenchStat full_embed;  // embedding the whole pyramid
  int repeats = 0;
  std::string to_json() const;
};

// Embed counts from the lazy provider must match the selection sizes; the
// report throws StateError when they disagree.
BenchReport run_benchmark(const PyramidImage& pyramid, const PatchEncoder& enc,
                          const std::vector<TissueMask>& masks,
                          const ProcessorParams& params,
                          const PathsConfig& config, int repeats);

}  // namespace paths
