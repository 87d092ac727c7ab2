#include "paths/analysis.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "paths/common.hpp"

namespace paths {

HeatmapResult importance_heatmap(const std::vector<ImportanceMap>& alphas,
                                 int grid_w, int grid_h, int M, int n) {
  if (static_cast<int>(alphas.size()) != n)
    throw ShapeError("importance_heatmap: expected one importance map per level");
  HeatmapResult map;
  map.grid_w = grid_w;
  map.grid_h = grid_h;
  map.heat.assign(static_cast<size_t>(grid_w) * grid_h, 0.0);

  for (int level = 0; level < n; ++level) {
    // Ancestor at this level covers an M^(n-1-level) square of finest cells.
    int span = 1;
    for (int i = level; i < n - 1; ++i) span *= M;
    double weight = std::ldexp(1.0, -(level + 1));  // 1/2^(level+1)
    for (const auto& [coord, alpha] : alphas[level].entries) {
      for (int dv = 0; dv < span; ++dv) {
        int v = coord.second * span + dv;
        for (int du = 0; du < span; ++du) {
          int u = coord.first * span + du;
          if (u >= grid_w || v >= grid_h)
            throw BoundsError("importance_heatmap: patch outside the grid");
          map.heat[static_cast<size_t>(v) * grid_w + u] += weight * alpha;
        }
      }
    }
  }
  return map;
}

void write_heatmap_pgm(const HeatmapResult& map,
                       const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out << "P5\n# scale 65535\n" << map.grid_w << " " << map.grid_h << "\n65535\n";
  for (double h : map.heat) {
    double clamped = std::min(std::max(h, 0.0), 1.0);
    auto pix = static_cast<uint16_t>(std::lround(clamped * 65535.0));
    out.put(static_cast<char>(pix >> 8));  // big-endian per PGM
    out.put(static_cast<char>(pix & 0xff));
  }
  if (!out) throw DataError("short write to " + file.string());
}

void write_selection_csv(const std::vector<ImportanceMap>& alphas,
                         const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << "level,u,v,alpha\n";
  out.precision(17);
  for (const auto& map : alphas)
    for (const auto& [coord, alpha] : map.entries)
      out << map.level_index << "," << coord.first << "," << coord.second
          << "," << alpha << "\n";
}

std::string BenchReport::to_json() const {
  nlohmann::json j;
  j["paths_patches_per_level"] = paths_patches_per_level;
  j["paths_total"] = paths_total;
  j["full_total"] = full_total;
  j["patch_ratio"] = patch_ratio;
  j["repeats"] = repeats;
  j["paths_run_ms"] = {{"mean", paths_run.mean_ms}, {"sem", paths_run.sem_ms}};
  j["full_embed_ms"] = {{"mean", full_embed.mean_ms},
                        {"sem", full_embed.sem_ms}};
  return j.dump(2);
}

namespace {

BenchStat stat_of(const std::vector<double>& samples) {
  BenchStat s;
  double n = static_cast<double>(samples.size());
  for (double x : samples) s.mean_ms += x;
  s.mean_ms /= n;
  if (samples.size() > 1) {
    double var = 0.0;
    for (double x : samples) var += (x - s.mean_ms) * (x - s.mean_ms);
    var /= (n - 1.0);
    s.sem_ms = std::sqrt(var / n);
  }
  return s;
}

}  // namespace

BenchReport run_benchmark(const PyramidImage& pyramid, const PatchEncoder& enc,
                          const std::vector<TissueMask>& masks,
                          const ProcessorParams& params,
                          const PathsConfig& config, int repeats) {
  if (repeats < 1) throw ConfigError("run_benchmark: repeats must be >= 1");
  using clock = std::chrono::steady_clock;
  BenchReport report;
  report.repeats = repeats;

  std::vector<double> paths_ms, full_ms;
  for (int r = 0; r < repeats; ++r) {
    LazyPyramidProvider provider(pyramid, enc, masks);
    auto t0 = clock::now();
    ForwardOutputs out =
        run_forward(provider, params, config, config.ablation, config.seed);
    paths_ms.push_back(
        std::chrono::duration<double, std::milli>(clock::now() - t0).count());

    if (r == 0) {
      for (int i = 0; i < config.n; ++i) {
        auto selected = static_cast<int64_t>(out.selections[i].selected.size());
        if (provider.embed_counts()[i] != selected)
          throw StateError("run_benchmark: embed count disagrees with selection");
        report.paths_patches_per_level.push_back(selected);
        report.paths_total += selected;
      }
    }

    // Full-slide ingestion embeds every foreground patch of the finest level.
    int finest = pyramid.n_levels() - 1;
    auto t1 = clock::now();
    for (int v = 0; v < pyramid.grid_h(finest); ++v)
      for (int u = 0; u < pyramid.grid_w(finest); ++u)
        if (masks[finest].at(u, v)) {
          volatile double sink =
              enc.embed(extract_patch(pyramid, PatchRef{finest, u, v}),
                        pyramid.patch_size)[0];
          (void)sink;
        }
    full_ms.push_back(
        std::chrono::duration<double, std::milli>(clock::now() - t1).count());
  }

  report.full_total = masks[pyramid.n_levels() - 1].count();
  report.patch_ratio = static_cast<double>(report.paths_total) /
                       static_cast<double>(report.full_total);
  report.paths_run = stat_of(paths_ms);
  report.full_embed = stat_of(full_ms);
  return report;
}

}  // namespace paths
