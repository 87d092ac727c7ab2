#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "paths/config.hpp"

namespace paths {

// One magnification level: 8-bit RGB raster, dimensions multiples of the
// pyramid patch size.
struct LevelImage {
  double magnification = 1.0;
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // width*height*3, row-major

  const uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
  }
  uint8_t* at(int x, int y) {
    return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
  }
};

// Levels ordered coarse -> fine; level i+1 is exactly M x the size of level i.
struct PyramidImage {
  std::string slide_id;
  std::vector<LevelImage> levels;
  int patch_size = 0;
  double base_magnification = 1.0;  // magnification of the finest level

  int n_levels() const { return static_cast<int>(levels.size()); }
  int grid_w(int level) const { return levels[level].width / patch_size; }
  int grid_h(int level) const { return levels[level].height / patch_size; }
};

struct TissueMask {
  int level_index = 0;
  int grid_w = 0;
  int grid_h = 0;
  std::vector<uint8_t> grid;  // v-major: grid[v*grid_w + u]

  bool at(int u, int v) const {
    return grid[static_cast<size_t>(v) * grid_w + u] != 0;
  }
  int count() const;
};

struct SyntheticSpec {
  uint64_t seed = 0;
  int grid_w = 16;  // finest-level patch grid
  int grid_h = 16;
  int lesion_count = 0;
  std::vector<double> lesion_grades;     // one per lesion, in [0,1]
  double background_tissue_fraction = 0.7;
};

struct GroundTruth {
  // lesions[i] = lesion patch coordinates (u,v) at level i, coarse -> fine.
  std::vector<std::vector<std::pair<int, int>>> lesions;
  double risk = 0.0;
};

// [m1, M*m1, ..., M^(n-1)*m1].
std::vector<double> build_level_magnifications(double m1, int M, int n);

std::pair<PyramidImage, GroundTruth> generate_synthetic_slide(
    const SyntheticSpec& spec, const PathsConfig& config);

// Between-class-variance maximizing threshold; ties toward the lowest value.
// Pixels strictly below the returned threshold are treated as tissue.
int otsu_threshold(const std::array<uint64_t, 256>& histogram);

TissueMask compute_tissue_mask(const LevelImage& level, int s,
                               double min_tissue_fraction);

struct PatchRef {
  int level = 0;
  int u = 0;
  int v = 0;

  auto operator<=>(const PatchRef&) const = default;
};

// Pure read of patch (u,v) at the referenced level; s*s*3 bytes.
std::vector<uint8_t> extract_patch(const PyramidImage& pyramid,
                                   const PatchRef& ref);

// Box-filter downsample by an integer factor; rounds half away from zero.
LevelImage downsample_box(const LevelImage& level, int factor);

uint8_t grayscale(uint8_t r, uint8_t g, uint8_t b);

// Pyramid store: <dir>/meta.json, level_<i>.ppm (P6), truth.json.
void save_pyramid(const PyramidImage& pyramid, const GroundTruth& truth,
                  const std::filesystem::path& dir);
PyramidImage load_pyramid(const std::filesystem::path& dir);
GroundTruth load_ground_truth(const std::filesystem::path& dir);

void write_ppm(const LevelImage& level, const std::filesystem::path& file);
LevelImage read_ppm(const std::filesystem::path& file);

}  // namespace paths
