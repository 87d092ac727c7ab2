#include "paths/features.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "paths/common.hpp"

namespace paths {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "feature files assume a little-endian host");

PatchEncoder::PatchEncoder(int d, uint64_t seed) : d_(d), seed_(seed) {
  if (d <= 0) throw ConfigError("encoder dimension must be positive");
  Rng rng(derive_seed(seed, "encoder-projection"));
  projection_.resize(d, kStatsDim);
  const double a = 1.0 / std::sqrt(static_cast<double>(kStatsDim));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < kStatsDim; ++j) projection_(i, j) = rng.uniform(-a, a);
}

Eigen::VectorXd PatchEncoder::stats(const std::vector<uint8_t>& patch,
                                    int s) const {
  if (s < kPoolSize || patch.size() != static_cast<size_t>(s) * s * 3)
    throw ShapeError("embed_patch: expected s*s*3 bytes with s >= 8");
  Eigen::VectorXd x(kStatsDim);
  // Box-average to an 8x8x3 block, pixel values scaled to [0,1].
  for (int by = 0; by < kPoolSize; ++by) {
    int y0 = by * s / kPoolSize, y1 = (by + 1) * s / kPoolSize;
    for (int bx = 0; bx < kPoolSize; ++bx) {
      int x0 = bx * s / kPoolSize, x1 = (bx + 1) * s / kPoolSize;
      double sum[3] = {0, 0, 0};
      for (int y = y0; y < y1; ++y)
        for (int x2 = x0; x2 < x1; ++x2) {
          const uint8_t* p =
              patch.data() + 3 * (static_cast<size_t>(y) * s + x2);
          for (int c = 0; c < 3; ++c) sum[c] += p[c];
        }
      double cnt = static_cast<double>((y1 - y0) * (x1 - x0)) * 255.0;
      for (int c = 0; c < 3; ++c)
        x[(by * kPoolSize + bx) * 3 + c] = sum[c] / cnt;
    }
  }
  // Per-channel mean and population variance over the full patch.
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (size_t i = c; i < patch.size(); i += 3) mean += patch[i] / 255.0;
    mean /= static_cast<double>(s) * s;
    double var = 0.0;
    for (size_t i = c; i < patch.size(); i += 3) {
      double dv = patch[i] / 255.0 - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(s) * s;
    x[kPoolSize * kPoolSize * 3 + c] = mean;
    x[kPoolSize * kPoolSize * 3 + 3 + c] = var;
  }
  return x;
}

Eigen::VectorXd PatchEncoder::embed(const std::vector<uint8_t>& patch,
                                    int s) const {
  return (projection_ * stats(patch, s)).array().tanh();
}

std::vector<TissueMask> compute_all_masks(const PyramidImage& pyramid,
                                          double min_tissue_fraction) {
  std::vector<TissueMask> masks;
  for (int i = 0; i < pyramid.n_levels(); ++i) {
    TissueMask m = compute_tissue_mask(pyramid.levels[i], pyramid.patch_size,
                                       min_tissue_fraction);
    m.level_index = i;
    masks.push_back(std::move(m));
  }
  return masks;
}

std::vector<FeatureGrid> precompute_feature_grids(
    const PyramidImage& pyramid, const PatchEncoder& enc,
    const std::vector<TissueMask>& masks, int workers) {
  if (static_cast<int>(masks.size()) != pyramid.n_levels())
    throw ShapeError("precompute: mask count does not match level count");
  if (workers < 1) workers = 1;

  std::vector<FeatureGrid> grids(pyramid.n_levels());
  for (int i = 0; i < pyramid.n_levels(); ++i) {
    const TissueMask& mask = masks[i];
    if (mask.grid_w != pyramid.grid_w(i) || mask.grid_h != pyramid.grid_h(i))
      throw ShapeError("precompute: mask dimensions do not match level " +
                       std::to_string(i));
    FeatureGrid& g = grids[i];
    g.level_index = i;
    g.magnification = pyramid.levels[i].magnification;
    g.grid_w = mask.grid_w;
    g.grid_h = mask.grid_h;
    g.d = enc.d();
    g.data.assign(static_cast<size_t>(g.grid_w) * g.grid_h * g.d, 0.0f);
    g.foreground = mask.grid;

    std::vector<std::pair<int, int>> todo;
    for (int v = 0; v < g.grid_h; ++v)
      for (int u = 0; u < g.grid_w; ++u)
        if (mask.at(u, v)) todo.emplace_back(u, v);

    auto work = [&](size_t begin, size_t end) {
      for (size_t k = begin; k < end; ++k) {
        auto [u, v] = todo[k];
        Eigen::VectorXd e = enc.embed(
            extract_patch(pyramid, PatchRef{i, u, v}), pyramid.patch_size);
        float* dst = g.feature(u, v);
        for (int j = 0; j < g.d; ++j) dst[j] = static_cast<float>(e[j]);
      }
    };
    if (workers == 1 || todo.size() < 2) {
      work(0, todo.size());
    } else {
      std::vector<std::thread> pool;
      size_t chunk = (todo.size() + workers - 1) / workers;
      for (int t = 0; t < workers; ++t) {
        size_t begin = std::min(todo.size(), t * chunk);
        size_t end = std::min(todo.size(), begin + chunk);
        if (begin < end) pool.emplace_back(work, begin, end);
      }
      for (auto& th : pool) th.join();
    }
  }
  return grids;
}

void write_feature_grid(const FeatureGrid& grid,
                        const std::filesystem::path& file) {
  json header;
  header["level"] = grid.level_index;
  header["magnification"] = grid.magnification;
  header["grid_w"] = grid.grid_w;
  header["grid_h"] = grid.grid_h;
  header["d"] = grid.d;
  header["dtype"] = "f32";
  header["order"] = "row-major, v-major then u";
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(grid.foreground.data()),
            static_cast<std::streamsize>(grid.foreground.size()));
  out.write(reinterpret_cast<const char*>(grid.data.data()),
            static_cast<std::streamsize>(grid.data.size() * sizeof(float)));
  if (!out) throw DataError("short write to " + file.string());
}

FeatureGrid read_feature_grid(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line))
    throw FormatError(file.string() + ": missing header at byte 0");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": bad header at byte 0: " + e.what());
  }
  FeatureGrid grid;
  try {
    grid.level_index = header.at("level").get<int>();
    grid.magnification = header.at("magnification").get<double>();
    grid.grid_w = header.at("grid_w").get<int>();
    grid.grid_h = header.at("grid_h").get<int>();
    grid.d = header.at("d").get<int>();
    if (header.at("dtype").get<std::string>() != "f32")
      throw FormatError(file.string() + ": unsupported dtype");
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": incomplete header: " + e.what());
  }
  if (grid.grid_w < 0 || grid.grid_h < 0 || grid.d < 0)
    throw FormatError(file.string() + ": negative dimensions in header");
  size_t cells = static_cast<size_t>(grid.grid_w) * grid.grid_h;
  size_t header_bytes = line.size() + 1;

  grid.foreground.resize(cells);
  in.read(reinterpret_cast<char*>(grid.foreground.data()),
          static_cast<std::streamsize>(cells));
  if (in.gcount() != static_cast<std::streamsize>(cells))
    throw FormatError(file.string() + ": truncated mask at byte " +
                      std::to_string(header_bytes + in.gcount()));

  grid.data.resize(cells * grid.d);
  in.read(reinterpret_cast<char*>(grid.data.data()),
          static_cast<std::streamsize>(grid.data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(grid.data.size() *
                                                  sizeof(float)))
    throw FormatError(file.string() + ": truncated payload at byte " +
                      std::to_string(header_bytes + cells + in.gcount()));
  char extra;
  if (in.read(&extra, 1))
    throw FormatError(file.string() + ": trailing bytes after payload");
  for (float v : grid.data)
    if (!std::isfinite(v))
      throw FormatError(file.string() + ": non-finite feature value");
  return grid;
}

}  // namespace paths
