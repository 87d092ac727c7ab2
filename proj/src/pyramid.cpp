#include "paths/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "paths/common.hpp"

namespace paths {

using nlohmann::json;

int TissueMask::count() const {
  int c = 0;
  for (uint8_t g : grid) c += (g != 0);
  return c;
}

std::vector<double> build_level_magnifications(double m1, int M, int n) {
  if (m1 <= 0) throw ConfigError("m1 must be positive");
  if (M < 2) throw ConfigError("M must be >= 2");
  if (n < 1) throw ConfigError("n must be >= 1");
  std::vector<double> mags(n);
  double m = m1;
  for (int i = 0; i < n; ++i) {
    mags[i] = m;
    m *= M;
  }
  return mags;
}

uint8_t grayscale(uint8_t r, uint8_t g, uint8_t b) {
  double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<uint8_t>(std::lround(std::min(255.0, y)));
}

LevelImage downsample_box(const LevelImage& level, int factor) {
  if (factor < 1 || level.width % factor != 0 || level.height % factor != 0)
    throw ShapeError("downsample factor must divide level dimensions");
  LevelImage out;
  out.magnification = level.magnification / factor;
  out.width = level.width / factor;
  out.height = level.height / factor;
  out.pixels.resize(static_cast<size_t>(out.width) * out.height * 3);
  const uint32_t area = static_cast<uint32_t>(factor) * factor;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      uint32_t sum[3] = {0, 0, 0};
      for (int dy = 0; dy < factor; ++dy) {
        const uint8_t* row = level.at(x * factor, y * factor + dy);
        for (int dx = 0; dx < factor; ++dx)
          for (int c = 0; c < 3; ++c) sum[c] += row[3 * dx + c];
      }
      uint8_t* dst = out.at(x, y);
      for (int c = 0; c < 3; ++c)
        dst[c] = static_cast<uint8_t>((sum[c] + area / 2) / area);
    }
  }
  return out;
}

int otsu_threshold(const std::array<uint64_t, 256>& histogram) {
  uint64_t total = std::accumulate(histogram.begin(), histogram.end(),
                                   static_cast<uint64_t>(0));
  if (total == 0) throw DataError("otsu: empty histogram");

  int lo = 0, hi = 255;
  while (histogram[lo] == 0) ++lo;
  while (histogram[hi] == 0) --hi;
  if (lo == hi) return lo;  // single intensity: nothing to separate

  double total_mean = 0.0;
  for (int i = 0; i < 256; ++i)
    total_mean += static_cast<double>(i) * histogram[i];
  total_mean /= static_cast<double>(total);

  // Class 0 = intensities < t, class 1 = intensities >= t.
  int best_t = 0;
  double best_var = -1.0;
  double w0 = 0.0, sum0 = 0.0;
  for (int t = 0; t <= 255; ++t) {
    if (t > 0) {
      w0 += histogram[t - 1];
      sum0 += static_cast<double>(t - 1) * histogram[t - 1];
    }
    double w1 = static_cast<double>(total) - w0;
    double var = 0.0;
    if (w0 > 0 && w1 > 0) {
      double mu0 = sum0 / w0;
      double mu1 = (total_mean * total - sum0) / w1;
      var = (w0 / total) * (w1 / total) * (mu1 - mu0) * (mu1 - mu0);
    }
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  return best_t;
}

TissueMask compute_tissue_mask(const LevelImage& level, int s,
                               double min_tissue_fraction) {
  if (s <= 0 || level.width % s != 0 || level.height % s != 0)
    throw ShapeError("patch size must divide level dimensions");
  std::array<uint64_t, 256> hist{};
  for (int y = 0; y < level.height; ++y)
    for (int x = 0; x < level.width; ++x) {
      const uint8_t* p = level.at(x, y);
      hist[grayscale(p[0], p[1], p[2])]++;
    }
  int threshold = otsu_threshold(hist);

  TissueMask mask;
  mask.level_index = 0;
  mask.grid_w = level.width / s;
  mask.grid_h = level.height / s;
  mask.grid.assign(static_cast<size_t>(mask.grid_w) * mask.grid_h, 0);
  const int per_patch = s * s;
  for (int v = 0; v < mask.grid_h; ++v)
    for (int u = 0; u < mask.grid_w; ++u) {
      int tissue = 0;
      for (int y = v * s; y < (v + 1) * s; ++y)
        for (int x = u * s; x < (u + 1) * s; ++x) {
          const uint8_t* p = level.at(x, y);
          if (grayscale(p[0], p[1], p[2]) < threshold) ++tissue;
        }
      double frac = static_cast<double>(tissue) / per_patch;
      mask.grid[static_cast<size_t>(v) * mask.grid_w + u] =
          frac >= min_tissue_fraction ? 1 : 0;
    }
  return mask;
}

std::vector<uint8_t> extract_patch(const PyramidImage& pyramid,
                                   const PatchRef& ref) {
  if (ref.level < 0 || ref.level >= pyramid.n_levels())
    throw BoundsError("extract_patch: level out of range");
  const LevelImage& level = pyramid.levels[ref.level];
  const int s = pyramid.patch_size;
  if (ref.u < 0 || ref.v < 0 || ref.u >= pyramid.grid_w(ref.level) ||
      ref.v >= pyramid.grid_h(ref.level))
    throw BoundsError("extract_patch: patch coordinates out of range");
  std::vector<uint8_t> patch(static_cast<size_t>(s) * s * 3);
  for (int y = 0; y < s; ++y)
    std::copy_n(level.at(ref.u * s, ref.v * s + y), s * 3,
                patch.data() + static_cast<size_t>(y) * s * 3);
  return patch;
}

namespace {

struct Ellipse {
  double cx, cy, a, b;
  bool contains(double x, double y) const {
    double dx = (x - cx) / a, dy = (y - cy) / b;
    return dx * dx + dy * dy <= 1.0;
  }
};

struct LesionRect {
  int u0, v0, wp, hp;  // patch coordinates at the finest level
  double grade;
  bool contains_pixel(int x, int y, int s) const {
    int u = x / s, v = y / s;
    return u >= u0 && u < u0 + wp && v >= v0 && v < v0 + hp;
  }
};

uint8_t clamp8(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace

std::pair<PyramidImage, GroundTruth> generate_synthetic_slide(
    const SyntheticSpec& spec, const PathsConfig& config) {
  const int M = config.M, n = config.n, s = config.s;
  int scale = 1;
  for (int i = 1; i < n; ++i) scale *= M;
  if (spec.grid_w % scale != 0 || spec.grid_h % scale != 0)
    throw DataError("synthetic spec: base grid not divisible by M^(n-1)");
  if (!spec.lesion_grades.empty() &&
      static_cast<int>(spec.lesion_grades.size()) != spec.lesion_count)
    throw DataError("synthetic spec: lesion_grades size mismatch");

  Rng rng(derive_seed(spec.seed, "synthetic-slide"));

  const int W = spec.grid_w * s, H = spec.grid_h * s;
  double f = std::clamp(spec.background_tissue_fraction, 0.0, 1.0);
  Ellipse tissue{W * 0.5 + rng.uniform(-0.04, 0.04) * W,
                 H * 0.5 + rng.uniform(-0.04, 0.04) * H, 1.0, 1.0};
  double r = rng.uniform(0.9, 1.1);
  tissue.a = W * std::sqrt(f / M_PI) * r;
  tissue.b = H * std::sqrt(f / M_PI) / r;

  // Place lesions fully inside the tissue ellipse.
  std::vector<LesionRect> lesions;
  for (int j = 0; j < spec.lesion_count; ++j) {
    double grade = spec.lesion_grades.empty() ? rng.uniform(0.2, 1.0)
                                              : spec.lesion_grades[j];
    int wp = static_cast<int>(rng.uniform_int(2, 3));
    int hp = static_cast<int>(rng.uniform_int(2, 3));
    for (int attempt = 0; attempt < 200; ++attempt) {
      int u0 = static_cast<int>(rng.uniform_int(0, spec.grid_w - wp));
      int v0 = static_cast<int>(rng.uniform_int(0, spec.grid_h - hp));
      double x0 = u0 * s, x1 = (u0 + wp) * s;
      double y0 = v0 * s, y1 = (v0 + hp) * s;
      if (tissue.contains(x0, y0) && tissue.contains(x1, y0) &&
          tissue.contains(x0, y1) && tissue.contains(x1, y1)) {
        bool overlaps = false;
        for (const auto& l : lesions)
          if (u0 < l.u0 + l.wp && l.u0 < u0 + wp && v0 < l.v0 + l.hp &&
              l.v0 < v0 + hp)
            overlaps = true;
        if (overlaps) continue;
        lesions.push_back({u0, v0, wp, hp, grade});
        break;
      }
    }
  }

  // Smooth low-frequency tissue shading.
  double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
  double px = rng.uniform(0.0, 2 * M_PI), py = rng.uniform(0.0, 2 * M_PI);

  LevelImage finest;
  finest.magnification = config.m1 * scale;
  finest.width = W;
  finest.height = H;
  finest.pixels.resize(static_cast<size_t>(W) * H * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      uint8_t* px3 = finest.at(x, y);
      if (!tissue.contains(x, y)) {
        // near-white scanner background
        double noise = rng.uniform(-3.0, 3.0);
        px3[0] = px3[1] = px3[2] = clamp8(250.0 + noise);
        continue;
      }
      double shade = 12.0 * std::sin(2 * M_PI * fx * x / W + px) *
                     std::sin(2 * M_PI * fy * y / H + py);
      double jitter = rng.uniform(-8.0, 8.0);
      double rr = 185.0 + shade + jitter;
      double gg = 140.0 + shade + jitter;
      double bb = 168.0 + shade + jitter;
      for (const auto& l : lesions) {
        if (l.contains_pixel(x, y, s)) {
          // High-frequency checker whose mean shift and contrast both grow
          // with the lesion grade, so the grade survives downsampling (mean)
          // and is visible in patch statistics (variance).
          int cell = ((x / 2) + (y / 2)) % 2;
          double sign = cell ? 1.0 : -1.0;
          double shift = 90.0 * l.grade;
          double contrast = 60.0 * l.grade;
          rr += -0.4 * shift + sign * contrast;
          gg += -shift + sign * contrast;
          bb += -0.7 * shift + sign * contrast;
          break;
        }
      }
      px3[0] = clamp8(rr);
      px3[1] = clamp8(gg);
      px3[2] = clamp8(bb);
    }
  }

  PyramidImage pyramid;
  pyramid.slide_id = "synthetic_" + std::to_string(spec.seed);
  pyramid.patch_size = s;
  pyramid.base_magnification = finest.magnification;
  pyramid.levels.assign(n, LevelImage{});
  pyramid.levels[n - 1] = std::move(finest);
  for (int i = n - 2; i >= 0; --i)
    pyramid.levels[i] = downsample_box(pyramid.levels[i + 1], M);

  GroundTruth truth;
  truth.lesions.resize(n);
  std::set<std::pair<int, int>> coords;
  for (const auto& l : lesions)
    for (int v = l.v0; v < l.v0 + l.hp; ++v)
      for (int u = l.u0; u < l.u0 + l.wp; ++u) coords.insert({u, v});
  for (int i = n - 1; i >= 0; --i) {
    truth.lesions[i].assign(coords.begin(), coords.end());
    std::set<std::pair<int, int>> parents;
    for (auto [u, v] : coords) parents.insert({u / M, v / M});
    coords = std::move(parents);
  }
  double survive = 1.0;
  for (const auto& l : lesions) survive *= 1.0 - l.grade;
  truth.risk = 1.0 - survive;  // baseline 0 when no lesion is present
  return {std::move(pyramid), std::move(truth)};
}

void write_ppm(const LevelImage& level, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out << "P6\n" << level.width << " " << level.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(level.pixels.data()),
            static_cast<std::streamsize>(level.pixels.size()));
  if (!out) throw DataError("short write to " + file.string());
}

LevelImage read_ppm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError(file.string() + ": not a P6 PPM");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError(file.string() + ": bad PPM header");
  in.get();  // single whitespace after maxval
  LevelImage level;
  level.width = w;
  level.height = h;
  level.pixels.resize(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(level.pixels.data()),
          static_cast<std::streamsize>(level.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(level.pixels.size()))
    throw FormatError(file.string() + ": truncated pixel payload at byte " +
                      std::to_string(in.gcount()));
  return level;
}

void save_pyramid(const PyramidImage& pyramid, const GroundTruth& truth,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["slide_id"] = pyramid.slide_id;
  meta["n"] = pyramid.n_levels();
  meta["patch_size"] = pyramid.patch_size;
  meta["m1"] = pyramid.levels.front().magnification;
  meta["M"] = pyramid.n_levels() > 1
                  ? static_cast<int>(std::lround(pyramid.levels[1].magnification /
                                                 pyramid.levels[0].magnification))
                  : 2;
  json levels = json::array();
  for (const auto& l : pyramid.levels)
    levels.push_back({{"width", l.width},
                      {"height", l.height},
                      {"magnification", l.magnification}});
  meta["levels"] = levels;
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

  for (int i = 0; i < pyramid.n_levels(); ++i)
    write_ppm(pyramid.levels[i], dir / ("level_" + std::to_string(i) + ".ppm"));

  json t;
  t["risk"] = truth.risk;
  json lv = json::array();
  for (const auto& level : truth.lesions) {
    json arr = json::array();
    for (auto [u, v] : level) arr.push_back({u, v});
    lv.push_back(arr);
  }
  t["lesions"] = lv;
  std::ofstream(dir / "truth.json") << t.dump(2) << "\n";
}

PyramidImage load_pyramid(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw DataError("cannot open " + (dir / "meta.json").string());
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::exception& e) {
    throw FormatError((dir / "meta.json").string() + ": " + e.what());
  }
  PyramidImage pyramid;
  pyramid.slide_id = meta.at("slide_id").get<std::string>();
  pyramid.patch_size = meta.at("patch_size").get<int>();
  int n = meta.at("n").get<int>();
  for (int i = 0; i < n; ++i) {
    LevelImage level = read_ppm(dir / ("level_" + std::to_string(i) + ".ppm"));
    const auto& lm = meta.at("levels").at(i);
    level.magnification = lm.at("magnification").get<double>();
    if (level.width != lm.at("width").get<int>() ||
        level.height != lm.at("height").get<int>())
      throw FormatError("level " + std::to_string(i) +
                        " dimensions disagree with meta.json");
    pyramid.levels.push_back(std::move(level));
  }
  pyramid.base_magnification = pyramid.levels.back().magnification;
  return pyramid;
}

GroundTruth load_ground_truth(const std::filesystem::path& dir) {
  std::ifstream in(dir / "truth.json");
  if (!in) throw DataError("cannot open " + (dir / "truth.json").string());
  json t;
  try {
    in >> t;
  } catch (const json::exception& e) {
    throw FormatError((dir / "truth.json").string() + ": " + e.what());
  }
  GroundTruth truth;
  truth.risk = t.at("risk").get<double>();
  for (const auto& level : t.at("lesions")) {
    std::vector<std::pair<int, int>> coords;
    for (const auto& c : level)
      coords.emplace_back(c.at(0).get<int>(), c.at(1).get<int>());
    truth.lesions.push_back(std::move(coords));
  }
  return truth;
}

}  // namespace paths
