#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "paths/analysis.hpp"
#include "paths/common.hpp"
#include "paths/config.hpp"
#include "paths/features.hpp"
#include "paths/model.hpp"
#include "paths/pyramid.hpp"
#include "paths/survival.hpp"
#include "paths/train.hpp"

namespace fs = std::filesystem;
using namespace paths;

namespace {

PathsConfig resolve_config(const std::string& config_path,
                           std::optional<uint64_t> seed) {
  PathsConfig config =
      config_path.empty() ? PathsConfig::desk_profile() : load_config(config_path);
  if (seed) config.seed = *seed;
  config.validate();
  return config;
}

std::string slide_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "slide_%04d", i);
  return buf;
}

int run_synth(const std::string& out_dir, const PathsConfig& config,
              int count) {
  fs::create_directories(out_dir);
  std::vector<SurvivalRecord> labels;
  for (int i = 0; i < count; ++i) {
    uint64_t slide_seed =
        derive_seed(config.seed, "synth-slide-" + std::to_string(i));
    Rng rng(derive_seed(slide_seed, "slide-spec"));

    SyntheticSpec spec;
    spec.seed = slide_seed;
    spec.grid_w = 16;
    spec.grid_h = 16;
    spec.lesion_count = static_cast<int>(rng.uniform_int(2, 3));
    for (int l = 0; l < spec.lesion_count; ++l)
      spec.lesion_grades.push_back(rng.uniform(0.1, 0.9));
    spec.background_tissue_fraction = rng.uniform(0.55, 0.8);

    auto [pyramid, truth] = generate_synthetic_slide(spec, config);
    pyramid.slide_id = slide_name(i);
    save_pyramid(pyramid, truth, fs::path(out_dir) / pyramid.slide_id);

    SurvivalRecord rec;
    rec.slide_id = pyramid.slide_id;
    // Event times fall with risk; light multiplicative noise keeps the
    // ordering learnable without being trivial.
    double noise = rng.normal() * 0.05;
    rec.time = 1000.0 * std::exp(-2.0 * truth.risk + noise);
    rec.censored = rng.uniform() < 0.1;
    if (rec.censored) rec.time *= rng.uniform(0.5, 0.95);
    labels.push_back(rec);
  }
  save_labels(labels, fs::path(out_dir) / "labels.csv");
  return 0;
}

int run_embed(const std::string& slide_dir, const std::string& out_dir,
              const PathsConfig& config, int workers) {
  PyramidImage pyramid = load_pyramid(slide_dir);
  auto masks = compute_all_masks(pyramid, config.min_tissue_fraction);
  PatchEncoder enc(config.d, config.seed);
  auto grids = precompute_feature_grids(pyramid, enc, masks, workers);
  fs::create_directories(out_dir);
  for (size_t i = 0; i < grids.size(); ++i)
    write_feature_grid(grids[i], fs::path(out_dir) / ("features_level_" +
                                                      std::to_string(i) +
                                                      ".bin"));
  return 0;
}

SlideData load_slide_data(const fs::path& dir, const SurvivalRecord& rec,
                          const PathsConfig& config) {
  SlideData s;
  s.slide_id = rec.slide_id;
  s.record = rec;
  fs::path first = dir / "features_level_0.bin";
  if (fs::exists(first)) {
    for (int i = 0;; ++i) {
      fs::path f = dir / ("features_level_" + std::to_string(i) + ".bin");
      if (!fs::exists(f)) break;
      s.grids.push_back(read_feature_grid(f));
    }
  } else {
    PyramidImage pyramid = load_pyramid(dir);
    auto masks = compute_all_masks(pyramid, config.min_tissue_fraction);
    PatchEncoder enc(config.d, config.seed);
    s.grids = precompute_feature_grids(pyramid, enc, masks);
  }
  if (static_cast<int>(s.grids.size()) != config.n)
    throw DataError("slide " + rec.slide_id + " has " +
                    std::to_string(s.grids.size()) + " levels, config wants " +
                    std::to_string(config.n));
  return s;
}

std::vector<SlideData> load_dataset(const std::string& data_dir,
                                    const PathsConfig& config) {
  auto labels = load_labels(fs::path(data_dir) / "labels.csv");
  std::vector<SlideData> slides;
  for (const auto& rec : labels)
    slides.push_back(
        load_slide_data(fs::path(data_dir) / rec.slide_id, rec, config));
  return slides;
}

int run_train(const std::string& data_dir, const std::string& out_dir,
              const PathsConfig& config) {
  auto slides = load_dataset(data_dir, config);
  TrainResult result = train_model(slides, config);
  fs::create_directories(out_dir);
  save_checkpoint(result.params, config, fs::path(out_dir) / "checkpoint.bin");
  std::ofstream rep(fs::path(out_dir) / "train_report.json");
  rep << result.report.to_json(config) << "\n";
  std::cout << result.report.to_json(config) << std::endl;
  return 0;
}

int run_eval(const std::string& data_dir, const std::string& ckpt,
             std::optional<uint64_t> seed) {
  auto [params, config] = load_checkpoint(ckpt);
  if (seed) config.seed = *seed;
  auto slides = load_dataset(data_dir, config);
  DatasetSplit split = split_dataset(slides.size(), config.seed);

  std::vector<double> risks;
  std::vector<SurvivalRecord> records;
  uint64_t test_seed = derive_seed(config.seed, "test-selection");
  for (size_t i : split.test) {
    risks.push_back(slide_risk(slides[i], params, config, test_seed));
    records.push_back(slides[i].record);
  }
  nlohmann::json j;
  j["test_cindex"] = concordance_index(risks, records);
  j["n_test"] = split.test.size();
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int run_heatmap(const std::string& slide_dir, const std::string& ckpt,
                const std::string& out_dir, std::optional<uint64_t> seed) {
  auto [params, config] = load_checkpoint(ckpt);
  if (seed) config.seed = *seed;
  SurvivalRecord dummy;
  dummy.slide_id = fs::path(slide_dir).filename().string();
  dummy.time = 1.0;
  SlideData slide = load_slide_data(slide_dir, dummy, config);
  GridFeatureProvider provider(slide.grids);
  ForwardOutputs out =
      run_forward(provider, params, config, config.ablation, config.seed);
  HeatmapResult map =
      importance_heatmap(out.alphas, slide.grids.back().grid_w,
                         slide.grids.back().grid_h, config.M, config.n);
  fs::create_directories(out_dir);
  write_heatmap_pgm(map, fs::path(out_dir) / "heatmap.pgm");
  write_selection_csv(out.alphas, fs::path(out_dir) / "selection.csv");
  return 0;
}

int run_bench(const std::string& slide_dir, const std::string& ckpt,
              const std::string& out_file, const PathsConfig& cli_config,
              std::optional<uint64_t> seed, const std::string& mode,
              int repeats) {
  PathsConfig config = cli_config;
  ProcessorParams params;
  if (!ckpt.empty()) {
    auto loaded = load_checkpoint(ckpt);
    params = std::move(loaded.first);
    config = loaded.second;
    if (seed) config.seed = *seed;
  } else {
    params = init_params(config, config.seed);
  }
  PyramidImage pyramid = load_pyramid(slide_dir);
  auto masks = compute_all_masks(pyramid, config.min_tissue_fraction);
  PatchEncoder enc(config.d, config.seed);
  BenchReport report = run_benchmark(pyramid, enc, masks, params, config, repeats);

  nlohmann::json j = nlohmann::json::parse(report.to_json());
  if (mode == "paths") j.erase("full_embed_ms");
  else if (mode == "full") j.erase("paths_run_ms");
  std::string text = j.dump(2);
  if (!out_file.empty()) {
    std::ofstream out(out_file);
    out << text << "\n";
  }
  std::cout << text << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paths: hierarchical patch selection for pyramidal images"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, slide_dir, ckpt, out_file;
  std::string mode = "both";
  std::optional<uint64_t> seed;
  int count = 10, workers = 1, repeats = 3;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value)");
    cmd->add_option("--seed", seed, "master seed, overrides the config");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic slides");
  add_common(synth);
  synth->add_option("--count", count, "number of slides");
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* embed = app.add_subcommand("embed", "precompute feature grids");
  add_common(embed);
  embed->add_option("--slide", slide_dir, "slide directory")->required();
  embed->add_option("--out", out_dir, "output directory")->required();
  embed->add_option("--workers", workers, "worker threads");

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--data", data_dir, "dataset directory with labels.csv")
      ->required();
  train->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--seed", seed, "master seed, overrides the checkpoint");
  eval->add_option("--data", data_dir, "dataset directory with labels.csv")
      ->required();
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();

  CLI::App* heatmap = app.add_subcommand("heatmap", "write importance heatmap");
  heatmap->add_option("--seed", seed, "master seed, overrides the checkpoint");
  heatmap->add_option("--slide", slide_dir, "slide directory")->required();
  heatmap->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  heatmap->add_option("--out", out_dir, "output directory")->required();

  CLI::App* bench = app.add_subcommand("bench", "patch-count and latency report");
  add_common(bench);
  bench->add_option("--slide", slide_dir, "slide directory")->required();
  bench->add_option("--checkpoint", ckpt, "optional checkpoint file");
  bench->add_option("--out", out_file, "report file");
  bench->add_option("--mode", mode, "paths | full | both")
      ->check(CLI::IsMember({"paths", "full", "both"}));
  bench->add_option("--repeats", repeats, "timing repetitions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed())
      return run_synth(out_dir, resolve_config(config_path, seed), count);
    if (embed->parsed())
      return run_embed(slide_dir, out_dir, resolve_config(config_path, seed),
                       workers);
    if (train->parsed())
      return run_train(data_dir, out_dir, resolve_config(config_path, seed));
    if (eval->parsed()) return run_eval(data_dir, ckpt, seed);
    if (heatmap->parsed()) return run_heatmap(slide_dir, ckpt, out_dir, seed);
    if (bench->parsed())
      return run_bench(slide_dir, ckpt, out_file,
                       resolve_config(config_path, seed), seed, mode, repeats);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
