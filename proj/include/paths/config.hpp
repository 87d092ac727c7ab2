#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace paths {

enum class ContextMode { kBoth, kHierarchicalOnly, kSlideLevelOnly, kNeither };
enum class SelectionMode { kLearned, kRandom };

struct AblationMode {
  ContextMode context = ContextMode::kBoth;
  SelectionMode selection = SelectionMode::kLearned;
};

std::string to_string(ContextMode m);
std::string to_string(SelectionMode m);
ContextMode context_mode_from_string(const std::string& s);
SelectionMode selection_mode_from_string(const std::string& s);

// All model / pipeline hyperparameters. Defaults are the desk-scale profile;
// paper_profile() switches the sizes reported alongside the original method.
struct PathsConfig {
  int K = 5;                 // patches retained per level
  int M = 2;                 // magnification ratio between levels
  int n = 3;                 // hierarchy depth
  double m1 = 2.5;           // coarsest magnification
  int s = 16;                // patch size, pixels
  int b = 4;                 // survival buckets
  double loss_alpha = 0.6;   // censored loss weight

  int d = 32;      // embedding dimension
  int w = 64;      // aggregator width
  int h = 64;      // recurrent hidden width
  int h_imp = 64;  // importance MLP hidden width
  int L = 2;       // aggregator layers
  int heads = 4;

  double lr = 5e-3;
  int batch_size = 4;
  int epochs = 15;

  double min_tissue_fraction = 0.1;
  uint64_t seed = 0;

  AblationMode ablation;

  // Reference configuration: K=20, n=5, m1=0.625, s=256, w=128, h=256,
  // h_imp=128, lr=2e-5, batch 32, epochs 40.
  static PathsConfig paper_profile();
  static PathsConfig desk_profile();

  void validate() const;  // throws ConfigError
};

// Flat `key = value` file, '#' comments. Unknown keys are errors.
PathsConfig load_config(const std::filesystem::path& file);
void save_config(const PathsConfig& c, const std::filesystem::path& file);

// JSON echo used by checkpoints and reports.
std::string config_to_json(const PathsConfig& c);
PathsConfig config_from_json(const std::string& text);

}  // namespace paths
