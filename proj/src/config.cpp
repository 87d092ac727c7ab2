#include "paths/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "paths/common.hpp"

namespace paths {

std::string to_string(ContextMode m) {
  switch (m) {
    case ContextMode::kBoth: return "both";
    case ContextMode::kHierarchicalOnly: return "hierarchical_only";
    case ContextMode::kSlideLevelOnly: return "slide_level_only";
    case ContextMode::kNeither: return "neither";
  }
  return "both";
}

std::string to_string(SelectionMode m) {
  return m == SelectionMode::kLearned ? "learned" : "random";
}

ContextMode context_mode_from_string(const std::string& s) {
  if (s == "both") return ContextMode::kBoth;
  if (s == "hierarchical_only") return ContextMode::kHierarchicalOnly;
  if (s == "slide_level_only") return ContextMode::kSlideLevelOnly;
  if (s == "neither") return ContextMode::kNeither;
  throw ConfigError("unknown context mode: " + s);
}

SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "learned") return SelectionMode::kLearned;
  if (s == "random") return SelectionMode::kRandom;
  throw ConfigError("unknown selection mode: " + s);
}

PathsConfig PathsConfig::desk_profile() { return PathsConfig{}; }

PathsConfig PathsConfig::paper_profile() {
  PathsConfig c;
  c.K = 20;
  c.M = 2;
  c.n = 5;
  c.m1 = 0.625;
  c.s = 256;
  c.b = 4;
  c.loss_alpha = 0.6;
  c.d = 32;  // stub encoder width; the reference encoder is out of scope
  c.w = 128;
  c.h = 256;
  c.h_imp = 128;
  c.L = 2;
  c.heads = 4;
  c.lr = 2e-5;
  c.batch_size = 32;
  c.epochs = 40;
  return c;
}

void PathsConfig::validate() const {
  if (K <= 0) throw ConfigError("K must be positive");
  if (M < 2) throw ConfigError("M must be >= 2");
  if (n < 1) throw ConfigError("n must be >= 1");
  if (m1 <= 0) throw ConfigError("m1 must be positive");
  if (s < 8) throw ConfigError("patch size must be >= 8");
  if (b < 1) throw ConfigError("buckets must be >= 1");
  if (loss_alpha < 0 || loss_alpha > 1)
    throw ConfigError("loss_alpha must be in [0,1]");
  if (d <= 0 || w <= 0 || h <= 0 || h_imp <= 0)
    throw ConfigError("model widths must be positive");
  if (w % 4 != 0) throw ConfigError("aggregator width must be divisible by 4");
  if (L < 0) throw ConfigError("layer count must be >= 0");
  if (heads <= 0 || w % heads != 0)
    throw ConfigError("heads must divide aggregator width");
  if (min_tissue_fraction < 0 || min_tissue_fraction > 1)
    throw ConfigError("min_tissue_fraction must be in [0,1]");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

PathsConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file: " + file.string());
  PathsConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    try {
      if (key == "k") c.K = std::stoi(val);
      else if (key == "m") c.M = std::stoi(val);
      else if (key == "n_levels") c.n = std::stoi(val);
      else if (key == "m1") c.m1 = std::stod(val);
      else if (key == "patch_size") c.s = std::stoi(val);
      else if (key == "buckets") c.b = std::stoi(val);
      else if (key == "loss_alpha") c.loss_alpha = std::stod(val);
      else if (key == "d") c.d = std::stoi(val);
      else if (key == "w") c.w = std::stoi(val);
      else if (key == "h") c.h = std::stoi(val);
      else if (key == "h_imp") c.h_imp = std::stoi(val);
      else if (key == "layers") c.L = std::stoi(val);
      else if (key == "heads") c.heads = std::stoi(val);
      else if (key == "lr") c.lr = std::stod(val);
      else if (key == "batch_size") c.batch_size = std::stoi(val);
      else if (key == "epochs") c.epochs = std::stoi(val);
      else if (key == "min_tissue_fraction")
        c.min_tissue_fraction = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "context")
        c.ablation.context = context_mode_from_string(val);
      else if (key == "selection")
        c.ablation.selection = selection_mode_from_string(val);
      else
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": bad value for '" + key + "'");
    }
  }
  c.validate();
  return c;
}

void save_config(const PathsConfig& c, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write config file: " + file.string());
  out << "k = " << c.K << "\n"
      << "m = " << c.M << "\n"
      << "n_levels = " << c.n << "\n"
      << "m1 = " << c.m1 << "\n"
      << "patch_size = " << c.s << "\n"
      << "buckets = " << c.b << "\n"
      << "loss_alpha = " << c.loss_alpha << "\n"
      << "d = " << c.d << "\n"
      << "w = " << c.w << "\n"
      << "h = " << c.h << "\n"
      << "h_imp = " << c.h_imp << "\n"
      << "layers = " << c.L << "\n"
      << "heads = " << c.heads << "\n"
      << "lr = " << c.lr << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "epochs = " << c.epochs << "\n"
      << "min_tissue_fraction = " << c.min_tissue_fraction << "\n"
      << "seed = " << c.seed << "\n"
      << "context = " << to_string(c.ablation.context) << "\n"
      << "selection = " << to_string(c.ablation.selection) << "\n";
}

std::string config_to_json(const PathsConfig& c) {
  nlohmann::json j;
  j["k"] = c.K;
  j["m"] = c.M;
  j["n_levels"] = c.n;
  j["m1"] = c.m1;
  j["patch_size"] = c.s;
  j["buckets"] = c.b;
  j["loss_alpha"] = c.loss_alpha;
  j["d"] = c.d;
  j["w"] = c.w;
  j["h"] = c.h;
  j["h_imp"] = c.h_imp;
  j["layers"] = c.L;
  j["heads"] = c.heads;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["min_tissue_fraction"] = c.min_tissue_fraction;
  j["seed"] = c.seed;
  j["context"] = to_string(c.ablation.context);
  j["selection"] = to_string(c.ablation.selection);
  return j.dump();
}

PathsConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad config json: ") + e.what());
  }
  PathsConfig c;
  try {
    c.K = j.at("k").get<int>();
    c.M = j.at("m").get<int>();
    c.n = j.at("n_levels").get<int>();
    c.m1 = j.at("m1").get<double>();
    c.s = j.at("patch_size").get<int>();
    c.b = j.at("buckets").get<int>();
    c.loss_alpha = j.at("loss_alpha").get<double>();
    c.d = j.at("d").get<int>();
    c.w = j.at("w").get<int>();
    c.h = j.at("h").get<int>();
    c.h_imp = j.at("h_imp").get<int>();
    c.L = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.min_tissue_fraction = j.at("min_tissue_fraction").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.ablation.context =
        context_mode_from_string(j.at("context").get<std::string>());
    c.ablation.selection =
        selection_mode_from_string(j.at("selection").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("incomplete config json: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace paths
