#include "partmem/config.hpp"

#include <fstream>
#include <sstream>

#include "partmem/errors.hpp"

namespace partmem {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::size_t parse_count(const std::string& value, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size() || v < 0) throw std::invalid_argument("");
    return static_cast<std::size_t>(v);
  } catch (...) {
    throw ConfigError(where + ": expected a nonnegative integer, got '" + value + "'");
  }
}

double parse_real(const std::string& value, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(where + ": expected a number, got '" + value + "'");
  }
}

bool parse_switch(const std::string& value, const std::string& where) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError(where + ": expected on/off, got '" + value + "'");
}

}  // namespace

std::vector<LrStage> parse_lr_schedule(const std::string& text) {
  std::vector<LrStage> stages;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    const auto dash = item.find('-');
    if (colon == std::string::npos || dash == std::string::npos || dash > colon)
      throw ConfigError("lr_schedule: expected FIRST-LAST:RATE items, got '" + item + "'");
    LrStage s;
    s.first_epoch = parse_count(item.substr(0, dash), "lr_schedule");
    s.last_epoch = parse_count(item.substr(dash + 1, colon - dash - 1), "lr_schedule");
    s.rate = parse_real(item.substr(colon + 1), "lr_schedule");
    stages.push_back(s);
  }
  if (stages.empty()) throw ConfigError("lr_schedule: no stages given");
  return stages;
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where) {
  ModelDims& d = cfg.train.dims;
  if (key == "h") d.height = parse_count(value, where);
  else if (key == "w") d.width = parse_count(value, where);
  else if (key == "c") d.channels = parse_count(value, where);
  else if (key == "p1") d.p1 = parse_count(value, where);
  else if (key == "p2") d.p2 = parse_count(value, where);
  else if (key == "input_dim") d.input_dim = parse_count(value, where);
  else if (key == "patches") d.patches = parse_count(value, where);
  else if (key == "patch_embed") d.patch_embed = parse_count(value, where);
  else if (key == "epochs") cfg.train.epochs = parse_count(value, where);
  else if (key == "batch") cfg.train.batch_size = parse_count(value, where);
  else if (key == "momentum") cfg.train.momentum = parse_real(value, where);
  else if (key == "seed") cfg.train.seed = parse_count(value, where);
  else if (key == "lambda") cfg.train.loss.lambda = parse_real(value, where);
  else if (key == "alpha") cfg.train.loss.alpha = parse_real(value, where);
  else if (key == "beta") cfg.train.loss.beta = parse_real(value, where);
  else if (key == "delta") cfg.train.delta = parse_real(value, where);
  else if (key == "lr_schedule") {
    cfg.train.lr_schedule = parse_lr_schedule(value);
    cfg.lr_schedule_explicit = true;
  } else if (key == "branches") {
    if (value == "one") d.p2 = 0;
    else if (value == "two") { if (d.p2 == 0) d.p2 = d.p1; }
    else throw ConfigError(where + ": branches must be one or two, got '" + value + "'");
  } else if (key == "memory") {
    cfg.train.memory_enabled = parse_switch(value, where);
  } else if (key == "loss") {
    if (value == "tc") cfg.train.use_triplet_center = true;
    else if (value == "triplet") cfg.train.use_triplet_center = false;
    else throw ConfigError(where + ": loss must be triplet or tc, got '" + value + "'");
  } else if (key == "softmax_target") {
    if (value == "instance") cfg.train.loss.softmax_target = SoftmaxTarget::instance;
    else if (value == "class") cfg.train.loss.softmax_target = SoftmaxTarget::klass;
    else throw ConfigError(where + ": softmax_target must be instance or class");
  } else if (key == "normalize_slots") {
    cfg.train.normalize_slots = parse_switch(value, where);
  } else if (key == "store_features") {
    if (value == "head") cfg.train.store_head_features = true;
    else if (value == "pooled") cfg.train.store_head_features = false;
    else throw ConfigError(where + ": store_features must be head or pooled");
  } else if (key == "center_mode") {
    if (value == "full") cfg.train.full_center_recompute = true;
    else if (value == "lazy") cfg.train.full_center_recompute = false;
    else throw ConfigError(where + ": center_mode must be lazy or full");
  } else if (key == "center_refresh") {
    cfg.train.center_refresh_interval = parse_count(value, where);
  } else if (key == "feature_source") {
    if (value != "toy" && value != "precomputed")
      throw ConfigError(where + ": feature_source must be toy or precomputed");
    cfg.feature_source = value;
  } else if (key == "metric") {
    if (value == "cosine") cfg.metric = eval::SimilarityMetric::cosine;
    else if (value == "euclidean") cfg.metric = eval::SimilarityMetric::euclidean;
    else throw ConfigError(where + ": metric must be cosine or euclidean");
  } else if (key == "trials") {
    cfg.trials = parse_count(value, where);
  } else if (key == "max_k") {
    cfg.max_k = parse_count(value, where);
  } else if (key == "out") {
    cfg.out = value;
  } else if (key == "manifest") {
    cfg.manifest = value;
  } else if (key == "checkpoint") {
    cfg.checkpoint = value;
  } else {
    throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + " line " + std::to_string(line_no);
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected key=value, got '" + line + "'");
    apply_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

void RunConfig::finalize() {
  if (!lr_schedule_explicit)
    train.lr_schedule = default_lr_schedule(train.epochs);
  if (max_k == 0) throw ConfigError("max_k must be at least 1");
  train.validate();
}

}  // namespace partmem
