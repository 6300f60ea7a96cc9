#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "partmem/eval.hpp"
#include "partmem/trainer.hpp"

namespace partmem {

// Resolved view of everything the commands need. Values are layered:
// built-in defaults, then the config file, then command-line flags.
struct RunConfig {
  TrainConfig train;
  std::string feature_source = "toy";  // toy | precomputed
  eval::SimilarityMetric metric = eval::SimilarityMetric::cosine;
  std::size_t trials = 0;  // 0: static gallery/query split; >0: single-gallery trials
  std::size_t max_k = 10;
  std::string out = "run";
  std::string manifest;
  std::string checkpoint;
  bool resume = false;
  bool lr_schedule_explicit = false;

  // Re-derives the default learning-rate schedule when none was given
  // explicitly, and validates everything.
  void finalize();
};

// One key=value per line, `#` starts a comment. Unknown keys and malformed
// values are rejected naming the file and line.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Applies a single key=value pair; `where` prefixes error messages.
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where);

// "1-40:0.05,41-60:0.005"
std::vector<LrStage> parse_lr_schedule(const std::string& text);

}  // namespace partmem
