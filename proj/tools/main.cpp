#include <deque>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "partmem/commands.hpp"
#include "partmem/config.hpp"
#include "partmem/errors.hpp"

namespace {

using partmem::RunConfig;

// Flags land here first so that only the ones actually given override the
// config file; precedence is flags > file > defaults.
struct FlagSet {
  std::optional<std::string> config_path;
  // deque: the option callbacks hold references into it
  std::deque<std::pair<std::string, std::optional<std::string>>> keyed;

  void add_option(CLI::App* app, const std::string& flag, const std::string& key,
                  const std::string& desc) {
    keyed.emplace_back(key, std::nullopt);
    auto& slot = keyed.back().second;
    app->add_option_function<std::string>(
        flag, [&slot](const std::string& v) { slot = v; }, desc);
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (config_path) partmem::apply_config_file(cfg, *config_path);
    for (const auto& [key, value] : keyed)
      if (value) partmem::apply_config_key(cfg, key, *value, "flag --" + key);
    cfg.finalize();
    return cfg;
  }
};

void add_common_flags(CLI::App* app, FlagSet& flags) {
  app->add_option("--config", flags.config_path, "config file (key=value lines)");
  flags.add_option(app, "--seed", "seed", "random seed");
  flags.add_option(app, "--out", "out", "output directory");
}

void add_model_flags(CLI::App* app, FlagSet& flags) {
  flags.add_option(app, "--epochs", "epochs", "training epochs");
  flags.add_option(app, "--batch", "batch", "mini-batch size");
  flags.add_option(app, "--lambda", "lambda", "metric-loss weight");
  flags.add_option(app, "--alpha", "alpha", "triplet-center margin");
  flags.add_option(app, "--beta", "beta", "softmax temperature");
  flags.add_option(app, "--delta", "delta", "memory update rate");
  flags.add_option(app, "--p1", "p1", "horizontal part count");
  flags.add_option(app, "--p2", "p2", "vertical part count");
  flags.add_option(app, "--branches", "branches", "one | two");
  flags.add_option(app, "--memory", "memory", "on | off");
  flags.add_option(app, "--loss", "loss", "triplet | tc");
  flags.add_option(app, "--softmax-target", "softmax_target", "instance | class");
  flags.add_option(app, "--lr-schedule", "lr_schedule", "e.g. 1-40:0.05,41-60:0.005");
  flags.add_option(app, "--momentum", "momentum", "SGD momentum");
  flags.add_option(app, "--h", "h", "map height");
  flags.add_option(app, "--w", "w", "map width");
  flags.add_option(app, "--c", "c", "map channels");
  flags.add_option(app, "--input-dim", "input_dim", "toy backbone input length");
  flags.add_option(app, "--patches", "patches", "toy backbone patch count");
  flags.add_option(app, "--patch-embed", "patch_embed", "toy backbone patch embedding");
  flags.add_option(app, "--store-features", "store_features", "head | pooled");
  flags.add_option(app, "--center-mode", "center_mode", "lazy | full");
  flags.add_option(app, "--center-refresh", "center_refresh",
                   "full center recompute interval");
  flags.add_option(app, "--normalize-slots", "normalize_slots", "on | off");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"part-aware embeddings with an exemplar memory: training and "
               "retrieval evaluation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic clustered dataset");
  partmem::io::SyntheticSpec spec;
  std::string synth_out = "data";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--identities", spec.num_identities, "number of identities");
  synth->add_option("--per-identity", spec.samples_per_identity, "samples per identity");
  synth->add_option("--cameras", spec.num_cameras, "number of cameras");
  synth->add_option("--sigma-intra", spec.intra_spread, "within-identity spread");
  synth->add_option("--sigma-cam", spec.camera_shift, "camera offset norm");
  synth->add_option("--dim", spec.feature_dim, "feature vector length");
  synth->add_option("--seed", spec.seed, "random seed");
  synth->add_option("--train-per-identity", spec.train_per_identity,
                    "training samples per identity");
  synth->add_option("--gallery-per-identity", spec.gallery_per_identity,
                    "gallery samples per identity");

  // train
  auto* train = app.add_subcommand("train", "train a model on a manifest");
  FlagSet train_flags;
  add_common_flags(train, train_flags);
  add_model_flags(train, train_flags);
  train_flags.add_option(train, "--manifest", "manifest", "dataset manifest");
  bool resume = false;
  train->add_flag("--resume", resume, "resume from the checkpoint in --out");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  FlagSet eval_flags;
  add_common_flags(eval_cmd, eval_flags);
  eval_flags.add_option(eval_cmd, "--manifest", "manifest", "dataset manifest");
  eval_flags.add_option(eval_cmd, "--checkpoint", "checkpoint", "trained checkpoint");
  eval_flags.add_option(eval_cmd, "--metric", "metric", "cosine | euclidean");
  eval_flags.add_option(eval_cmd, "--trials", "trials",
                        "single-gallery trials (0 = static split)");
  eval_flags.add_option(eval_cmd, "--max-k", "max_k", "CMC curve length");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "verify loss gradients");
  std::uint64_t gradcheck_seed = 7;
  gradcheck->add_option("--seed", gradcheck_seed, "random seed");

  // report
  auto* report = app.add_subcommand("report", "tabulate metrics summaries");
  std::vector<std::string> report_files;
  std::string report_out;
  report->add_option("files", report_files, "metrics.json files")->required();
  report->add_option("--out", report_out, "also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return partmem::kExitConfigError;
  }

  try {
    if (synth->parsed()) return partmem::cmd_synth(spec, synth_out, std::cout);
    if (train->parsed()) {
      RunConfig cfg = train_flags.resolve();
      cfg.resume = resume;
      return partmem::cmd_train(cfg, std::cout);
    }
    if (eval_cmd->parsed()) return partmem::cmd_eval(eval_flags.resolve(), std::cout);
    if (gradcheck->parsed()) return partmem::cmd_gradcheck(gradcheck_seed, std::cout);
    if (report->parsed()) {
      std::vector<std::filesystem::path> files(report_files.begin(), report_files.end());
      std::optional<std::filesystem::path> out;
      if (!report_out.empty()) out = report_out;
      return partmem::cmd_report(files, out, std::cout);
    }
  } catch (const partmem::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return partmem::kExitConfigError;
  } catch (const partmem::DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return partmem::kExitDataError;
  } catch (const partmem::NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return partmem::kExitNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return partmem::kExitNumericError;
  }
  return partmem::kExitOk;
}
