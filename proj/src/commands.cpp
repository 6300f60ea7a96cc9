#include "partmem/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "partmem/checkpoint.hpp"
#include "partmem/errors.hpp"
#include "partmem/eval.hpp"
#include "partmem/gradcheck.hpp"
#include "partmem/trainer.hpp"

namespace partmem {

int cmd_synth(const io::SyntheticSpec& spec, const std::filesystem::path& out,
              std::ostream& log) {
  const io::SynthResult result = io::synth_generate(spec, out);
  std::size_t train = 0, gallery = 0, query = 0;
  for (const auto& r : result.records) {
    if (r.split == io::Split::train) ++train;
    else if (r.split == io::Split::gallery) ++gallery;
    else ++query;
  }
  log << "synth: wrote " << result.records.size() << " samples (" << train
      << " train, " << gallery << " gallery, " << query << " query) to "
      << result.manifest.string() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  if (cfg.manifest.empty()) throw ConfigError("train: no manifest given");
  const auto records = io::load_manifest(cfg.manifest);
  const auto samples = io::load_samples(cfg.manifest, records);

  std::optional<Trainer> trainer;
  const std::filesystem::path ckpt_path =
      std::filesystem::path(cfg.out) / "checkpoint.pamc";
  if (cfg.resume) {
    if (!std::filesystem::exists(ckpt_path))
      throw DataError("resume requested but no checkpoint at " + ckpt_path.string());
    trainer.emplace(cfg.train, io::load_checkpoint(ckpt_path));
    log << "train: resuming from epoch " << trainer->start_epoch() << "\n";
  } else {
    trainer.emplace(cfg.train);
  }

  const TrainResult result = trainer->train(samples, cfg.out);
  log << "train: " << result.log.size() << " iterations over "
      << (cfg.train.epochs - trainer->start_epoch()) << " epochs";
  if (!result.log.empty())
    log << ", final combined loss " << result.log.back().combined;
  log << "\n";
  if (result.tcl_skipped_batches > 0)
    log << "train: metric term skipped for " << result.tcl_skipped_batches
        << " single-identity batches\n";
  if (result.rejected_steps > 0)
    log << "train: " << result.rejected_steps
        << " iterations rejected on non-finite gradients\n";
  log << "train: checkpoint " << result.checkpoint_path.string() << ", metrics "
      << result.metrics_path.string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval: no checkpoint given");
  if (cfg.manifest.empty()) throw ConfigError("eval: no manifest given");

  const io::Checkpoint ckpt = io::load_checkpoint(cfg.checkpoint);
  const PartModel model = io::build_model(ckpt);

  const auto records = io::load_manifest(cfg.manifest);
  std::vector<io::SampleRecord> gallery_recs, query_recs;
  for (const auto& r : records) {
    if (r.split == io::Split::gallery) gallery_recs.push_back(r);
    else if (r.split == io::Split::query) query_recs.push_back(r);
  }
  if (gallery_recs.empty()) throw DataError("eval: manifest has no gallery samples");
  if (query_recs.empty() && cfg.trials == 0)
    throw DataError("eval: manifest has no query samples");

  const auto gallery_samples = io::load_samples(cfg.manifest, gallery_recs);
  const auto query_samples = io::load_samples(cfg.manifest, query_recs);
  const auto gallery = eval::embed(model, gallery_samples);
  const auto queries = eval::embed(model, query_samples);

  std::filesystem::create_directories(cfg.out);
  eval::EvalSummary summary;
  if (cfg.trials == 0) {
    std::vector<eval::RankingResult> results;
    results.reserve(queries.size());
    for (const auto& q : queries) results.push_back(eval::rank(q, gallery, cfg.metric));
    summary.map = eval::mean_ap(results);
    summary.cmc = eval::cmc(results, cfg.max_k);
    for (const auto& r : results)
      (r.defined ? summary.queries_evaluated : summary.queries_excluded) += 1;
    summary.trials = 1;
    eval::write_ranking_report(std::filesystem::path(cfg.out) / "ranking.csv", results);
  } else {
    std::vector<eval::Descriptor> pool = gallery;
    pool.insert(pool.end(), queries.begin(), queries.end());
    summary = eval::evaluate_single_gallery_trials(pool, cfg.trials, cfg.train.seed,
                                                   cfg.metric, cfg.max_k);
  }
  eval::write_metrics_summary(std::filesystem::path(cfg.out) / "metrics.json", summary);

  log << "eval: mAP " << summary.map << ", cmc1 " << (summary.cmc.empty() ? 0.0 : summary.cmc[0])
      << " over " << summary.queries_evaluated << " queries";
  if (summary.queries_excluded > 0)
    log << " (" << summary.queries_excluded << " excluded, no non-junk match)";
  log << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& log) {
  const auto rows = run_loss_gradient_checks(seed);
  bool all_ok = true;
  log << std::left << std::setw(26) << "loss" << std::setw(14) << "max_rel_err"
      << "status\n";
  for (const auto& row : rows) {
    const bool ok = row.max_rel_err < 1e-5;
    all_ok = all_ok && ok;
    log << std::left << std::setw(26) << row.name << std::setw(14)
        << std::scientific << std::setprecision(2) << row.max_rel_err
        << (ok ? "pass" : "FAIL") << "\n";
    log.unsetf(std::ios::scientific);
  }
  if (!all_ok)
    throw NumericError("gradient check failed: analytic and finite-difference "
                       "gradients disagree");
  return kExitOk;
}

int cmd_report(const std::vector<std::filesystem::path>& metrics_files,
               const std::optional<std::filesystem::path>& out_csv, std::ostream& log) {
  if (metrics_files.empty()) throw ConfigError("report: no metrics files given");
  struct Row {
    std::string name;
    eval::EvalSummary summary;
  };
  std::vector<Row> rows;
  for (const auto& path : metrics_files) {
    Row r;
    r.name = path.parent_path().filename().string();
    if (r.name.empty()) r.name = path.filename().string();
    r.summary = eval::read_metrics_summary(path);
    rows.push_back(std::move(r));
  }

  auto cmc_at = [](const eval::EvalSummary& s, std::size_t k) {
    return s.cmc.size() >= k ? s.cmc[k - 1] : (s.cmc.empty() ? 0.0 : s.cmc.back());
  };

  log << std::left << std::setw(28) << "run" << std::right << std::setw(10) << "mAP"
      << std::setw(10) << "rank1" << std::setw(10) << "rank5" << std::setw(10)
      << "rank10" << "\n";
  log << std::fixed << std::setprecision(4);
  for (const auto& r : rows)
    log << std::left << std::setw(28) << r.name << std::right << std::setw(10)
        << r.summary.map << std::setw(10) << cmc_at(r.summary, 1) << std::setw(10)
        << cmc_at(r.summary, 5) << std::setw(10) << cmc_at(r.summary, 10) << "\n";
  log.unsetf(std::ios::fixed);

  if (out_csv) {
    std::ofstream out(*out_csv, std::ios::binary);
    if (!out) throw DataError("cannot write report " + out_csv->string());
    out << "run,mAP,rank1,rank5,rank10,trials\n" << std::setprecision(17);
    for (const auto& r : rows)
      out << r.name << ',' << r.summary.map << ',' << cmc_at(r.summary, 1) << ','
          << cmc_at(r.summary, 5) << ',' << cmc_at(r.summary, 10) << ','
          << r.summary.trials << '\n';
  }
  return kExitOk;
}

}  // namespace partmem
