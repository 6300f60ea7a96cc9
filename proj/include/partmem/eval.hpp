#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "partmem/dataset.hpp"
#include "partmem/model.hpp"

namespace partmem::eval {

enum class SimilarityMetric { cosine, euclidean };

struct Descriptor {
  std::string sample_id;
  std::string identity;
  std::string camera;
  std::vector<double> vec;  // b*C concatenated normalized part features
};

struct RankingResult {
  std::string query_id;
  std::vector<std::string> ranked_ids;  // junk removed, best first
  std::vector<char> match_mask;
  double ap = 0.0;
  std::size_t n_gt = 0;
  bool defined = false;  // n_gt >= 1
  std::size_t first_match_rank = 0;  // 1-based, 0 when undefined
};

// Live head features of each sample under the given model, concatenated in
// part order.
std::vector<Descriptor> embed(const PartModel& model,
                              std::span<const io::LoadedSample> samples);

// Junk items (same identity and same camera as the query, or the query
// itself) are removed before ranking. Ties break by ascending sample_id.
RankingResult rank(const Descriptor& query, std::span<const Descriptor> gallery,
                   SimilarityMetric metric = SimilarityMetric::cosine);

double average_precision(const RankingResult& result);
double mean_ap(std::span<const RankingResult> results);
std::vector<double> cmc(std::span<const RankingResult> results, std::size_t max_k);

// Straight-line reference with its own similarity, sort and summation;
// shares nothing with rank/average_precision beyond the tie-break rule.
double brute_force_oracle(const Descriptor& query, std::span<const Descriptor> gallery,
                          SimilarityMetric metric = SimilarityMetric::cosine);

struct EvalSummary {
  double map = 0.0;
  std::vector<double> cmc;  // cmc[k-1] = CMC(k)
  std::size_t queries_evaluated = 0;
  std::size_t queries_excluded = 0;  // no non-junk ground truth
  std::size_t trials = 1;
};

EvalSummary evaluate_static(std::span<const Descriptor> queries,
                            std::span<const Descriptor> gallery,
                            SimilarityMetric metric, std::size_t max_k);

// VehicleID-style protocol: per trial one random gallery image per identity
// from the test pool, the rest are probes; metrics averaged over trials.
EvalSummary evaluate_single_gallery_trials(std::span<const Descriptor> test_pool,
                                           std::size_t trials, std::uint64_t seed,
                                           SimilarityMetric metric, std::size_t max_k);

void write_ranking_report(const std::filesystem::path& path,
                          std::span<const RankingResult> results);
void write_metrics_summary(const std::filesystem::path& path, const EvalSummary& summary);
EvalSummary read_metrics_summary(const std::filesystem::path& path);

}  // namespace partmem::eval
