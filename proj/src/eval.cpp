#include "partmem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "partmem/errors.hpp"
#include "partmem/tensor.hpp"

namespace partmem::eval {

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom < ad::kNormalizeGuard) return 0.0;
  return dot / denom;
}

double similarity(const Descriptor& a, const Descriptor& b, SimilarityMetric m) {
  if (a.vec.size() != b.vec.size())
    throw DataError("descriptor dimension mismatch: " + std::to_string(a.vec.size()) +
                    " vs " + std::to_string(b.vec.size()));
  if (m == SimilarityMetric::cosine) return cosine(a.vec, b.vec);
  double sq = 0.0;
  for (std::size_t i = 0; i < a.vec.size(); ++i) {
    const double d = a.vec[i] - b.vec[i];
    sq += d * d;
  }
  return -std::sqrt(sq);
}

bool is_junk(const Descriptor& query, const Descriptor& item) {
  if (item.sample_id == query.sample_id) return true;
  return item.identity == query.identity && item.camera == query.camera;
}

}  // namespace

std::vector<Descriptor> embed(const PartModel& model,
                              std::span<const io::LoadedSample> samples) {
  std::vector<Descriptor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    ad::Tape tape;
    auto bound = model.bind(tape, false);
    std::vector<ad::Var> parts =
        model.forward(tape, bound, s.features.shape, s.features.values);
    Descriptor d;
    d.sample_id = s.record.sample_id;
    d.identity = s.record.identity;
    d.camera = s.record.camera;
    d.vec.reserve(parts.size() * model.dims().channels);
    for (const auto& p : parts)
      d.vec.insert(d.vec.end(), p.values().begin(), p.values().end());
    out.push_back(std::move(d));
  }
  return out;
}

RankingResult rank(const Descriptor& query, std::span<const Descriptor> gallery,
                   SimilarityMetric metric) {
  if (gallery.empty()) throw DataError("rank: empty gallery");
  struct Entry {
    double sim;
    const Descriptor* item;
  };
  std::vector<Entry> entries;
  entries.reserve(gallery.size());
  for (const auto& item : gallery) {
    if (is_junk(query, item)) continue;
    entries.push_back({similarity(query, item, metric), &item});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.item->sample_id < b.item->sample_id;
  });

  RankingResult result;
  result.query_id = query.sample_id;
  result.ranked_ids.reserve(entries.size());
  result.match_mask.reserve(entries.size());
  for (const auto& e : entries) {
    result.ranked_ids.push_back(e.item->sample_id);
    const bool match = e.item->identity == query.identity;
    result.match_mask.push_back(match ? 1 : 0);
    if (match) {
      ++result.n_gt;
      if (result.first_match_rank == 0)
        result.first_match_rank = result.match_mask.size();
    }
  }
  result.defined = result.n_gt >= 1;
  if (result.defined) result.ap = average_precision(result);
  return result;
}

double average_precision(const RankingResult& result) {
  if (result.n_gt == 0)
    throw DataError("average_precision: no ground truth for query " + result.query_id);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < result.match_mask.size(); ++k) {
    if (!result.match_mask[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(result.n_gt);
}

double mean_ap(std::span<const RankingResult> results) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (!r.defined) continue;
    sum += r.ap;
    ++n;
  }
  if (n == 0) throw DataError("mean_ap: no query with defined AP");
  return sum / static_cast<double>(n);
}

std::vector<double> cmc(std::span<const RankingResult> results, std::size_t max_k) {
  if (max_k < 1) throw std::invalid_argument("cmc: max_k must be at least 1");
  std::vector<double> curve(max_k, 0.0);
  std::size_t n = 0;
  for (const auto& r : results) {
    if (!r.defined) continue;
    ++n;
    if (r.first_match_rank >= 1)
      for (std::size_t k = r.first_match_rank; k <= max_k; ++k) curve[k - 1] += 1.0;
  }
  if (n > 0)
    for (double& v : curve) v /= static_cast<double>(n);
  return curve;
}

double brute_force_oracle(const Descriptor& query, std::span<const Descriptor> gallery,
                          SimilarityMetric metric) {
  if (gallery.size() > 1000)
    throw std::invalid_argument("brute_force_oracle: gallery larger than 1000");

  // Explicit pairwise similarity table over the kept items.
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const Descriptor& item = gallery[i];
    if (item.sample_id == query.sample_id) continue;
    if (item.identity == query.identity && item.camera == query.camera) continue;
    kept.push_back(i);
  }
  std::vector<double> table(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const Descriptor& item = gallery[kept[k]];
    double s;
    if (metric == SimilarityMetric::cosine) {
      double dp = 0.0, qq = 0.0, ii = 0.0;
      for (std::size_t d = 0; d < query.vec.size(); ++d) {
        dp += query.vec[d] * item.vec[d];
        qq += query.vec[d] * query.vec[d];
        ii += item.vec[d] * item.vec[d];
      }
      const double denom = std::sqrt(qq) * std::sqrt(ii);
      s = denom < 1e-12 ? 0.0 : dp / denom;
    } else {
      double sq = 0.0;
      for (std::size_t d = 0; d < query.vec.size(); ++d) {
        const double diff = query.vec[d] - item.vec[d];
        sq += diff * diff;
      }
      s = -std::sqrt(sq);
    }
    table[k] = s;
  }

  std::vector<std::size_t> order(kept.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (table[a] != table[b]) return table[a] > table[b];
    return gallery[kept[a]].sample_id < gallery[kept[b]].sample_id;
  });

  std::size_t n_gt = 0;
  for (std::size_t k : kept)
    if (gallery[k].identity == query.identity) ++n_gt;
  if (n_gt == 0) throw DataError("brute_force_oracle: no ground truth for query");

  double ap = 0.0;
  std::size_t correct = 0;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    if (gallery[kept[order[pos]]].identity != query.identity) continue;
    ++correct;
    const double precision_at_k =
        static_cast<double>(correct) / static_cast<double>(pos + 1);
    ap += precision_at_k;
  }
  return ap / static_cast<double>(n_gt);
}

EvalSummary evaluate_static(std::span<const Descriptor> queries,
                            std::span<const Descriptor> gallery,
                            SimilarityMetric metric, std::size_t max_k) {
  std::vector<RankingResult> results;
  results.reserve(queries.size());
  for (const auto& q : queries) results.push_back(rank(q, gallery, metric));

  EvalSummary s;
  for (const auto& r : results) {
    if (r.defined)
      ++s.queries_evaluated;
    else
      ++s.queries_excluded;
  }
  s.map = mean_ap(results);
  s.cmc = cmc(results, max_k);
  s.trials = 1;
  return s;
}

EvalSummary evaluate_single_gallery_trials(std::span<const Descriptor> test_pool,
                                           std::size_t trials, std::uint64_t seed,
                                           SimilarityMetric metric, std::size_t max_k) {
  if (trials == 0) throw std::invalid_argument("trials must be at least 1");
  std::map<std::string, std::vector<std::size_t>> by_identity;
  for (std::size_t i = 0; i < test_pool.size(); ++i)
    by_identity[test_pool[i].identity].push_back(i);

  EvalSummary total;
  total.cmc.assign(max_k, 0.0);
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<Descriptor> gallery, queries;
    for (const auto& [identity, members] : by_identity) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      const std::size_t chosen = members[pick(rng)];
      for (std::size_t m : members) {
        if (m == chosen)
          gallery.push_back(test_pool[m]);
        else
          queries.push_back(test_pool[m]);
      }
    }
    EvalSummary s = evaluate_static(queries, gallery, metric, max_k);
    total.map += s.map;
    for (std::size_t k = 0; k < max_k; ++k) total.cmc[k] += s.cmc[k];
    total.queries_evaluated += s.queries_evaluated;
    total.queries_excluded += s.queries_excluded;
  }
  total.map /= static_cast<double>(trials);
  for (double& v : total.cmc) v /= static_cast<double>(trials);
  total.trials = trials;
  return total;
}

void write_ranking_report(const std::filesystem::path& path,
                          std::span<const RankingResult> results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write ranking report " + path.string());
  out << "query_id,ap,first_match_rank,top10\n";
  out << std::setprecision(17);
  for (const auto& r : results) {
    out << r.query_id << ',';
    if (r.defined)
      out << r.ap;
    else
      out << "undefined";
    out << ',' << r.first_match_rank << ',';
    std::size_t n = std::min<std::size_t>(10, r.ranked_ids.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out << ' ';
      out << r.ranked_ids[i];
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for ranking report " + path.string());
}

void write_metrics_summary(const std::filesystem::path& path,
                           const EvalSummary& summary) {
  nlohmann::ordered_json j;
  j["mAP"] = summary.map;
  j["cmc1"] = summary.cmc.size() >= 1 ? summary.cmc[0] : 0.0;
  j["cmc5"] = summary.cmc.size() >= 5 ? summary.cmc[4] : summary.cmc.back();
  j["cmc10"] = summary.cmc.size() >= 10 ? summary.cmc[9] : summary.cmc.back();
  j["trials"] = summary.trials;
  j["queries_evaluated"] = summary.queries_evaluated;
  j["queries_excluded"] = summary.queries_excluded;
  j["cmc"] = summary.cmc;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write metrics summary " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed for metrics summary " + path.string());
}

EvalSummary read_metrics_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics summary " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  EvalSummary s;
  s.map = j.at("mAP").get<double>();
  s.cmc = j.at("cmc").get<std::vector<double>>();
  s.trials = j.at("trials").get<std::size_t>();
  s.queries_evaluated = j.at("queries_evaluated").get<std::size_t>();
  s.queries_excluded = j.at("queries_excluded").get<std::size_t>();
  return s;
}

}  // namespace partmem::eval
