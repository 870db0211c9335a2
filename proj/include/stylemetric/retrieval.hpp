#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace stylemetric {

enum class Measure { Cosine, Euclidean };

struct EpisodeEmbedding {
  int id = 0;
  int author = 0;
  std::vector<double> vec;
};

/// Candidates sorted by relevance to the query: cosine descending or
/// euclidean distance ascending, ties broken by candidate id ascending.
struct RankingResult {
  int query_id = 0;
  int query_author = 0;
  std::vector<int> ranked;  // candidate ids, best first
};

/// Cosine similarity with the convention that a zero-norm vector has
/// similarity 0 to everything (keeps ranking total without special cases).
double pair_similarity(const std::vector<double>& a, const std::vector<double>& b,
                       Measure measure);
double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b);

RankingResult rank_by_similarity(const EpisodeEmbedding& query,
                                 const std::vector<EpisodeEmbedding>& candidates,
                                 Measure measure);

/// Queries whose author never appears among the candidates are excluded from
/// the mean; the exclusion count is reported through *excluded when given.
double recall_at_k(const std::vector<RankingResult>& rankings,
                   const std::unordered_map<int, int>& author_of, int k,
                   std::size_t* excluded = nullptr);
double mean_reciprocal_rank(const std::vector<RankingResult>& rankings,
                            const std::unordered_map<int, int>& author_of,
                            std::size_t* excluded = nullptr);

struct MetricReport {
  double mrr = 0.0;
  std::map<int, double> recall;  // k -> R@k
  std::size_t queries = 0;
  std::size_t excluded = 0;

  std::string to_json() const;
  /// Rows `dataset,task,metric,value,seed`; metric is "MRR" or "R@<k>".
  std::vector<std::string> csv_rows(const std::string& dataset, const std::string& task,
                                    std::uint64_t seed) const;
};

/// Every embedding queries against all the others.
MetricReport evaluate_embeddings(const std::vector<EpisodeEmbedding>& embeddings,
                                 Measure measure,
                                 const std::vector<int>& ks = {1, 2, 5, 10});

}  // namespace stylemetric
