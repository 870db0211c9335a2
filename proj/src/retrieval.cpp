#include "stylemetric/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stylemetric {

namespace {

void require_same_dim(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::runtime_error("embedding dimension mismatch: " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
  }
}

}  // namespace

double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  require_same_dim(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double pair_similarity(const std::vector<double>& a, const std::vector<double>& b,
                       Measure measure) {
  require_same_dim(a, b);
  if (measure == Measure::Euclidean) return -euclidean_distance(a, b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

RankingResult rank_by_similarity(const EpisodeEmbedding& query,
                                 const std::vector<EpisodeEmbedding>& candidates,
                                 Measure measure) {
  if (candidates.empty()) throw std::runtime_error("rank_by_similarity: no candidates");
  std::vector<std::pair<double, int>> scored;
  scored.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (c.id == query.id) {
      throw std::runtime_error("rank_by_similarity: query " + std::to_string(query.id) +
                               " present in its own candidate set");
    }
    scored.emplace_back(pair_similarity(query.vec, c.vec, measure), c.id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  RankingResult result;
  result.query_id = query.id;
  result.query_author = query.author;
  result.ranked.reserve(scored.size());
  for (const auto& [score, id] : scored) result.ranked.push_back(id);
  return result;
}

namespace {

// First rank (1-based) at which the query's author appears, or 0 if absent.
std::size_t first_hit_rank(const RankingResult& r,
                           const std::unordered_map<int, int>& author_of) {
  for (std::size_t j = 0; j < r.ranked.size(); ++j) {
    const auto it = author_of.find(r.ranked[j]);
    if (it == author_of.end()) {
      throw std::runtime_error("unknown candidate id " + std::to_string(r.ranked[j]));
    }
    if (it->second == r.query_author) return j + 1;
  }
  return 0;
}

}  // namespace

double recall_at_k(const std::vector<RankingResult>& rankings,
                   const std::unordered_map<int, int>& author_of, int k,
                   std::size_t* excluded) {
  if (k < 1) throw std::runtime_error("recall_at_k: k must be >= 1");
  if (rankings.empty()) throw std::runtime_error("recall_at_k: no rankings");
  double hits = 0.0;
  std::size_t counted = 0, skipped = 0;
  for (const auto& r : rankings) {
    const std::size_t rank = first_hit_rank(r, author_of);
    if (rank == 0) {
      ++skipped;  // author absent from the candidate pool
      continue;
    }
    ++counted;
    if (rank <= static_cast<std::size_t>(k)) hits += 1.0;
  }
  if (excluded) *excluded = skipped;
  if (counted == 0) throw std::runtime_error("recall_at_k: every query was excluded");
  return hits / static_cast<double>(counted);
}

double mean_reciprocal_rank(const std::vector<RankingResult>& rankings,
                            const std::unordered_map<int, int>& author_of,
                            std::size_t* excluded) {
  if (rankings.empty()) throw std::runtime_error("mean_reciprocal_rank: no rankings");
  double total = 0.0;
  std::size_t counted = 0, skipped = 0;
  for (const auto& r : rankings) {
    const std::size_t rank = first_hit_rank(r, author_of);
    if (rank == 0) {
      ++skipped;
      continue;
    }
    ++counted;
    total += 1.0 / static_cast<double>(rank);
  }
  if (excluded) *excluded = skipped;
  if (counted == 0) throw std::runtime_error("mean_reciprocal_rank: every query was excluded");
  return total / static_cast<double>(counted);
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["mrr"] = mrr;
  for (const auto& [k, v] : recall) j["recall"]["R@" + std::to_string(k)] = v;
  j["queries"] = queries;
  j["excluded"] = excluded;
  return j.dump(2);
}

std::vector<std::string> MetricReport::csv_rows(const std::string& dataset,
                                                const std::string& task,
                                                std::uint64_t seed) const {
  std::vector<std::string> rows;
  auto row = [&](const std::string& metric, double value) {
    std::ostringstream os;
    os.precision(10);
    os << dataset << ',' << task << ',' << metric << ',' << value << ',' << seed;
    rows.push_back(os.str());
  };
  row("MRR", mrr);
  for (const auto& [k, v] : recall) row("R@" + std::to_string(k), v);
  return rows;
}

MetricReport evaluate_embeddings(const std::vector<EpisodeEmbedding>& embeddings,
                                 Measure measure, const std::vector<int>& ks) {
  if (embeddings.size() < 2) {
    throw std::runtime_error("evaluate_embeddings: need at least two embeddings");
  }
  std::unordered_map<int, int> author_of;
  for (const auto& e : embeddings) {
    if (!author_of.emplace(e.id, e.author).second) {
      throw std::runtime_error("duplicate episode id " + std::to_string(e.id));
    }
  }
  std::vector<RankingResult> rankings;
  rankings.reserve(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    std::vector<EpisodeEmbedding> candidates;
    candidates.reserve(embeddings.size() - 1);
    for (std::size_t j = 0; j < embeddings.size(); ++j) {
      if (j != i) candidates.push_back(embeddings[j]);
    }
    rankings.push_back(rank_by_similarity(embeddings[i], candidates, measure));
  }
  MetricReport report;
  report.queries = rankings.size();
  report.mrr = mean_reciprocal_rank(rankings, author_of, &report.excluded);
  for (int k : ks) report.recall[k] = recall_at_k(rankings, author_of, k);
  return report;
}

}  // namespace stylemetric
