#include <doctest.h>

#include <cmath>
#include <random>

#include "stylemetric/retrieval.hpp"
#include "stylemetric/util.hpp"

using namespace stylemetric;

namespace {

// Brute-force oracle, kept independent of the library path: raw pairwise
// similarity array and repeated best-remaining selection scans instead of a
// sort. Ties resolve to the lower id, as the contract states.
struct OracleReport {
  double mrr = 0.0;
  std::map<int, double> recall;
};

double oracle_sim(const std::vector<double>& a, const std::vector<double>& b, Measure m) {
  if (m == Measure::Euclidean) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return -std::sqrt(s);
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

OracleReport oracle_metrics(const std::vector<EpisodeEmbedding>& es, Measure m,
                            const std::vector<int>& ks) {
  OracleReport rep;
  std::size_t counted = 0;
  std::map<int, double> hits;
  for (int k : ks) hits[k] = 0;
  for (std::size_t q = 0; q < es.size(); ++q) {
    std::vector<bool> used(es.size(), false);
    used[q] = true;
    std::size_t hit_rank = 0;
    for (std::size_t rank = 1; rank < es.size(); ++rank) {
      std::size_t best = es.size();
      double best_sim = 0;
      for (std::size_t c = 0; c < es.size(); ++c) {
        if (used[c]) continue;
        const double s = oracle_sim(es[q].vec, es[c].vec, m);
        if (best == es.size() || s > best_sim ||
            (s == best_sim && es[c].id < es[best].id)) {
          best = c;
          best_sim = s;
        }
      }
      used[best] = true;
      if (es[best].author == es[q].author) {
        hit_rank = rank;
        break;
      }
    }
    if (hit_rank == 0) continue;
    ++counted;
    rep.mrr += 1.0 / static_cast<double>(hit_rank);
    for (int k : ks) {
      if (hit_rank <= static_cast<std::size_t>(k)) hits[k] += 1.0;
    }
  }
  rep.mrr /= static_cast<double>(counted);
  for (int k : ks) rep.recall[k] = hits[k] / static_cast<double>(counted);
  return rep;
}

std::vector<EpisodeEmbedding> random_embeddings(std::size_t n, std::size_t dim,
                                                int num_authors, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0xabc));
  std::vector<EpisodeEmbedding> out;
  for (std::size_t i = 0; i < n; ++i) {
    EpisodeEmbedding e;
    e.id = static_cast<int>(i);
    e.author = static_cast<int>(bounded_draw(rng, num_authors));
    e.vec.resize(dim);
    for (auto& v : e.vec) v = uniform_unit(rng) * 2 - 1;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_CASE("exact match ranks first under cosine") {
  EpisodeEmbedding q{0, 0, {1, 0}};
  std::vector<EpisodeEmbedding> cands{{1, 0, {1, 0}}, {2, 1, {0, 1}}};
  auto r = rank_by_similarity(q, cands, Measure::Cosine);
  CHECK(r.ranked == std::vector<int>{1, 2});
}

TEST_CASE("euclidean and cosine orders agree on unit-norm vectors") {
  std::mt19937_64 rng(1);
  std::vector<EpisodeEmbedding> es;
  for (int i = 0; i < 12; ++i) {
    EpisodeEmbedding e{i, i % 3, {}};
    e.vec.resize(6);
    double n = 0;
    for (auto& v : e.vec) {
      v = uniform_unit(rng) * 2 - 1;
      n += v * v;
    }
    for (auto& v : e.vec) v /= std::sqrt(n);
    es.push_back(std::move(e));
  }
  std::vector<EpisodeEmbedding> cands(es.begin() + 1, es.end());
  CHECK(rank_by_similarity(es[0], cands, Measure::Cosine).ranked ==
        rank_by_similarity(es[0], cands, Measure::Euclidean).ranked);
}

TEST_CASE("equal-similarity candidates break ties by lower id") {
  EpisodeEmbedding q{0, 0, {1, 0}};
  std::vector<EpisodeEmbedding> cands{{5, 0, {0, 1}}, {2, 1, {0, 1}}};
  auto r = rank_by_similarity(q, cands, Measure::Cosine);
  CHECK(r.ranked == std::vector<int>{2, 5});
}

TEST_CASE("ranking input validation") {
  EpisodeEmbedding q{0, 0, {1, 0}};
  CHECK_THROWS_AS(rank_by_similarity(q, {}, Measure::Cosine), std::runtime_error);
  std::vector<EpisodeEmbedding> with_self{{0, 0, {1, 0}}};
  CHECK_THROWS_WITH_AS(rank_by_similarity(q, with_self, Measure::Cosine),
                       doctest::Contains("own candidate"), std::runtime_error);
}

TEST_CASE("recall and MRR definitions on hand-built rankings") {
  std::unordered_map<int, int> author{{1, 7}, {2, 8}, {3, 7}, {4, 8}};
  // Query A (author 7): hit at rank 1. Query B (author 8): hit at rank 2.
  std::vector<RankingResult> rankings{
      {100, 7, {1, 2, 3, 4}},
      {101, 8, {1, 2, 3, 4}},
  };
  CHECK(recall_at_k(rankings, author, 1) == doctest::Approx(0.5));
  CHECK(recall_at_k(rankings, author, 2) == doctest::Approx(1.0));
  CHECK(recall_at_k(rankings, author, 10) == doctest::Approx(1.0));  // k >= pool size
  CHECK(mean_reciprocal_rank(rankings, author) == doctest::Approx(0.75));

  std::vector<RankingResult> rank4{{100, 7, {2, 4, 2, 1}}};
  std::unordered_map<int, int> author2{{1, 7}, {2, 8}, {4, 8}};
  CHECK(mean_reciprocal_rank(rank4, author2) == doctest::Approx(0.25));

  std::vector<RankingResult> perfect{{1, 7, {1, 2}}, {2, 8, {4, 1}}};
  std::unordered_map<int, int> author3{{1, 7}, {2, 8}, {4, 8}};
  CHECK(mean_reciprocal_rank(perfect, author3) == doctest::Approx(1.0));
}

TEST_CASE("queries whose author is absent are excluded and counted") {
  std::unordered_map<int, int> author{{1, 7}, {2, 7}};
  std::vector<RankingResult> rankings{
      {100, 7, {1, 2}},
      {101, 9, {1, 2}},  // author 9 never appears
  };
  std::size_t excluded = 0;
  CHECK(recall_at_k(rankings, author, 1, &excluded) == doctest::Approx(1.0));
  CHECK(excluded == 1);
  excluded = 0;
  CHECK(mean_reciprocal_rank(rankings, author, &excluded) == doctest::Approx(1.0));
  CHECK(excluded == 1);
}

TEST_CASE("metrics match the brute-force oracle exactly") {
  const std::vector<int> ks{1, 2, 5, 10};
  for (Measure m : {Measure::Cosine, Measure::Euclidean}) {
    auto es = random_embeddings(20, 5, 4, 42);
    MetricReport rep = evaluate_embeddings(es, m, ks);
    OracleReport oracle = oracle_metrics(es, m, ks);
    CHECK(rep.mrr == oracle.mrr);
    for (int k : ks) CHECK(rep.recall.at(k) == oracle.recall.at(k));
  }
}

TEST_CASE("euclidean distance satisfies the metric axioms") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(4), y(4), z(4);
    for (std::size_t i = 0; i < 4; ++i) {
      x[i] = uniform_unit(rng) * 4 - 2;
      y[i] = uniform_unit(rng) * 4 - 2;
      z[i] = uniform_unit(rng) * 4 - 2;
    }
    CHECK(euclidean_distance(x, x) == 0.0);                    // coincidence
    CHECK(euclidean_distance(x, y) >= 0.0);                    // non-negativity
    if (x != y) CHECK(euclidean_distance(x, y) > 0.0);
    CHECK(euclidean_distance(x, y) == euclidean_distance(y, x));  // symmetry
    CHECK(euclidean_distance(x, z) <=
          euclidean_distance(x, y) + euclidean_distance(y, z) + 1e-12);  // triangle
  }
}

TEST_CASE("recall is monotone in k and MRR is bounded by recall at 1") {
  auto es = random_embeddings(30, 4, 5, 7);
  MetricReport rep = evaluate_embeddings(es, Measure::Cosine, {1, 2, 5, 10});
  double prev = 0.0;
  for (const auto& [k, v] : rep.recall) {
    CHECK(v >= prev);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    prev = v;
  }
  CHECK(rep.mrr >= rep.recall.at(1));
  CHECK(rep.mrr <= 1.0);
}

TEST_CASE("cosine rankings are invariant under positive rescaling") {
  auto es = random_embeddings(15, 6, 3, 11);
  auto scaled = es;
  for (auto& e : scaled) {
    for (auto& v : e.vec) v *= 3.7;
  }
  for (std::size_t q = 0; q < es.size(); ++q) {
    std::vector<EpisodeEmbedding> c1, c2;
    for (std::size_t j = 0; j < es.size(); ++j) {
      if (j == q) continue;
      c1.push_back(es[j]);
      c2.push_back(scaled[j]);
    }
    CHECK(rank_by_similarity(es[q], c1, Measure::Cosine).ranked ==
          rank_by_similarity(scaled[q], c2, Measure::Cosine).ranked);
  }
}

TEST_CASE("metric report serializes to JSON and CSV rows") {
  auto es = random_embeddings(10, 3, 2, 1);
  MetricReport rep = evaluate_embeddings(es, Measure::Cosine, {1, 2});
  const std::string json = rep.to_json();
  CHECK(json.find("\"mrr\"") != std::string::npos);
  CHECK(json.find("R@1") != std::string::npos);

  auto rows = rep.csv_rows("synth", "singletask", 3);
  REQUIRE(rows.size() == 3);  // MRR + two recall rows
  CHECK(rows[0].find("synth,singletask,MRR,") == 0);
  CHECK(rows[0].rfind(",3") == rows[0].size() - 2);
}
