#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stylemetric/encoder.hpp"
#include "stylemetric/metapath.hpp"

namespace stylemetric {

struct Post {
  std::string market;
  std::string author;
  std::int64_t timestamp = 0;  // seconds since epoch
  std::string subforum;
  std::string thread;
  std::string text;
};

/// 0 = Monday ... 6 = Sunday.
int day_of_week(std::int64_t timestamp);

struct Corpus {
  std::vector<Post> posts;
  std::map<std::string, std::vector<std::size_t>> posts_by_author;
  std::map<std::string, int> subforum_ids;  // sorted name -> dense context id

  void rebuild_indices();
  static Corpus from_posts(std::vector<Post> posts);

  /// One JSON object per line with the six post fields.
  static Corpus load_jsonl(const std::string& path);
  void save_jsonl(const std::string& path) const;
};

/// Replaces quoted blocks, PGP material, long hashes, links and images with
/// the reserved special tokens. Idempotent.
std::string preprocess_post(const std::string& text);
Corpus preprocess_corpus(const Corpus& corpus);

struct EpisodeBuildConfig {
  std::size_t episode_length = 5;
  std::size_t min_posts = 0;  // 0 means the default 2 * episode_length
  std::size_t max_len = 256;
};

struct EpisodeData {
  std::vector<EpisodeSet> sets;
  std::vector<std::string> authors;  // label -> author name, sorted
};

/// Non-overlapping chronological windows of L posts per (market, author)
/// group; groups below the post threshold are dropped. Context ids come from
/// the supplied subforum index so train/test splits stay consistent.
EpisodeData build_episodes(const Corpus& corpus, const EpisodeBuildConfig& config,
                           const std::map<std::string, int>& subforum_ids);

/// Split at the median timestamp: train gets every post at or before it (ties
/// go to train), test gets the rest. Errors if all posts share one timestamp.
std::pair<Corpus, Corpus> temporal_split(const Corpus& corpus);

/// Sybil annotations: `market:author` keys mapped to unified labels. Pairs are
/// closed transitively when built.
struct CrossLabelMap {
  std::map<std::string, std::string> labels;

  static CrossLabelMap from_pairs(
      const std::vector<std::pair<std::string, std::string>>& pairs);
  bool empty() const { return labels.empty(); }

  /// Two columns per line: `market:author unified_label`.
  static CrossLabelMap load(const std::string& path);
  void save(const std::string& path) const;
};

/// The CROSS corpus: mapped authors' posts relabeled to their unified label,
/// with subforums namespaced by market so it owns a separate context space.
Corpus apply_cross_labels(const std::vector<Corpus>& corpora, const CrossLabelMap& map);

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct StyleParams {
  int vocab_size = 300;
  double zipf_exponent = 1.1;      // shared word-frequency decay
  double style_strength = 1.0;     // author deviation on word logits
  int mean_post_words = 12;
  int post_words_jitter = 6;
  double migrate_fraction = 0.15;  // authors active in a second market
  int subforums_per_market = 4;
  int threads_per_subforum = 5;
  double link_prob = 0.03;
  double quote_prob = 0.03;
  std::int64_t time_begin = 1500000000;
  int time_span_days = 280;
};

/// Latent author style: word preferences, posting-day habits, favorite
/// subforums and typical post length.
struct AuthorStyle {
  std::vector<double> word_cdf;
  std::vector<double> day_cdf;
  std::vector<double> subforum_cdf;
  int mean_words = 12;
  int jitter = 6;
};

std::vector<std::string> make_vocabulary(const StyleParams& params, std::uint64_t seed);
AuthorStyle make_author_style(const StyleParams& params, std::mt19937_64& rng);
std::string sample_post_text(const AuthorStyle& style,
                             const std::vector<std::string>& vocabulary,
                             const StyleParams& params, std::mt19937_64& rng);

struct SynthResult {
  std::vector<Corpus> markets;
  CrossLabelMap cross;
};

/// Deterministic synthetic markets. A migrate_fraction of authors also post
/// in a second market under an alias with the same latent style; the aliases
/// are recorded in the returned cross map as ground truth.
SynthResult generate_synthetic_corpus(int num_authors, int num_markets,
                                      int posts_per_author, const StyleParams& params,
                                      std::uint64_t seed);

/// User/subforum/thread/post graph from corpus structure: the first post of a
/// thread links its author to the thread, replies link author to post, posts
/// to threads, threads to subforums.
HeteroGraph graph_from_corpus(const Corpus& corpus);

/// Context rows for the corpus' subforums from trained node embeddings
/// (graph node names are "s:<subforum>").
std::vector<std::vector<double>> context_rows_from_embeddings(
    const Corpus& corpus, const SkipgramModel& model, const HeteroGraph& graph);

}  // namespace stylemetric
