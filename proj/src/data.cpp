#include "stylemetric/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "stylemetric/util.hpp"

namespace stylemetric {

int day_of_week(std::int64_t timestamp) {
  if (timestamp < 0) throw std::runtime_error("timestamp must be >= 0");
  // 1970-01-01 was a Thursday; Monday = 0.
  return static_cast<int>((timestamp / 86400 + 3) % 7);
}

void Corpus::rebuild_indices() {
  posts_by_author.clear();
  subforum_ids.clear();
  std::set<std::string> subforums;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    const Post& p = posts[i];
    if (p.market.empty() || p.author.empty()) {
      throw std::runtime_error("post " + std::to_string(i) + " has empty market or author");
    }
    if (p.timestamp < 0) {
      throw std::runtime_error("post " + std::to_string(i) + " has a negative timestamp");
    }
    posts_by_author[p.author].push_back(i);
    subforums.insert(p.subforum);
  }
  int next = 0;
  for (const auto& s : subforums) subforum_ids[s] = next++;
}

Corpus Corpus::from_posts(std::vector<Post> posts) {
  Corpus c;
  c.posts = std::move(posts);
  c.rebuild_indices();
  return c;
}

Corpus Corpus::load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus: " + path);
  std::vector<Post> posts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Post p;
    p.market = j.at("market").get<std::string>();
    p.author = j.at("author").get<std::string>();
    p.timestamp = j.at("timestamp").get<std::int64_t>();
    p.subforum = j.at("subforum").get<std::string>();
    p.thread = j.at("thread").get<std::string>();
    p.text = j.at("text").get<std::string>();
    posts.push_back(std::move(p));
  }
  return from_posts(std::move(posts));
}

void Corpus::save_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus: " + path);
  for (const Post& p : posts) {
    nlohmann::json j;
    j["market"] = p.market;
    j["author"] = p.author;
    j["timestamp"] = p.timestamp;
    j["subforum"] = p.subforum;
    j["thread"] = p.thread;
    j["text"] = p.text;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

namespace {

const std::regex& pgp_pubkey_re() {
  static const std::regex re(
      "-----BEGIN PGP PUBLIC KEY BLOCK-----[\\s\\S]*?-----END PGP PUBLIC KEY BLOCK-----");
  return re;
}
const std::regex& pgp_signature_re() {
  static const std::regex re(
      "-----BEGIN PGP SIGNATURE-----[\\s\\S]*?-----END PGP SIGNATURE-----");
  return re;
}
const std::regex& pgp_signed_header_re() {
  static const std::regex re("-----BEGIN PGP SIGNED MESSAGE-----(\\n+Hash:[^\\n]*)?");
  return re;
}
const std::regex& pgp_message_re() {
  static const std::regex re(
      "-----BEGIN PGP MESSAGE-----[\\s\\S]*?-----END PGP MESSAGE-----");
  return re;
}
const std::regex& long_hash_re() {
  static const std::regex re("\\b[0-9a-fA-F]{32,}\\b");
  return re;
}
const std::regex& bbcode_quote_re() {
  // Innermost quote block: no nested [quote inside.
  static const std::regex re("\\[quote[^\\]]*\\]((?!\\[quote)[\\s\\S])*?\\[/quote\\]");
  return re;
}
const std::regex& blockquote_re() {
  static const std::regex re("<blockquote[^>]*>((?!<blockquote)[\\s\\S])*?</blockquote>");
  return re;
}
const std::regex& bbcode_img_re() {
  static const std::regex re("\\[img[^\\]]*\\][\\s\\S]*?\\[/img\\]");
  return re;
}
const std::regex& html_img_re() {
  static const std::regex re("<img[^>]*>");
  return re;
}
const std::regex& link_re() {
  static const std::regex re(
      "(https?://[^\\s\\]<>\"']+|www\\.[^\\s\\]<>\"']+|[a-z0-9]+\\.onion[^\\s\\]<>\"']*)");
  return re;
}

std::string replace_to_fixpoint(std::string text, const std::regex& re,
                                const std::string& token) {
  while (true) {
    std::string next = std::regex_replace(text, re, token);
    if (next == text) return next;
    text = std::move(next);
  }
}

}  // namespace

std::string preprocess_post(const std::string& text) {
  std::string t = text;
  t = std::regex_replace(t, pgp_pubkey_re(), "[PGP PUBKEY]");
  t = std::regex_replace(t, pgp_signature_re(), "[PGP SIGNATURE]");
  t = std::regex_replace(t, pgp_signed_header_re(), "");
  t = std::regex_replace(t, pgp_message_re(), "[PGP ENCMSG]");
  t = std::regex_replace(t, long_hash_re(), "[PGP ENCMSG]");
  t = replace_to_fixpoint(std::move(t), bbcode_quote_re(), "[QUOTE]");
  t = replace_to_fixpoint(std::move(t), blockquote_re(), "[QUOTE]");
  t = std::regex_replace(t, bbcode_img_re(), "[IMAGE]");
  t = std::regex_replace(t, html_img_re(), "[IMAGE]");
  t = std::regex_replace(t, link_re(), "[LINK]");
  return t;
}

Corpus preprocess_corpus(const Corpus& corpus) {
  Corpus out = corpus;
  for (Post& p : out.posts) p.text = preprocess_post(p.text);
  return out;
}

// ---------------------------------------------------------------------------
// Episode construction and splitting
// ---------------------------------------------------------------------------

EpisodeData build_episodes(const Corpus& corpus, const EpisodeBuildConfig& config,
                           const std::map<std::string, int>& subforum_ids) {
  if (config.episode_length < 1) throw std::runtime_error("episode length must be >= 1");
  const std::size_t min_posts =
      config.min_posts ? config.min_posts : 2 * config.episode_length;

  // Episodes never mix markets or authors.
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.posts.size(); ++i) {
    groups[{corpus.posts[i].market, corpus.posts[i].author}].push_back(i);
  }

  std::set<std::string> qualifying;
  for (const auto& [key, idx] : groups) {
    if (idx.size() >= min_posts) qualifying.insert(key.second);
  }
  EpisodeData out;
  out.authors.assign(qualifying.begin(), qualifying.end());
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < out.authors.size(); ++i) {
    label_of[out.authors[i]] = static_cast<int>(i);
  }

  for (const auto& [key, idx_const] : groups) {
    if (idx_const.size() < min_posts) continue;
    auto idx = idx_const;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return corpus.posts[a].timestamp < corpus.posts[b].timestamp;
    });
    const std::size_t L = config.episode_length;
    for (std::size_t start = 0; start + L <= idx.size(); start += L) {
      EpisodeSet set;
      set.author_label = label_of.at(key.second);
      for (std::size_t k = 0; k < L; ++k) {
        const Post& p = corpus.posts[idx[start + k]];
        const auto sf = subforum_ids.find(p.subforum);
        if (sf == subforum_ids.end()) {
          throw std::runtime_error("subforum '" + p.subforum + "' missing from the index");
        }
        Episode ep;
        ep.tokens = tokenize_bytes(p.text, config.max_len);
        ep.day_of_week = day_of_week(p.timestamp);
        ep.context_id = sf->second;
        set.episodes.push_back(std::move(ep));
      }
      out.sets.push_back(std::move(set));
    }
  }
  return out;
}

std::pair<Corpus, Corpus> temporal_split(const Corpus& corpus) {
  if (corpus.posts.size() < 2) throw std::runtime_error("temporal_split: need >= 2 posts");
  std::vector<std::int64_t> times;
  times.reserve(corpus.posts.size());
  for (const Post& p : corpus.posts) times.push_back(p.timestamp);
  std::sort(times.begin(), times.end());
  if (times.front() == times.back()) {
    throw std::runtime_error("temporal_split: all posts share one timestamp");
  }
  std::int64_t split = times[(times.size() - 1) / 2];  // lower median, ties to train
  if (split == times.back()) {
    // Median equals the max: step down so the test side is non-empty.
    split = *std::prev(std::lower_bound(times.begin(), times.end(), split));
  }
  std::vector<Post> train, test;
  for (const Post& p : corpus.posts) {
    (p.timestamp <= split ? train : test).push_back(p);
  }
  return {Corpus::from_posts(std::move(train)), Corpus::from_posts(std::move(test))};
}

// ---------------------------------------------------------------------------
// Cross-market labels
// ---------------------------------------------------------------------------

CrossLabelMap CrossLabelMap::from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::map<std::string, std::string> parent;
  std::function<std::string(const std::string&)> find = [&](const std::string& k) {
    auto it = parent.find(k);
    if (it == parent.end() || it->second == k) return k;
    const std::string root = find(it->second);
    parent[k] = root;
    return root;
  };
  for (const auto& [a, b] : pairs) {
    parent.emplace(a, a);
    parent.emplace(b, b);
    const std::string ra = find(a), rb = find(b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }

  // Unified labels numbered by sorted component roots.
  std::map<std::string, std::vector<std::string>> components;
  for (const auto& [k, v] : parent) components[find(k)].push_back(k);
  CrossLabelMap map;
  int next = 0;
  for (const auto& [root, members] : components) {
    const std::string label = "cross_" + std::to_string(next++);
    for (const auto& m : members) map.labels[m] = label;
  }
  return map;
}

CrossLabelMap CrossLabelMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cross map: " + path);
  CrossLabelMap map;
  std::string key, label;
  while (in >> key >> label) map.labels[key] = label;
  return map;
}

void CrossLabelMap::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write cross map: " + path);
  for (const auto& [key, label] : labels) out << key << ' ' << label << '\n';
}

Corpus apply_cross_labels(const std::vector<Corpus>& corpora, const CrossLabelMap& map) {
  std::set<std::string> known;
  for (const Corpus& c : corpora) {
    for (const Post& p : c.posts) known.insert(p.market + ":" + p.author);
  }
  std::vector<std::string> missing;
  for (const auto& [key, label] : map.labels) {
    if (!known.count(key)) missing.push_back(key);
  }
  if (!missing.empty()) {
    std::string msg = "cross map names unknown authors:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }

  std::vector<Post> posts;
  for (const Corpus& c : corpora) {
    for (const Post& p : c.posts) {
      const auto it = map.labels.find(p.market + ":" + p.author);
      if (it == map.labels.end()) continue;
      Post q = p;
      q.author = it->second;
      q.subforum = p.market + "/" + p.subforum;  // dedicated CROSS context space
      posts.push_back(std::move(q));
    }
  }
  Corpus cross;
  cross.posts = std::move(posts);
  cross.rebuild_indices();
  return cross;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

std::vector<double> softmax_cdf(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> cdf(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    total += std::exp(logits[i] - mx);
    cdf[i] = total;
  }
  for (double& v : cdf) v /= total;
  return cdf;
}

std::size_t sample_cdf(const std::vector<double>& cdf, std::mt19937_64& rng) {
  const double u = uniform_unit(rng);
  const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1);
}

double gauss(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace

std::vector<std::string> make_vocabulary(const StyleParams& params, std::uint64_t seed) {
  if (params.vocab_size < 2) throw std::runtime_error("vocabulary too small");
  std::mt19937_64 rng = make_rng(seed, 0x70cab);
  std::set<std::string> seen;
  std::vector<std::string> vocab;
  while (static_cast<int>(vocab.size()) < params.vocab_size) {
    const std::size_t len = 3 + bounded_draw(rng, 6);
    std::string w;
    for (std::size_t i = 0; i < len; ++i) {
      w.push_back(static_cast<char>('a' + bounded_draw(rng, 26)));
    }
    if (seen.insert(w).second) vocab.push_back(std::move(w));
  }
  return vocab;
}

AuthorStyle make_author_style(const StyleParams& params, std::mt19937_64& rng) {
  AuthorStyle style;
  std::vector<double> word_logits(params.vocab_size);
  for (int i = 0; i < params.vocab_size; ++i) {
    word_logits[i] = -params.zipf_exponent * std::log(static_cast<double>(i + 1)) +
                     params.style_strength * gauss(rng);
  }
  style.word_cdf = softmax_cdf(word_logits);

  std::vector<double> day_logits(7);
  for (auto& v : day_logits) v = 1.2 * gauss(rng);
  style.day_cdf = softmax_cdf(day_logits);

  std::vector<double> sf_logits(static_cast<std::size_t>(params.subforums_per_market));
  for (auto& v : sf_logits) v = 1.5 * gauss(rng);
  style.subforum_cdf = softmax_cdf(sf_logits);

  style.mean_words = params.mean_post_words;
  style.jitter = params.post_words_jitter;
  return style;
}

std::string sample_post_text(const AuthorStyle& style,
                             const std::vector<std::string>& vocabulary,
                             const StyleParams& params, std::mt19937_64& rng) {
  const int jitter = style.jitter > 0 ? static_cast<int>(bounded_draw(
                                            rng, 2 * static_cast<std::size_t>(style.jitter) + 1)) -
                                            style.jitter
                                      : 0;
  const int words = std::max(2, style.mean_words + jitter);
  std::string text;
  if (uniform_unit(rng) < params.quote_prob) {
    text += "[quote]" + vocabulary[sample_cdf(style.word_cdf, rng)] + " " +
            vocabulary[sample_cdf(style.word_cdf, rng)] + "[/quote] ";
  }
  for (int i = 0; i < words; ++i) {
    if (i) text += (uniform_unit(rng) < 0.08) ? ". " : " ";
    text += vocabulary[sample_cdf(style.word_cdf, rng)];
  }
  if (uniform_unit(rng) < params.link_prob) {
    text += " http://" + vocabulary[sample_cdf(style.word_cdf, rng)] + ".onion/x";
  }
  return text;
}

SynthResult generate_synthetic_corpus(int num_authors, int num_markets,
                                      int posts_per_author, const StyleParams& params,
                                      std::uint64_t seed) {
  if (num_authors < 2) throw std::runtime_error("need at least 2 authors");
  if (num_markets < 1) throw std::runtime_error("need at least 1 market");
  if (posts_per_author < 1) throw std::runtime_error("posts_per_author must be positive");

  const std::vector<std::string> vocab = make_vocabulary(params, seed);
  const int migrants = num_markets > 1
                           ? static_cast<int>(params.migrate_fraction * num_authors)
                           : 0;

  std::vector<std::vector<Post>> market_posts(static_cast<std::size_t>(num_markets));
  std::vector<std::pair<std::string, std::string>> cross_pairs;

  const std::int64_t day0 = params.time_begin / 86400;
  const int weeks = std::max(1, params.time_span_days / 7);

  auto emit_posts = [&](int author_idx, const std::string& name, int market) {
    const AuthorStyle style = [&] {
      // Style depends only on (seed, author), so an alias shares it.
      std::mt19937_64 style_rng =
          make_rng(seed, 0x57e1 + static_cast<std::uint64_t>(author_idx));
      return make_author_style(params, style_rng);
    }();
    std::mt19937_64 rng = make_rng(
        seed, 0x9057 + static_cast<std::uint64_t>(author_idx) * 64 +
                  static_cast<std::uint64_t>(market));
    for (int n = 0; n < posts_per_author; ++n) {
      Post p;
      p.market = "m" + std::to_string(market);
      p.author = name;
      const std::size_t sf = sample_cdf(style.subforum_cdf, rng);
      p.subforum = "sf" + std::to_string(sf);
      p.thread = "th" + std::to_string(sf) + "_" +
                 std::to_string(bounded_draw(
                     rng, static_cast<std::size_t>(params.threads_per_subforum)));
      // Timestamp on a week chosen uniformly, weekday from the author habit.
      const int week = static_cast<int>(bounded_draw(rng, static_cast<std::size_t>(weeks)));
      const int dow = static_cast<int>(sample_cdf(style.day_cdf, rng));
      std::int64_t day = day0 + static_cast<std::int64_t>(week) * 7;
      day += ((dow - (day + 3) % 7) % 7 + 7) % 7;
      p.timestamp = day * 86400 + static_cast<std::int64_t>(bounded_draw(rng, 86400));
      p.text = sample_post_text(style, vocab, params, rng);
      market_posts[static_cast<std::size_t>(market)].push_back(std::move(p));
    }
  };

  for (int a = 0; a < num_authors; ++a) {
    const int home = a % num_markets;
    const std::string name = "author_" + std::to_string(a);
    emit_posts(a, name, home);
    if (a < migrants) {
      const int other = (home + 1) % num_markets;
      const std::string alias = "ghost_" + std::to_string(a);
      emit_posts(a, alias, other);
      cross_pairs.emplace_back("m" + std::to_string(home) + ":" + name,
                               "m" + std::to_string(other) + ":" + alias);
    }
  }

  SynthResult result;
  for (auto& posts : market_posts) {
    result.markets.push_back(Corpus::from_posts(std::move(posts)));
  }
  result.cross = CrossLabelMap::from_pairs(cross_pairs);
  return result;
}

// ---------------------------------------------------------------------------
// Corpus graph
// ---------------------------------------------------------------------------

HeteroGraph graph_from_corpus(const Corpus& corpus) {
  HeteroGraph g;
  std::map<std::string, std::vector<std::size_t>> by_thread;
  for (std::size_t i = 0; i < corpus.posts.size(); ++i) {
    by_thread[corpus.posts[i].thread].push_back(i);
  }
  for (auto& [thread, idx] : by_thread) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return corpus.posts[a].timestamp < corpus.posts[b].timestamp;
    });
    const int t = g.add_node("t:" + thread, NodeType::Thread);
    const int s = g.add_node("s:" + corpus.posts[idx[0]].subforum, NodeType::Subforum);
    g.add_edge(t, s);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Post& p = corpus.posts[idx[k]];
      const int u = g.add_node("u:" + p.author, NodeType::User);
      if (k == 0) {
        g.add_edge(u, t);  // thread starter
      } else {
        const int post = g.add_node("p:" + std::to_string(idx[k]), NodeType::Post);
        g.add_edge(u, post);
        g.add_edge(post, t);
      }
    }
  }
  return g;
}

std::vector<std::vector<double>> context_rows_from_embeddings(const Corpus& corpus,
                                                              const SkipgramModel& model,
                                                              const HeteroGraph& graph) {
  std::vector<std::vector<double>> rows(corpus.subforum_ids.size());
  for (const auto& [name, id] : corpus.subforum_ids) {
    const auto it = graph.index.find("s:" + name);
    if (it == graph.index.end()) {
      throw std::runtime_error("subforum '" + name + "' has no graph node");
    }
    rows[static_cast<std::size_t>(id)] = node_embedding(model, it->second);
  }
  return rows;
}

}  // namespace stylemetric
