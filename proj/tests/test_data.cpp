#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "stylemetric/data.hpp"
#include "stylemetric/util.hpp"

using namespace stylemetric;

namespace {

Post make_post(const std::string& market, const std::string& author, std::int64_t ts,
               const std::string& subforum = "general", const std::string& thread = "t1",
               const std::string& text = "hello") {
  return Post{market, author, ts, subforum, thread, text};
}

// Upper regularized incomplete gamma Q(a, x), for the chi-square p-value.
double gamma_q(double a, double x) {
  if (x < a + 1.0) {
    double sum = 1.0 / a, term = sum;
    for (int n = 1; n < 200; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-12) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 200; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-12) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Two-sample chi-square p-value over character counts of two text corpora.
double char_distribution_pvalue(const std::vector<std::string>& a,
                                const std::vector<std::string>& b) {
  std::map<char, double> ca, cb;
  double na = 0, nb = 0;
  for (const auto& s : a) {
    for (char c : s) {
      if (c >= 'a' && c <= 'z') {
        ca[c] += 1;
        ++na;
      }
    }
  }
  for (const auto& s : b) {
    for (char c : s) {
      if (c >= 'a' && c <= 'z') {
        cb[c] += 1;
        ++nb;
      }
    }
  }
  double chi2 = 0.0;
  int bins = 0;
  for (char c = 'a'; c <= 'z'; ++c) {
    const double oa = ca[c], ob = cb[c];
    if (oa + ob == 0) continue;
    ++bins;
    const double ea = na * (oa + ob) / (na + nb);
    const double eb = nb * (oa + ob) / (na + nb);
    chi2 += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
  }
  return gamma_q(0.5 * (bins - 1), 0.5 * chi2);
}

}  // namespace

TEST_CASE("day_of_week follows the Monday-zero convention") {
  CHECK(day_of_week(0) == 3);           // 1970-01-01, Thursday
  CHECK(day_of_week(4 * 86400) == 0);   // 1970-01-05, Monday
  CHECK(day_of_week(10 * 86400) == 6);  // 1970-01-11, Sunday
  CHECK_THROWS_AS(day_of_week(-1), std::runtime_error);
}

TEST_CASE("preprocessing replaces rule matches with special tokens") {
  CHECK(preprocess_post("-----BEGIN PGP PUBLIC KEY BLOCK-----\nAAAA\nBBBB\n-----END PGP "
                        "PUBLIC KEY BLOCK-----") == "[PGP PUBKEY]");
  CHECK(preprocess_post("see http://x.onion/a") == "see [LINK]");
  CHECK(preprocess_post("see www.example.com now") == "see [LINK] now");
  CHECK(preprocess_post("plain text, no patterns.") == "plain text, no patterns.");
  CHECK(preprocess_post("sig: -----BEGIN PGP SIGNATURE-----\nxx\n-----END PGP "
                        "SIGNATURE-----") == "sig: [PGP SIGNATURE]");
  CHECK(preprocess_post("-----BEGIN PGP MESSAGE-----\nzz\n-----END PGP MESSAGE-----") ==
        "[PGP ENCMSG]");
  CHECK(preprocess_post("hash 0123456789abcdef0123456789abcdef here") ==
        "hash [PGP ENCMSG] here");
  CHECK(preprocess_post("[quote=bob]inner text[/quote] reply") == "[QUOTE] reply");
  CHECK(preprocess_post("[quote][quote]deep[/quote][/quote] ok") == "[QUOTE] ok");
  CHECK(preprocess_post("[img]http://a.onion/i.png[/img]") == "[IMAGE]");
  CHECK(preprocess_post("<img src=\"x.png\">") == "[IMAGE]");
}

TEST_CASE("preprocessing is idempotent on a fuzz corpus") {
  std::mt19937_64 rng(123);
  const std::vector<std::string> fragments = {
      "hello world",
      "[quote]q[/quote]",
      "[quote=alice][quote]x[/quote][/quote]",
      "http://silk.onion/page?id=2",
      "www.market.com/listing",
      "-----BEGIN PGP PUBLIC KEY BLOCK-----\nmQENBF\n-----END PGP PUBLIC KEY BLOCK-----",
      "-----BEGIN PGP SIGNATURE-----\niQEz\n-----END PGP SIGNATURE-----",
      "-----BEGIN PGP MESSAGE-----\nhQEM\n-----END PGP MESSAGE-----",
      "-----BEGIN PGP SIGNED MESSAGE-----\nHash: SHA256\n",
      "deadbeefdeadbeefdeadbeefdeadbeef00",
      "[img]pic.png[/img]",
      "<img src='y'>",
      "<blockquote>old post</blockquote>",
      "random ][ brackets [quote unclosed",
      "tail [/quote] only",
      "\n\n\t mixed \t whitespace \n",
  };
  for (int i = 0; i < 1000; ++i) {
    std::string text;
    const std::size_t parts = 1 + bounded_draw(rng, 6);
    for (std::size_t k = 0; k < parts; ++k) {
      text += fragments[bounded_draw(rng, fragments.size())];
      text += " ";
    }
    const std::string once = preprocess_post(text);
    CHECK(preprocess_post(once) == once);
  }
}

TEST_CASE("episodes are built from consecutive chronological windows") {
  std::vector<Post> posts;
  // Author with 10 posts (2 sets at L=5), another with 9 (excluded).
  for (int i = 0; i < 10; ++i) {
    posts.push_back(make_post("m0", "alice", 1000 + i * 86400, "sf" + std::to_string(i)));
  }
  for (int i = 0; i < 9; ++i) {
    posts.push_back(make_post("m0", "bob", 2000 + i * 86400));
  }
  Corpus corpus = Corpus::from_posts(posts);
  EpisodeBuildConfig cfg;
  cfg.episode_length = 5;
  cfg.max_len = 32;
  EpisodeData data = build_episodes(corpus, cfg, corpus.subforum_ids);

  CHECK(data.authors == std::vector<std::string>{"alice"});
  REQUIRE(data.sets.size() == 2);
  for (const auto& set : data.sets) {
    CHECK(set.episodes.size() == 5);
    CHECK(set.author_label == 0);
  }
  // Chronological order within a set: context ids follow the time order
  // because each post used a distinct subforum.
  const int first = data.sets[0].episodes[0].context_id;
  for (std::size_t k = 1; k < 5; ++k) {
    CHECK(data.sets[0].episodes[k].context_id > data.sets[0].episodes[k - 1].context_id);
  }
  CHECK(first == corpus.subforum_ids.at("sf0"));
}

TEST_CASE("episodes never mix markets") {
  std::vector<Post> posts;
  for (int i = 0; i < 4; ++i) posts.push_back(make_post("m0", "crossauthor", 100 + i));
  for (int i = 0; i < 4; ++i) posts.push_back(make_post("m1", "crossauthor", 200 + i));
  Corpus corpus = Corpus::from_posts(posts);
  EpisodeBuildConfig cfg;
  cfg.episode_length = 2;
  cfg.min_posts = 4;
  cfg.max_len = 16;
  EpisodeData data = build_episodes(corpus, cfg, corpus.subforum_ids);
  CHECK(data.sets.size() == 4);  // two windows per market group, none spanning
}

TEST_CASE("temporal split at the median with ties to train") {
  std::vector<Post> posts{make_post("m", "a", 1), make_post("m", "b", 2),
                          make_post("m", "c", 3), make_post("m", "d", 4)};
  auto [train, test] = temporal_split(Corpus::from_posts(posts));
  CHECK(train.posts.size() == 2);
  CHECK(test.posts.size() == 2);

  std::int64_t max_train = 0, min_test = 1 << 30;
  for (const auto& p : train.posts) max_train = std::max(max_train, p.timestamp);
  for (const auto& p : test.posts) min_test = std::min(min_test, p.timestamp);
  CHECK(max_train <= min_test);

  // An author active only after the median appears only in test.
  std::vector<Post> late{make_post("m", "old", 1), make_post("m", "old", 2),
                         make_post("m", "old", 3), make_post("m", "new", 9)};
  auto [tr2, te2] = temporal_split(Corpus::from_posts(late));
  CHECK(tr2.posts_by_author.count("new") == 0);
  CHECK(te2.posts_by_author.count("new") == 1);

  // Ties at the median all fall to train.
  std::vector<Post> tied{make_post("m", "a", 5), make_post("m", "b", 5),
                         make_post("m", "c", 5), make_post("m", "d", 9)};
  auto [tr3, te3] = temporal_split(Corpus::from_posts(tied));
  CHECK(tr3.posts.size() == 3);
  CHECK(te3.posts.size() == 1);

  std::vector<Post> flat{make_post("m", "a", 5), make_post("m", "b", 5)};
  CHECK_THROWS_WITH_AS(temporal_split(Corpus::from_posts(flat)),
                       doctest::Contains("one timestamp"), std::runtime_error);
}

TEST_CASE("cross label map closes transitively and relabels posts") {
  CrossLabelMap map = CrossLabelMap::from_pairs({{"m0:u1", "m1:u9"}, {"m1:u9", "m2:u5"}});
  const auto& labels = map.labels;
  REQUIRE(labels.size() == 3);
  CHECK(labels.at("m0:u1") == labels.at("m1:u9"));
  CHECK(labels.at("m1:u9") == labels.at("m2:u5"));

  Corpus m0 = Corpus::from_posts({make_post("m0", "u1", 1, "drugs"),
                                  make_post("m0", "u2", 2)});
  Corpus m1 = Corpus::from_posts({make_post("m1", "u9", 3, "drugs")});
  Corpus m2 = Corpus::from_posts({make_post("m2", "u5", 4)});
  Corpus cross = apply_cross_labels({m0, m1, m2}, map);
  CHECK(cross.posts.size() == 3);  // only mapped authors
  std::set<std::string> authors;
  for (const auto& p : cross.posts) authors.insert(p.author);
  CHECK(authors.size() == 1);
  // Context space is namespaced by market.
  CHECK(cross.subforum_ids.count("m0/drugs") == 1);
  CHECK(cross.subforum_ids.count("m1/drugs") == 1);

  CHECK(apply_cross_labels({m0}, CrossLabelMap{}).posts.empty());

  CrossLabelMap bad = CrossLabelMap::from_pairs({{"m0:u1", "m0:nobody"}});
  CHECK_THROWS_WITH_AS(apply_cross_labels({m0}, bad), doctest::Contains("m0:nobody"),
                       std::runtime_error);
}

TEST_CASE("cross label map round-trips through its file format") {
  CrossLabelMap map = CrossLabelMap::from_pairs({{"m0:a", "m1:b"}});
  const std::string path = "cross_map_test.txt";
  map.save(path);
  CrossLabelMap loaded = CrossLabelMap::load(path);
  CHECK(loaded.labels == map.labels);
  std::remove(path.c_str());
}

TEST_CASE("synthetic corpus is deterministic") {
  StyleParams params;
  auto r1 = generate_synthetic_corpus(8, 2, 12, params, 42);
  auto r2 = generate_synthetic_corpus(8, 2, 12, params, 42);
  REQUIRE(r1.markets.size() == 2);
  for (std::size_t m = 0; m < 2; ++m) {
    REQUIRE(r1.markets[m].posts.size() == r2.markets[m].posts.size());
    for (std::size_t i = 0; i < r1.markets[m].posts.size(); ++i) {
      CHECK(r1.markets[m].posts[i].text == r2.markets[m].posts[i].text);
      CHECK(r1.markets[m].posts[i].timestamp == r2.markets[m].posts[i].timestamp);
      CHECK(r1.markets[m].posts[i].author == r2.markets[m].posts[i].author);
    }
  }
  CHECK(r1.cross.labels == r2.cross.labels);

  auto r3 = generate_synthetic_corpus(8, 2, 12, params, 43);
  CHECK(r1.markets[0].posts[0].text != r3.markets[0].posts[0].text);
}

TEST_CASE("migration fraction zero leaves the cross map empty") {
  StyleParams params;
  params.migrate_fraction = 0.0;
  auto result = generate_synthetic_corpus(6, 2, 10, params, 1);
  CHECK(result.cross.empty());

  params.migrate_fraction = 0.5;
  auto with = generate_synthetic_corpus(6, 2, 10, params, 1);
  CHECK(with.cross.labels.size() == 6);  // 3 pairs
}

TEST_CASE("identical styles are statistically indistinguishable") {
  StyleParams params;
  params.link_prob = 0.0;
  params.quote_prob = 0.0;
  const auto vocab = make_vocabulary(params, 7);
  std::mt19937_64 style_rng(100);
  const AuthorStyle style = make_author_style(params, style_rng);

  std::mt19937_64 ra(1), rb(2);
  std::vector<std::string> a, b;
  for (int i = 0; i < 300; ++i) {
    a.push_back(sample_post_text(style, vocab, params, ra));
    b.push_back(sample_post_text(style, vocab, params, rb));
  }
  CHECK(char_distribution_pvalue(a, b) > 0.01);

  // Distinct styles with the default strength separate clearly.
  std::mt19937_64 other_rng(200);
  const AuthorStyle other = make_author_style(params, other_rng);
  std::vector<std::string> c;
  std::mt19937_64 rc(3);
  for (int i = 0; i < 300; ++i) c.push_back(sample_post_text(other, vocab, params, rc));
  CHECK(char_distribution_pvalue(a, c) < 0.01);
}

TEST_CASE("synthetic corpus rejects degenerate parameters") {
  StyleParams params;
  CHECK_THROWS_AS(generate_synthetic_corpus(1, 2, 10, params, 0), std::runtime_error);
  CHECK_THROWS_AS(generate_synthetic_corpus(4, 2, 0, params, 0), std::runtime_error);
}

TEST_CASE("corpus round-trips through jsonl") {
  StyleParams params;
  auto result = generate_synthetic_corpus(4, 1, 10, params, 9);
  const std::string path = "corpus_test.jsonl";
  result.markets[0].save_jsonl(path);
  Corpus loaded = Corpus::load_jsonl(path);
  REQUIRE(loaded.posts.size() == result.markets[0].posts.size());
  for (std::size_t i = 0; i < loaded.posts.size(); ++i) {
    CHECK(loaded.posts[i].text == result.markets[0].posts[i].text);
    CHECK(loaded.posts[i].timestamp == result.markets[0].posts[i].timestamp);
  }
  CHECK(loaded.subforum_ids == result.markets[0].subforum_ids);
  std::remove(path.c_str());
}

TEST_CASE("corpus graph wires users, posts, threads and subforums") {
  std::vector<Post> posts{
      make_post("m", "alice", 100, "drugs", "t1", "op"),
      make_post("m", "bob", 200, "drugs", "t1", "reply"),
      make_post("m", "alice", 300, "security", "t2", "op2"),
  };
  HeteroGraph g = graph_from_corpus(Corpus::from_posts(posts));
  const int alice = g.index.at("u:alice");
  const int t1 = g.index.at("t:t1");
  const int s_drugs = g.index.at("s:drugs");

  // Thread starter: U-T edge; reply: U-P and P-T edges.
  const auto& alice_threads = g.adjacency[alice][static_cast<std::size_t>(NodeType::Thread)];
  CHECK(std::count(alice_threads.begin(), alice_threads.end(), t1) == 1);
  const int bob = g.index.at("u:bob");
  CHECK(g.adjacency[bob][static_cast<std::size_t>(NodeType::Post)].size() == 1);
  CHECK(g.adjacency[t1][static_cast<std::size_t>(NodeType::Subforum)].front() == s_drugs);
  g.validate();
}
