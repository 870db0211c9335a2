#include <doctest.h>

#include <cmath>
#include <set>

#include "stylemetric/metapath.hpp"
#include "stylemetric/util.hpp"

using namespace stylemetric;

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

// A small two-subforum community: users post into threads grouped by forum.
HeteroGraph community_graph() {
  HeteroGraph g;
  const int s0 = g.add_node("s0", NodeType::Subforum);
  const int s1 = g.add_node("s1", NodeType::Subforum);
  int thread_id = 0, post_id = 0;
  std::mt19937_64 rng(99);
  std::vector<int> threads;
  for (int t = 0; t < 6; ++t) {
    const int th = g.add_node("t" + std::to_string(thread_id++), NodeType::Thread);
    g.add_edge(th, t < 3 ? s0 : s1);
    threads.push_back(th);
  }
  for (int u = 0; u < 8; ++u) {
    const int user = g.add_node("u" + std::to_string(u), NodeType::User);
    for (int k = 0; k < 3; ++k) {
      const int th = threads[bounded_draw(rng, threads.size())];
      const int post = g.add_node("p" + std::to_string(post_id++), NodeType::Post);
      g.add_edge(user, post);
      g.add_edge(post, th);
      if (k == 0) g.add_edge(user, th);  // thread starter
    }
  }
  return g;
}

}  // namespace

TEST_CASE("meta-path parsing enforces the schema") {
  CHECK(MetaPath::parse("UPTU").to_string() == "UPTU");
  CHECK(default_metapaths().size() == 7);
  for (const auto& p : default_metapaths()) {
    CHECK(p.types.front() == NodeType::User);
    CHECK(p.types.back() == NodeType::User);
  }
  CHECK_THROWS_AS(MetaPath::parse("USU"), std::runtime_error);   // U-S not a relation
  CHECK_THROWS_AS(MetaPath::parse("PTP"), std::runtime_error);   // must start at U
  CHECK_THROWS_AS(MetaPath::parse("UPXU"), std::runtime_error);  // unknown type
}

TEST_CASE("a forced chain yields exactly that walk") {
  HeteroGraph g;
  const int u1 = g.add_node("u1", NodeType::User);
  const int p1 = g.add_node("p1", NodeType::Post);
  const int t1 = g.add_node("t1", NodeType::Thread);
  const int u2 = g.add_node("u2", NodeType::User);
  g.add_edge(u1, p1);
  g.add_edge(p1, t1);
  g.add_edge(t1, u2);

  auto walks = generate_walks(g, {MetaPath::parse("UPTU")}, 1, 0);
  // u2 has no post neighbor, so only u1 produces a walk.
  REQUIRE(walks.size() == 1);
  CHECK(walks[0] == std::vector<int>{u1, p1, t1, u2});
}

TEST_CASE("every emitted walk conforms to its meta-path and walks are deterministic") {
  HeteroGraph g = community_graph();
  auto paths = default_metapaths();
  auto walks = generate_walks(g, paths, 4, 7);
  CHECK(!walks.empty());

  std::set<std::string> path_specs;
  for (const auto& p : paths) path_specs.insert(p.to_string());
  for (const auto& walk : walks) {
    std::string spec;
    for (int n : walk) spec.push_back(node_type_char(g.types[n]));
    CHECK(path_specs.count(spec) == 1);
  }

  CHECK(generate_walks(g, paths, 4, 7) == walks);
  CHECK(generate_walks(g, paths, 4, 8) != walks);
}

TEST_CASE("an isolated user produces zero walks without error") {
  HeteroGraph g = community_graph();
  g.add_node("hermit", NodeType::User);
  auto before = generate_walks(g, {MetaPath::parse("UPTU")}, 2, 1);
  for (const auto& w : before) {
    CHECK(g.names[w.front()] != "hermit");
  }
}

TEST_CASE("degenerate graphs fail validation") {
  HeteroGraph g;
  g.add_node("a", NodeType::User);
  g.add_node("b", NodeType::User);
  CHECK_THROWS_WITH_AS(generate_walks(g, {MetaPath::parse("UPTU")}, 1, 0),
                       doctest::Contains("heterogeneous"), std::runtime_error);
}

TEST_CASE("edge list round-trips through a file") {
  HeteroGraph g = community_graph();
  const std::string path = "metapath_edges_test.txt";
  g.save_edge_list(path);
  HeteroGraph loaded = HeteroGraph::load_edge_list(path);
  CHECK(loaded.node_count() == g.node_count());
  auto walks_a = generate_walks(g, default_metapaths(), 2, 3);
  // Node ids may be renumbered; compare by name sequences.
  auto names_of = [](const HeteroGraph& gr, const std::vector<std::vector<int>>& ws) {
    std::set<std::string> out;
    for (const auto& w : ws) {
      std::string s;
      for (int n : w) s += gr.names[n] + "/";
      out.insert(s);
    }
    return out;
  };
  auto walks_b = generate_walks(loaded, default_metapaths(), 2, 3);
  CHECK(names_of(g, walks_a).size() == names_of(loaded, walks_b).size());
  std::remove(path.c_str());
}

TEST_CASE("skipgram pulls co-occurring nodes together") {
  // Two walk clusters shaped like meta-path traversals (nodes around a shared
  // hub): a and b always co-occur, c and d co-occur elsewhere, the clusters
  // never mix.
  std::vector<std::vector<int>> corpus;
  for (int i = 0; i < 50; ++i) {
    corpus.push_back({0, 1, 2});  // a h1 b
    corpus.push_back({3, 4, 5});  // c h2 d
  }
  std::vector<NodeType> types(6, NodeType::User);

  SkipgramConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 200;
  cfg.seed = 0;
  SkipgramModel model = train_skipgram(corpus, types, cfg);

  const auto a = node_embedding(model, 0);
  const auto b = node_embedding(model, 2);
  const auto c = node_embedding(model, 3);
  const auto d = node_embedding(model, 5);
  CHECK(cosine(a, b) > cosine(a, c));
  CHECK(cosine(a, b) > cosine(a, d));

  // Objective decreases over training (averaged per epoch).
  REQUIRE(model.epoch_loss.size() == 200);
  CHECK(model.epoch_loss.back() < model.epoch_loss.front());
}

TEST_CASE("zero epochs leave embeddings at initialization") {
  std::vector<std::vector<int>> corpus{{0, 1}, {1, 2}};
  std::vector<NodeType> types(3, NodeType::User);
  SkipgramConfig cfg;
  cfg.dim = 4;
  cfg.epochs = 0;
  cfg.seed = 5;
  SkipgramModel m1 = train_skipgram(corpus, types, cfg);
  SkipgramModel m2 = train_skipgram(corpus, types, cfg);
  CHECK(m1.center == m2.center);  // init is reproducible bit-for-bit
  CHECK(m1.context == std::vector<double>(3 * 4, 0.0));
  CHECK(m1.epoch_loss.empty());

  CHECK(node_embedding(m1, 1).size() == 4);
  CHECK(node_embedding(m1, 0) != node_embedding(m1, 1));  // independent rows
  CHECK_THROWS_AS(node_embedding(m1, 3), std::runtime_error);
}

TEST_CASE("negative table is per-type with count^0.75 weights") {
  // Nodes: two users, one thread; user 0 appears 4x, user 1 appears 2x.
  std::vector<std::vector<int>> corpus{{0, 2, 0}, {1, 2, 0}, {0, 2, 1}};
  std::vector<NodeType> types{NodeType::User, NodeType::User, NodeType::Thread};
  NegativeTable table = NegativeTable::build(corpus, types);

  const auto ui = static_cast<std::size_t>(NodeType::User);
  const auto ti = static_cast<std::size_t>(NodeType::Thread);
  CHECK(table.nodes[ui] == std::vector<int>{0, 1});
  CHECK(table.nodes[ti] == std::vector<int>{2});
  const double w0 = table.cumulative[ui][0];
  const double w1 = table.cumulative[ui][1] - w0;
  CHECK(w0 == doctest::Approx(std::pow(4.0, 0.75)));
  CHECK(w1 == doctest::Approx(std::pow(2.0, 0.75)));

  // Samples always come from the requested type.
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    CHECK(types[static_cast<std::size_t>(table.sample(NodeType::User, rng))] ==
          NodeType::User);
    CHECK(table.sample(NodeType::Thread, rng) == 2);
  }
}

TEST_CASE("skipgram training is deterministic and rejects an empty corpus") {
  std::vector<std::vector<int>> corpus{{0, 1, 2}, {2, 1, 0}};
  std::vector<NodeType> types(3, NodeType::User);
  SkipgramConfig cfg;
  cfg.dim = 6;
  cfg.epochs = 10;
  cfg.seed = 1;
  SkipgramModel m1 = train_skipgram(corpus, types, cfg);
  SkipgramModel m2 = train_skipgram(corpus, types, cfg);
  CHECK(m1.center == m2.center);
  CHECK(m1.context == m2.context);
  CHECK(m1.epoch_loss == m2.epoch_loss);

  CHECK_THROWS_AS(train_skipgram({}, types, cfg), std::runtime_error);
}

TEST_CASE("embeddings file round-trips") {
  std::vector<std::vector<int>> corpus{{0, 1}};
  std::vector<NodeType> types(2, NodeType::User);
  SkipgramConfig cfg;
  cfg.dim = 3;
  cfg.epochs = 2;
  SkipgramModel model = train_skipgram(corpus, types, cfg);
  const std::string path = "metapath_emb_test.txt";
  write_embeddings(path, model, {"alpha", "beta"});
  auto rows = read_embeddings(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows.at("alpha") == node_embedding(model, 0));
  CHECK(rows.at("beta") == node_embedding(model, 1));
  std::remove(path.c_str());
}
