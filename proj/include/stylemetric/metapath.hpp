#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace stylemetric {

enum class NodeType : std::uint8_t { User = 0, Subforum = 1, Thread = 2, Post = 3 };

char node_type_char(NodeType t);
NodeType node_type_from_char(char c);

/// Undirected heterogeneous graph over users, subforums, threads and posts.
/// Adjacency is grouped by neighbor type so typed walks can sample the next
/// hop directly.
struct HeteroGraph {
  std::vector<NodeType> types;
  std::vector<std::string> names;
  std::unordered_map<std::string, int> index;
  std::vector<std::array<std::vector<int>, 4>> adjacency;

  int add_node(const std::string& name, NodeType type);
  void add_edge(int a, int b);
  int node_count() const { return static_cast<int>(types.size()); }
  std::vector<int> nodes_of_type(NodeType type) const;

  /// Node- and edge-type heterogeneity condition: |T_V| + |T_E| > 2.
  void validate() const;

  /// Line format: `src_id src_type dst_id dst_type` with types U/S/T/P.
  static HeteroGraph load_edge_list(const std::string& path);
  void save_edge_list(const std::string& path) const;
};

/// A node-type sequence constraining walks; must begin and end at User and
/// traverse only schema relations (U-T, U-P, P-T, T-S).
struct MetaPath {
  std::vector<NodeType> types;

  static MetaPath parse(const std::string& spec);  // e.g. "UPTSTPU"
  std::string to_string() const;
};

/// The seven default meta-paths.
std::vector<MetaPath> default_metapaths();

/// One walk per (user node, meta-path, repeat); a walk that cannot extend to
/// the required next type is discarded, so every emitted walk's type sequence
/// equals its meta-path exactly. Deterministic for a given (graph, seed).
std::vector<std::vector<int>> generate_walks(const HeteroGraph& graph,
                                             const std::vector<MetaPath>& paths,
                                             int walks_per_node, std::uint64_t seed);

struct SkipgramConfig {
  std::size_t dim = 32;
  int window = 3;
  int negatives = 5;
  int epochs = 5;
  double lr = 0.025;  // linear decay per epoch
  std::uint64_t seed = 0;
};

/// Per-type unigram^0.75 sampling table.
struct NegativeTable {
  std::array<std::vector<int>, 4> nodes;
  std::array<std::vector<double>, 4> cumulative;

  static NegativeTable build(const std::vector<std::vector<int>>& corpus,
                             const std::vector<NodeType>& node_types);
  int sample(NodeType type, std::mt19937_64& rng) const;
};

struct SkipgramModel {
  std::size_t dim = 0;
  std::size_t node_count = 0;
  std::vector<double> center;   // node_count x dim
  std::vector<double> context;  // node_count x dim
  NegativeTable negatives;
  std::vector<double> epoch_loss;  // mean objective per epoch, for monitoring
};

/// Heterogeneous skip-gram with negative sampling: negatives are drawn from
/// the node type of the positive context, with weight count^0.75 within type.
SkipgramModel train_skipgram(const std::vector<std::vector<int>>& corpus,
                             const std::vector<NodeType>& node_types,
                             const SkipgramConfig& config);

std::vector<double> node_embedding(const SkipgramModel& model, int node_id);

/// Rows keyed by node name: `name v1 v2 ...` per line.
void write_embeddings(const std::string& path, const SkipgramModel& model,
                      const std::vector<std::string>& names);
std::map<std::string, std::vector<double>> read_embeddings(const std::string& path);

}  // namespace stylemetric
