#include "stylemetric/metapath.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "stylemetric/util.hpp"

namespace stylemetric {

char node_type_char(NodeType t) {
  switch (t) {
    case NodeType::User: return 'U';
    case NodeType::Subforum: return 'S';
    case NodeType::Thread: return 'T';
    case NodeType::Post: return 'P';
  }
  throw std::runtime_error("bad node type");
}

NodeType node_type_from_char(char c) {
  switch (c) {
    case 'U': return NodeType::User;
    case 'S': return NodeType::Subforum;
    case 'T': return NodeType::Thread;
    case 'P': return NodeType::Post;
    default: throw std::runtime_error(std::string("unknown node type '") + c + "'");
  }
}

int HeteroGraph::add_node(const std::string& name, NodeType type) {
  auto it = index.find(name);
  if (it != index.end()) {
    if (types[it->second] != type) {
      throw std::runtime_error("node " + name + " redeclared with a different type");
    }
    return it->second;
  }
  const int id = node_count();
  index.emplace(name, id);
  names.push_back(name);
  types.push_back(type);
  adjacency.emplace_back();
  return id;
}

void HeteroGraph::add_edge(int a, int b) {
  if (a < 0 || b < 0 || a >= node_count() || b >= node_count()) {
    throw std::runtime_error("edge endpoint out of range");
  }
  adjacency[a][static_cast<std::size_t>(types[b])].push_back(b);
  adjacency[b][static_cast<std::size_t>(types[a])].push_back(a);
}

std::vector<int> HeteroGraph::nodes_of_type(NodeType type) const {
  std::vector<int> out;
  for (int i = 0; i < node_count(); ++i) {
    if (types[i] == type) out.push_back(i);
  }
  return out;
}

void HeteroGraph::validate() const {
  if (node_count() == 0) throw std::runtime_error("graph is empty");
  std::set<NodeType> node_types(types.begin(), types.end());
  std::set<std::pair<NodeType, NodeType>> edge_types;
  for (int a = 0; a < node_count(); ++a) {
    for (const auto& bucket : adjacency[a]) {
      for (int b : bucket) {
        edge_types.insert(std::minmax(types[a], types[b]));
      }
    }
  }
  if (node_types.size() + edge_types.size() <= 2) {
    throw std::runtime_error("graph is not heterogeneous: |T_V| + |T_E| <= 2");
  }
}

HeteroGraph HeteroGraph::load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open edge list: " + path);
  HeteroGraph g;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string src, src_t, dst, dst_t;
    if (!(ls >> src >> src_t >> dst >> dst_t) || src_t.size() != 1 || dst_t.size() != 1) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad edge record");
    }
    const int a = g.add_node(src, node_type_from_char(src_t[0]));
    const int b = g.add_node(dst, node_type_from_char(dst_t[0]));
    g.add_edge(a, b);
  }
  return g;
}

void HeteroGraph::save_edge_list(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write edge list: " + path);
  for (int a = 0; a < node_count(); ++a) {
    for (const auto& bucket : adjacency[a]) {
      for (int b : bucket) {
        if (b < a) continue;  // each undirected edge once
        out << names[a] << ' ' << node_type_char(types[a]) << ' ' << names[b] << ' '
            << node_type_char(types[b]) << '\n';
      }
    }
  }
}

namespace {

bool schema_relation(NodeType a, NodeType b) {
  const auto rel = std::minmax(a, b);
  // U-T, U-P, P-T, T-S
  return (rel == std::minmax(NodeType::User, NodeType::Thread)) ||
         (rel == std::minmax(NodeType::User, NodeType::Post)) ||
         (rel == std::minmax(NodeType::Post, NodeType::Thread)) ||
         (rel == std::minmax(NodeType::Thread, NodeType::Subforum));
}

}  // namespace

MetaPath MetaPath::parse(const std::string& spec) {
  if (spec.size() < 2) throw std::runtime_error("meta-path too short: " + spec);
  MetaPath p;
  for (char c : spec) p.types.push_back(node_type_from_char(c));
  if (p.types.front() != NodeType::User || p.types.back() != NodeType::User) {
    throw std::runtime_error("meta-path must start and end at U: " + spec);
  }
  for (std::size_t i = 0; i + 1 < p.types.size(); ++i) {
    if (!schema_relation(p.types[i], p.types[i + 1])) {
      throw std::runtime_error("meta-path " + spec + " violates the schema at step " +
                               std::to_string(i));
    }
  }
  return p;
}

std::string MetaPath::to_string() const {
  std::string s;
  for (NodeType t : types) s.push_back(node_type_char(t));
  return s;
}

std::vector<MetaPath> default_metapaths() {
  std::vector<MetaPath> paths;
  for (const char* spec :
       {"UPTSTPU", "UTSTPU", "UPTSTU", "UTSTU", "UPTPU", "UPTU", "UTPU"}) {
    paths.push_back(MetaPath::parse(spec));
  }
  return paths;
}

std::vector<std::vector<int>> generate_walks(const HeteroGraph& graph,
                                             const std::vector<MetaPath>& paths,
                                             int walks_per_node, std::uint64_t seed) {
  graph.validate();
  if (walks_per_node < 1) throw std::runtime_error("walks_per_node must be >= 1");
  std::vector<std::vector<int>> corpus;
  for (int start : graph.nodes_of_type(NodeType::User)) {
    // Per-start-node stream, so walk generation parallelizes without changing
    // the corpus.
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(start)));
    for (const auto& path : paths) {
      for (int w = 0; w < walks_per_node; ++w) {
        std::vector<int> walk{start};
        bool complete = true;
        int cur = start;
        for (std::size_t step = 1; step < path.types.size(); ++step) {
          const auto& next_candidates =
              graph.adjacency[cur][static_cast<std::size_t>(path.types[step])];
          if (next_candidates.empty()) {
            complete = false;
            break;
          }
          cur = next_candidates[bounded_draw(rng, next_candidates.size())];
          walk.push_back(cur);
        }
        if (complete) corpus.push_back(std::move(walk));
      }
    }
  }
  return corpus;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

NegativeTable NegativeTable::build(const std::vector<std::vector<int>>& corpus,
                                   const std::vector<NodeType>& node_types) {
  std::vector<double> counts(node_types.size(), 0.0);
  for (const auto& walk : corpus) {
    for (int n : walk) counts[static_cast<std::size_t>(n)] += 1.0;
  }
  NegativeTable t;
  for (std::size_t n = 0; n < counts.size(); ++n) {
    if (counts[n] == 0.0) continue;
    const auto ti = static_cast<std::size_t>(node_types[n]);
    t.nodes[ti].push_back(static_cast<int>(n));
    const double w = std::pow(counts[n], 0.75);
    t.cumulative[ti].push_back(t.cumulative[ti].empty() ? w : t.cumulative[ti].back() + w);
  }
  return t;
}

int NegativeTable::sample(NodeType type, std::mt19937_64& rng) const {
  const auto ti = static_cast<std::size_t>(type);
  const auto& cum = cumulative[ti];
  if (cum.empty()) throw std::runtime_error("no negative candidates for node type");
  const double u = uniform_unit(rng) * cum.back();
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  const auto k = std::min<std::size_t>(it - cum.begin(), cum.size() - 1);
  return nodes[ti][k];
}

SkipgramModel train_skipgram(const std::vector<std::vector<int>>& corpus,
                             const std::vector<NodeType>& node_types,
                             const SkipgramConfig& config) {
  if (corpus.empty()) throw std::runtime_error("skipgram: empty corpus");
  if (config.window < 1) throw std::runtime_error("skipgram: window must be >= 1");
  for (const auto& walk : corpus) {
    for (int n : walk) {
      if (n < 0 || static_cast<std::size_t>(n) >= node_types.size()) {
        throw std::runtime_error("skipgram: node id " + std::to_string(n) +
                                 " outside the type map");
      }
    }
  }

  SkipgramModel model;
  model.dim = config.dim;
  model.node_count = node_types.size();
  const std::size_t d = config.dim;
  std::mt19937_64 rng(derive_seed(config.seed, 0x5697));
  model.center.resize(model.node_count * d);
  for (auto& v : model.center) v = (uniform_unit(rng) - 0.5) / static_cast<double>(d);
  model.context.assign(model.node_count * d, 0.0);
  model.negatives = NegativeTable::build(corpus, node_types);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr *
        std::max(1e-4, 1.0 - static_cast<double>(epoch) / std::max(1, config.epochs));
    double loss_sum = 0.0;
    std::size_t pair_count = 0;
    std::vector<double> grad_center(d);
    for (const auto& walk : corpus) {
      const int len = static_cast<int>(walk.size());
      for (int t = 0; t < len; ++t) {
        const int center_node = walk[t];
        double* wv = model.center.data() + static_cast<std::size_t>(center_node) * d;
        for (int o = -config.window; o <= config.window; ++o) {
          if (o == 0 || t + o < 0 || t + o >= len) continue;
          const int context_node = walk[t + o];
          std::fill(grad_center.begin(), grad_center.end(), 0.0);

          double* uc = model.context.data() + static_cast<std::size_t>(context_node) * d;
          double dot_pos = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot_pos += wv[j] * uc[j];
          const double p = sigmoid(dot_pos);
          loss_sum -= std::log(std::max(p, 1e-12));
          const double g_pos = (p - 1.0) * lr;
          for (std::size_t j = 0; j < d; ++j) {
            grad_center[j] += g_pos * uc[j];
            uc[j] -= g_pos * wv[j];
          }

          // Negatives share the node type of the positive context.
          const NodeType ctx_type = node_types[static_cast<std::size_t>(context_node)];
          for (int neg = 0; neg < config.negatives; ++neg) {
            const int neg_node = model.negatives.sample(ctx_type, rng);
            if (neg_node == context_node) continue;
            double* un = model.context.data() + static_cast<std::size_t>(neg_node) * d;
            double dot_neg = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot_neg += wv[j] * un[j];
            const double pn = sigmoid(dot_neg);
            loss_sum -= std::log(std::max(1.0 - pn, 1e-12));
            const double g_neg = pn * lr;
            for (std::size_t j = 0; j < d; ++j) {
              grad_center[j] += g_neg * un[j];
              un[j] -= g_neg * wv[j];
            }
          }
          for (std::size_t j = 0; j < d; ++j) wv[j] -= grad_center[j];
          ++pair_count;
        }
      }
    }
    model.epoch_loss.push_back(pair_count ? loss_sum / static_cast<double>(pair_count)
                                          : 0.0);
  }
  return model;
}

std::vector<double> node_embedding(const SkipgramModel& model, int node_id) {
  if (node_id < 0 || static_cast<std::size_t>(node_id) >= model.node_count) {
    throw std::runtime_error("node_embedding: unknown node " + std::to_string(node_id));
  }
  const auto begin = model.center.begin() + static_cast<std::size_t>(node_id) * model.dim;
  return std::vector<double>(begin, begin + model.dim);
}

void write_embeddings(const std::string& path, const SkipgramModel& model,
                      const std::vector<std::string>& names) {
  if (names.size() != model.node_count) {
    throw std::runtime_error("write_embeddings: name count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write embeddings: " + path);
  out.precision(17);
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i];
    for (std::size_t j = 0; j < model.dim; ++j) out << ' ' << model.center[i * model.dim + j];
    out << '\n';
  }
}

std::map<std::string, std::vector<double>> read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings: " + path);
  std::map<std::string, std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    std::vector<double> vec;
    double v;
    while (ls >> v) vec.push_back(v);
    rows[name] = std::move(vec);
  }
  return rows;
}

}  // namespace stylemetric
