#include "stylemetric/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "stylemetric/util.hpp"

namespace stylemetric {

// ---------------------------------------------------------------------------
// Enum names
// ---------------------------------------------------------------------------

std::string to_string(TaskKind t) {
  return t == TaskKind::Singletask ? "singletask" : "multitask";
}
std::string to_string(LossKind l) {
  switch (l) {
    case LossKind::Softmax: return "softmax";
    case LossKind::Nbc: return "nbc";
    case LossKind::Cosface: return "cosface";
    case LossKind::Arcface: return "arcface";
    case LossKind::Multisimilarity: return "multisimilarity";
  }
  throw std::runtime_error("bad loss kind");
}
std::string to_string(Measure m) { return m == Measure::Cosine ? "cosine" : "euclidean"; }
std::string to_string(Similarity s) { return s == Similarity::Cosine ? "cosine" : "dot"; }
std::string to_string(NegStatsMode m) {
  return m == NegStatsMode::Batch ? "batch" : "epoch";
}

namespace {

TaskKind task_kind_from(const std::string& s) {
  if (s == "singletask") return TaskKind::Singletask;
  if (s == "multitask") return TaskKind::Multitask;
  throw std::runtime_error("unknown task kind: " + s);
}
LossKind loss_kind_from(const std::string& s) {
  if (s == "softmax") return LossKind::Softmax;
  if (s == "nbc") return LossKind::Nbc;
  if (s == "cosface") return LossKind::Cosface;
  if (s == "arcface") return LossKind::Arcface;
  if (s == "multisimilarity") return LossKind::Multisimilarity;
  throw std::runtime_error("unknown loss: " + s);
}
Measure measure_from(const std::string& s) {
  if (s == "cosine") return Measure::Cosine;
  if (s == "euclidean") return Measure::Euclidean;
  throw std::runtime_error("unknown measure: " + s);
}
Similarity similarity_from(const std::string& s) {
  if (s == "cosine") return Similarity::Cosine;
  if (s == "dot") return Similarity::Dot;
  throw std::runtime_error("unknown similarity: " + s);
}
NegStatsMode neg_stats_from(const std::string& s) {
  if (s == "batch") return NegStatsMode::Batch;
  if (s == "epoch") return NegStatsMode::Epoch;
  throw std::runtime_error("unknown neg_stats mode: " + s);
}

std::string join_paths(const std::vector<std::string>& paths) {
  std::string out;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (i) out += ",";
    out += paths[i];
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (tau <= 0) throw std::runtime_error("config: tau must be positive");
  if (alpha < 0 || alpha > 1) throw std::runtime_error("config: alpha must be in [0,1]");
  if (loss == LossKind::Nbc && batch_size < 2) {
    throw std::runtime_error("config: nbc needs batch_size >= 2");
  }
  if (batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
  if (episode_length < 1) throw std::runtime_error("config: episode_length must be >= 1");
  if (epochs < 0) throw std::runtime_error("config: epochs must be >= 0");
  if (dropout < 0 || dropout >= 1) throw std::runtime_error("config: dropout out of [0,1)");
  for (const auto& p : dataset_paths) {
    if (!std::filesystem::exists(p)) {
      throw std::runtime_error("config: dataset path does not exist: " + p);
    }
  }
  if (!cross_map_path.empty() && !std::filesystem::exists(cross_map_path)) {
    throw std::runtime_error("config: cross map path does not exist: " + cross_map_path);
  }
}

LossConfig RunConfig::loss_config() const {
  LossConfig c;
  c.tau = tau;
  c.alpha = alpha;
  c.similarity = similarity;
  c.margin = margin;
  c.scale = scale;
  c.ms_alpha = ms_alpha;
  c.ms_beta = ms_beta;
  c.ms_lambda = ms_lambda;
  return c;
}

EncoderDims RunConfig::encoder_dims(std::size_t num_contexts) const {
  EncoderDims d;
  d.token_dim = token_dim;
  d.filters_per_width = filters_per_width;
  d.text_dim = text_dim;
  d.time_dim = time_dim;
  d.ctx_dim = ctx_dim;
  d.embed_dim = embed_dim;
  d.heads = heads;
  d.max_len = max_len;
  d.num_contexts = num_contexts;
  d.dropout_rate = dropout;
  return d;
}

std::map<std::string, std::string> RunConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  auto num = [](auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv["task"] = to_string(task);
  kv["loss"] = to_string(loss);
  kv["tau"] = num(tau);
  kv["alpha"] = num(alpha);
  kv["similarity"] = to_string(similarity);
  kv["margin"] = num(margin);
  kv["scale"] = num(scale);
  kv["ms_alpha"] = num(ms_alpha);
  kv["ms_beta"] = num(ms_beta);
  kv["ms_lambda"] = num(ms_lambda);
  kv["neg_stats"] = to_string(neg_stats);
  kv["batch_size"] = num(batch_size);
  kv["episode_length"] = num(episode_length);
  kv["min_posts"] = num(min_posts);
  kv["lr"] = num(lr);
  kv["momentum"] = num(momentum);
  kv["epochs"] = num(epochs);
  kv["seed"] = num(seed);
  kv["token_dim"] = num(token_dim);
  kv["filters_per_width"] = num(filters_per_width);
  kv["text_dim"] = num(text_dim);
  kv["time_dim"] = num(time_dim);
  kv["ctx_dim"] = num(ctx_dim);
  kv["embed_dim"] = num(embed_dim);
  kv["heads"] = num(heads);
  kv["max_len"] = num(max_len);
  kv["dropout"] = num(dropout);
  kv["graph_init"] = graph_init ? "true" : "false";
  kv["walks_per_node"] = num(walks_per_node);
  kv["sg_window"] = num(sg_window);
  kv["sg_negatives"] = num(sg_negatives);
  kv["sg_epochs"] = num(sg_epochs);
  kv["sg_lr"] = num(sg_lr);
  kv["eval_measure"] = to_string(eval_measure);
  kv["dataset_paths"] = join_paths(dataset_paths);
  kv["cross_map_path"] = cross_map_path;
  kv["output_dir"] = output_dir;
  return kv;
}

RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  auto u64 = [](const std::string& s) { return std::stoull(s); };
  for (const auto& [key, value] : kv) {
    if (key == "task") c.task = task_kind_from(value);
    else if (key == "loss") c.loss = loss_kind_from(value);
    else if (key == "tau") c.tau = std::stod(value);
    else if (key == "alpha") c.alpha = std::stod(value);
    else if (key == "similarity") c.similarity = similarity_from(value);
    else if (key == "margin") c.margin = std::stod(value);
    else if (key == "scale") c.scale = std::stod(value);
    else if (key == "ms_alpha") c.ms_alpha = std::stod(value);
    else if (key == "ms_beta") c.ms_beta = std::stod(value);
    else if (key == "ms_lambda") c.ms_lambda = std::stod(value);
    else if (key == "neg_stats") c.neg_stats = neg_stats_from(value);
    else if (key == "batch_size") c.batch_size = u64(value);
    else if (key == "episode_length") c.episode_length = u64(value);
    else if (key == "min_posts") c.min_posts = u64(value);
    else if (key == "lr") c.lr = std::stod(value);
    else if (key == "momentum") c.momentum = std::stod(value);
    else if (key == "epochs") c.epochs = std::stoi(value);
    else if (key == "seed") c.seed = u64(value);
    else if (key == "token_dim") c.token_dim = u64(value);
    else if (key == "filters_per_width") c.filters_per_width = u64(value);
    else if (key == "text_dim") c.text_dim = u64(value);
    else if (key == "time_dim") c.time_dim = u64(value);
    else if (key == "ctx_dim") c.ctx_dim = u64(value);
    else if (key == "embed_dim") c.embed_dim = u64(value);
    else if (key == "heads") c.heads = u64(value);
    else if (key == "max_len") c.max_len = u64(value);
    else if (key == "dropout") c.dropout = std::stod(value);
    else if (key == "graph_init") c.graph_init = (value == "true" || value == "1");
    else if (key == "walks_per_node") c.walks_per_node = std::stoi(value);
    else if (key == "sg_window") c.sg_window = std::stoi(value);
    else if (key == "sg_negatives") c.sg_negatives = std::stoi(value);
    else if (key == "sg_epochs") c.sg_epochs = std::stoi(value);
    else if (key == "sg_lr") c.sg_lr = std::stod(value);
    else if (key == "eval_measure") c.eval_measure = measure_from(value);
    else if (key == "dataset_paths") c.dataset_paths = split_csv(value);
    else if (key == "cross_map_path") c.cross_map_path = value;
    else if (key == "output_dir") c.output_dir = value;
    else throw std::runtime_error("config: unknown key '" + key + "'");
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  RunConfig cfg = from_kv(kv);
  cfg.validate();
  return cfg;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  for (const auto& [k, v] : to_kv()) out << k << " = " << v << '\n';
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : to_kv()) {
    if (k == "output_dir") continue;  // irrelevant to the model
    h = fnv1a(k + "=" + v + ";", h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

SgdMomentum::SgdMomentum(std::vector<std::pair<std::string, Tensor>> params, double lr,
                         double momentum, std::size_t warmup_steps)
    : params_(std::move(params)),
      lr_(lr),
      momentum_(momentum),
      warmup_steps_(std::max<std::size_t>(1, warmup_steps)) {
  for (const auto& [name, t] : params_) {
    velocity_[name] = std::vector<double>(t.size(), 0.0);
  }
}

void SgdMomentum::step() {
  ++steps_;
  const double warmup =
      std::min(1.0, static_cast<double>(steps_) / static_cast<double>(warmup_steps_));
  const double lr = lr_ * warmup;
  for (auto& [name, t] : params_) {
    auto& vel = velocity_[name];
    const auto& g = t.grad();
    auto& w = t.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i];
      w[i] -= lr * vel[i];
    }
  }
}

void SgdMomentum::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(RunConfig config, std::vector<Corpus> markets, const CrossLabelMap* cross)
    : cfg_(std::move(config)),
      dropout_rng_(make_rng(cfg_.seed, 0xd20)),
      shuffle_rng_(make_rng(cfg_.seed, 0x5f1e)) {
  cfg_.validate();
  if (markets.empty()) throw std::runtime_error("trainer: no market corpora");
  if (cfg_.task == TaskKind::Singletask && markets.size() != 1) {
    throw std::runtime_error("trainer: singletask expects exactly one market corpus");
  }

  struct Prepared {
    std::string name;
    Corpus full;
    bool is_cross = false;
  };
  std::vector<Prepared> prepared;
  for (const Corpus& m : markets) {
    if (m.posts.empty()) throw std::runtime_error("trainer: empty market corpus");
    Corpus pre = preprocess_corpus(m);
    prepared.push_back({pre.posts.front().market, std::move(pre), false});
  }
  std::sort(prepared.begin(), prepared.end(),
            [](const Prepared& a, const Prepared& b) { return a.name < b.name; });
  if (cross && !cross->empty()) {
    if (cfg_.task != TaskKind::Multitask) {
      throw std::runtime_error("trainer: cross labels need the multitask setting");
    }
    std::vector<Corpus> fulls;
    for (const auto& p : prepared) fulls.push_back(p.full);
    Corpus cross_corpus = apply_cross_labels(fulls, *cross);
    if (!cross_corpus.posts.empty()) {
      prepared.push_back({"CROSS", std::move(cross_corpus), true});
    }
  }

  // Shared encoder; every task aliases these tensors but owns its context
  // table and head.
  EncoderParams shared = EncoderParams::init(cfg_.encoder_dims(1), cfg_.seed);
  shared_params_ = shared.named_shared_tensors();

  EpisodeBuildConfig bc;
  bc.episode_length = cfg_.episode_length;
  bc.min_posts = cfg_.min_posts;
  bc.max_len = cfg_.max_len;

  for (const auto& prep : prepared) {
    MarketTask task;
    task.name = prep.name;
    task.is_cross = prep.is_cross;

    auto [train_corpus, test_corpus] = temporal_split(prep.full);
    task.train = build_episodes(train_corpus, bc, prep.full.subforum_ids);
    task.test = build_episodes(test_corpus, bc, prep.full.subforum_ids);
    if (task.train.authors.size() < 2) {
      throw std::runtime_error("trainer: market " + task.name +
                               " has fewer than 2 training authors above the threshold");
    }

    task.params = shared;
    task.params.dims.num_contexts = prep.full.subforum_ids.size();
    std::mt19937_64 task_rng = make_rng(cfg_.seed, fnv1a("task:" + task.name));
    task.params.ctx_table = Tensor::randn(
        {task.params.dims.num_contexts, cfg_.ctx_dim}, task_rng, 0.1, true);
    if (cfg_.graph_init) {
      HeteroGraph graph = graph_from_corpus(prep.full);
      auto walks = generate_walks(graph, default_metapaths(), cfg_.walks_per_node,
                                  derive_seed(cfg_.seed, fnv1a("walks:" + task.name)));
      SkipgramConfig sg;
      sg.dim = cfg_.ctx_dim;
      sg.window = cfg_.sg_window;
      sg.negatives = cfg_.sg_negatives;
      sg.epochs = cfg_.sg_epochs;
      sg.lr = cfg_.sg_lr;
      sg.seed = derive_seed(cfg_.seed, fnv1a("sg:" + task.name));
      SkipgramModel model = train_skipgram(walks, graph.types, sg);
      task.params.init_context_rows(
          context_rows_from_embeddings(prep.full, model, graph));
    }
    task.head = ClassifierHead::init(task.train.authors.size(), cfg_.embed_dim, task_rng,
                                     cfg_.scale, cfg_.margin);
    tasks_.push_back(std::move(task));
  }

  std::size_t warmup_steps = 0;
  for (const auto& t : tasks_) {
    warmup_steps += (t.train.sets.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  }
  optimizer_ = std::make_unique<SgdMomentum>(all_parameters(), cfg_.lr, cfg_.momentum,
                                             warmup_steps);
  snapshot_params();
}

std::vector<std::pair<std::string, Tensor>> Trainer::all_parameters() const {
  auto params = shared_params_;
  for (const auto& t : tasks_) {
    params.emplace_back("ctx/" + t.name, t.params.ctx_table);
    params.emplace_back("head/" + t.name, t.head.weights);
  }
  return params;
}

void Trainer::zero_all_grads() { optimizer_->zero_grad(); }

Tensor Trainer::batch_loss(MarketTask& task, const Tensor& embeddings,
                           const std::vector<int>& labels) {
  const LossConfig lc = cfg_.loss_config();
  switch (cfg_.loss) {
    case LossKind::Softmax:
      return softmax_cross_entropy(embeddings, labels, task.head);
    case LossKind::Nbc: {
      if (cfg_.neg_stats == NegStatsMode::Epoch) {
        // Negative term frozen at its epoch-start value; only the cross
        // entropy carries gradient within the epoch.
        const std::size_t ti = static_cast<std::size_t>(&task - tasks_.data());
        Tensor sce = softmax_cross_entropy(embeddings, labels, task.head);
        return add(scale(sce, cfg_.alpha),
                   Tensor::scalar((1.0 - cfg_.alpha) * epoch_neg_terms_[ti]));
      }
      return nbc_softmax_combined(embeddings, labels, task.head, lc);
    }
    case LossKind::Cosface:
      return cosface_loss(embeddings, labels, task.head);
    case LossKind::Arcface:
      return arcface_loss(embeddings, labels, task.head);
    case LossKind::Multisimilarity:
      return multisimilarity_loss(embeddings, labels, lc);
  }
  throw std::runtime_error("bad loss kind");
}

double Trainer::step_batch(std::size_t task_index, const std::vector<std::size_t>& indices,
                           bool apply_update) {
  MarketTask& task = tasks_.at(task_index);
  if (indices.empty()) throw std::runtime_error("step_batch: empty batch");
  Tape tape;
  EncodeContext ctx{TrainMode::Train, &dropout_rng_};
  std::vector<Tensor> zs;
  std::vector<int> labels;
  zs.reserve(indices.size());
  for (std::size_t i : indices) {
    const EpisodeSet& set = task.train.sets.at(i);
    zs.push_back(encode_episode_set(set, task.params, ctx));
    labels.push_back(set.author_label);
  }
  Tensor loss = batch_loss(task, stack_rows(zs), labels);
  tape.backward(loss);
  const double value = loss.item();
  if (apply_update) {
    optimizer_->step();
    optimizer_->zero_grad();
  }
  return value;
}

void Trainer::refresh_epoch_neg_terms() {
  epoch_neg_terms_.assign(tasks_.size(), 0.0);
  const LossConfig lc = cfg_.loss_config();
  for (std::size_t ti = 0; ti < tasks_.size(); ++ti) {
    NoGradGuard no_grad;
    EncodeContext ctx;
    std::vector<Tensor> zs;
    std::vector<int> labels;
    for (const auto& set : tasks_[ti].train.sets) {
      zs.push_back(encode_episode_set(set, tasks_[ti].params, ctx));
      labels.push_back(set.author_label);
    }
    epoch_neg_terms_[ti] =
        nbc_negative_term(class_means(stack_rows(zs), labels), lc).item();
  }
}

void Trainer::snapshot_params() {
  snapshot_.clear();
  for (const auto& [name, t] : all_parameters()) snapshot_[name] = t.data();
}

void Trainer::restore_snapshot() {
  for (auto& [name, t] : all_parameters()) t.data() = snapshot_.at(name);
}

void Trainer::train() {
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    if (cfg_.loss == LossKind::Nbc && cfg_.neg_stats == NegStatsMode::Epoch) {
      refresh_epoch_neg_terms();
    }
    // Round-robin batches across tasks.
    std::vector<std::vector<std::vector<std::size_t>>> batches(tasks_.size());
    std::size_t max_batches = 0;
    for (std::size_t ti = 0; ti < tasks_.size(); ++ti) {
      std::vector<std::size_t> order(tasks_[ti].train.sets.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), shuffle_rng_);
      for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
        batches[ti].emplace_back(order.begin() + start, order.begin() + end);
      }
      max_batches = std::max(max_batches, batches[ti].size());
    }

    double loss_sum = 0.0;
    std::size_t batch_count = 0;
    try {
      for (std::size_t b = 0; b < max_batches; ++b) {
        for (std::size_t ti = 0; ti < tasks_.size(); ++ti) {
          if (b >= batches[ti].size()) continue;
          loss_sum += step_batch(ti, batches[ti][b]);
          ++batch_count;
        }
      }
    } catch (const NonFiniteError&) {
      restore_snapshot();  // keep the last good epoch
      aborted_ = true;
      return;
    }
    epoch_losses_.push_back(batch_count ? loss_sum / static_cast<double>(batch_count)
                                        : 0.0);
    snapshot_params();
  }
}

std::vector<EpisodeEmbedding> Trainer::encode_test_sets(std::size_t task_index) const {
  const MarketTask& task = tasks_.at(task_index);
  NoGradGuard no_grad;
  EncodeContext ctx;
  std::vector<EpisodeEmbedding> out;
  out.reserve(task.test.sets.size());
  for (std::size_t i = 0; i < task.test.sets.size(); ++i) {
    const EpisodeSet& set = task.test.sets[i];
    Tensor z = encode_episode_set(set, task.params, ctx);
    EpisodeEmbedding e;
    e.id = static_cast<int>(i);
    e.author = set.author_label;
    e.vec = z.data();
    out.push_back(std::move(e));
  }
  return out;
}

std::map<std::string, MetricReport> Trainer::evaluate() const {
  std::map<std::string, MetricReport> reports;
  for (std::size_t ti = 0; ti < tasks_.size(); ++ti) {
    if (tasks_[ti].is_cross) continue;  // alignment task, not a benchmark
    reports[tasks_[ti].name] =
        evaluate_embeddings(encode_test_sets(ti), cfg_.eval_measure);
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_entry(std::ofstream& out, const std::string& name,
                 const std::vector<std::size_t>& shape, const std::vector<double>& data) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) write_u64(out, d);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u64(out, cfg_.hash());

  const auto params = all_parameters();
  auto& velocities = optimizer_->velocities();
  write_u64(out, params.size() + velocities.size());
  for (const auto& [name, t] : params) write_entry(out, name, t.shape(), t.data());
  for (const auto& [name, v] : velocities) write_entry(out, "opt/" + name, {v.size()}, v);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  const std::uint64_t hash = read_u64(in);
  if (hash != cfg_.hash()) {
    throw std::runtime_error("checkpoint config hash mismatch for " + path);
  }
  const std::uint64_t count = read_u64(in);
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndim = read_u32(in);
    std::vector<std::size_t> shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(read_u64(in));
      numel *= d;
    }
    std::vector<double> data(numel);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    entries[name] = {std::move(shape), std::move(data)};
  }

  for (auto& [name, t] : all_parameters()) {
    const auto it = entries.find(name);
    if (it == entries.end()) {
      throw std::runtime_error("checkpoint is missing tensor " + name);
    }
    if (it->second.first != t.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    }
    t.data() = it->second.second;
  }
  for (auto& [name, v] : optimizer_->velocities()) {
    const auto it = entries.find("opt/" + name);
    if (it == entries.end()) {
      throw std::runtime_error("checkpoint is missing optimizer state for " + name);
    }
    v = it->second.second;
  }
  snapshot_params();
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

TrainOutput train_singletask(const RunConfig& config, const Corpus& market) {
  RunConfig cfg = config;
  cfg.task = TaskKind::Singletask;
  Trainer trainer(cfg, {market}, nullptr);
  trainer.train();
  return {trainer.evaluate(), trainer.epoch_losses(), trainer.aborted()};
}

TrainOutput train_multitask(const RunConfig& config, const std::vector<Corpus>& markets,
                            const CrossLabelMap* cross) {
  RunConfig cfg = config;
  cfg.task = TaskKind::Multitask;
  Trainer trainer(cfg, markets, cross);
  trainer.train();
  return {trainer.evaluate(), trainer.epoch_losses(), trainer.aborted()};
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "tau") return SweepAxis::Tau;
  if (s == "batch_size") return SweepAxis::BatchSize;
  if (s == "episode_length") return SweepAxis::EpisodeLength;
  throw std::runtime_error("unknown sweep axis: " + s);
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Tau: return "tau";
    case SweepAxis::BatchSize: return "batch_size";
    case SweepAxis::EpisodeLength: return "episode_length";
  }
  throw std::runtime_error("bad sweep axis");
}

std::vector<SweepCell> sweep(const RunConfig& base, SweepAxis axis,
                             const std::vector<double>& values,
                             const std::vector<std::uint64_t>& seeds,
                             const std::vector<Corpus>& markets,
                             const CrossLabelMap* cross, int jobs) {
  if (values.empty()) throw std::runtime_error("sweep: no values");
  if (seeds.empty()) throw std::runtime_error("sweep: no seeds");
  std::vector<SweepCell> cells;
  for (double v : values) {
    for (std::uint64_t s : seeds) {
      SweepCell cell;
      cell.axis = axis;
      cell.value = v;
      cell.seed = s;
      cells.push_back(cell);
    }
  }

  const auto run_cell = [&](SweepCell& cell) {
    RunConfig cfg = base;
    cfg.seed = cell.seed;
    switch (axis) {
      case SweepAxis::Tau: cfg.tau = cell.value; break;
      case SweepAxis::BatchSize:
        cfg.batch_size = static_cast<std::size_t>(cell.value);
        break;
      case SweepAxis::EpisodeLength:
        cfg.episode_length = static_cast<std::size_t>(cell.value);
        cfg.min_posts = 0;
        break;
    }
    try {
      TrainOutput out = cfg.task == TaskKind::Multitask
                            ? train_multitask(cfg, markets, cross)
                            : train_singletask(cfg, markets.at(0));
      cell.reports = std::move(out.reports);
      if (out.aborted) {
        cell.failed = true;
        cell.error = "training diverged";
      }
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
    }
  };

  const int workers = std::max(1, jobs);
  if (workers == 1) {
    for (auto& cell : cells) run_cell(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= cells.size()) return;
          run_cell(cells[i]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  return cells;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write sweep csv: " + path);
  out << "axis,axis_value,seed,dataset,metric,value,status\n";
  out.precision(10);
  for (const auto& cell : cells) {
    if (cell.failed) {
      out << to_string(cell.axis) << ',' << cell.value << ',' << cell.seed << ",,,,failed\n";
      continue;
    }
    for (const auto& [dataset, report] : cell.reports) {
      out << to_string(cell.axis) << ',' << cell.value << ',' << cell.seed << ','
          << dataset << ",MRR," << report.mrr << ",ok\n";
      for (const auto& [k, v] : report.recall) {
        out << to_string(cell.axis) << ',' << cell.value << ',' << cell.seed << ','
            << dataset << ",R@" << k << ',' << v << ",ok\n";
      }
    }
  }
}

}  // namespace stylemetric
