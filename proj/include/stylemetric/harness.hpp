#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stylemetric/data.hpp"
#include "stylemetric/encoder.hpp"
#include "stylemetric/losses.hpp"
#include "stylemetric/retrieval.hpp"

namespace stylemetric {

enum class TaskKind { Singletask, Multitask };
enum class LossKind { Softmax, Nbc, Cosface, Arcface, Multisimilarity };
enum class NegStatsMode { Batch, Epoch };

std::string to_string(TaskKind t);
std::string to_string(LossKind l);
std::string to_string(Measure m);
std::string to_string(Similarity s);
std::string to_string(NegStatsMode m);

struct RunConfig {
  TaskKind task = TaskKind::Singletask;
  LossKind loss = LossKind::Nbc;
  double tau = 0.2;
  double alpha = 0.5;
  Similarity similarity = Similarity::Cosine;
  double margin = 0.35;
  double scale = 30.0;
  double ms_alpha = 2.0;
  double ms_beta = 50.0;
  double ms_lambda = 1.0;
  NegStatsMode neg_stats = NegStatsMode::Batch;

  std::size_t batch_size = 32;
  std::size_t episode_length = 5;
  std::size_t min_posts = 0;  // 0 -> 2 * episode_length
  double lr = 0.01;
  double momentum = 0.9;
  int epochs = 10;
  std::uint64_t seed = 0;

  std::size_t token_dim = 32;
  std::size_t filters_per_width = 16;
  std::size_t text_dim = 64;
  std::size_t time_dim = 8;
  std::size_t ctx_dim = 32;
  std::size_t embed_dim = 64;
  std::size_t heads = 2;
  std::size_t max_len = 256;
  double dropout = 0.5;

  bool graph_init = false;  // seed context tables from metapath embeddings
  int walks_per_node = 4;
  int sg_window = 3;
  int sg_negatives = 5;
  int sg_epochs = 5;
  double sg_lr = 0.025;

  Measure eval_measure = Measure::Cosine;
  std::vector<std::string> dataset_paths;
  std::string cross_map_path;
  std::string output_dir;

  void validate() const;
  LossConfig loss_config() const;
  EncoderDims encoder_dims(std::size_t num_contexts) const;

  std::map<std::string, std::string> to_kv() const;
  static RunConfig from_kv(const std::map<std::string, std::string>& kv);
  /// Flat `key=value` file, '#' comments.
  static RunConfig from_file(const std::string& path);
  void save(const std::string& path) const;
  std::uint64_t hash() const;
};

/// SGD with momentum and a linear warmup over the first epoch's steps.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<std::pair<std::string, Tensor>> params, double lr,
              double momentum, std::size_t warmup_steps);
  void step();
  void zero_grad();
  std::size_t steps_taken() const { return steps_; }

  std::map<std::string, std::vector<double>>& velocities() { return velocity_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  std::size_t warmup_steps_;
  std::size_t steps_ = 0;
};

/// One training task: a market (or the CROSS alignment corpus) with its own
/// context table and classifier head over the shared encoder.
struct MarketTask {
  std::string name;
  EpisodeData train;
  EpisodeData test;
  EncoderParams params;  // aliases the shared tensors; ctx_table is owned
  ClassifierHead head;
  bool is_cross = false;
};

/// Orchestrates singletask and multitask training. Tasks share every encoder
/// tensor except the per-market context tables and classifier heads; batches
/// interleave round-robin across tasks.
class Trainer {
 public:
  Trainer(RunConfig config, std::vector<Corpus> markets, const CrossLabelMap* cross);

  void train();
  std::map<std::string, MetricReport> evaluate() const;

  const std::vector<double>& epoch_losses() const { return epoch_losses_; }
  bool aborted() const { return aborted_; }

  std::size_t num_tasks() const { return tasks_.size(); }
  const MarketTask& task(std::size_t i) const { return tasks_[i]; }
  /// Forward + backward over the given episode sets of one task; applies an
  /// optimizer update unless apply_update is false (gradients then stay in
  /// place for inspection). Returns the batch loss.
  double step_batch(std::size_t task_index, const std::vector<std::size_t>& set_indices,
                    bool apply_update = true);
  std::vector<EpisodeEmbedding> encode_test_sets(std::size_t task_index) const;
  std::vector<std::pair<std::string, Tensor>> all_parameters() const;
  void zero_all_grads();

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

 private:
  Tensor batch_loss(MarketTask& task, const Tensor& embeddings,
                    const std::vector<int>& labels);
  void snapshot_params();
  void restore_snapshot();
  void refresh_epoch_neg_terms();

  RunConfig cfg_;
  std::vector<MarketTask> tasks_;
  std::vector<std::pair<std::string, Tensor>> shared_params_;
  std::unique_ptr<SgdMomentum> optimizer_;
  std::mt19937_64 dropout_rng_;
  std::mt19937_64 shuffle_rng_;
  std::vector<double> epoch_losses_;
  std::vector<double> epoch_neg_terms_;  // per task, Epoch mode only
  std::map<std::string, std::vector<double>> snapshot_;
  bool aborted_ = false;
};

struct TrainOutput {
  std::map<std::string, MetricReport> reports;
  std::vector<double> epoch_losses;
  bool aborted = false;
};

TrainOutput train_singletask(const RunConfig& config, const Corpus& market);
TrainOutput train_multitask(const RunConfig& config, const std::vector<Corpus>& markets,
                            const CrossLabelMap* cross);

enum class SweepAxis { Tau, BatchSize, EpisodeLength };
SweepAxis sweep_axis_from_string(const std::string& s);
std::string to_string(SweepAxis axis);

struct SweepCell {
  SweepAxis axis;
  double value = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::map<std::string, MetricReport> reports;
};

/// One full train + eval per (value, seed); failed cells are recorded and the
/// sweep continues. Cells run on up to `jobs` worker threads.
std::vector<SweepCell> sweep(const RunConfig& base, SweepAxis axis,
                             const std::vector<double>& values,
                             const std::vector<std::uint64_t>& seeds,
                             const std::vector<Corpus>& markets,
                             const CrossLabelMap* cross, int jobs = 1);

void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells);

}  // namespace stylemetric
