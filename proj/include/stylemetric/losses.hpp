#pragma once

#include <cstdint>
#include <vector>

#include "stylemetric/tensor.hpp"

namespace stylemetric {

enum class Similarity { Cosine, Dot };

/// Final classification layer: one weight row per class.
struct ClassifierHead {
  Tensor weights;  // C x E
  double scale = 30.0;
  double margin = 0.35;

  std::size_t num_classes() const { return weights.rows(); }
  std::size_t embed_dim() const { return weights.cols(); }

  static ClassifierHead init(std::size_t num_classes, std::size_t embed_dim,
                             std::mt19937_64& rng, double scale = 30.0, double margin = 0.35);
};

struct LossConfig {
  double tau = 0.2;      // multiplies the similarity inside the exponential
  double alpha = 0.5;    // mix between cross entropy and the negative term
  Similarity similarity = Similarity::Cosine;
  double margin = 0.35;
  double scale = 30.0;
  // MultiSimilarity parameters
  double ms_alpha = 2.0;
  double ms_beta = 50.0;
  double ms_lambda = 1.0;

  void validate() const;
};

/// Per-batch class statistics: mean embedding per class present in the batch.
/// `classes` is sorted ascending and indexes the rows of `means`.
struct BatchClassStats {
  Tensor means;               // |C'| x E, differentiable back to the embeddings
  std::vector<int> classes;   // the active set C'
  std::vector<int> counts;    // batch count per active class

  std::size_t active_count() const { return classes.size(); }
  /// Row of `means` for a class id; throws if the class is not active.
  std::vector<double> mean_of(int class_id) const;
};

Tensor softmax_cross_entropy(const Tensor& embeddings, const std::vector<int>& labels,
                             const ClassifierHead& head);

BatchClassStats class_means(const Tensor& embeddings, const std::vector<int>& labels);

/// log-sum-exp contrast over ordered pairs of distinct active-class means,
/// normalized by |C'|. With a single active class the pair set is empty and
/// the term is defined as zero.
Tensor nbc_negative_term(const BatchClassStats& stats, const LossConfig& cfg);

Tensor nbc_softmax_combined(const Tensor& embeddings, const std::vector<int>& labels,
                            const ClassifierHead& head, const LossConfig& cfg);

Tensor cosface_loss(const Tensor& embeddings, const std::vector<int>& labels,
                    const ClassifierHead& head);

Tensor arcface_loss(const Tensor& embeddings, const std::vector<int>& labels,
                    const ClassifierHead& head);

/// General pair-weighting form; pairs are formed within the batch by label
/// equality. When no anchor has any pair the loss is zero and, if given,
/// *no_pairs is set.
Tensor multisimilarity_loss(const Tensor& embeddings, const std::vector<int>& labels,
                            const LossConfig& cfg, bool* no_pairs = nullptr);

/// Count of pairwise similarity evaluations performed by nbc_negative_term on
/// this thread since the last reset. Exists so tests can assert the |C'|^2
/// cost bound.
std::size_t nbc_similarity_evals();
void reset_nbc_similarity_evals();

}  // namespace stylemetric
