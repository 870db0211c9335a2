#include "stylemetric/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "stylemetric/util.hpp"

namespace stylemetric {

namespace {

thread_local std::size_t g_nbc_sim_evals = 0;

void require_batch(const Tensor& embeddings, const std::vector<int>& labels) {
  if (embeddings.shape().size() != 2) {
    throw std::runtime_error("loss: embeddings must be 2-D, got " +
                             shape_to_string(embeddings.shape()));
  }
  if (embeddings.rows() == 0 || labels.empty()) {
    throw std::runtime_error("loss: empty batch");
  }
  if (labels.size() != embeddings.rows()) {
    throw std::runtime_error("loss: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(embeddings.rows()) + " embeddings");
  }
}

void require_labels_in_range(const std::vector<int>& labels, std::size_t num_classes) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::runtime_error("loss: label " + std::to_string(y) + " out of range for " +
                               std::to_string(num_classes) + " classes");
    }
  }
}

// Mean cross entropy of logits (b x C) against labels.
Tensor mean_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  Tensor log_probs = log_op(softmax_rows(logits));
  Tensor picked = gather_rows(log_probs, targets);
  return scale(sum(picked), -1.0 / static_cast<double>(labels.size()));
}

// b x C constant matrix with value v at (i, labels[i]) and 0 elsewhere.
Tensor onehot_const(const std::vector<int>& labels, std::size_t num_classes, double v) {
  std::vector<double> data(labels.size() * num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    data[i * num_classes + static_cast<std::size_t>(labels[i])] = v;
  return Tensor::from(std::move(data), {labels.size(), num_classes});
}

}  // namespace

ClassifierHead ClassifierHead::init(std::size_t num_classes, std::size_t embed_dim,
                                    std::mt19937_64& rng, double scale, double margin) {
  if (num_classes < 2 || embed_dim < 1) {
    throw std::runtime_error("classifier head needs C >= 2 and E >= 1");
  }
  ClassifierHead head;
  head.weights = Tensor::randn({num_classes, embed_dim}, rng,
                               1.0 / std::sqrt(static_cast<double>(embed_dim)), true);
  head.scale = scale;
  head.margin = margin;
  return head;
}

void LossConfig::validate() const {
  if (tau <= 0.0) throw std::runtime_error("loss config: tau must be positive");
  if (alpha < 0.0 || alpha > 1.0) {
    throw std::runtime_error("loss config: alpha must be in [0,1]");
  }
}

std::vector<double> BatchClassStats::mean_of(int class_id) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), class_id);
  if (it == classes.end() || *it != class_id) {
    throw std::runtime_error("class " + std::to_string(class_id) + " not active in batch");
  }
  const std::size_t row = static_cast<std::size_t>(it - classes.begin());
  const std::size_t e = means.cols();
  const auto& d = means.data();
  return std::vector<double>(d.begin() + row * e, d.begin() + (row + 1) * e);
}

Tensor softmax_cross_entropy(const Tensor& embeddings, const std::vector<int>& labels,
                             const ClassifierHead& head) {
  require_batch(embeddings, labels);
  require_labels_in_range(labels, head.num_classes());
  Tensor logits = matmul(embeddings, head.weights, false, true);
  return mean_cross_entropy(logits, labels);
}

BatchClassStats class_means(const Tensor& embeddings, const std::vector<int>& labels) {
  require_batch(embeddings, labels);
  std::map<int, int> counts;
  for (int y : labels) ++counts[y];

  BatchClassStats stats;
  std::map<int, std::size_t> row_of;
  for (const auto& [c, n] : counts) {
    row_of[c] = stats.classes.size();
    stats.classes.push_back(c);
    stats.counts.push_back(n);
  }
  // Indicator matrix with 1/count entries, so means = indicator * embeddings
  // stays differentiable through the embeddings.
  const std::size_t k = stats.classes.size(), b = labels.size();
  std::vector<double> ind(k * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t r = row_of[labels[i]];
    ind[r * b + i] = 1.0 / static_cast<double>(counts[labels[i]]);
  }
  stats.means = matmul(Tensor::from(std::move(ind), {k, b}), embeddings);
  return stats;
}

Tensor nbc_negative_term(const BatchClassStats& stats, const LossConfig& cfg) {
  cfg.validate();
  const std::size_t k = stats.active_count();
  if (k == 0) throw std::runtime_error("nbc_negative_term: no active classes");
  if (k == 1) return Tensor::scalar(0.0);  // empty pair set: no inter-class pressure

  Tensor m = stats.means;
  if (cfg.similarity == Similarity::Cosine) m = l2_normalize(m);
  Tensor sims = matmul(m, m, false, true);  // k x k pairwise similarities
  g_nbc_sim_evals += k * k;

  // Ordered pairs (a, b), a != b: mask out the diagonal.
  std::vector<double> mask(k * k, 1.0);
  for (std::size_t i = 0; i < k; ++i) mask[i * k + i] = 0.0;
  Tensor pair_sum =
      sum(mul(exp_op(scale(sims, cfg.tau)), Tensor::from(std::move(mask), {k, k})));
  return scale(log_op(pair_sum), 1.0 / static_cast<double>(k));
}

Tensor nbc_softmax_combined(const Tensor& embeddings, const std::vector<int>& labels,
                            const ClassifierHead& head, const LossConfig& cfg) {
  cfg.validate();
  Tensor sce = softmax_cross_entropy(embeddings, labels, head);
  Tensor neg = nbc_negative_term(class_means(embeddings, labels), cfg);
  return add(scale(sce, cfg.alpha), scale(neg, 1.0 - cfg.alpha));
}

Tensor cosface_loss(const Tensor& embeddings, const std::vector<int>& labels,
                    const ClassifierHead& head) {
  require_batch(embeddings, labels);
  require_labels_in_range(labels, head.num_classes());
  if (head.margin < 0.0) throw std::runtime_error("cosface: margin must be >= 0");
  Tensor cos = matmul(l2_normalize(embeddings), l2_normalize(head.weights), false, true);
  Tensor logits =
      scale(add(cos, onehot_const(labels, head.num_classes(), -head.margin)), head.scale);
  return mean_cross_entropy(logits, labels);
}

Tensor arcface_loss(const Tensor& embeddings, const std::vector<int>& labels,
                    const ClassifierHead& head) {
  require_batch(embeddings, labels);
  require_labels_in_range(labels, head.num_classes());
  const double m = head.margin;
  if (m < 0.0) throw std::runtime_error("arcface: margin must be >= 0");
  const double pi = 3.14159265358979323846;

  Tensor cos = matmul(l2_normalize(embeddings), l2_normalize(head.weights), false, true);
  // cos(theta + m) via the angle-sum identity; theta is clamped so that
  // theta + m <= pi, i.e. cos theta >= cos(pi - m).
  Tensor c = clamp_op(cos, std::cos(pi - m), 1.0);
  Tensor sin_theta =
      sqrt_op(clamp_op(sub(Tensor::full(c.shape(), 1.0), mul(c, c)), 1e-16, 1.0));
  Tensor adjusted = sub(scale(c, std::cos(m)), scale(sin_theta, std::sin(m)));

  Tensor target_mask = onehot_const(labels, head.num_classes(), 1.0);
  Tensor keep_mask = add_scalar(onehot_const(labels, head.num_classes(), -1.0), 1.0);
  Tensor logits = scale(add(mul(cos, keep_mask), mul(adjusted, target_mask)), head.scale);
  return mean_cross_entropy(logits, labels);
}

Tensor multisimilarity_loss(const Tensor& embeddings, const std::vector<int>& labels,
                            const LossConfig& cfg, bool* no_pairs) {
  require_batch(embeddings, labels);
  const std::size_t b = labels.size();
  Tensor normed = l2_normalize(embeddings);
  Tensor sims = matmul(normed, normed, false, true);

  std::vector<double> pos_mask(b * b, 0.0), neg_mask(b * b, 0.0);
  bool any_pair = false;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      if (labels[i] == labels[j]) {
        pos_mask[i * b + j] = 1.0;
      } else {
        neg_mask[i * b + j] = 1.0;
      }
      any_pair = true;
    }
  }
  if (no_pairs) *no_pairs = !any_pair;
  if (!any_pair) return Tensor::scalar(0.0);

  Tensor shifted = add_scalar(sims, -cfg.ms_lambda);
  Tensor pos_terms =
      mul(exp_op(scale(shifted, -cfg.ms_alpha)), Tensor::from(std::move(pos_mask), {b, b}));
  Tensor neg_terms =
      mul(exp_op(scale(shifted, cfg.ms_beta)), Tensor::from(std::move(neg_mask), {b, b}));
  Tensor per_anchor =
      add(scale(log_op(add_scalar(rowsum(pos_terms), 1.0)), 1.0 / cfg.ms_alpha),
          scale(log_op(add_scalar(rowsum(neg_terms), 1.0)), 1.0 / cfg.ms_beta));
  return mean(per_anchor);
}

std::size_t nbc_similarity_evals() { return g_nbc_sim_evals; }
void reset_nbc_similarity_evals() { g_nbc_sim_evals = 0; }

}  // namespace stylemetric
