#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace stylemetric {

/// Thrown when an op produces NaN/Inf. Kept distinct from plain
/// std::runtime_error so training loops can abort on divergence without
/// swallowing programming errors.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  std::uint64_t id = 0;      // creation order, for tape bookkeeping
};

/// Dense row-major double tensor. Value-semantic handle over shared storage:
/// copying a Tensor aliases the same buffer, which is how multitask training
/// shares parameter matrices between tasks.
///
/// Ops are eager: each call computes the forward value immediately and, when
/// a Tape is active and an input requires grad, records a backward rule on it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<double> data, std::vector<std::size_t> shape,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Gaussian init, N(0, stddev^2).
  static Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool requires_grad() const { return impl_->requires_grad; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;

  double at(std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const;
  /// Value of a scalar tensor; throws if not scalar.
  double item() const;

  void zero_grad();
  void set_requires_grad(bool value);

  std::uint64_t id() const { return impl_->id; }
  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> shared_impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend class Tape;
  friend Tensor make_op_output(const char*, std::vector<std::size_t>, std::vector<double>,
                               const std::vector<Tensor>&, std::function<void()>*);
};

struct TapeEntry {
  const char* op_name;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  std::function<void()> backward;  // accumulates into inputs' grads
};

/// Records ops in execution order (which is topological by construction) and
/// replays them once, in reverse, on backward(). Confine a Tape and the
/// tensors recorded on it to a single thread.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// The tape currently recording on this thread, or nullptr.
  static Tape* active();

  std::size_t size() const { return entries_.size(); }

  /// Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1 and
  /// accumulates additively into every requires_grad leaf reachable on the
  /// tape. Throws if root is not scalar or the tape is empty.
  void backward(const Tensor& root);

  void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }

 private:
  std::vector<TapeEntry> entries_;
  Tape* previous_ = nullptr;
};

/// Disables recording within a scope even if a Tape is active (used by the
/// finite-difference evaluations and by eval-mode encoding).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

enum class TrainMode { Train, Eval };

// ---------------------------------------------------------------------------
// Op catalog. All ops validate shapes (errors name both shapes) and check the
// forward output for NaN/Inf (errors name the op).
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);               // same shape
Tensor mul(const Tensor& a, const Tensor& b);               // elementwise
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor add_rowwise(const Tensor& x, const Tensor& v);       // (n,m) + (m,) bias
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor concat1d(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);       // (n,m_i) -> (n, sum m_i)
Tensor stack_rows(const std::vector<Tensor>& rows);         // L x (m,) -> (L,m)
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids);
/// (n,d) -> (n-w+1, w*d); rows are flattened sliding windows.
Tensor unfold(const Tensor& x, std::size_t width);
/// Column-wise max over rows; gradient routes to the argmax row, ties to the
/// lowest index.
Tensor max_over_rows(const Tensor& x);
Tensor rowsum(const Tensor& x);                             // (n,m) -> (n,)
/// Mean of rows with mask[i] != 0. mask is a constant.
Tensor masked_mean_rows(const Tensor& x, const std::vector<double>& mask);
Tensor softmax_rows(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor sqrt_op(const Tensor& x);
/// Gradient is passed inside (lo, hi) and zero at or beyond the bounds.
Tensor clamp_op(const Tensor& x, double lo, double hi);
/// Row-wise x / ||x||; a zero-norm row is an error.
Tensor l2_normalize(const Tensor& x);
/// Picks x[i, cols[i]] per row -> (n,).
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& cols);
/// Inverted dropout with an explicit mode; Eval is the identity.
Tensor dropout(const Tensor& x, double rate, TrainMode mode, std::mt19937_64& rng);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Composites (built from catalog ops).
Tensor sub(const Tensor& a, const Tensor& b);
Tensor dot(const Tensor& a, const Tensor& b);               // 1-D
Tensor cosine_similarity(const Tensor& a, const Tensor& b); // 1-D, zero norm errors

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

constexpr std::size_t kAllCoords = std::numeric_limits<std::size_t>::max();

/// Central-difference check of d(loss)/d(params). Runs loss_fn twice to verify
/// determinism, computes analytic grads over a fresh tape, then perturbs up to
/// coords_per_param sampled coordinates of each param by +-epsilon. Returns
/// max over coordinates of |analytic - numeric| / max(1, |analytic|).
/// epsilon must lie in [1e-7, 1e-3].
double finite_difference_check(const std::function<Tensor()>& loss_fn,
                               const std::vector<Tensor>& params, double epsilon,
                               std::size_t coords_per_param = kAllCoords,
                               std::uint64_t seed = 0);

}  // namespace stylemetric
