#include "stylemetric/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "stylemetric/util.hpp"

namespace stylemetric {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local int g_no_grad_depth = 0;
std::atomic<std::uint64_t> g_next_id{1};

bool recording() { return g_active_tape != nullptr && g_no_grad_depth == 0; }

void check_finite(const char* op, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(op) + ": non-finite value in forward output");
    }
  }
}

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::runtime_error("tensor shape has a zero dimension");
    n *= d;
  }
  return n;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::runtime_error(std::string(op) + ": shape mismatch " +
                             shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

void require_2d(const char* op, const Tensor& x) {
  if (x.shape().size() != 2) {
    throw std::runtime_error(std::string(op) + ": expected 2-D tensor, got " +
                             shape_to_string(x.shape()));
  }
}

void mark_grad(const std::shared_ptr<TensorImpl>& impl) {
  impl->requires_grad = true;
  impl->grad.assign(impl->data.size(), 0.0);
}

void record_op(const char* name, std::vector<std::shared_ptr<TensorImpl>> inputs,
               const Tensor& out, std::function<void()> backward) {
  auto oi = out.shared_impl();
  mark_grad(oi);
  Tape::active()->record(TapeEntry{name, std::move(inputs), oi, std::move(backward)});
}

double gauss(std::mt19937_64& rng) {
  double u1 = 1.0 - uniform_unit(rng);
  double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// C (n x m) = op(A) * op(B) where op(A) is (n x k). ADD into C.
void raw_matmul(const double* a, std::size_t ar, std::size_t ac, bool ta, const double* b,
                std::size_t br, std::size_t bc, bool tb, double* c) {
  const std::size_t n = ta ? ac : ar;
  const std::size_t k = ta ? ar : ac;
  const std::size_t m = tb ? br : bc;
  if (!ta && !tb) {
    for (std::size_t i = 0; i < n; ++i) {
      double* crow = c + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b + p * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double* brow = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        crow[j] += s;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = a + p * n;
      const double* brow = b + p * m;
      for (std::size_t i = 0; i < n; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* crow = c + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double* brow = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * n + i] * brow[p];
        crow[j] += s;
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return from(std::vector<double>(n, value), std::move(shape), requires_grad);
}

Tensor Tensor::from(std::vector<double> data, std::vector<std::size_t> shape,
                    bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw std::runtime_error("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0);
  impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({value}, {1}, requires_grad);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  const std::size_t n = numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = gauss(rng) * stddev;
  return from(std::move(data), std::move(shape), requires_grad);
}

std::size_t Tensor::rows() const {
  require_2d("rows", *this);
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  require_2d("cols", *this);
  return impl_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_2d("at", *this);
  return impl_->data[r * impl_->shape[1] + c];
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::runtime_error("item: tensor is not scalar, shape " + shape_to_string(shape()));
  }
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (!impl_->requires_grad) throw std::runtime_error("grad: tensor does not require grad");
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!impl_->requires_grad) throw std::runtime_error("grad: tensor does not require grad");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  if (value) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  } else {
    impl_->grad.clear();
  }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& root) {
  if (root.size() != 1) {
    throw std::runtime_error("backward: root must be scalar, got shape " +
                             shape_to_string(root.shape()));
  }
  if (entries_.empty()) throw std::runtime_error("backward: tape is empty");
  if (!root.impl()->requires_grad) {
    throw std::runtime_error("backward: root is not recorded on the tape");
  }
  for (auto& e : entries_) std::fill(e.output->grad.begin(), e.output->grad.end(), 0.0);
  root.impl()->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  check_finite("add", out);
  Tensor res = Tensor::from(std::move(out), a.shape());
  if (recording() && (a.requires_grad() || b.requires_grad())) {
    auto ai = a.shared_impl(), bi = b.shared_impl(), oi = res.shared_impl();
    record_op("add", {ai, bi}, res, [ai, bi, oi] {
      if (ai->requires_grad)
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
      if (bi->requires_grad)
        for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
    });
  }
  return res;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  check_finite("mul", out);
  Tensor res = Tensor::from(std::move(out), a.shape());
  if (recording() && (a.requires_grad() || b.requires_grad())) {
    auto ai = a.shared_impl(), bi = b.shared_impl(), oi = res.shared_impl();
    record_op("mul", {ai, bi}, res, [ai, bi, oi] {
      if (ai->requires_grad)
        for (std::size_t i = 0; i < oi->grad.size(); ++i)
          ai->grad[i] += oi->grad[i] * bi->data[i];
      if (bi->requires_grad)
        for (std::size_t i = 0; i < oi->grad.size(); ++i)
          bi->grad[i] += oi->grad[i] * ai->data[i];
    });
  }
  return res;
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
  check_finite("scale", out);
  Tensor res = Tensor::from(std::move(out), x.shape());
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("scale", {xi}, res, [xi, oi, c] {
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i] * c;
    });
  }
  return res;
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + c;
  check_finite("add_scalar", out);
  Tensor res = Tensor::from(std::move(out), x.shape());
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("add_scalar", {xi}, res, [xi, oi] {
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return res;
}

Tensor add_rowwise(const Tensor& x, const Tensor& v) {
  require_2d("add_rowwise", x);
  if (v.shape().size() != 1 || v.size() != x.cols()) {
    throw std::runtime_error("add_rowwise: shape mismatch " + shape_to_string(x.shape()) +
                             " vs " + shape_to_string(v.shape()));
  }
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.data()[i * m + j] + v.data()[j];
  check_finite("add_rowwise", out);
  Tensor res = Tensor::from(std::move(out), x.shape());
  if (recording() && (x.requires_grad() || v.requires_grad())) {
    auto xi = x.shared_impl(), vi = v.shared_impl(), oi = res.shared_impl();
    record_op("add_rowwise", {xi, vi}, res, [xi, vi, oi, n, m] {
      if (xi->requires_grad)
        for (std::size_t i = 0; i < n * m; ++i) xi->grad[i] += oi->grad[i];
      if (vi->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) vi->grad[j] += oi->grad[i * m + j];
    });
  }
  return res;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  const std::size_t n = transpose_a ? ac : ar;
  const std::size_t k = transpose_a ? ar : ac;
  const std::size_t k2 = transpose_b ? bc : br;
  const std::size_t m = transpose_b ? br : bc;
  if (k != k2) {
    throw std::runtime_error(std::string("matmul: inner dimension mismatch ") +
                             shape_to_string(a.shape()) + (transpose_a ? "^T" : "") + " vs " +
                             shape_to_string(b.shape()) + (transpose_b ? "^T" : ""));
  }
  std::vector<double> out(n * m, 0.0);
  raw_matmul(a.data().data(), ar, ac, transpose_a, b.data().data(), br, bc, transpose_b,
             out.data());
  check_finite("matmul", out);
  Tensor res = Tensor::from(std::move(out), {n, m});
  if (recording() && (a.requires_grad() || b.requires_grad())) {
    auto ai = a.shared_impl(), bi = b.shared_impl(), oi = res.shared_impl();
    const bool ta = transpose_a, tb = transpose_b;
    record_op("matmul", {ai, bi}, res, [ai, bi, oi, ta, tb, n, k, m, ar, ac, br, bc] {
      const double* g = oi->grad.data();
      if (ai->requires_grad) {
        // dA' = dC * B'^T, then transpose back if needed
        std::vector<double> da(n * k, 0.0);
        if (tb) {
          raw_matmul(g, n, m, false, bi->data.data(), br, bc, false, da.data());
        } else {
          raw_matmul(g, n, m, false, bi->data.data(), br, bc, true, da.data());
        }
        if (!ta) {
          for (std::size_t i = 0; i < n * k; ++i) ai->grad[i] += da[i];
        } else {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) ai->grad[p * n + i] += da[i * k + p];
        }
      }
      if (bi->requires_grad) {
        // dB' = A'^T * dC
        std::vector<double> db(k * m, 0.0);
        if (ta) {
          raw_matmul(ai->data.data(), ar, ac, false, g, n, m, false, db.data());
        } else {
          raw_matmul(ai->data.data(), ar, ac, true, g, n, m, false, db.data());
        }
        if (!tb) {
          for (std::size_t i = 0; i < k * m; ++i) bi->grad[i] += db[i];
        } else {
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < m; ++j) bi->grad[j * k + p] += db[p * m + j];
        }
      }
    });
  }
  return res;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  if (numel(shape) != x.size()) {
    throw std::runtime_error("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                             shape_to_string(shape));
  }
  Tensor res = Tensor::from(x.data(), std::move(shape));
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("reshape", {xi}, res, [xi, oi] {
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return res;
}

Tensor concat1d(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat1d: no inputs");
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (p.shape().size() != 1) {
      throw std::runtime_error("concat1d: expected 1-D tensor, got " +
                               shape_to_string(p.shape()));
    }
    total += p.size();
    needs_grad = needs_grad || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  check_finite("concat1d", out);
  Tensor res = Tensor::from(std::move(out), {total});
  if (recording() && needs_grad) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& p : parts) ins.push_back(p.shared_impl());
    auto oi = res.shared_impl();
    auto inputs = ins;
    record_op("concat1d", std::move(ins), res, [inputs, oi] {
      std::size_t off = 0;
      for (const auto& in : inputs) {
        if (in->requires_grad)
          for (std::size_t i = 0; i < in->data.size(); ++i) in->grad[i] += oi->grad[off + i];
        off += in->data.size();
      }
    });
  }
  return res;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    require_2d("concat_cols", p);
    if (p.rows() != n) {
      throw std::runtime_error("concat_cols: row mismatch " +
                               shape_to_string(parts.front().shape()) + " vs " +
                               shape_to_string(p.shape()));
    }
    total += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t m = p.cols();
    for (std::size_t i = 0; i < n; ++i)
      std::memcpy(out.data() + i * total + off, p.data().data() + i * m, m * sizeof(double));
    off += m;
  }
  check_finite("concat_cols", out);
  Tensor res = Tensor::from(std::move(out), {n, total});
  if (recording() && needs_grad) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& p : parts) ins.push_back(p.shared_impl());
    auto oi = res.shared_impl();
    auto inputs = ins;
    record_op("concat_cols", std::move(ins), res, [inputs, oi, n, total] {
      std::size_t col = 0;
      for (const auto& in : inputs) {
        const std::size_t m = in->shape[1];
        if (in->requires_grad)
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
              in->grad[i * m + j] += oi->grad[i * total + col + j];
        col += m;
      }
    });
  }
  return res;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::runtime_error("stack_rows: no inputs");
  const std::size_t m = rows.front().size();
  bool needs_grad = false;
  for (const auto& r : rows) {
    if (r.shape().size() != 1 || r.size() != m) {
      throw std::runtime_error("stack_rows: shape mismatch " +
                               shape_to_string(rows.front().shape()) + " vs " +
                               shape_to_string(r.shape()));
    }
    needs_grad = needs_grad || r.requires_grad();
  }
  std::vector<double> out;
  out.reserve(rows.size() * m);
  for (const auto& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
  check_finite("stack_rows", out);
  Tensor res = Tensor::from(std::move(out), {rows.size(), m});
  if (recording() && needs_grad) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& r : rows) ins.push_back(r.shared_impl());
    auto oi = res.shared_impl();
    auto inputs = ins;
    record_op("stack_rows", std::move(ins), res, [inputs, oi, m] {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i]->requires_grad) continue;
        for (std::size_t j = 0; j < m; ++j) inputs[i]->grad[j] += oi->grad[i * m + j];
      }
    });
  }
  return res;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d("slice_cols", x);
  const std::size_t n = x.rows(), m = x.cols();
  if (begin >= end || end > m) {
    throw std::runtime_error("slice_cols: invalid range [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") for " + shape_to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * w, x.data().data() + i * m + begin, w * sizeof(double));
  Tensor res = Tensor::from(std::move(out), {n, w});
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("slice_cols", {xi}, res, [xi, oi, n, m, w, begin] {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j)
          xi->grad[i * m + begin + j] += oi->grad[i * w + j];
    });
  }
  return res;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
  require_2d("embedding_lookup", table);
  if (ids.empty()) throw std::runtime_error("embedding_lookup: empty id list");
  const std::size_t v = table.rows(), d = table.cols();
  for (std::size_t id : ids) {
    if (id >= v) {
      throw std::runtime_error("embedding_lookup: id " + std::to_string(id) +
                               " out of range for table " + shape_to_string(table.shape()));
    }
  }
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * d, table.data().data() + ids[i] * d, d * sizeof(double));
  check_finite("embedding_lookup", out);
  Tensor res = Tensor::from(std::move(out), {ids.size(), d});
  if (recording() && table.requires_grad()) {
    auto ti = table.shared_impl(), oi = res.shared_impl();
    auto ids_copy = ids;
    record_op("embedding_lookup", {ti}, res, [ti, oi, ids_copy, d] {
      for (std::size_t i = 0; i < ids_copy.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          ti->grad[ids_copy[i] * d + j] += oi->grad[i * d + j];
    });
  }
  return res;
}

Tensor unfold(const Tensor& x, std::size_t width) {
  require_2d("unfold", x);
  const std::size_t n = x.rows(), d = x.cols();
  if (width == 0 || width > n) {
    throw std::runtime_error("unfold: window width " + std::to_string(width) +
                             " invalid for " + shape_to_string(x.shape()));
  }
  const std::size_t rows = n - width + 1, cols = width * d;
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    std::memcpy(out.data() + r * cols, x.data().data() + r * d, cols * sizeof(double));
  Tensor res = Tensor::from(std::move(out), {rows, cols});
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("unfold", {xi}, res, [xi, oi, rows, cols, d] {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) xi->grad[r * d + j] += oi->grad[r * cols + j];
    });
  }
  return res;
}

Tensor max_over_rows(const Tensor& x) {
  require_2d("max_over_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(m);
  std::vector<std::size_t> arg(m, 0);
  for (std::size_t j = 0; j < m; ++j) {
    double best = x.data()[j];
    std::size_t best_i = 0;
    for (std::size_t i = 1; i < n; ++i) {
      const double v = x.data()[i * m + j];
      if (v > best) {  // strict: ties keep the lowest row index
        best = v;
        best_i = i;
      }
    }
    out[j] = best;
    arg[j] = best_i;
  }
  check_finite("max_over_rows", out);
  Tensor res = Tensor::from(std::move(out), {m});
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("max_over_rows", {xi}, res, [xi, oi, arg, m] {
      for (std::size_t j = 0; j < m; ++j) xi->grad[arg[j] * m + j] += oi->grad[j];
    });
  }
  return res;
}

Tensor rowsum(const Tensor& x) {
  require_2d("rowsum", x);
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += x.data()[i * m + j];
  check_finite("rowsum", out);
  Tensor res = Tensor::from(std::move(out), {n});
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("rowsum", {xi}, res, [xi, oi, n, m] {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) xi->grad[i * m + j] += oi->grad[i];
    });
  }
  return res;
}

Tensor masked_mean_rows(const Tensor& x, const std::vector<double>& mask) {
  require_2d("masked_mean_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  if (mask.size() != n) {
    throw std::runtime_error("masked_mean_rows: mask length " + std::to_string(mask.size()) +
                             " vs " + shape_to_string(x.shape()));
  }
  double count = 0.0;
  for (double w : mask) count += (w != 0.0) ? 1.0 : 0.0;
  if (count == 0.0) throw std::runtime_error("masked_mean_rows: mask selects no rows");
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == 0.0) continue;
    for (std::size_t j = 0; j < m; ++j) out[j] += x.data()[i * m + j];
  }
  for (std::size_t j = 0; j < m; ++j) out[j] /= count;
  check_finite("masked_mean_rows", out);
  Tensor res = Tensor::from(std::move(out), {m});
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    auto mask_copy = mask;
    record_op("masked_mean_rows", {xi}, res, [xi, oi, mask_copy, n, m, count] {
      for (std::size_t i = 0; i < n; ++i) {
        if (mask_copy[i] == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) xi->grad[i * m + j] += oi->grad[j] / count;
      }
    });
  }
  return res;
}

Tensor softmax_rows(const Tensor& x) {
  const bool is_1d = x.shape().size() == 1;
  const std::size_t n = is_1d ? 1 : x.rows();
  const std::size_t m = is_1d ? x.size() : x.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data().data() + i * m;
    double mx = row[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = std::exp(row[j] - mx);
      z += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  check_finite("softmax", out);
  Tensor res = Tensor::from(std::move(out), x.shape());
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("softmax", {xi}, res, [xi, oi, n, m] {
      for (std::size_t i = 0; i < n; ++i) {
        const double* s = oi->data.data() + i * m;
        const double* g = oi->grad.data() + i * m;
        double dotsg = 0.0;
        for (std::size_t j = 0; j < m; ++j) dotsg += s[j] * g[j];
        for (std::size_t j = 0; j < m; ++j) xi->grad[i * m + j] += s[j] * (g[j] - dotsg);
      }
    });
  }
  return res;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor pointwise_op(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.data()[i]);
  check_finite(name, out);
  Tensor res = Tensor::from(std::move(out), x.shape());
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op(name, {xi}, res, [xi, oi, bwd] {
      for (std::size_t i = 0; i < oi->grad.size(); ++i)
        xi->grad[i] += oi->grad[i] * bwd(xi->data[i], oi->data[i]);
    });
  }
  return res;
}

}  // namespace

Tensor log_op(const Tensor& x) {
  return pointwise_op(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor exp_op(const Tensor& x) {
  return pointwise_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double o) { return o; });
}

Tensor tanh_op(const Tensor& x) {
  return pointwise_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double o) { return 1.0 - o * o; });
}

Tensor sqrt_op(const Tensor& x) {
  return pointwise_op(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double o) { return 0.5 / o; });
}

Tensor clamp_op(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::runtime_error("clamp: lo > hi");
  return pointwise_op(
      "clamp", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor l2_normalize(const Tensor& x) {
  const bool is_1d = x.shape().size() == 1;
  const std::size_t n = is_1d ? 1 : x.rows();
  const std::size_t m = is_1d ? x.size() : x.cols();
  std::vector<double> out(n * m);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data().data() + i * m;
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += row[j] * row[j];
    const double norm = std::sqrt(s);
    if (norm == 0.0) {
      throw std::runtime_error("l2_normalize: zero-norm row " + std::to_string(i));
    }
    norms[i] = norm;
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = row[j] / norm;
  }
  check_finite("l2_normalize", out);
  Tensor res = Tensor::from(std::move(out), x.shape());
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("l2_normalize", {xi}, res, [xi, oi, norms, n, m] {
      for (std::size_t i = 0; i < n; ++i) {
        const double* u = oi->data.data() + i * m;
        const double* g = oi->grad.data() + i * m;
        double ug = 0.0;
        for (std::size_t j = 0; j < m; ++j) ug += u[j] * g[j];
        for (std::size_t j = 0; j < m; ++j)
          xi->grad[i * m + j] += (g[j] - u[j] * ug) / norms[i];
      }
    });
  }
  return res;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& cols) {
  require_2d("gather_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  if (cols.size() != n) {
    throw std::runtime_error("gather_rows: index count " + std::to_string(cols.size()) +
                             " vs " + shape_to_string(x.shape()));
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] >= m) {
      throw std::runtime_error("gather_rows: column index " + std::to_string(cols[i]) +
                               " out of range for " + shape_to_string(x.shape()));
    }
    out[i] = x.data()[i * m + cols[i]];
  }
  Tensor res = Tensor::from(std::move(out), {n});
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    auto cols_copy = cols;
    record_op("gather_rows", {xi}, res, [xi, oi, cols_copy, m] {
      for (std::size_t i = 0; i < cols_copy.size(); ++i)
        xi->grad[i * m + cols_copy[i]] += oi->grad[i];
    });
  }
  return res;
}

Tensor dropout(const Tensor& x, double rate, TrainMode mode, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::runtime_error("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == TrainMode::Eval || rate == 0.0) return x;  // identity
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = (uniform_unit(rng) >= rate) ? 1.0 / keep : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  check_finite("dropout", out);
  Tensor res = Tensor::from(std::move(out), x.shape());
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("dropout", {xi}, res, [xi, oi, mask] {
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i] * mask[i];
    });
  }
  return res;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  std::vector<double> out{s};
  check_finite("sum", out);
  Tensor res = Tensor::from(std::move(out), {1});
  if (recording() && x.requires_grad()) {
    auto xi = x.shared_impl(), oi = res.shared_impl();
    record_op("sum", {xi}, res, [xi, oi] {
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[0];
    });
  }
  return res;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || b.shape().size() != 1) {
    throw std::runtime_error("dot: expected 1-D tensors, got " + shape_to_string(a.shape()) +
                             " and " + shape_to_string(b.shape()));
  }
  require_same_shape("dot", a, b);
  return sum(mul(a, b));
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  return dot(l2_normalize(a), l2_normalize(b));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

double finite_difference_check(const std::function<Tensor()>& loss_fn,
                               const std::vector<Tensor>& params, double epsilon,
                               std::size_t coords_per_param, std::uint64_t seed) {
  if (epsilon < 1e-7 || epsilon > 1e-3) {
    throw std::runtime_error("finite_difference_check: epsilon out of [1e-7, 1e-3]");
  }
  const auto eval = [&loss_fn]() {
    NoGradGuard no_grad;
    return loss_fn().item();
  };
  const double f1 = eval();
  const double f2 = eval();
  if (f1 != f2) {
    throw std::runtime_error("finite_difference_check: loss_fn is not deterministic");
  }

  for (const auto& p : params) {
    if (!p.requires_grad()) {
      throw std::runtime_error("finite_difference_check: param does not require grad");
    }
    const_cast<Tensor&>(p).zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  double max_rel = 0.0;
  std::mt19937_64 rng(derive_seed(seed, 0x6fd1u));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = const_cast<Tensor&>(params[pi]).data();
    std::vector<std::size_t> coords;
    if (coords_per_param >= data.size()) {
      coords.resize(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < coords_per_param; ++i)
        coords.push_back(bounded_draw(rng, data.size()));
    }
    for (std::size_t c : coords) {
      const double orig = data[c];
      data[c] = orig + epsilon;
      const double fp = eval();
      data[c] = orig - epsilon;
      const double fm = eval();
      data[c] = orig;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = analytic[pi][c];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace stylemetric
