#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation,
// plus the masked softmax / attention primitives the rest of the library is
// built from. Graphs are built dynamically per forward pass; calling
// backward() on a scalar result accumulates gradients into the leaves.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace factgen {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  std::int64_t size() const {
    std::int64_t s = 1;
    for (int d : shape) s *= d;
    return s;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(val.size(), 0.0);
  }
};

using EMat =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ECMat = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline EMat as_mat(Node& n, int rows, int cols) { return EMat(n.val.data(), rows, cols); }
inline ECMat as_cmat(const Node& n, int rows, int cols) {
  return ECMat(n.val.data(), rows, cols);
}
inline EMat grad_mat(Node& n, int rows, int cols) {
  n.ensure_grad();
  return EMat(n.grad.data(), rows, cols);
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->val.assign(static_cast<std::size_t>(n->size()), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    if (static_cast<std::int64_t>(values.size()) != n->size())
      throw NumericError("from_values: value count does not match shape");
    n->val = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return from_values({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const { return node_->shape; }
  std::int64_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<double>& values() { return node_->val; }
  const std::vector<double>& values() const { return node_->val; }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  double value() const {
    if (node_->size() != 1) throw NumericError("value(): tensor is not a scalar");
    return node_->val[0];
  }
  double at(std::int64_t i) const { return node_->val[static_cast<std::size_t>(i)]; }
  double at(int r, int c) const {
    return node_->val[static_cast<std::size_t>(r) * node_->shape[1] + c];
  }

  int rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
  int cols() const { return node_->shape.size() < 2 ? 1 : node_->shape[1]; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Accumulates d(this)/d(leaf) into every reachable leaf with requires_grad.
  void backward() const {
    if (node_->size() != 1) throw NumericError("backward(): root must be a scalar");
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        detail::Node* p = n->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = *it;
      n->ensure_grad();
      if (n->backprop) n->backprop(*n);
    }
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(std::vector<int> shape, std::vector<double> val,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backprop);
};

namespace detail {
inline bool& grad_enabled() {
  static thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph construction in scope; forward values are still computed.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline Tensor make_op(std::vector<int> shape, std::vector<double> val,
                      std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backprop) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  bool needs = false;
  if (detail::grad_enabled())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  n->requires_grad = needs;
  if (needs) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw NumericError(std::string(op) + ": shape mismatch");
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
}

// a: [n x d], bias: [d]; adds bias to every row.
inline Tensor add_row_broadcast(const Tensor& a, const Tensor& bias) {
  const int rows = a.rows(), cols = a.cols();
  if (bias.size() != cols) throw NumericError("add_row_broadcast: shape mismatch");
  std::vector<double> out(a.values());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] += bias.at(c);
  auto an = a.node(), bn = bias.node();
  return make_op(a.shape(), std::move(out), {a, bias},
                 [an, bn, rows, cols](detail::Node& n) {
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (std::size_t i = 0; i < n.grad.size(); ++i)
                       an->grad[i] += n.grad[i];
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (int r = 0; r < rows; ++r)
                       for (int c = 0; c < cols; ++c)
                         bn->grad[c] += n.grad[static_cast<std::size_t>(r) * cols + c];
                   }
                 });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        an->grad[i] += n.grad[i] * bn->val[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        bn->grad[i] += n.grad[i] * an->val[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= c;
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an, c](detail::Node& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += c * n.grad[i];
  });
}

// C = A * op(B) with optional transpose of B. A is [n x k].
inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false) {
  const int n = a.rows(), k = a.cols();
  const int bk = trans_b ? b.cols() : b.rows();
  const int m = trans_b ? b.rows() : b.cols();
  if (k != bk) throw NumericError("matmul: inner dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  {
    detail::ECMat A(a.values().data(), n, k);
    detail::ECMat B(b.values().data(), b.rows(), b.cols());
    detail::EMat C(out.data(), n, m);
    if (trans_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A * B;
  }
  auto an = a.node(), bn = b.node();
  return make_op({n, m}, std::move(out), {a, b},
                 [an, bn, n, k, m, trans_b](detail::Node& node) {
                   detail::ECMat G(node.grad.data(), n, m);
                   detail::ECMat A(an->val.data(), n, k);
                   detail::ECMat B(bn->val.data(), bn->shape[0], bn->shape[1]);
                   if (an->requires_grad) {
                     an->ensure_grad();
                     detail::EMat dA(an->grad.data(), n, k);
                     if (trans_b)
                       dA.noalias() += G * B;
                     else
                       dA.noalias() += G * B.transpose();
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     detail::EMat dB(bn->grad.data(), bn->shape[0], bn->shape[1]);
                     if (trans_b)
                       dB.noalias() += G.transpose() * A;
                     else
                       dB.noalias() += A.transpose() * G;
                   }
                 });
}

// out[i, :] = table[ids[i], :]
inline Tensor rows_gather(const Tensor& table, const std::vector<int>& ids) {
  const int d = table.cols();
  const int n = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw NumericError("rows_gather: index out of range");
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + static_cast<std::size_t>(i) * d);
  }
  auto tn = table.node();
  return make_op({n, d}, std::move(out), {table}, [tn, ids, d](detail::Node& n_) {
    tn->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int c = 0; c < d; ++c)
        tn->grad[static_cast<std::size_t>(ids[i]) * d + c] += n_.grad[i * d + c];
  });
}

inline Tensor slice_cols(const Tensor& a, int start, int len) {
  const int rows = a.rows(), cols = a.cols();
  if (start < 0 || start + len > cols) throw NumericError("slice_cols: out of range");
  std::vector<double> out(static_cast<std::size_t>(rows) * len);
  for (int r = 0; r < rows; ++r)
    std::copy_n(a.values().data() + static_cast<std::size_t>(r) * cols + start, len,
                out.data() + static_cast<std::size_t>(r) * len);
  auto an = a.node();
  return make_op({rows, len}, std::move(out), {a},
                 [an, start, len, rows, cols](detail::Node& n) {
                   an->ensure_grad();
                   for (int r = 0; r < rows; ++r)
                     for (int c = 0; c < len; ++c)
                       an->grad[static_cast<std::size_t>(r) * cols + start + c] +=
                           n.grad[static_cast<std::size_t>(r) * len + c];
                 });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw NumericError("concat_cols: no inputs");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw NumericError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p.cols();
    for (int r = 0; r < rows; ++r)
      std::copy_n(p.values().data() + static_cast<std::size_t>(r) * pc, pc,
                  out.data() + static_cast<std::size_t>(r) * cols + off);
    off += pc;
  }
  std::vector<int> widths;
  for (const auto& p : parts) widths.push_back(p.cols());
  std::vector<std::shared_ptr<detail::Node>> pn;
  for (const auto& p : parts) pn.push_back(p.node());
  return make_op({rows, cols}, std::move(out), parts,
                 [pn, widths, rows, cols](detail::Node& n) {
                   int off2 = 0;
                   for (std::size_t i = 0; i < pn.size(); ++i) {
                     const int pc = widths[i];
                     if (pn[i]->requires_grad) {
                       pn[i]->ensure_grad();
                       for (int r = 0; r < rows; ++r)
                         for (int c = 0; c < pc; ++c)
                           pn[i]->grad[static_cast<std::size_t>(r) * pc + c] +=
                               n.grad[static_cast<std::size_t>(r) * cols + off2 + c];
                     }
                     off2 += pc;
                   }
                 });
}

inline Tensor gelu(const Tensor& a) {
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an](detail::Node& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double x = an->val[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      an->grad[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

// Row-wise layer normalization with learned gain/bias.
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  const int rows = a.rows(), cols = a.cols();
  if (gamma.size() != cols || beta.size() != cols)
    throw NumericError("layer_norm: parameter shape mismatch");
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  std::vector<double> inv_std(rows), mean(rows);
  for (int r = 0; r < rows; ++r) {
    const double* x = a.values().data() + static_cast<std::size_t>(r) * cols;
    double mu = 0.0;
    for (int c = 0; c < cols; ++c) mu += x[c];
    mu /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    for (int c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(r) * cols + c] =
          gamma.at(c) * (x[c] - mu) * is + beta.at(c);
  }
  auto an = a.node(), gn = gamma.node(), bn = beta.node();
  return make_op(
      a.shape(), std::move(out), {a, gamma, beta},
      [an, gn, bn, rows, cols, mean, inv_std](detail::Node& n) {
        for (int r = 0; r < rows; ++r) {
          const double* x = an->val.data() + static_cast<std::size_t>(r) * cols;
          const double* g = n.grad.data() + static_cast<std::size_t>(r) * cols;
          const double mu = mean[r], is = inv_std[r];
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int c = 0; c < cols; ++c) {
            const double xhat = (x[c] - mu) * is;
            const double dxhat = g[c] * gn->val[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            if (gn->requires_grad) {
              gn->ensure_grad();
              gn->grad[c] += g[c] * xhat;
            }
            if (bn->requires_grad) {
              bn->ensure_grad();
              bn->grad[c] += g[c];
            }
          }
          if (an->requires_grad) {
            an->ensure_grad();
            for (int c = 0; c < cols; ++c) {
              const double xhat = (x[c] - mu) * is;
              const double dxhat = g[c] * gn->val[c];
              an->grad[static_cast<std::size_t>(r) * cols + c] +=
                  is * (dxhat - sum_dxhat / cols - xhat * sum_dxhat_xhat / cols);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

// Row-restricted softmax. mask holds 0/1; masked entries get probability
// exactly 0 and receive no gradient. Rows whose mask is all zero produce an
// all-zero probability row.
inline Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
  check_same_shape(logits, mask, "masked_softmax");
  const int rows = logits.rows(), cols = logits.cols();
  std::vector<double> out(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* l = logits.values().data() + static_cast<std::size_t>(r) * cols;
    const double* m = mask.values().data() + static_cast<std::size_t>(r) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cols; ++c)
      if (m[c] != 0.0) mx = std::max(mx, l[c]);
    if (!std::isfinite(mx)) continue;  // fully masked row
    double z = 0.0;
    for (int c = 0; c < cols; ++c)
      if (m[c] != 0.0) z += std::exp(l[c] - mx);
    for (int c = 0; c < cols; ++c)
      if (m[c] != 0.0)
        out[static_cast<std::size_t>(r) * cols + c] = std::exp(l[c] - mx) / z;
  }
  auto ln = logits.node(), mn = mask.node();
  return make_op(logits.shape(), std::move(out), {logits, mask},
                 [ln, mn, rows, cols](detail::Node& n) {
                   if (!ln->requires_grad) return;
                   ln->ensure_grad();
                   for (int r = 0; r < rows; ++r) {
                     const double* p = n.val.data() + static_cast<std::size_t>(r) * cols;
                     const double* g = n.grad.data() + static_cast<std::size_t>(r) * cols;
                     const double* m = mn->val.data() + static_cast<std::size_t>(r) * cols;
                     double dot = 0.0;
                     for (int c = 0; c < cols; ++c) dot += p[c] * g[c];
                     for (int c = 0; c < cols; ++c)
                       if (m[c] != 0.0)
                         ln->grad[static_cast<std::size_t>(r) * cols + c] +=
                             p[c] * (g[c] - dot);
                   }
                 });
}

// Log-probabilities over the allowed entries of a single logit vector.
// Disallowed entries are -inf and must not be consumed downstream.
inline Tensor masked_log_softmax(const Tensor& logits, const std::vector<std::uint8_t>& allowed) {
  const int k = static_cast<int>(logits.size());
  if (static_cast<int>(allowed.size()) != k)
    throw NumericError("masked_log_softmax: mask size mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i)
    if (allowed[i]) mx = std::max(mx, logits.at(i));
  if (!std::isfinite(mx)) throw NumericError("masked_log_softmax: empty support");
  double z = 0.0;
  for (int i = 0; i < k; ++i)
    if (allowed[i]) z += std::exp(logits.at(i) - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> out(k, -std::numeric_limits<double>::infinity());
  for (int i = 0; i < k; ++i)
    if (allowed[i]) out[i] = logits.at(i) - log_z;
  auto ln = logits.node();
  return make_op(logits.shape(), std::move(out), {logits},
                 [ln, allowed, k](detail::Node& n) {
                   ln->ensure_grad();
                   double gsum = 0.0;
                   for (int i = 0; i < k; ++i)
                     if (allowed[i]) gsum += n.grad[i];
                   for (int i = 0; i < k; ++i)
                     if (allowed[i])
                       ln->grad[i] += n.grad[i] - std::exp(n.val[i]) * gsum;
                 });
}

inline Tensor pick(const Tensor& a, std::int64_t index) {
  if (index < 0 || index >= a.size()) throw NumericError("pick: index out of range");
  auto an = a.node();
  return make_op({1}, {a.values()[static_cast<std::size_t>(index)]}, {a},
                 [an, index](detail::Node& n) {
                   an->ensure_grad();
                   an->grad[static_cast<std::size_t>(index)] += n.grad[0];
                 });
}

inline Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  auto an = a.node();
  return make_op({1}, {s}, {a}, [an](detail::Node& n) {
    an->ensure_grad();
    for (double& g : an->grad) g += n.grad[0];
  });
}

// Sum over rows [first_row, n) of log softmax(logits[r])[targets[r - first_row]].
inline Tensor sequence_log_prob(const Tensor& logits, const std::vector<int>& targets,
                                int first_row) {
  const int rows = logits.rows(), cols = logits.cols();
  if (first_row + static_cast<int>(targets.size()) != rows)
    throw NumericError("sequence_log_prob: target count mismatch");
  double total = 0.0;
  std::vector<double> log_norm(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int r = first_row + static_cast<int>(i);
    const double* l = logits.values().data() + static_cast<std::size_t>(r) * cols;
    double mx = *std::max_element(l, l + cols);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += std::exp(l[c] - mx);
    log_norm[i] = mx + std::log(z);
    total += l[targets[i]] - log_norm[i];
  }
  auto ln = logits.node();
  return make_op({1}, {total}, {logits},
                 [ln, targets, first_row, cols, log_norm](detail::Node& n) {
                   ln->ensure_grad();
                   const double g = n.grad[0];
                   for (std::size_t i = 0; i < targets.size(); ++i) {
                     const int r = first_row + static_cast<int>(i);
                     const double* l = ln->val.data() + static_cast<std::size_t>(r) * cols;
                     double* gl = ln->grad.data() + static_cast<std::size_t>(r) * cols;
                     for (int c = 0; c < cols; ++c)
                       gl[c] -= g * std::exp(l[c] - log_norm[i]);
                     gl[targets[i]] += g;
                   }
                 });
}

inline Tensor logsumexp(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw NumericError("logsumexp: no inputs");
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& s : scalars) mx = std::max(mx, s.value());
  double out;
  if (!std::isfinite(mx)) {
    out = -std::numeric_limits<double>::infinity();
  } else {
    double z = 0.0;
    for (const auto& s : scalars) z += std::exp(s.value() - mx);
    out = mx + std::log(z);
  }
  std::vector<std::shared_ptr<detail::Node>> pn;
  for (const auto& s : scalars) pn.push_back(s.node());
  return make_op({1}, {out}, scalars, [pn, out](detail::Node& n) {
    if (!std::isfinite(out)) return;
    for (auto& p : pn) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      p->grad[0] += n.grad[0] * std::exp(p->val[0] - out);
    }
  });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// Scaled dot-product attention. attn_mask is 0/1 with shape
// [n_queries x n_keys]; masked key positions get exactly zero weight, so the
// output is invariant to their key/value content.
inline Tensor attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                        const Tensor& attn_mask) {
  if (queries.cols() != keys.cols())
    throw NumericError("attention: query/key dimension mismatch");
  if (keys.rows() != values.rows())
    throw NumericError("attention: key/value count mismatch");
  if (attn_mask.rows() != queries.rows() || attn_mask.cols() != keys.rows())
    throw NumericError("attention: mask shape mismatch");
  const double scaling = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  Tensor scores = scale(matmul(queries, keys, /*trans_b=*/true), scaling);
  Tensor weights = masked_softmax(scores, attn_mask);
  return matmul(weights, values);
}

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

class ParamStore {
 public:
  // Tensors are shared handles; the returned copy aliases the stored entry.
  Tensor add(const std::string& name, std::vector<int> shape, bool trainable = true) {
    if (index_.count(name)) throw NumericError("ParamStore: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, Tensor::zeros(std::move(shape), trainable)});
    return entries_.back().second;
  }

  Tensor at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NumericError("ParamStore: unknown name " + name);
    return entries_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

  // Copies values (not gradients) from another store with identical layout.
  void copy_values_from(const ParamStore& other) {
    for (auto& [name, t] : entries_) {
      const Tensor& src = other.at(name);
      if (src.shape() != t.shape())
        throw NumericError("copy_values_from: shape mismatch for " + name);
      t.values() = src.values();
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Checkpoint layout: 8-byte magic "FGCKPT\0\0", u32 version, u64 record
// count, then per record u32 name length, name bytes, u32 ndim, i64 dims,
// and raw row-major f64 values. All fields little-endian.
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline void ParamStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NumericError("cannot open checkpoint for writing: " + path);
  const char magic[8] = {'F', 'G', 'C', 'K', 'P', 'T', 0, 0};
  out.write(magic, 8);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t count = entries_.size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto& [name, t] : entries_) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(name.data(), name_len);
    const std::uint32_t ndim = static_cast<std::uint32_t>(t.shape().size());
    out.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int d : t.shape()) {
      const std::int64_t d64 = d;
      out.write(reinterpret_cast<const char*>(&d64), 8);
    }
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.values().size() * sizeof(double)));
  }
  if (!out) throw NumericError("write failure for checkpoint: " + path);
}

inline ParamStore ParamStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 6) != "FGCKPT")
    throw NumericError("bad checkpoint magic in " + path);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw NumericError("unsupported checkpoint version in " + path);
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  ParamStore ps;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), 4);
    std::vector<int> shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::int64_t d64 = 0;
      in.read(reinterpret_cast<char*>(&d64), 8);
      shape[d] = static_cast<int>(d64);
    }
    Tensor t = ps.add(name, shape, /*trainable=*/true);
    in.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.values().size() * sizeof(double)));
    if (!in) throw NumericError("truncated checkpoint: " + path);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences on a sampled subset of parameter coordinates. Returns the
// maximum relative error observed.
inline double grad_check(ParamStore& params, const std::function<Tensor()>& f,
                         double epsilon, int min_coords = 100,
                         std::uint64_t seed = 0x9e3779b97f4a7c15ull) {
  Tensor base = f();
  if (!std::isfinite(base.value()))
    throw NumericError("grad_check: non-finite values encountered");
  params.zero_grads();
  base.backward();

  struct Coord {
    Tensor* tensor;
    std::size_t index;
    double analytic;
  };
  std::vector<Coord> coords;
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad()) continue;
    for (std::size_t i = 0; i < t.values().size(); ++i)
      coords.push_back({&t, i, t.grad()[i]});
  }
  if (coords.empty()) throw NumericError("grad_check: no trainable coordinates");

  std::vector<std::size_t> chosen(coords.size());
  std::iota(chosen.begin(), chosen.end(), 0);
  if (static_cast<int>(coords.size()) > min_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(min_coords);
  }

  double max_rel = 0.0;
  for (std::size_t ci : chosen) {
    Coord& c = coords[ci];
    double& slot = c.tensor->values()[c.index];
    const double orig = slot;
    slot = orig + epsilon;
    const double fp = f().value();
    slot = orig - epsilon;
    const double fm = f().value();
    slot = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite values encountered");
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double denom = std::max({std::abs(c.analytic), std::abs(numeric), 1e-2});
    max_rel = std::max(max_rel, std::abs(c.analytic - numeric) / denom);
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Initialization helpers
// ---------------------------------------------------------------------------

inline void fill_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
}

inline void fill_constant(Tensor& t, double v) {
  std::fill(t.values().begin(), t.values().end(), v);
}

}  // namespace factgen
