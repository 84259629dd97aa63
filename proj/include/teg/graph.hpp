#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "teg/errors.hpp"
#include "teg/rng.hpp"
#include "teg/tensor.hpp"

namespace teg {

class Graph;

// Handle to a node on a Graph tape. Cheap to copy; valid for the lifetime of
// the graph that produced it.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  // Gradient accumulated by the last backward() pass (zeros if untouched).
  Tensor grad() const;
};

// Reverse-mode tape. Forward values are computed eagerly as operations are
// recorded; backward() replays the tape in reverse. Single-writer: a graph
// may be moved between threads but not shared while mutating.
class Graph {
 public:
  using BackFn = std::function<void(Graph&, int self)>;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    std::vector<int> inputs;
    BackFn backprop;  // empty for leaves and grad-free subgraphs
    bool requires_grad = false;
  };

  Var leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var param(const Tensor& value) { return leaf(value, true); }

  Var record(Tensor value, std::vector<int> inputs, BackFn backprop) {
    Node n;
    n.value = std::move(value);
    bool needs = false;
    for (int i : inputs) needs = needs || nodes_[static_cast<std::size_t>(i)].requires_grad;
    n.requires_grad = needs;
    if (needs) {
      n.inputs = std::move(inputs);
      n.backprop = std::move(backprop);
    }
    return push(std::move(n));
  }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor& value(Var v) const { return node(v.id).value; }
  const Tensor& value(int id) const { return node(id).value; }

  bool wants_grad(int id) const { return node(id).requires_grad; }

  // Accumulation buffer for a node's gradient, allocated on first touch.
  Tensor& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }

  Tensor grad_of(Var v) const {
    const Node& n = node(v.id);
    if (n.grad.numel() == 0) return Tensor::zeros(n.value.shape());
    return n.grad;
  }

  // Reverse sweep from a scalar loss. Visits each reachable node exactly once
  // in reverse topological (= reverse insertion) order, so accumulation order
  // is fixed and results are deterministic.
  void backward(Var loss) {
    if (loss.graph != this) throw ContractError("backward: var belongs to another graph");
    const Node& ln = node(loss.id);
    if (ln.value.numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + ln.value.shape_str());
    }
    std::vector<char> reachable(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    reachable[static_cast<std::size_t>(loss.id)] = 1;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      for (int in : node(id).inputs) {
        if (!reachable[static_cast<std::size_t>(in)]) {
          reachable[static_cast<std::size_t>(in)] = 1;
          stack.push_back(in);
        }
      }
    }
    grad_buffer(loss.id).data()[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!reachable[static_cast<std::size_t>(id)] || !n.requires_grad || !n.backprop) continue;
      if (n.grad.numel() == 0) continue;  // no gradient flowed into this node
      n.backprop(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

 private:
  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph->value(*this); }
inline Tensor Var::grad() const { return graph->grad_of(*this); }

// Free-function form of the reverse sweep.
inline void backward(Graph& g, Var loss) { g.backward(loss); }

namespace detail {

inline void check_same_graph(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw ContractError(std::string(op) + ": operands from different graphs");
  }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
  }
}

inline void axpy(double alpha, const Tensor& x, Tensor& y) {
  const std::size_t n = y.numel();
  const double* xs = x.data().data();
  double* ys = y.data().data();
  for (std::size_t i = 0; i < n; ++i) ys[i] += alpha * xs[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  detail::check_same_graph(a, b, "matmul");
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ContractError("matmul: incompatible shapes " + av.shape_str() + " x " + bv.shape_str());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::matrix(m, n);
  detail::mm_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id, m, k, n](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.wants_grad(a)) {
      detail::mm_nt_acc(go.data().data(), g.value(b).data().data(),
                        g.grad_buffer(a).data().data(), m, n, k);
    }
    if (g.wants_grad(b)) {
      detail::mm_tn_acc(g.value(a).data().data(), go.data().data(),
                        g.grad_buffer(b).data().data(), m, k, n);
    }
  });
}

inline Var transpose(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  if (av.rank() != 2) throw ContractError("transpose: rank-2 tensor required");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  return g.record(std::move(out), {a.id}, [a = a.id, m, n](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += go.at(j, i);
  });
}

inline Var add(Var a, Var b) {
  detail::check_same_graph(a, b, "add");
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::check_same_shape(av, bv, "add");
  Tensor out = av;
  detail::axpy(1.0, bv, out);
  return g.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.wants_grad(a)) detail::axpy(1.0, go, g.grad_buffer(a));
    if (g.wants_grad(b)) detail::axpy(1.0, go, g.grad_buffer(b));
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_graph(a, b, "sub");
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::check_same_shape(av, bv, "sub");
  Tensor out = av;
  detail::axpy(-1.0, bv, out);
  return g.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.wants_grad(a)) detail::axpy(1.0, go, g.grad_buffer(a));
    if (g.wants_grad(b)) detail::axpy(-1.0, go, g.grad_buffer(b));
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::check_same_graph(a, b, "mul");
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::check_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return g.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.wants_grad(a)) {
      const Tensor& bv = g.value(b);
      Tensor& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.wants_grad(b)) {
      const Tensor& av = g.value(a);
      Tensor& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.data()) v *= c;
  return g.record(std::move(out), {a.id}, [a = a.id, c](Graph& g, int self) {
    if (g.wants_grad(a)) detail::axpy(c, g.node(self).grad, g.grad_buffer(a));
  });
}

inline Var add_scalar(Var a, double c) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.data()) v += c;
  return g.record(std::move(out), {a.id}, [a = a.id](Graph& g, int self) {
    if (g.wants_grad(a)) detail::axpy(1.0, g.node(self).grad, g.grad_buffer(a));
  });
}

// out[i][j] = a[i][j] + row[j]; `row` has numel == cols(a).
inline Var add_row_broadcast(Var a, Var row) {
  detail::check_same_graph(a, row, "add_row_broadcast");
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& rv = g.value(row);
  if (av.rank() != 2 || rv.numel() != av.cols()) {
    throw ContractError("add_row_broadcast: " + av.shape_str() + " + " + rv.shape_str());
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += rv[j];
  return g.record(std::move(out), {a.id, row.id}, [a = a.id, r = row.id, m, n](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.wants_grad(a)) detail::axpy(1.0, go, g.grad_buffer(a));
    if (g.wants_grad(r)) {
      Tensor& gr = g.grad_buffer(r);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += go.at(i, j);
    }
  });
}

inline Var relu(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return g.record(std::move(out), {a.id}, [a = a.id](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& av = g.value(a);
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.numel(); ++i)
      if (av[i] > 0.0) ga[i] += go[i];
  });
}

inline Var sigmoid(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.data()) {
    // Branch keeps exp() argument non-positive for stability on both tails.
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return g.record(std::move(out), {a.id}, [a = a.id](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& ov = g.node(self).value;
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * ov[i] * (1.0 - ov[i]);
  });
}

// Natural log; callers clamp the argument away from zero first.
inline Var log_elem(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.data()) v = std::log(v);
  return g.record(std::move(out), {a.id}, [a = a.id](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& av = g.value(a);
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / av[i];
  });
}

// Elementwise square root; inputs must be strictly positive for the
// gradient to be finite (callers add an epsilon shift).
inline Var sqrt_elem(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.data()) v = std::sqrt(v);
  return g.record(std::move(out), {a.id}, [a = a.id](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& ov = g.node(self).value;
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / (2.0 * ov[i]);
  });
}

// Clamp to [lo, hi]; gradient passes only where the input is strictly inside.
inline Var clamp(Var a, double lo, double hi) {
  if (!(lo < hi)) throw ContractError("clamp: lo must be < hi");
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.data()) v = std::min(std::max(v, lo), hi);
  return g.record(std::move(out), {a.id}, [a = a.id, lo, hi](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& av = g.value(a);
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.numel(); ++i)
      if (av[i] > lo && av[i] < hi) ga[i] += go[i];
  });
}

// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  if (av.rank() != 2) throw ContractError("softmax_rows: rank-2 tensor required");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  return g.record(std::move(out), {a.id}, [a = a.id, m, n](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& sv = g.node(self).value;
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += go.at(i, j) * sv.at(i, j);
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += sv.at(i, j) * (go.at(i, j) - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-12;

// Row-wise layer normalization with learned gain/bias (each of width cols(a)).
inline Var layer_norm_rows(Var a, Var gain, Var bias) {
  detail::check_same_graph(a, gain, "layer_norm_rows");
  detail::check_same_graph(a, bias, "layer_norm_rows");
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  if (av.rank() != 2) throw ContractError("layer_norm_rows: rank-2 tensor required");
  const std::size_t m = av.rows(), n = av.cols();
  if (n < 2) throw ContractError("layer_norm_rows: need at least 2 columns");
  const Tensor& gv = g.value(gain);
  const Tensor& bv = g.value(bias);
  if (gv.numel() != n || bv.numel() != n) {
    throw ContractError("layer_norm_rows: gain/bias width mismatch");
  }
  Tensor out = Tensor::matrix(m, n);
  Tensor xhat = Tensor::matrix(m, n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = gv[j] * xh + bv[j];
    }
  }
  return g.record(
      std::move(out), {a.id, gain.id, bias.id},
      [a = a.id, gi = gain.id, bi = bias.id, m, n, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Graph& g, int self) {
        const Tensor& go = g.node(self).grad;
        const Tensor& gv = g.value(gi);
        if (g.wants_grad(gi)) {
          Tensor& gg = g.grad_buffer(gi);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += go.at(i, j) * xhat.at(i, j);
        }
        if (g.wants_grad(bi)) {
          Tensor& gb = g.grad_buffer(bi);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += go.at(i, j);
        }
        if (g.wants_grad(a)) {
          Tensor& ga = g.grad_buffer(a);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = go.at(i, j) * gv[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xhat.at(i, j);
            }
            mean_dxh /= static_cast<double>(n);
            mean_dxh_xh /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = go.at(i, j) * gv[j];
              ga.at(i, j) += inv_std[i] * (dxh - mean_dxh - xhat.at(i, j) * mean_dxh_xh);
            }
          }
        }
      });
}

// Column-concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input");
  Graph& g = *parts[0].graph;
  const std::size_t m = g.value(parts[0]).rows();
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    detail::check_same_graph(parts[0], p, "concat_cols");
    const Tensor& pv = g.value(p);
    if (pv.rank() != 2 || pv.rows() != m) {
      throw ContractError("concat_cols: row mismatch " + pv.shape_str());
    }
    ids.push_back(p.id);
    widths.push_back(pv.cols());
    total += pv.cols();
  }
  Tensor out = Tensor::matrix(m, total);
  std::size_t off = 0;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    const Tensor& pv = g.value(ids[static_cast<std::size_t>(p)]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out.at(i, off + j) = pv.at(i, j);
    off += widths[p];
  }
  return g.record(std::move(out), ids,
                  [ids, widths, m, total](Graph& g, int self) {
                    const Tensor& go = g.node(self).grad;
                    std::size_t off = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      if (g.wants_grad(ids[p])) {
                        Tensor& gp = g.grad_buffer(ids[p]);
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < widths[p]; ++j)
                            gp.at(i, j) += go.data()[i * total + off + j];
                      }
                      off += widths[p];
                    }
                  });
}

// Rows [r0, r1) of a rank-2 tensor.
inline Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  if (av.rank() != 2 || r0 >= r1 || r1 > av.rows()) {
    throw ContractError("slice_rows: bad range on " + av.shape_str());
  }
  const std::size_t n = av.cols();
  Tensor out = Tensor::matrix(r1 - r0, n);
  std::copy(av.data().begin() + static_cast<std::ptrdiff_t>(r0 * n),
            av.data().begin() + static_cast<std::ptrdiff_t>(r1 * n), out.data().begin());
  return g.record(std::move(out), {a.id}, [a = a.id, r0, n](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(r0 + i, j) += go.at(i, j);
  });
}

// Elements of a flat tensor picked by index; duplicates allowed.
inline Var gather(Var a, std::vector<int> indices) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  Tensor out({indices.size()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int idx = indices[k];
    if (idx < 0 || static_cast<std::size_t>(idx) >= av.numel()) {
      throw ContractError("gather: index out of range");
    }
    out[k] = av[static_cast<std::size_t>(idx)];
  }
  return g.record(std::move(out), {a.id},
                  [a = a.id, indices = std::move(indices)](Graph& g, int self) {
                    if (!g.wants_grad(a)) return;
                    const Tensor& go = g.node(self).grad;
                    Tensor& ga = g.grad_buffer(a);
                    for (std::size_t k = 0; k < indices.size(); ++k)
                      ga[static_cast<std::size_t>(indices[k])] += go[k];
                  });
}

inline Var sum(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  double s = 0.0;
  for (double v : av.data()) s += v;
  return g.record(Tensor::scalar(s), {a.id}, [a = a.id](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const double go = g.node(self).grad[0];
    Tensor& ga = g.grad_buffer(a);
    for (double& v : ga.data()) v += go;
  });
}

inline Var mean(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  if (av.numel() == 0) throw ContractError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(av.numel());
  double s = 0.0;
  for (double v : av.data()) s += v;
  return g.record(Tensor::scalar(s * inv), {a.id}, [a = a.id, inv](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const double go = g.node(self).grad[0] * inv;
    Tensor& ga = g.grad_buffer(a);
    for (double& v : ga.data()) v += go;
  });
}

// Per-row Euclidean norms of a rank-2 tensor; output has shape [rows].
// Zero rows get a zero subgradient.
inline Var row_l2_norms(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  if (av.rank() != 2) throw ContractError("row_l2_norms: rank-2 tensor required");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av.at(i, j) * av.at(i, j);
    out[i] = std::sqrt(s);
  }
  return g.record(std::move(out), {a.id}, [a = a.id, m, n](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& ov = g.node(self).value;
    const Tensor& av = g.value(a);
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      if (ov[i] == 0.0) continue;
      const double c = go[i] / ov[i];
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += c * av.at(i, j);
    }
  });
}

// Shape change over the same data (row-major order preserved).
inline Var reshape(Var a, std::vector<std::size_t> shape) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  if (Tensor::count(shape) != av.numel()) {
    throw ContractError("reshape: element count mismatch");
  }
  Tensor out(std::move(shape), av.data());
  return g.record(std::move(out), {a.id}, [a = a.id](Graph& g, int self) {
    if (!g.wants_grad(a)) return;
    detail::axpy(1.0, g.node(self).grad, g.grad_buffer(a));
  });
}

// Inverted dropout: keeps each element with probability 1-rate and rescales.
// The mask is drawn once at record time, so the op is deterministic given rng.
inline Var dropout(Var a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0,1)");
  Graph& g = *a.graph;
  if (rate == 0.0) return a;
  const Tensor& av = g.value(a);
  Tensor mask(av.shape());
  const double keep = 1.0 - rate;
  for (double& v : mask.data()) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Var m = g.constant(std::move(mask));
  return mul(a, m);
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace teg
