#ifndef BDLAB_AUTOGRAD_GRAPH_H_
#define BDLAB_AUTOGRAD_GRAPH_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdlab/autograd/kernels.h"
#include "bdlab/autograd/tensor.h"

namespace bdlab::ag {

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(int node, const std::string& op, const std::string& what)
      : std::runtime_error(what), node_(node), op_(op) {}
  int node() const { return node_; }
  const std::string& op() const { return op_; }

 private:
  int node_;
  std::string op_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Tape of primitive operations recorded in creation order, which is a
// topological order by construction. Single owner; not thread-safe.
template <typename T>
class Graph {
 public:
  // grad_in[i] is pre-sized (zeros) when input i requires a gradient and
  // empty otherwise; the callback accumulates into it.
  using CustomBackward =
      std::function<void(const Tensor<T>& grad_out, std::vector<Tensor<T>>& grad_in)>;

  Var leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
    return push("leaf", {}, std::move(value), requires_grad, nullptr,
                std::move(name));
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const std::string& op(Var v) const { return node(v).op; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() loss; zeros if none reached this node.
  Tensor<T> grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var loss) {
    Node& root = node(loss);
    if (root.value.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_string(root.value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value.shape(), T{1});
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      for (T g : n.grad.data()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw NonFiniteError(id, n.op,
                               "backward: non-finite gradient at node " +
                                   std::to_string(id) + " (" + n.op + ")");
        }
      }
      n.backward(*this, id);
    }
  }

  // ---- primitives -------------------------------------------------------

  // (m x k) @ (k x n)
  Var matmul(Var a, Var b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
      throw std::invalid_argument("matmul: incompatible shapes " +
                                  shape_string(A.shape()) + " x " +
                                  shape_string(B.shape()));
    }
    const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor<T> out({m, n});
    kernels::parallel::matmul(m, k, n, A.ptr(), B.ptr(), out.ptr());
    return push("matmul", {a, b}, std::move(out), any_grad({a, b}),
                [m, k, n](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  const int ia = s.inputs[0], ib = s.inputs[1];
                  if (g.nodes_[ia].requires_grad) {
                    std::vector<T> da(static_cast<std::size_t>(m) * k);
                    kernels::parallel::matmul_grad_a(m, k, n, s.grad.ptr(),
                                                     g.nodes_[ib].value.ptr(),
                                                     da.data());
                    g.accumulate(ia, da.data());
                  }
                  if (g.nodes_[ib].requires_grad) {
                    std::vector<T> db(static_cast<std::size_t>(k) * n);
                    kernels::parallel::matmul_grad_b(m, k, n,
                                                     g.nodes_[ia].value.ptr(),
                                                     s.grad.ptr(), db.data());
                    g.accumulate(ib, db.data());
                  }
                });
  }

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Tensor<T> out = value(a);
    const Tensor<T>& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push("add", {a, b}, std::move(out), any_grad({a, b}),
                [](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  g.accumulate(s.inputs[0], s.grad.ptr());
                  g.accumulate(s.inputs[1], s.grad.ptr());
                });
  }

  // a has shape (N, C, ...); bias has C entries broadcast over the rest.
  Var add_bias(Var a, Var bias) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(bias);
    if (A.rank() < 2 || static_cast<int>(B.size()) != A.dim(1)) {
      throw std::invalid_argument("add_bias: bias size " +
                                  std::to_string(B.size()) +
                                  " does not match channel dim of " +
                                  shape_string(A.shape()));
    }
    const int N = A.dim(0), C = A.dim(1);
    const std::size_t inner = A.size() / (static_cast<std::size_t>(N) * C);
    Tensor<T> out = A;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T* p = out.ptr() + (static_cast<std::size_t>(n) * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) p[i] += B[c];
      }
    return push("add_bias", {a, bias}, std::move(out), any_grad({a, bias}),
                [N, C, inner](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  g.accumulate(s.inputs[0], s.grad.ptr());
                  if (g.nodes_[s.inputs[1]].requires_grad) {
                    std::vector<T> db(C, T{0});
                    for (int n = 0; n < N; ++n)
                      for (int c = 0; c < C; ++c) {
                        const T* p =
                            s.grad.ptr() + (static_cast<std::size_t>(n) * C + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i) db[c] += p[i];
                      }
                    g.accumulate(s.inputs[1], db.data());
                  }
                });
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Tensor<T> out = value(a);
    const Tensor<T>& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push("mul", {a, b}, std::move(out), any_grad({a, b}),
                [](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  const Tensor<T>& A = g.nodes_[s.inputs[0]].value;
                  const Tensor<T>& B = g.nodes_[s.inputs[1]].value;
                  std::vector<T> buf(s.grad.size());
                  if (g.nodes_[s.inputs[0]].requires_grad) {
                    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = s.grad[i] * B[i];
                    g.accumulate(s.inputs[0], buf.data());
                  }
                  if (g.nodes_[s.inputs[1]].requires_grad) {
                    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = s.grad[i] * A[i];
                    g.accumulate(s.inputs[1], buf.data());
                  }
                });
  }

  Var scale(Var a, T factor) {
    Tensor<T> out = value(a);
    for (T& v : out.data()) v *= factor;
    return push("scale", {a}, std::move(out), any_grad({a}),
                [factor](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<T> buf(s.grad.data().begin(), s.grad.data().end());
                  for (T& v : buf) v *= factor;
                  g.accumulate(s.inputs[0], buf.data());
                });
  }

  // Gradient passes only where lo < a < hi strictly.
  Var clamp(Var a, T lo, T hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    Tensor<T> out = value(a);
    clip_inplace(out.data(), lo, hi);
    return push("clamp", {a}, std::move(out), any_grad({a}),
                [lo, hi](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  const Tensor<T>& A = g.nodes_[s.inputs[0]].value;
                  std::vector<T> buf(s.grad.size());
                  for (std::size_t i = 0; i < buf.size(); ++i) {
                    buf[i] = (A[i] > lo && A[i] < hi) ? s.grad[i] : T{0};
                  }
                  g.accumulate(s.inputs[0], buf.data());
                });
  }

  Var relu(Var a) {
    Tensor<T> out = value(a);
    for (T& v : out.data()) v = v > T{0} ? v : T{0};
    return push("relu", {a}, std::move(out), any_grad({a}),
                [](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<T> buf(s.grad.size());
                  for (std::size_t i = 0; i < buf.size(); ++i) {
                    buf[i] = s.value[i] > T{0} ? s.grad[i] : T{0};
                  }
                  g.accumulate(s.inputs[0], buf.data());
                });
  }

  // (N, C, H, W) -> (N, C, H/k, W/k), floor division.
  Var maxpool2d(Var a, int k) {
    const Tensor<T>& A = value(a);
    if (A.rank() != 4 || k < 1 || A.dim(2) < k || A.dim(3) < k) {
      throw std::invalid_argument("maxpool2d: bad input shape " +
                                  shape_string(A.shape()));
    }
    kernels::PoolShape ps{A.dim(0) * A.dim(1), A.dim(2), A.dim(3), k};
    Tensor<T> out({A.dim(0), A.dim(1), ps.out_h(), ps.out_w()});
    auto argmax = std::make_shared<std::vector<int>>(out.size());
    kernels::parallel::maxpool_forward(ps, A.ptr(), out.ptr(), argmax->data());
    return push("maxpool2d", {a}, std::move(out), any_grad({a}),
                [ps, argmax](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<T> dx(g.nodes_[s.inputs[0]].value.size());
                  kernels::parallel::maxpool_backward(ps, argmax->data(),
                                                      s.grad.ptr(), dx.data());
                  g.accumulate(s.inputs[0], dx.data());
                });
  }

  // x (N, C, H, W), w (O, C, kh, kw), b (O) or invalid; stride 1.
  Var conv2d(Var x, Var w, Var b, int pad) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& W = value(w);
    if (X.rank() != 4 || W.rank() != 4 || X.dim(1) != W.dim(1)) {
      throw std::invalid_argument("conv2d: incompatible shapes " +
                                  shape_string(X.shape()) + " * " +
                                  shape_string(W.shape()));
    }
    kernels::ConvShape cs{X.dim(0), X.dim(1), X.dim(2), X.dim(3),
                          W.dim(0), W.dim(2), W.dim(3), pad};
    if (cs.out_h() < 1 || cs.out_w() < 1) {
      throw std::invalid_argument("conv2d: empty output");
    }
    if (b.valid() && static_cast<int>(value(b).size()) != cs.out_ch) {
      throw std::invalid_argument("conv2d: bias size mismatch");
    }
    Tensor<T> out({cs.batch, cs.out_ch, cs.out_h(), cs.out_w()});
    auto col = std::make_shared<std::vector<T>>(cs.batch * cs.col_rows() *
                                                cs.col_cols());
    kernels::parallel::conv2d_forward(cs, X.ptr(), W.ptr(),
                                      b.valid() ? value(b).ptr() : nullptr,
                                      out.ptr(), col->data());
    std::vector<Var> inputs{x, w};
    if (b.valid()) inputs.push_back(b);
    return push("conv2d", inputs, std::move(out), any_grad(inputs),
                [cs, col](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  const int ix = s.inputs[0], iw = s.inputs[1];
                  const int ib = s.inputs.size() > 2 ? s.inputs[2] : -1;
                  const bool gx = g.nodes_[ix].requires_grad;
                  const bool gw = g.nodes_[iw].requires_grad;
                  const bool gb = ib >= 0 && g.nodes_[ib].requires_grad;
                  std::vector<T> dx(gx ? g.nodes_[ix].value.size() : 0);
                  std::vector<T> dw(gw ? g.nodes_[iw].value.size() : 0);
                  std::vector<T> db(gb ? cs.out_ch : 0);
                  kernels::parallel::conv2d_backward(
                      cs, col->data(), g.nodes_[iw].value.ptr(), s.grad.ptr(),
                      gx ? dx.data() : nullptr, gw ? dw.data() : nullptr,
                      gb ? db.data() : nullptr);
                  if (gx) g.accumulate(ix, dx.data());
                  if (gw) g.accumulate(iw, dw.data());
                  if (gb) g.accumulate(ib, db.data());
                });
  }

  // Along the last axis of a rank-2 tensor.
  Var log_softmax(Var a) {
    const Tensor<T>& A = value(a);
    if (A.rank() != 2) throw std::invalid_argument("log_softmax: need rank 2");
    const int N = A.dim(0), K = A.dim(1);
    Tensor<T> out = A;
    for (int n = 0; n < N; ++n) {
      T* row = out.ptr() + static_cast<std::size_t>(n) * K;
      T mx = row[0];
      for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      double z = 0;
      for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - mx));
      const T lse = mx + static_cast<T>(std::log(z));
      for (int k = 0; k < K; ++k) row[k] -= lse;
    }
    return push("log_softmax", {a}, std::move(out), any_grad({a}),
                [N, K](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<T> dx(s.grad.size());
                  for (int n = 0; n < N; ++n) {
                    const T* gy = s.grad.ptr() + static_cast<std::size_t>(n) * K;
                    const T* y = s.value.ptr() + static_cast<std::size_t>(n) * K;
                    T total = 0;
                    for (int k = 0; k < K; ++k) total += gy[k];
                    for (int k = 0; k < K; ++k) {
                      dx[static_cast<std::size_t>(n) * K + k] =
                          gy[k] - std::exp(y[k]) * total;
                    }
                  }
                  g.accumulate(s.inputs[0], dx.data());
                });
  }

  // Mean over rows of -logp[n, target[n]].
  Var nll(Var logp, std::vector<int> targets) {
    const Tensor<T>& L = value(logp);
    if (L.rank() != 2 || static_cast<int>(targets.size()) != L.dim(0)) {
      throw std::invalid_argument("nll: target count does not match batch");
    }
    const int N = L.dim(0), K = L.dim(1);
    T acc = 0;
    for (int n = 0; n < N; ++n) {
      if (targets[n] < 0 || targets[n] >= K) {
        throw std::out_of_range("nll: target index out of range");
      }
      acc -= L[static_cast<std::size_t>(n) * K + targets[n]];
    }
    return push("nll", {logp}, Tensor<T>::scalar(acc / N), any_grad({logp}),
                [N, K, targets = std::move(targets)](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<T> dx(static_cast<std::size_t>(N) * K, T{0});
                  const T gs = s.grad[0] / static_cast<T>(N);
                  for (int n = 0; n < N; ++n) {
                    dx[static_cast<std::size_t>(n) * K + targets[n]] = -gs;
                  }
                  g.accumulate(s.inputs[0], dx.data());
                });
  }

  Var sum(Var a) {
    T acc = 0;
    for (T v : value(a).data()) acc += v;
    return push("sum", {a}, Tensor<T>::scalar(acc), any_grad({a}),
                [](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<T> dx(g.nodes_[s.inputs[0]].value.size(), s.grad[0]);
                  g.accumulate(s.inputs[0], dx.data());
                });
  }

  Var mean(Var a) {
    const std::size_t n = value(a).size();
    T acc = 0;
    for (T v : value(a).data()) acc += v;
    return push("mean", {a}, Tensor<T>::scalar(acc / static_cast<T>(n)),
                any_grad({a}), [n](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<T> dx(n, s.grad[0] / static_cast<T>(n));
                  g.accumulate(s.inputs[0], dx.data());
                });
  }

  Var reshape(Var a, Shape shape) {
    if (shape_size(shape) != value(a).size()) {
      throw std::invalid_argument("reshape: size mismatch");
    }
    return push("reshape", {a}, value(a).reshaped(std::move(shape)),
                any_grad({a}), [](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  g.accumulate(s.inputs[0], s.grad.ptr());
                });
  }

  // Multiplies channel c of an (N, C, ...) tensor by the constant mask[c].
  Var mask_channels(Var a, std::vector<T> mask) {
    const Tensor<T>& A = value(a);
    if (A.rank() < 2 || static_cast<int>(mask.size()) != A.dim(1)) {
      throw std::invalid_argument("mask_channels: mask size mismatch");
    }
    const int N = A.dim(0), C = A.dim(1);
    const std::size_t inner = A.size() / (static_cast<std::size_t>(N) * C);
    Tensor<T> out = A;
    apply_mask(out.ptr(), mask, N, C, inner);
    return push("mask_channels", {a}, std::move(out), any_grad({a}),
                [N, C, inner, mask = std::move(mask)](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<T> dx(s.grad.data().begin(), s.grad.data().end());
                  apply_mask(dx.data(), mask, N, C, inner);
                  g.accumulate(s.inputs[0], dx.data());
                });
  }

  // Escape hatch for differentiable stages defined outside the engine.
  Var custom(std::string op, std::vector<Var> inputs, Tensor<T> out,
             CustomBackward fn) {
    const bool rg = any_grad(inputs);
    return push(std::move(op), inputs, std::move(out), rg,
                [fn = std::move(fn)](Graph& g, int self) {
                  const Node& s = g.nodes_[self];
                  std::vector<Tensor<T>> gin;
                  gin.reserve(s.inputs.size());
                  for (int i : s.inputs) {
                    gin.push_back(g.nodes_[i].requires_grad
                                      ? Tensor<T>(g.nodes_[i].value.shape())
                                      : Tensor<T>());
                  }
                  fn(s.grad, gin);
                  for (std::size_t k = 0; k < s.inputs.size(); ++k) {
                    if (!gin[k].empty()) g.accumulate(s.inputs[k], gin[k].ptr());
                  }
                });
  }

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void(Graph&, int)> backward;
    std::string name;
  };

  static void apply_mask(T* p, const std::vector<T>& mask, int N, int C,
                         std::size_t inner) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T* q = p + (static_cast<std::size_t>(n) * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) q[i] *= mask[c];
      }
  }

  const Node& node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw std::out_of_range("Graph: invalid variable");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  Node& node(Var v) {
    return const_cast<Node&>(static_cast<const Graph&>(*this).node(v));
  }

  bool any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs) if (node(v).requires_grad) return true;
    return false;
  }
  bool any_grad(const std::vector<Var>& vs) const {
    for (Var v : vs) if (node(v).requires_grad) return true;
    return false;
  }

  void same_shape(Var a, Var b, const char* op) const {
    if (value(a).shape() != value(b).shape()) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_string(value(a).shape()) + " vs " +
                                  shape_string(value(b).shape()));
    }
  }

  Var push(std::string op, const std::vector<Var>& inputs, Tensor<T> value,
           bool requires_grad, std::function<void(Graph&, int)> backward,
           std::string name = {}) {
    const int id = static_cast<int>(nodes_.size());
    for (T v : value.data()) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw NonFiniteError(id, op, "forward: non-finite value produced by node " +
                                         std::to_string(id) + " (" + op + ")");
      }
    }
    Node n;
    n.op = std::move(op);
    for (Var v : inputs) n.inputs.push_back(v.id);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{id};
  }

  void accumulate(int id, const T* g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = Tensor<T>(n.value.shape(),
                         std::vector<T>(g, g + n.value.size()));
      return;
    }
    T* d = n.grad.ptr();
    for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += g[i];
  }

  std::vector<Node> nodes_;
};

}  // namespace bdlab::ag

#endif  // BDLAB_AUTOGRAD_GRAPH_H_
