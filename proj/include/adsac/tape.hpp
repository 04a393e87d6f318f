#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "adsac/matrix.hpp"

namespace adsac::nn {

// Reverse-mode automatic differentiation over a dynamically recorded graph.
// Every operation appends a node holding its result; append order is a
// topological order, so the backward sweep is a single reverse pass.
//
// Matrices are batch-major: row i of an activation is sample i.
class Tape {
 public:
  using NodeId = std::int32_t;

  enum class Op : std::uint8_t {
    leaf,
    linear,         // (x, W, b): x(n,in), W(out,in), b(1,out) -> x W^T + b
    matmul,         // (a, b) -> a b
    add,
    sub,
    hadamard,
    scale,          // aux_scalar * a
    relu,
    log,
    row_softmax,    // softmax independently per row
    hstack,         // concatenate along columns
    repeat_rows,    // (1,m) -> (aux_int,m)
    rowwise_dot,    // (a, b) same shape -> (n,1)
    col_broadcast_mul,  // (a(n,m), w(n,1)) -> a * w per row
    slice_col,      // column aux_int of a -> (n,1)
    select_cols,    // per-row column pick by aux_indices -> (n,1)
    row_sum,        // (n,m) -> (n,1)
    sum_all,        // -> (1,1)
    mean_all,       // -> (1,1)
  };

  void clear() {
    nodes_.clear();
    parents_.clear();
  }

  bool empty() const { return nodes_.empty(); }
  int size() const { return static_cast<int>(nodes_.size()); }

  const Matrix& value(NodeId id) const { return node(id).value; }

  // Gradient of the last backward() root with respect to this node.
  const Matrix& grad(NodeId id) const {
    const Node& nd = node(id);
    if (!nd.requires_grad) throw std::logic_error("Tape::grad: node does not require gradients");
    return nd.grad;
  }

  NodeId constant(Matrix v) { return push(Op::leaf, std::move(v), {}, false); }

  NodeId leaf(Matrix v, bool requires_grad) {
    return push(Op::leaf, std::move(v), {}, requires_grad);
  }

  NodeId linear(NodeId x, NodeId w, NodeId b) {
    const Matrix& xv = value(x);
    const Matrix& wv = value(w);
    const Matrix& bv = value(b);
    check_shape(xv.cols == wv.cols && bv.rows == 1 && bv.cols == wv.rows, "Tape::linear");
    Matrix out(xv.rows, wv.rows);
    gemm(false, true, 1.0, xv, wv, 0.0, out);
    for (int i = 0; i < out.rows; ++i) {
      double* oi = out.row_ptr(i);
      for (int j = 0; j < out.cols; ++j) oi[j] += bv.data[j];
    }
    return push(Op::linear, std::move(out), {x, w, b});
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    check_shape(av.cols == bv.rows, "Tape::matmul");
    Matrix out(av.rows, bv.cols);
    gemm(false, false, 1.0, av, bv, 0.0, out);
    return push(Op::matmul, std::move(out), {a, b});
  }

  NodeId add(NodeId a, NodeId b) { return binary_elementwise(Op::add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary_elementwise(Op::sub, a, b); }
  NodeId hadamard(NodeId a, NodeId b) { return binary_elementwise(Op::hadamard, a, b); }

  NodeId scale(NodeId a, double factor) {
    Matrix out = value(a);
    for (double& x : out.data) x *= factor;
    NodeId id = push(Op::scale, std::move(out), {a});
    node(id).aux_scalar = factor;
    return id;
  }

  NodeId relu(NodeId a) {
    Matrix out = value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return push(Op::relu, std::move(out), {a});
  }

  NodeId log(NodeId a) {
    Matrix out = value(a);
    for (double& x : out.data) x = std::log(x);
    return push(Op::log, std::move(out), {a});
  }

  NodeId row_softmax(NodeId a) {
    Matrix out = value(a);
    for (int i = 0; i < out.rows; ++i) {
      double* r = out.row_ptr(i);
      double mx = r[0];
      for (int j = 1; j < out.cols; ++j) mx = std::max(mx, r[j]);
      double sum = 0.0;
      for (int j = 0; j < out.cols; ++j) {
        r[j] = std::exp(r[j] - mx);
        sum += r[j];
      }
      for (int j = 0; j < out.cols; ++j) r[j] /= sum;
    }
    return push(Op::row_softmax, std::move(out), {a});
  }

  NodeId hstack(std::span<const NodeId> parts) {
    if (parts.empty()) throw std::logic_error("Tape::hstack: no inputs");
    const int n = value(parts[0]).rows;
    int total = 0;
    for (NodeId p : parts) {
      check_shape(value(p).rows == n, "Tape::hstack");
      total += value(p).cols;
    }
    Matrix out(n, total);
    int off = 0;
    for (NodeId p : parts) {
      const Matrix& v = value(p);
      for (int i = 0; i < n; ++i) {
        const double* src = v.row_ptr(i);
        double* dst = out.row_ptr(i) + off;
        for (int j = 0; j < v.cols; ++j) dst[j] = src[j];
      }
      off += v.cols;
    }
    return push(Op::hstack, std::move(out), parts);
  }

  NodeId repeat_rows(NodeId a, int n) {
    const Matrix& v = value(a);
    check_shape(v.rows == 1, "Tape::repeat_rows");
    Matrix out(n, v.cols);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < v.cols; ++j) out.at(i, j) = v.data[j];
    NodeId id = push(Op::repeat_rows, std::move(out), {a});
    node(id).aux_int = n;
    return id;
  }

  NodeId rowwise_dot(NodeId a, NodeId b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    check_shape(av.same_shape(bv), "Tape::rowwise_dot");
    Matrix out(av.rows, 1);
    for (int i = 0; i < av.rows; ++i) {
      const double* ra = av.row_ptr(i);
      const double* rb = bv.row_ptr(i);
      double acc = 0.0;
      for (int j = 0; j < av.cols; ++j) acc += ra[j] * rb[j];
      out.data[i] = acc;
    }
    return push(Op::rowwise_dot, std::move(out), {a, b});
  }

  NodeId col_broadcast_mul(NodeId a, NodeId w) {
    const Matrix& av = value(a);
    const Matrix& wv = value(w);
    check_shape(wv.cols == 1 && wv.rows == av.rows, "Tape::col_broadcast_mul");
    Matrix out = av;
    for (int i = 0; i < av.rows; ++i) {
      const double wi = wv.data[i];
      double* r = out.row_ptr(i);
      for (int j = 0; j < av.cols; ++j) r[j] *= wi;
    }
    return push(Op::col_broadcast_mul, std::move(out), {a, w});
  }

  NodeId slice_col(NodeId a, int col) {
    const Matrix& av = value(a);
    check_shape(col >= 0 && col < av.cols, "Tape::slice_col");
    Matrix out(av.rows, 1);
    for (int i = 0; i < av.rows; ++i) out.data[i] = av.at(i, col);
    NodeId id = push(Op::slice_col, std::move(out), {a});
    node(id).aux_int = col;
    return id;
  }

  NodeId select_cols(NodeId a, std::vector<int> indices) {
    const Matrix& av = value(a);
    check_shape(static_cast<int>(indices.size()) == av.rows, "Tape::select_cols");
    Matrix out(av.rows, 1);
    for (int i = 0; i < av.rows; ++i) {
      const int c = indices[i];
      check_shape(c >= 0 && c < av.cols, "Tape::select_cols index");
      out.data[i] = av.at(i, c);
    }
    NodeId id = push(Op::select_cols, std::move(out), {a});
    node(id).aux_indices = std::move(indices);
    return id;
  }

  NodeId row_sum(NodeId a) {
    const Matrix& av = value(a);
    Matrix out(av.rows, 1);
    for (int i = 0; i < av.rows; ++i) {
      const double* r = av.row_ptr(i);
      double acc = 0.0;
      for (int j = 0; j < av.cols; ++j) acc += r[j];
      out.data[i] = acc;
    }
    return push(Op::row_sum, std::move(out), {a});
  }

  NodeId sum_all(NodeId a) {
    double acc = 0.0;
    for (double x : value(a).data) acc += x;
    Matrix out(1, 1);
    out.data[0] = acc;
    return push(Op::sum_all, std::move(out), {a});
  }

  NodeId mean_all(NodeId a) {
    const Matrix& av = value(a);
    double acc = 0.0;
    for (double x : av.data) acc += x;
    Matrix out(1, 1);
    out.data[0] = acc / static_cast<double>(av.size());
    return push(Op::mean_all, std::move(out), {a});
  }

  // Entropy of each row of a probability matrix: -sum_j p log p, as (n,1).
  // Rows must be strictly positive (softmax output qualifies).
  NodeId entropy_rows(NodeId probs) {
    return scale(row_sum(hadamard(probs, log(probs))), -1.0);
  }

  // Seeds d(root)/d(root) = 1 and sweeps the whole recorded graph in reverse,
  // accumulating gradients into every node that requires them.
  void backward(NodeId root) {
    if (nodes_.empty()) throw std::logic_error("Tape::backward: no forward pass recorded");
    Node& r = node(root);
    if (!r.value.is_scalar()) throw std::logic_error("Tape::backward: root must be a scalar");
    for (Node& nd : nodes_)
      if (nd.requires_grad) {
        nd.grad = Matrix(nd.value.rows, nd.value.cols);
      }
    if (!r.requires_grad) return;  // constant function: all parameter gradients stay zero
    r.grad.data[0] = 1.0;
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
      Node& nd = node(id);
      if (!nd.requires_grad || nd.op == Op::leaf) continue;
      backprop_node(id, nd);
    }
  }

 private:
  struct Node {
    Op op = Op::leaf;
    bool requires_grad = false;
    int parent_begin = 0;
    int parent_count = 0;
    double aux_scalar = 0.0;
    int aux_int = 0;
    std::vector<int> aux_indices;
    Matrix value;
    Matrix grad;
  };

  Node& node(NodeId id) {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
      throw std::logic_error("Tape: invalid node id");
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
      throw std::logic_error("Tape: invalid node id");
    return nodes_[static_cast<std::size_t>(id)];
  }

  NodeId push(Op op, Matrix value, std::span<const NodeId> parents, bool force_grad = false) {
    Node nd;
    nd.op = op;
    nd.value = std::move(value);
    nd.parent_begin = static_cast<int>(parents_.size());
    nd.parent_count = static_cast<int>(parents.size());
    nd.requires_grad = force_grad;
    for (NodeId p : parents) {
      parents_.push_back(p);
      if (node(p).requires_grad) nd.requires_grad = true;
    }
    nodes_.push_back(std::move(nd));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  NodeId push(Op op, Matrix value, std::initializer_list<NodeId> parents) {
    return push(op, std::move(value), std::span<const NodeId>(parents.begin(), parents.size()));
  }

  NodeId binary_elementwise(Op op, NodeId a, NodeId b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    check_shape(av.same_shape(bv), "Tape: elementwise op");
    Matrix out = av;
    const double* pb = bv.data.data();
    double* po = out.data.data();
    const std::size_t n = out.size();
    switch (op) {
      case Op::add:
        for (std::size_t i = 0; i < n; ++i) po[i] += pb[i];
        break;
      case Op::sub:
        for (std::size_t i = 0; i < n; ++i) po[i] -= pb[i];
        break;
      case Op::hadamard:
        for (std::size_t i = 0; i < n; ++i) po[i] *= pb[i];
        break;
      default:
        throw std::logic_error("Tape: not an elementwise op");
    }
    return push(op, std::move(out), {a, b});
  }

  NodeId parent(const Node& nd, int i) const { return parents_[nd.parent_begin + i]; }

  // Adds dst += grad contribution only when the parent participates in the sweep.
  Node* grad_target(const Node& nd, int i) {
    Node& p = node(parent(nd, i));
    return p.requires_grad ? &p : nullptr;
  }

  void backprop_node(NodeId, Node& nd) {
    const Matrix& g = nd.grad;
    switch (nd.op) {
      case Op::leaf:
        break;
      case Op::linear: {
        Node* px = grad_target(nd, 0);
        Node* pw = grad_target(nd, 1);
        Node* pb = grad_target(nd, 2);
        const Matrix& xv = node(parent(nd, 0)).value;
        const Matrix& wv = node(parent(nd, 1)).value;
        if (px) gemm(false, false, 1.0, g, wv, 1.0, px->grad);
        if (pw) gemm(true, false, 1.0, g, xv, 1.0, pw->grad);
        if (pb)
          for (int i = 0; i < g.rows; ++i) {
            const double* gi = g.row_ptr(i);
            for (int j = 0; j < g.cols; ++j) pb->grad.data[j] += gi[j];
          }
        break;
      }
      case Op::matmul: {
        Node* pa = grad_target(nd, 0);
        Node* pb = grad_target(nd, 1);
        const Matrix& av = node(parent(nd, 0)).value;
        const Matrix& bv = node(parent(nd, 1)).value;
        if (pa) gemm(false, true, 1.0, g, bv, 1.0, pa->grad);
        if (pb) gemm(true, false, 1.0, av, g, 1.0, pb->grad);
        break;
      }
      case Op::add: {
        for (int s = 0; s < 2; ++s)
          if (Node* p = grad_target(nd, s))
            for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g.data[i];
        break;
      }
      case Op::sub: {
        if (Node* p = grad_target(nd, 0))
          for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g.data[i];
        if (Node* p = grad_target(nd, 1))
          for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] -= g.data[i];
        break;
      }
      case Op::hadamard: {
        const Matrix& av = node(parent(nd, 0)).value;
        const Matrix& bv = node(parent(nd, 1)).value;
        if (Node* p = grad_target(nd, 0))
          for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g.data[i] * bv.data[i];
        if (Node* p = grad_target(nd, 1))
          for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g.data[i] * av.data[i];
        break;
      }
      case Op::scale: {
        if (Node* p = grad_target(nd, 0))
          for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] += nd.aux_scalar * g.data[i];
        break;
      }
      case Op::relu: {
        if (Node* p = grad_target(nd, 0))
          for (std::size_t i = 0; i < g.size(); ++i)
            if (nd.value.data[i] > 0.0) p->grad.data[i] += g.data[i];
        break;
      }
      case Op::log: {
        if (Node* p = grad_target(nd, 0)) {
          const Matrix& av = p->value;
          for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g.data[i] / av.data[i];
        }
        break;
      }
      case Op::row_softmax: {
        if (Node* p = grad_target(nd, 0)) {
          const Matrix& y = nd.value;
          for (int i = 0; i < y.rows; ++i) {
            const double* yi = y.row_ptr(i);
            const double* gi = g.row_ptr(i);
            double dot = 0.0;
            for (int j = 0; j < y.cols; ++j) dot += yi[j] * gi[j];
            double* pi = p->grad.row_ptr(i);
            for (int j = 0; j < y.cols; ++j) pi[j] += yi[j] * (gi[j] - dot);
          }
        }
        break;
      }
      case Op::hstack: {
        int off = 0;
        for (int s = 0; s < nd.parent_count; ++s) {
          Node& p = node(parent(nd, s));
          const int w = p.value.cols;
          if (p.requires_grad)
            for (int i = 0; i < g.rows; ++i) {
              const double* gi = g.row_ptr(i) + off;
              double* pi = p.grad.row_ptr(i);
              for (int j = 0; j < w; ++j) pi[j] += gi[j];
            }
          off += w;
        }
        break;
      }
      case Op::repeat_rows: {
        if (Node* p = grad_target(nd, 0))
          for (int i = 0; i < g.rows; ++i) {
            const double* gi = g.row_ptr(i);
            for (int j = 0; j < g.cols; ++j) p->grad.data[j] += gi[j];
          }
        break;
      }
      case Op::rowwise_dot: {
        const Matrix& av = node(parent(nd, 0)).value;
        const Matrix& bv = node(parent(nd, 1)).value;
        if (Node* p = grad_target(nd, 0))
          for (int i = 0; i < av.rows; ++i) {
            const double gi = g.data[i];
            const double* rb = bv.row_ptr(i);
            double* pi = p->grad.row_ptr(i);
            for (int j = 0; j < av.cols; ++j) pi[j] += gi * rb[j];
          }
        if (Node* p = grad_target(nd, 1))
          for (int i = 0; i < av.rows; ++i) {
            const double gi = g.data[i];
            const double* ra = av.row_ptr(i);
            double* pi = p->grad.row_ptr(i);
            for (int j = 0; j < av.cols; ++j) pi[j] += gi * ra[j];
          }
        break;
      }
      case Op::col_broadcast_mul: {
        const Matrix& av = node(parent(nd, 0)).value;
        const Matrix& wv = node(parent(nd, 1)).value;
        if (Node* p = grad_target(nd, 0))
          for (int i = 0; i < av.rows; ++i) {
            const double wi = wv.data[i];
            const double* gi = g.row_ptr(i);
            double* pi = p->grad.row_ptr(i);
            for (int j = 0; j < av.cols; ++j) pi[j] += wi * gi[j];
          }
        if (Node* p = grad_target(nd, 1))
          for (int i = 0; i < av.rows; ++i) {
            const double* gi = g.row_ptr(i);
            const double* ra = av.row_ptr(i);
            double acc = 0.0;
            for (int j = 0; j < av.cols; ++j) acc += gi[j] * ra[j];
            p->grad.data[i] += acc;
          }
        break;
      }
      case Op::slice_col: {
        if (Node* p = grad_target(nd, 0))
          for (int i = 0; i < g.rows; ++i) p->grad.at(i, nd.aux_int) += g.data[i];
        break;
      }
      case Op::select_cols: {
        if (Node* p = grad_target(nd, 0))
          for (int i = 0; i < g.rows; ++i) p->grad.at(i, nd.aux_indices[i]) += g.data[i];
        break;
      }
      case Op::row_sum: {
        if (Node* p = grad_target(nd, 0))
          for (int i = 0; i < p->value.rows; ++i) {
            const double gi = g.data[i];
            double* pi = p->grad.row_ptr(i);
            for (int j = 0; j < p->value.cols; ++j) pi[j] += gi;
          }
        break;
      }
      case Op::sum_all: {
        if (Node* p = grad_target(nd, 0)) {
          const double gi = g.data[0];
          for (double& x : p->grad.data) x += gi;
        }
        break;
      }
      case Op::mean_all: {
        if (Node* p = grad_target(nd, 0)) {
          const double gi = g.data[0] / static_cast<double>(p->value.size());
          for (double& x : p->grad.data) x += gi;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> parents_;
};

}  // namespace adsac::nn
