// SPDX-License-Identifier: Apache-2.0
#include "ctseq/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctseq/autodiff/params.hpp"

namespace ctseq::ad {

namespace {

std::string binary_msg(Op op, const Shape& a, const Shape& b) {
  return std::string(op_name(op)) + ": incompatible shapes " + shape_string(a) +
         " and " + shape_string(b);
}

std::vector<std::size_t> strides_for(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Strides of `in` indexed by the dims of `out`; zero on broadcast dims.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  if (in.empty()) return st;
  const auto base = strides_for(in);
  for (std::size_t d = 0; d < out.size(); ++d) st[d] = in[d] == 1 ? 0 : base[d];
  return st;
}

bool broadcast_shape(const Shape& a, const Shape& b, Shape& out) {
  if (a == b) {
    out = a;
    return true;
  }
  if (a.empty()) {
    out = b;
    return true;
  }
  if (b.empty()) {
    out = a;
    return true;
  }
  if (a.size() != b.size()) return false;
  out.resize(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] == b[d] || b[d] == 1) {
      out[d] = a[d];
    } else if (a[d] == 1) {
      out[d] = b[d];
    } else {
      return false;
    }
  }
  return true;
}

// Calls f(out_index, a_index, b_index) over every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = shape_size(out);
  if (out.empty()) {
    if (n) f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Sums `grad` (shaped like out) down to `target`, which broadcast into out.
Tensor reduce_to(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  Tensor r(target, 0.0);
  const auto st = broadcast_strides(target, grad.shape());
  const std::vector<std::size_t> zero(grad.rank(), 0);
  for_each_broadcast(grad.shape(), st, zero,
                     [&](std::size_t o, std::size_t it, std::size_t) {
                       r[it] += grad[o];
                     });
  return r;
}

void accumulate(std::vector<Tensor>& grads, std::vector<std::uint8_t>& has,
                NodeId id, Tensor contribution) {
  auto& slot = grads[id.index];
  if (!has[id.index]) {
    slot = std::move(contribution);
    has[id.index] = 1;
    return;
  }
  auto dst = slot.data();
  auto src = contribution.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::size_t normalize_axis(int axis, std::size_t rank, Op op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op_name(op)) + ": axis " +
                     std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit p;
  for (std::size_t d = 0; d < axis; ++d) p.outer *= s[d];
  p.axis = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) p.inner *= s[d];
  return p;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::softplus: return "softplus";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::square: return "square";
    case Op::relu: return "relu";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::broadcast: return "broadcast";
    case Op::scale: return "scale";
    case Op::lincomb: return "lincomb";
    case Op::log_softmax: return "log_softmax";
  }
  return "unknown";
}

void Graph::set_default_strict(bool strict) { default_strict_ = strict; }

NodeId Graph::push(Node node) {
  if (strict_ && !node.value.all_finite()) {
    throw NumericalError(std::string(op_name(node.op)) +
                         ": non-finite output of shape " +
                         shape_string(node.value.shape()) + " at node " +
                         std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::parameter(ParamId id, const Tensor& value) {
  if (auto it = param_nodes_.find(id.index); it != param_nodes_.end()) {
    return it->second;
  }
  Node n;
  n.value = value;
  n.requires_grad = true;
  n.is_param = true;
  n.param = id;
  const NodeId nid = push(std::move(n));
  param_nodes_.emplace(id.index, nid);
  return nid;
}

NodeId Graph::param(ParamId id) {
  if (!store_) throw std::logic_error("graph: no parameter store attached");
  return parameter(id, store_->value(id));
}

NodeId Graph::forward(Op op, std::span<const NodeId> inputs, const OpAttr& attr) {
  auto in = [&](std::size_t i) -> const Tensor& {
    return nodes_[inputs[i].index].value;
  };
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(op_name(op)) + ": expected " +
                       std::to_string(n) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
  };

  Node node;
  node.op = op;
  node.inputs.assign(inputs.begin(), inputs.end());
  node.attr = attr;
  for (NodeId i : inputs) node.requires_grad |= nodes_[i.index].requires_grad;

  switch (op) {
    case Op::leaf:
      throw std::logic_error("forward: leaf nodes come from constant()/parameter()");

    case Op::matmul: {
      need(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError(binary_msg(op, a.shape(), b.shape()));
      }
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      Tensor c(Shape{m, n}, 0.0);
      const double* ap = a.data().data();
      const double* bp = b.data().data();
      double* cp = c.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        double* crow = cp + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ap[i * k + p];
          const double* brow = bp + p * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
      node.value = std::move(c);
      break;
    }

    case Op::add:
    case Op::sub:
    case Op::mul: {
      need(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Shape out;
      if (!broadcast_shape(a.shape(), b.shape(), out)) {
        throw ShapeError(binary_msg(op, a.shape(), b.shape()));
      }
      Tensor c(out);
      auto apply = [op](double x, double y) {
        return op == Op::add ? x + y : op == Op::sub ? x - y : x * y;
      };
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = apply(a[i], b[i]);
      } else {
        for_each_broadcast(out, broadcast_strides(a.shape(), out),
                           broadcast_strides(b.shape(), out),
                           [&](std::size_t o, std::size_t ia, std::size_t ib) {
                             c[o] = apply(a[ia], b[ib]);
                           });
      }
      node.value = std::move(c);
      break;
    }

    case Op::concat: {
      if (inputs.empty()) throw ShapeError("concat: no inputs");
      const Shape& s0 = in(0).shape();
      const std::size_t axis = normalize_axis(attr.axis, s0.size(), op);
      Shape out = s0;
      out[axis] = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Shape& si = in(i).shape();
        bool ok = si.size() == s0.size();
        for (std::size_t d = 0; ok && d < si.size(); ++d) {
          ok = d == axis || si[d] == s0[d];
        }
        if (!ok) throw ShapeError(binary_msg(op, s0, si));
        out[axis] += si[axis];
      }
      Tensor c(out);
      const AxisSplit po = split_at(out, axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = in(i);
        const std::size_t chunk = t.dim(axis) * po.inner;
        for (std::size_t o = 0; o < po.outer; ++o) {
          std::copy_n(t.data().begin() + o * chunk, chunk,
                      c.data().begin() + o * po.axis * po.inner + offset);
        }
        offset += chunk;
      }
      node.value = std::move(c);
      node.attr.axis = static_cast<int>(axis);
      break;
    }

    case Op::slice: {
      need(1);
      const Tensor& a = in(0);
      const std::size_t axis = normalize_axis(attr.axis, a.rank(), op);
      if (attr.extent == 0 || attr.begin + attr.extent > a.dim(axis)) {
        throw ShapeError("slice: range [" + std::to_string(attr.begin) + ", " +
                         std::to_string(attr.begin + attr.extent) +
                         ") exceeds axis " + std::to_string(axis) + " of " +
                         shape_string(a.shape()));
      }
      Shape out = a.shape();
      out[axis] = attr.extent;
      Tensor c(out);
      const AxisSplit pa = split_at(a.shape(), axis);
      const std::size_t chunk = attr.extent * pa.inner;
      for (std::size_t o = 0; o < pa.outer; ++o) {
        std::copy_n(a.data().begin() + (o * pa.axis + attr.begin) * pa.inner,
                    chunk, c.data().begin() + o * chunk);
      }
      node.value = std::move(c);
      node.attr.axis = static_cast<int>(axis);
      break;
    }

    case Op::tanh:
      need(1);
      node.value = map_unary(in(0), [](double x) { return std::tanh(x); });
      break;
    case Op::sigmoid:
      need(1);
      node.value = map_unary(in(0), stable_sigmoid);
      break;
    case Op::softplus:
      need(1);
      node.value = map_unary(in(0), stable_softplus);
      break;
    case Op::exp:
      need(1);
      node.value = map_unary(in(0), [](double x) { return std::exp(x); });
      break;
    case Op::log:
      need(1);
      node.value = map_unary(in(0), [](double x) { return std::log(x); });
      break;
    case Op::square:
      need(1);
      node.value = map_unary(in(0), [](double x) { return x * x; });
      break;
    case Op::relu:
      need(1);
      node.value = map_unary(in(0), [](double x) { return x > 0 ? x : 0.0; });
      break;

    case Op::sum:
    case Op::mean: {
      need(1);
      const Tensor& a = in(0);
      if (attr.axis == -1) {
        double s = 0.0;
        for (double v : a.data()) s += v;
        if (op == Op::mean) s /= static_cast<double>(std::max<std::size_t>(a.size(), 1));
        node.value = Tensor::scalar(s);
        break;
      }
      const std::size_t axis = normalize_axis(attr.axis, a.rank(), op);
      const AxisSplit pa = split_at(a.shape(), axis);
      Shape out = a.shape();
      out[axis] = 1;
      Tensor c(out, 0.0);
      for (std::size_t o = 0; o < pa.outer; ++o) {
        for (std::size_t k = 0; k < pa.axis; ++k) {
          for (std::size_t i = 0; i < pa.inner; ++i) {
            c[o * pa.inner + i] += a[(o * pa.axis + k) * pa.inner + i];
          }
        }
      }
      if (op == Op::mean) {
        for (double& v : c.data()) v /= static_cast<double>(pa.axis);
      }
      node.value = std::move(c);
      node.attr.axis = static_cast<int>(axis);
      break;
    }

    case Op::broadcast: {
      need(1);
      const Tensor& a = in(0);
      Shape out;
      if (!broadcast_shape(a.shape(), attr.target, out) || out != attr.target) {
        throw ShapeError(binary_msg(op, a.shape(), attr.target));
      }
      Tensor c(out);
      const std::vector<std::size_t> zero(out.size(), 0);
      for_each_broadcast(out, broadcast_strides(a.shape(), out), zero,
                         [&](std::size_t o, std::size_t ia, std::size_t) {
                           c[o] = a[ia];
                         });
      node.value = std::move(c);
      break;
    }

    case Op::scale: {
      need(1);
      const double s = attr.scalar;
      node.value = map_unary(in(0), [s](double x) { return s * x; });
      break;
    }

    case Op::lincomb: {
      if (inputs.empty() || attr.coeffs.size() != inputs.size()) {
        throw ShapeError("lincomb: " + std::to_string(inputs.size()) +
                         " terms but " + std::to_string(attr.coeffs.size()) +
                         " coefficients");
      }
      const Shape& s0 = in(0).shape();
      Tensor c(s0, 0.0);
      for (std::size_t t = 0; t < inputs.size(); ++t) {
        const Tensor& x = in(t);
        if (x.shape() != s0) throw ShapeError(binary_msg(op, s0, x.shape()));
        const double w = attr.coeffs[t];
        if (w == 0.0) continue;
        if (w == 1.0) {
          for (std::size_t i = 0; i < c.size(); ++i) c[i] += x[i];
        } else {
          for (std::size_t i = 0; i < c.size(); ++i) c[i] += w * x[i];
        }
      }
      node.value = std::move(c);
      break;
    }

    case Op::log_softmax: {
      need(1);
      const Tensor& a = in(0);
      if (a.rank() != 2) {
        throw ShapeError("log_softmax: expects rank-2 input, got " +
                         shape_string(a.shape()));
      }
      Tensor c(a.shape());
      const std::size_t n = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double mx = a.at(r, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.at(r, j));
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(a.at(r, j) - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) c.at(r, j) = a.at(r, j) - lse;
      }
      node.value = std::move(c);
      break;
    }
  }
  return push(std::move(node));
}

void Graph::backprop_node(const Node& node, const Tensor& grad,
                          std::vector<Tensor>& grads,
                          std::vector<std::uint8_t>& has) const {
  auto in = [&](std::size_t i) -> const Tensor& {
    return nodes_[node.inputs[i].index].value;
  };
  auto wants = [&](std::size_t i) {
    return nodes_[node.inputs[i].index].requires_grad;
  };
  const Tensor& y = node.value;

  auto unary = [&](auto dfdx) {
    if (!wants(0)) return;
    const Tensor& x = in(0);
    Tensor g(x.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad[i] * dfdx(x[i], y[i]);
    accumulate(grads, has, node.inputs[0], std::move(g));
  };

  switch (node.op) {
    case Op::leaf:
      return;

    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (wants(0)) {
        Tensor ga(a.shape(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = grad.data().data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b.data().data() + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + p] = s;
          }
        }
        accumulate(grads, has, node.inputs[0], std::move(ga));
      }
      if (wants(1)) {
        Tensor gb(b.shape(), 0.0);
        double* gbp = gb.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = grad.data().data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            double* dst = gbp + p * n;
            for (std::size_t j = 0; j < n; ++j) dst[j] += av * grow[j];
          }
        }
        accumulate(grads, has, node.inputs[1], std::move(gb));
      }
      return;
    }

    case Op::add:
    case Op::sub: {
      if (wants(0)) accumulate(grads, has, node.inputs[0], reduce_to(grad, in(0).shape()));
      if (wants(1)) {
        Tensor g = reduce_to(grad, in(1).shape());
        if (node.op == Op::sub) {
          for (double& v : g.data()) v = -v;
        }
        accumulate(grads, has, node.inputs[1], std::move(g));
      }
      return;
    }

    case Op::mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() == b.shape()) {
        if (wants(0)) {
          Tensor g(a.shape());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad[i] * b[i];
          accumulate(grads, has, node.inputs[0], std::move(g));
        }
        if (wants(1)) {
          Tensor g(b.shape());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad[i] * a[i];
          accumulate(grads, has, node.inputs[1], std::move(g));
        }
        return;
      }
      const Shape& out = y.shape();
      const auto sa = broadcast_strides(a.shape(), out);
      const auto sb = broadcast_strides(b.shape(), out);
      if (wants(0)) {
        Tensor g(a.shape(), 0.0);
        for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
          g[ia] += grad[o] * b[ib];
        });
        accumulate(grads, has, node.inputs[0], std::move(g));
      }
      if (wants(1)) {
        Tensor g(b.shape(), 0.0);
        for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
          g[ib] += grad[o] * a[ia];
        });
        accumulate(grads, has, node.inputs[1], std::move(g));
      }
      return;
    }

    case Op::concat: {
      const std::size_t axis = static_cast<std::size_t>(node.attr.axis);
      const AxisSplit po = split_at(y.shape(), axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const Tensor& t = in(i);
        const std::size_t chunk = t.dim(axis) * po.inner;
        if (wants(i)) {
          Tensor g(t.shape());
          for (std::size_t o = 0; o < po.outer; ++o) {
            std::copy_n(grad.data().begin() + o * po.axis * po.inner + offset,
                        chunk, g.data().begin() + o * chunk);
          }
          accumulate(grads, has, node.inputs[i], std::move(g));
        }
        offset += chunk;
      }
      return;
    }

    case Op::slice: {
      if (!wants(0)) return;
      const Tensor& a = in(0);
      const std::size_t axis = static_cast<std::size_t>(node.attr.axis);
      const AxisSplit pa = split_at(a.shape(), axis);
      const std::size_t chunk = node.attr.extent * pa.inner;
      Tensor g(a.shape(), 0.0);
      for (std::size_t o = 0; o < pa.outer; ++o) {
        std::copy_n(grad.data().begin() + o * chunk, chunk,
                    g.data().begin() + (o * pa.axis + node.attr.begin) * pa.inner);
      }
      accumulate(grads, has, node.inputs[0], std::move(g));
      return;
    }

    case Op::tanh:
      unary([](double, double t) { return 1.0 - t * t; });
      return;
    case Op::sigmoid:
      unary([](double, double s) { return s * (1.0 - s); });
      return;
    case Op::softplus:
      unary([](double x, double) { return stable_sigmoid(x); });
      return;
    case Op::exp:
      unary([](double, double e) { return e; });
      return;
    case Op::log:
      unary([](double x, double) { return 1.0 / x; });
      return;
    case Op::square:
      unary([](double x, double) { return 2.0 * x; });
      return;
    case Op::relu:
      unary([](double x, double) { return x > 0 ? 1.0 : 0.0; });
      return;
    case Op::scale: {
      const double s = node.attr.scalar;
      unary([s](double, double) { return s; });
      return;
    }

    case Op::sum:
    case Op::mean: {
      if (!wants(0)) return;
      const Tensor& a = in(0);
      Tensor g(a.shape());
      if (y.rank() == 0) {
        double v = grad[0];
        if (node.op == Op::mean) v /= static_cast<double>(std::max<std::size_t>(a.size(), 1));
        g.fill(v);
      } else {
        const std::size_t axis = static_cast<std::size_t>(node.attr.axis);
        const AxisSplit pa = split_at(a.shape(), axis);
        const double div = node.op == Op::mean ? static_cast<double>(pa.axis) : 1.0;
        for (std::size_t o = 0; o < pa.outer; ++o) {
          for (std::size_t k = 0; k < pa.axis; ++k) {
            for (std::size_t i = 0; i < pa.inner; ++i) {
              g[(o * pa.axis + k) * pa.inner + i] = grad[o * pa.inner + i] / div;
            }
          }
        }
      }
      accumulate(grads, has, node.inputs[0], std::move(g));
      return;
    }

    case Op::broadcast:
      if (wants(0)) accumulate(grads, has, node.inputs[0], reduce_to(grad, in(0).shape()));
      return;

    case Op::lincomb:
      for (std::size_t t = 0; t < node.inputs.size(); ++t) {
        const double w = node.attr.coeffs[t];
        if (!wants(t) || w == 0.0) continue;
        Tensor g(grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = w * grad[i];
        accumulate(grads, has, node.inputs[t], std::move(g));
      }
      return;

    case Op::log_softmax: {
      if (!wants(0)) return;
      Tensor g(y.shape());
      const std::size_t n = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += grad.at(r, j);
        for (std::size_t j = 0; j < n; ++j) {
          g.at(r, j) = grad.at(r, j) - std::exp(y.at(r, j)) * gs;
        }
      }
      accumulate(grads, has, node.inputs[0], std::move(g));
      return;
    }
  }
}

Gradients Graph::backward(NodeId loss) const {
  const Tensor& lv = value(loss);
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_string(lv.shape()));
  }
  std::vector<Tensor> grads(loss.index + 1);
  std::vector<std::uint8_t> has(loss.index + 1, 0);
  grads[loss.index] = Tensor(lv.shape(), 1.0);
  has[loss.index] = 1;

  Gradients out;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.requires_grad) continue;
    if (node.is_param) {
      if (has[i]) {
        out.emplace(node.param, std::move(grads[i]));
      } else {
        out.emplace(node.param, Tensor(node.value.shape(), 0.0));
      }
      continue;
    }
    if (!has[i]) continue;
    backprop_node(node, grads[i], grads, has);
    grads[i] = Tensor();  // release as we go
  }
  // Parameters registered after the loss node still get a (zero) entry.
  for (const auto& [pid, nid] : param_nodes_) {
    if (nid.index > loss.index) {
      out.emplace(ParamId{pid}, Tensor(nodes_[nid.index].value.shape(), 0.0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Var wrappers

namespace {

Var apply(Op op, std::initializer_list<Var> ins, const OpAttr& attr = {}) {
  Graph& g = ins.begin()->graph();
  std::vector<NodeId> ids;
  ids.reserve(ins.size());
  for (const Var& v : ins) {
    if (&v.graph() != &g) throw std::logic_error("ops across different graphs");
    ids.push_back(v.id());
  }
  return Var(&g, g.forward(op, ids, attr));
}

}  // namespace

Var constant(Graph& g, Tensor value) { return Var(&g, g.constant(std::move(value))); }
Var param(Graph& g, ParamId id) { return Var(&g, g.param(id)); }

Var matmul(Var a, Var b) { return apply(Op::matmul, {a, b}); }
Var operator+(Var a, Var b) { return apply(Op::add, {a, b}); }
Var operator-(Var a, Var b) { return apply(Op::sub, {a, b}); }
Var operator*(Var a, Var b) { return apply(Op::mul, {a, b}); }
Var operator*(double c, Var a) { return scale(a, c); }
Var operator-(Var a) { return scale(a, -1.0); }

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph& g = parts.front().graph();
  std::vector<NodeId> ids;
  ids.reserve(parts.size());
  for (const Var& v : parts) ids.push_back(v.id());
  OpAttr attr;
  attr.axis = axis;
  return Var(&g, g.forward(Op::concat, ids, attr));
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, int axis, std::size_t begin, std::size_t extent) {
  OpAttr attr;
  attr.axis = axis;
  attr.begin = begin;
  attr.extent = extent;
  return apply(Op::slice, {a}, attr);
}

Var tanh(Var a) { return apply(Op::tanh, {a}); }
Var sigmoid(Var a) { return apply(Op::sigmoid, {a}); }
Var softplus(Var a) { return apply(Op::softplus, {a}); }
Var exp(Var a) { return apply(Op::exp, {a}); }
Var log(Var a) { return apply(Op::log, {a}); }
Var square(Var a) { return apply(Op::square, {a}); }
Var relu(Var a) { return apply(Op::relu, {a}); }

Var sum(Var a, int axis) {
  OpAttr attr;
  attr.axis = axis;
  return apply(Op::sum, {a}, attr);
}

Var mean(Var a, int axis) {
  OpAttr attr;
  attr.axis = axis;
  return apply(Op::mean, {a}, attr);
}

Var broadcast(Var a, Shape target) {
  OpAttr attr;
  attr.target = std::move(target);
  return apply(Op::broadcast, {a}, attr);
}

Var scale(Var a, double c) {
  OpAttr attr;
  attr.scalar = c;
  return apply(Op::scale, {a}, attr);
}

Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    throw ShapeError("lincomb: " + std::to_string(terms.size()) +
                     " terms but " + std::to_string(coeffs.size()) +
                     " coefficients");
  }
  Graph& g = terms.front().graph();
  std::vector<NodeId> ids;
  OpAttr attr;
  ids.reserve(terms.size());
  attr.coeffs.reserve(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    // Zero-weight terms contribute nothing; leaving them off keeps the tape small.
    if (coeffs[i] == 0.0 && i != 0) continue;
    ids.push_back(terms[i].id());
    attr.coeffs.push_back(coeffs[i]);
  }
  return Var(&g, g.forward(Op::lincomb, ids, attr));
}

Var log_softmax(Var a) { return apply(Op::log_softmax, {a}); }

}  // namespace ctseq::ad
