#include "muscle/graph.hpp"

#include <algorithm>
#include <cmath>

#include "muscle/kernels.hpp"

namespace muscle {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Input: return "input";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Multiply: return "multiply";
    case OpKind::Relu: return "relu";
    case OpKind::Softmax: return "softmax";
    case OpKind::Log: return "log";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Transpose: return "transpose";
    case OpKind::ClampMin: return "clamp_min";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Reshape: return "reshape";
  }
  return "?";
}

namespace {

long long numel_of(const std::vector<int>& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

bool is_suffix(const std::vector<int>& small, const std::vector<int>& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class Broadcast { Same, FirstSmall, SecondSmall };

// Trailing-suffix broadcast: the smaller operand repeats cyclically over
// the leading axes of the larger one.
Broadcast classify(const std::vector<int>& a, const std::vector<int>& b) {
  if (a == b) return Broadcast::Same;
  if (numel_of(b) == 1 || is_suffix(b, a)) return Broadcast::SecondSmall;
  if (numel_of(a) == 1 || is_suffix(a, b)) return Broadcast::FirstSmall;
  throw std::invalid_argument("incompatible shapes");
}

}  // namespace

int ComputeGraph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void ComputeGraph::check_id(int id) const {
  if (id < 0 || id >= node_count()) throw GraphError(id, "reference to nonexistent node");
}

int ComputeGraph::input(const std::string& name, std::vector<int> shape) {
  if (inputs_.count(name))
    throw GraphError(-1, "duplicate input name '" + name + "'");
  Tensor::checked_numel(shape);
  Node n{OpKind::Input, {}, std::move(shape), name, {}, 0.0, 1};
  int id = push(std::move(n));
  inputs_[name] = id;
  return id;
}

int ComputeGraph::constant(Tensor value) {
  if (!value.all_finite())
    throw GraphError(node_count(), "non-finite values in constant");
  std::vector<int> shape = value.shape;
  return push(Node{OpKind::Constant, {}, std::move(shape), "", std::move(value), 0.0, 1});
}

int ComputeGraph::matmul(int a, int b) {
  check_id(a);
  check_id(b);
  const auto& sa = shape(a);
  const auto& sb = shape(b);
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw GraphError(node_count(), "matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  return push(Node{OpKind::MatMul, {a, b}, {sa[0], sb[1]}, "", {}, 0.0, 1});
}

int ComputeGraph::add(int a, int b) {
  check_id(a);
  check_id(b);
  try {
    classify(shape(a), shape(b));
  } catch (const std::invalid_argument&) {
    throw GraphError(node_count(),
                     "add shape mismatch: " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
  }
  auto out = classify(shape(a), shape(b)) == Broadcast::FirstSmall ? shape(b) : shape(a);
  return push(Node{OpKind::Add, {a, b}, std::move(out), "", {}, 0.0, 1});
}

int ComputeGraph::multiply(int a, int b) {
  check_id(a);
  check_id(b);
  try {
    classify(shape(a), shape(b));
  } catch (const std::invalid_argument&) {
    throw GraphError(node_count(), "multiply shape mismatch: " + shape_str(shape(a)) + " vs " +
                                       shape_str(shape(b)));
  }
  auto out = classify(shape(a), shape(b)) == Broadcast::FirstSmall ? shape(b) : shape(a);
  return push(Node{OpKind::Multiply, {a, b}, std::move(out), "", {}, 0.0, 1});
}

int ComputeGraph::relu(int a) {
  check_id(a);
  return push(Node{OpKind::Relu, {a}, shape(a), "", {}, 0.0, 1});
}

int ComputeGraph::softmax(int a) {
  check_id(a);
  if (shape(a).empty()) throw GraphError(node_count(), "softmax needs rank >= 1");
  return push(Node{OpKind::Softmax, {a}, shape(a), "", {}, 0.0, 1});
}

int ComputeGraph::log(int a) {
  check_id(a);
  return push(Node{OpKind::Log, {a}, shape(a), "", {}, 0.0, 1});
}

int ComputeGraph::sum(int a) {
  check_id(a);
  return push(Node{OpKind::Sum, {a}, {1}, "", {}, 0.0, 1});
}

int ComputeGraph::mean(int a) {
  check_id(a);
  return push(Node{OpKind::Mean, {a}, {1}, "", {}, 0.0, 1});
}

int ComputeGraph::transpose(int a) {
  check_id(a);
  const auto& s = shape(a);
  if (s.size() != 2) throw GraphError(node_count(), "transpose needs rank 2, got " + shape_str(s));
  return push(Node{OpKind::Transpose, {a}, {s[1], s[0]}, "", {}, 0.0, 1});
}

int ComputeGraph::clamp_min(int a, double floor) {
  check_id(a);
  Node n{OpKind::ClampMin, {a}, shape(a), "", {}, floor, 1};
  return push(std::move(n));
}

int ComputeGraph::conv2d(int x, int kernel, int stride) {
  check_id(x);
  check_id(kernel);
  const auto& sx = shape(x);
  const auto& sk = shape(kernel);
  if (sx.size() != 4 || sk.size() != 4 || sx[3] != sk[2])
    throw GraphError(node_count(),
                     "conv2d shape mismatch: " + shape_str(sx) + " with kernel " + shape_str(sk));
  if (stride < 1) throw GraphError(node_count(), "conv2d stride must be >= 1");
  if (sk[0] > sx[1] || sk[1] > sx[2])
    throw GraphError(node_count(), "conv2d kernel larger than input");
  const int oh = (sx[1] - sk[0]) / stride + 1;
  const int ow = (sx[2] - sk[1]) / stride + 1;
  Node n{OpKind::Conv2d, {x, kernel}, {sx[0], oh, ow, sk[3]}, "", {}, 0.0, stride};
  return push(std::move(n));
}

int ComputeGraph::reshape(int a, std::vector<int> target) {
  check_id(a);
  if (Tensor::checked_numel(target) != numel_of(shape(a)))
    throw GraphError(node_count(), "reshape " + shape_str(shape(a)) + " to " +
                                       shape_str(target) + " changes element count");
  return push(Node{OpKind::Reshape, {a}, std::move(target), "", {}, 0.0, 1});
}

void ComputeGraph::set_output(int node) {
  check_id(node);
  output_ = node;
}

namespace {

void elementwise_binary(const Tensor& a, const Tensor& b, Tensor& out, bool mul) {
  const Broadcast bc = classify(a.shape, b.shape);
  const long long na = a.numel();
  const long long nb = b.numel();
  const long long n = std::max(na, nb);
  out.values.resize(static_cast<size_t>(n));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (bc == Broadcast::Same) {
    if (mul)
      for (long long i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    else
      for (long long i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  } else if (bc == Broadcast::SecondSmall) {
    if (mul)
      for (long long i = 0; i < n; ++i) po[i] = pa[i] * pb[i % nb];
    else
      for (long long i = 0; i < n; ++i) po[i] = pa[i] + pb[i % nb];
  } else {
    if (mul)
      for (long long i = 0; i < n; ++i) po[i] = pa[i % na] * pb[i];
    else
      for (long long i = 0; i < n; ++i) po[i] = pa[i % na] + pb[i];
  }
}

Tensor transpose2d(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

struct ForwardState {
  std::vector<Tensor> vals;
};

void eval_node(const ComputeGraph& g, int id, const Bindings& bindings, ForwardState& st) {
  const Node& n = g.node(id);
  Tensor& out = st.vals[static_cast<size_t>(id)];
  switch (n.kind) {
    case OpKind::Input: {
      auto it = bindings.find(n.name);
      if (it == bindings.end()) throw GraphError(id, "unbound input '" + n.name + "'");
      if (it->second.shape != n.shape)
        throw GraphError(id, "input '" + n.name + "' bound with shape " +
                                 shape_str(it->second.shape) + ", declared " + shape_str(n.shape));
      out = it->second;
      break;
    }
    case OpKind::Constant:
      out = n.value;
      break;
    case OpKind::MatMul: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      const Tensor& b = st.vals[static_cast<size_t>(n.args[1])];
      out = Tensor({a.rows(), b.cols()});
      kernels::matmul(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
      break;
    }
    case OpKind::Add:
    case OpKind::Multiply: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      const Tensor& b = st.vals[static_cast<size_t>(n.args[1])];
      out.shape = n.shape;
      elementwise_binary(a, b, out, n.kind == OpKind::Multiply);
      break;
    }
    case OpKind::Relu: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      out = Tensor(n.shape);
      for (long long i = 0; i < a.numel(); ++i)
        out.values[static_cast<size_t>(i)] = a.values[static_cast<size_t>(i)] > 0.0
                                                 ? a.values[static_cast<size_t>(i)]
                                                 : 0.0;
      break;
    }
    case OpKind::Softmax: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      const int c = a.shape.back();
      const int rows = static_cast<int>(a.numel() / c);
      out = Tensor(n.shape);
      kernels::softmax_rows(a.data(), out.data(), rows, c);
      break;
    }
    case OpKind::Log: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      out = Tensor(n.shape);
      for (long long i = 0; i < a.numel(); ++i)
        out.values[static_cast<size_t>(i)] = std::log(a.values[static_cast<size_t>(i)]);
      break;
    }
    case OpKind::Sum: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      double acc = 0.0;
      for (double v : a.values) acc += v;
      out = Tensor::scalar(acc);
      break;
    }
    case OpKind::Mean: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      double acc = 0.0;
      for (double v : a.values) acc += v;
      out = Tensor::scalar(acc / static_cast<double>(a.numel()));
      break;
    }
    case OpKind::Transpose:
      out = transpose2d(st.vals[static_cast<size_t>(n.args[0])]);
      break;
    case OpKind::ClampMin: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      out = Tensor(n.shape);
      for (long long i = 0; i < a.numel(); ++i)
        out.values[static_cast<size_t>(i)] =
            std::max(a.values[static_cast<size_t>(i)], n.floor);
      break;
    }
    case OpKind::Conv2d: {
      const Tensor& x = st.vals[static_cast<size_t>(n.args[0])];
      const Tensor& k = st.vals[static_cast<size_t>(n.args[1])];
      out = Tensor(n.shape);
      kernels::conv2d_forward(x.data(), k.data(), out.data(), x.dim(0), x.dim(1), x.dim(2),
                              x.dim(3), k.dim(0), k.dim(1), k.dim(3), n.stride);
      break;
    }
    case OpKind::Reshape: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      out.shape = n.shape;
      out.values = a.values;
      break;
    }
  }
  if (!out.all_finite())
    throw GraphError(id, std::string(op_name(n.kind)) + " produced non-finite values");
}

ForwardState forward(const ComputeGraph& g, const Bindings& bindings) {
  if (g.output() < 0) throw GraphError(-1, "graph has no output set");
  ForwardState st;
  st.vals.resize(static_cast<size_t>(g.node_count()));
  for (int id = 0; id < g.node_count(); ++id) eval_node(g, id, bindings, st);
  return st;
}

// Sum `delta` cyclically down to `n_small` elements (adjoint of the
// trailing-suffix broadcast).
void reduce_into(const Tensor& delta, Tensor& acc) {
  const long long nb = acc.numel();
  for (long long i = 0; i < delta.numel(); ++i)
    acc.values[static_cast<size_t>(i % nb)] += delta.values[static_cast<size_t>(i)];
}

struct BackwardState {
  std::vector<Tensor> adj;  // empty tensor = not yet touched

  Tensor& grab(const ComputeGraph& g, int id) {
    Tensor& t = adj[static_cast<size_t>(id)];
    if (t.shape.empty()) t = Tensor(g.shape(id));
    return t;
  }
};

void backward_node(const ComputeGraph& g, int id, const ForwardState& st, BackwardState& bs) {
  const Tensor& d = bs.adj[static_cast<size_t>(id)];
  if (d.shape.empty()) return;  // no downstream use
  const Node& n = g.node(id);
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Constant:
      break;
    case OpKind::MatMul: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      const Tensor& b = st.vals[static_cast<size_t>(n.args[1])];
      Tensor bt = transpose2d(b);
      Tensor at = transpose2d(a);
      Tensor da({a.rows(), a.cols()});
      Tensor db({b.rows(), b.cols()});
      kernels::matmul(d.data(), bt.data(), da.data(), d.rows(), d.cols(), bt.cols());
      kernels::matmul(at.data(), d.data(), db.data(), at.rows(), at.cols(), d.cols());
      Tensor& ga = bs.grab(g, n.args[0]);
      Tensor& gb = bs.grab(g, n.args[1]);
      for (long long i = 0; i < da.numel(); ++i)
        ga.values[static_cast<size_t>(i)] += da.values[static_cast<size_t>(i)];
      for (long long i = 0; i < db.numel(); ++i)
        gb.values[static_cast<size_t>(i)] += db.values[static_cast<size_t>(i)];
      break;
    }
    case OpKind::Add: {
      for (int side = 0; side < 2; ++side) {
        Tensor& ga = bs.grab(g, n.args[static_cast<size_t>(side)]);
        if (ga.numel() == d.numel())
          for (long long i = 0; i < d.numel(); ++i)
            ga.values[static_cast<size_t>(i)] += d.values[static_cast<size_t>(i)];
        else
          reduce_into(d, ga);
      }
      break;
    }
    case OpKind::Multiply: {
      const Tensor& a = st.vals[static_cast<size_t>(n.args[0])];
      const Tensor& b = st.vals[static_cast<size_t>(n.args[1])];
      Tensor& ga = bs.grab(g, n.args[0]);
      Tensor& gb = bs.grab(g, n.args[1]);
      const long long na = a.numel();
      const long long nb = b.numel();
      const long long nd = d.numel();
      for (long long i = 0; i < nd; ++i) {
        const double dv = d.values[static_cast<size_t>(i)];
        ga.values[static_cast<size_t>(i % na)] += dv * b.values[static_cast<size_t>(i % nb)];
        gb.values[static_cast<size_t>(i % nb)] += dv * a.values[static_cast<size_t>(i % na)];
      }
      break;
    }
    case OpKind::Relu: {
      const Tensor& x = st.vals[static_cast<size_t>(n.args[0])];
      Tensor& ga = bs.grab(g, n.args[0]);
      for (long long i = 0; i < d.numel(); ++i)
        if (x.values[static_cast<size_t>(i)] > 0.0)
          ga.values[static_cast<size_t>(i)] += d.values[static_cast<size_t>(i)];
      break;
    }
    case OpKind::Softmax: {
      const Tensor& y = st.vals[static_cast<size_t>(id)];
      Tensor& ga = bs.grab(g, n.args[0]);
      const int c = n.shape.back();
      const long long rows = y.numel() / c;
      for (long long r = 0; r < rows; ++r) {
        const double* yr = y.data() + r * c;
        const double* dr = d.data() + r * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += dr[j] * yr[j];
        double* gr = ga.data() + r * c;
        for (int j = 0; j < c; ++j) gr[j] += yr[j] * (dr[j] - dot);
      }
      break;
    }
    case OpKind::Log: {
      const Tensor& x = st.vals[static_cast<size_t>(n.args[0])];
      Tensor& ga = bs.grab(g, n.args[0]);
      for (long long i = 0; i < d.numel(); ++i)
        ga.values[static_cast<size_t>(i)] +=
            d.values[static_cast<size_t>(i)] / x.values[static_cast<size_t>(i)];
      break;
    }
    case OpKind::Sum: {
      Tensor& ga = bs.grab(g, n.args[0]);
      const double dv = d.values[0];
      for (auto& v : ga.values) v += dv;
      break;
    }
    case OpKind::Mean: {
      Tensor& ga = bs.grab(g, n.args[0]);
      const double dv = d.values[0] / static_cast<double>(ga.numel());
      for (auto& v : ga.values) v += dv;
      break;
    }
    case OpKind::Transpose: {
      Tensor& ga = bs.grab(g, n.args[0]);
      Tensor dt = transpose2d(d);
      for (long long i = 0; i < dt.numel(); ++i)
        ga.values[static_cast<size_t>(i)] += dt.values[static_cast<size_t>(i)];
      break;
    }
    case OpKind::ClampMin: {
      const Tensor& x = st.vals[static_cast<size_t>(n.args[0])];
      Tensor& ga = bs.grab(g, n.args[0]);
      for (long long i = 0; i < d.numel(); ++i)
        if (x.values[static_cast<size_t>(i)] > n.floor)
          ga.values[static_cast<size_t>(i)] += d.values[static_cast<size_t>(i)];
      break;
    }
    case OpKind::Conv2d: {
      const Tensor& x = st.vals[static_cast<size_t>(n.args[0])];
      const Tensor& k = st.vals[static_cast<size_t>(n.args[1])];
      Tensor dx(x.shape);
      Tensor dk(k.shape);
      kernels::conv2d_input_grad(d.data(), k.data(), dx.data(), x.dim(0), x.dim(1), x.dim(2),
                                 x.dim(3), k.dim(0), k.dim(1), k.dim(3), n.stride);
      kernels::conv2d_kernel_grad(d.data(), x.data(), dk.data(), x.dim(0), x.dim(1), x.dim(2),
                                  x.dim(3), k.dim(0), k.dim(1), k.dim(3), n.stride);
      Tensor& gx = bs.grab(g, n.args[0]);
      Tensor& gk = bs.grab(g, n.args[1]);
      for (long long i = 0; i < dx.numel(); ++i)
        gx.values[static_cast<size_t>(i)] += dx.values[static_cast<size_t>(i)];
      for (long long i = 0; i < dk.numel(); ++i)
        gk.values[static_cast<size_t>(i)] += dk.values[static_cast<size_t>(i)];
      break;
    }
    case OpKind::Reshape: {
      Tensor& ga = bs.grab(g, n.args[0]);
      for (long long i = 0; i < d.numel(); ++i)
        ga.values[static_cast<size_t>(i)] += d.values[static_cast<size_t>(i)];
      break;
    }
  }
}

}  // namespace

Tensor evaluate(const ComputeGraph& g, const Bindings& bindings) {
  ForwardState st = forward(g, bindings);
  return st.vals[static_cast<size_t>(g.output())];
}

std::vector<Tensor> evaluate_nodes(const ComputeGraph& g, const Bindings& bindings,
                                   const std::vector<int>& extra) {
  ForwardState st = forward(g, bindings);
  std::vector<Tensor> out;
  out.reserve(extra.size());
  for (int id : extra) {
    if (id < 0 || id >= g.node_count()) throw GraphError(id, "reference to nonexistent node");
    out.push_back(st.vals[static_cast<size_t>(id)]);
  }
  return out;
}

BackpropResult backprop(const ComputeGraph& g, const Bindings& bindings,
                        const std::set<std::string>& wrt, const std::vector<int>& extra) {
  for (const auto& name : wrt)
    if (!g.inputs().count(name)) throw GraphError(-1, "unknown input name '" + name + "'");

  ForwardState st = forward(g, bindings);
  const Tensor& out = st.vals[static_cast<size_t>(g.output())];
  if (out.numel() != 1)
    throw GraphError(g.output(), "gradients require a one-element output, got shape " +
                                     shape_str(out.shape));

  BackwardState bs;
  bs.adj.resize(static_cast<size_t>(g.node_count()));
  bs.grab(g, g.output()).values[0] = 1.0;
  for (int id = g.node_count() - 1; id >= 0; --id) backward_node(g, id, st, bs);

  BackpropResult res;
  res.output = out;
  for (int id : extra) {
    if (id < 0 || id >= g.node_count()) throw GraphError(id, "reference to nonexistent node");
    res.node_values.push_back(st.vals[static_cast<size_t>(id)]);
  }
  for (const auto& name : wrt) {
    const int id = g.inputs().at(name);
    Tensor& adj = bs.adj[static_cast<size_t>(id)];
    if (adj.shape.empty()) adj = Tensor(g.shape(id));
    if (!adj.all_finite()) throw GraphError(id, "non-finite gradient for input '" + name + "'");
    res.grads[name] = std::move(adj);
  }
  return res;
}

std::map<std::string, Tensor> gradients(const ComputeGraph& g, const Bindings& bindings,
                                        const std::set<std::string>& wrt) {
  return backprop(g, bindings, wrt).grads;
}

}  // namespace muscle
