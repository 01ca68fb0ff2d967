#include "muscle/labelprop.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace muscle {

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

EmbeddingResult extract_embeddings(const ClassifierConfig& cfg, const ParamSet& params,
                                   const Tensor& x) {
  ForwardResult fwd = forward_eval(cfg, params, x);
  EmbeddingResult out;
  out.rows = fwd.penult;
  int n = out.rows.rows();
  int e = out.rows.cols();
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int j = 0; j < e; ++j) {
      double v = out.rows.at(i, j);
      sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm <= 1e-12) {
      out.degenerate = true;
      for (int j = 0; j < e; ++j) out.rows.at(i, j) = 0.0;
      continue;
    }
    double inv = 1.0 / norm;
    for (int j = 0; j < e; ++j) out.rows.at(i, j) *= inv;
  }
  return out;
}

AffinityGraph build_knn_graph(const Tensor& emb, int k, double kappa) {
  if (emb.rank() != 2)
    throw std::invalid_argument("build_knn_graph: embeddings must be [n, e]");
  int n = emb.rows();
  if (k < 1 || k >= n)
    throw std::invalid_argument("build_knn_graph: need 1 <= k < n, got k=" +
                                std::to_string(k) + " n=" + std::to_string(n));
  if (!(kappa > 0.0 && kappa < 1.0))
    throw std::invalid_argument("build_knn_graph: kappa must be in (0, 1)");

  std::vector<int> idx(static_cast<size_t>(n) * k);
  std::vector<double> score(static_cast<size_t>(n) * k);
  kernels::knn_neighbors(emb.values.data(), n, emb.cols(), k, idx.data(), score.data());

  // Undirected union of the directed k-NN edges. Both directions of a
  // pair carry the same cubed inner product, so max-symmetrizing is
  // just inserting the edge both ways.
  std::vector<std::map<int, double>> adj(n);
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < k; ++s) {
      int j = idx[static_cast<size_t>(i) * k + s];
      if (j == i) continue;
      double raw = score[static_cast<size_t>(i) * k + s];
      double clipped = std::max(0.0, raw);
      double w = clipped * clipped * clipped;
      auto put = [&](int a, int b) {
        auto [it, fresh] = adj[a].emplace(b, w);
        if (!fresh) it->second = std::max(it->second, w);
      };
      put(i, j);
      put(j, i);
    }
  }

  AffinityGraph g;
  g.k = k;
  g.kappa = kappa;
  g.w.n = n;
  g.w.row_ptr.assign(static_cast<size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i)
    g.w.row_ptr[static_cast<size_t>(i) + 1] =
        g.w.row_ptr[i] + static_cast<int>(adj[i].size());
  g.w.col.reserve(g.w.row_ptr[n]);
  g.w.val.reserve(g.w.row_ptr[n]);
  for (int i = 0; i < n; ++i) {
    for (const auto& [j, w] : adj[i]) {
      g.w.col.push_back(j);
      g.w.val.push_back(w);
    }
  }
  return g;
}

namespace {

// y = (I - kappa * S) x with S = D^(-1/2) W D^(-1/2). Isolated nodes
// (zero degree) get inv_sqrt_deg = 0, so the operator acts as the
// identity on them.
struct DiffusionOperator {
  const CsrMatrix* w;
  double kappa;
  std::vector<double> inv_sqrt_deg;
  mutable std::vector<double> scratch;

  explicit DiffusionOperator(const AffinityGraph& g)
      : w(&g.w), kappa(g.kappa), inv_sqrt_deg(g.w.n, 0.0), scratch(g.w.n, 0.0) {
    for (int i = 0; i < w->n; ++i) {
      double deg = 0.0;
      for (int p = w->row_ptr[i]; p < w->row_ptr[static_cast<size_t>(i) + 1]; ++p)
        deg += w->val[p];
      if (deg > 0.0) inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }
  }

  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    int n = w->n;
    for (int i = 0; i < n; ++i) scratch[i] = inv_sqrt_deg[i] * x[i];
    kernels::spmv(*w, scratch.data(), y.data());
    for (int i = 0; i < n; ++i) y[i] = x[i] - kappa * inv_sqrt_deg[i] * y[i];
  }
};

}  // namespace

Tensor diffuse(const AffinityGraph& graph, const Tensor& y) {
  int n = graph.w.n;
  if (y.rank() != 2 || y.rows() != n)
    throw std::invalid_argument("diffuse: seed matrix must have one row per graph node");
  bool any_seed = false;
  for (double v : y.values)
    if (v != 0.0) {
      any_seed = true;
      break;
    }
  if (!any_seed) throw std::invalid_argument("diffuse: seed matrix is all zeros");

  DiffusionOperator op(graph);
  int c = y.cols();
  Tensor z = Tensor::zeros({n, c});

  const double tol = 1e-6;
  const int max_iter = 10 * n + 100;
  std::vector<double> b(n), x(n), r(n), p(n), ap(n);

  for (int col = 0; col < c; ++col) {
    for (int i = 0; i < n; ++i) b[i] = y.at(i, col);
    std::fill(x.begin(), x.end(), 0.0);
    r = b;
    double rr = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
    if (std::sqrt(rr) < tol) continue;
    p = r;
    int it = 0;
    for (; it < max_iter; ++it) {
      op.apply(p, ap);
      double pap = std::inner_product(p.begin(), p.end(), ap.begin(), 0.0);
      if (pap <= 0.0)
        throw std::runtime_error("diffuse: operator lost positive definiteness");
      double alpha = rr / pap;
      for (int i = 0; i < n; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * ap[i];
      }
      double rr_next = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
      if (std::sqrt(rr_next) < tol) {
        rr = rr_next;
        break;
      }
      double beta = rr_next / rr;
      rr = rr_next;
      for (int i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    }
    if (it == max_iter) {
      char msg[160];
      std::snprintf(msg, sizeof(msg),
                    "diffuse: no convergence after %d iterations, residual %.3e "
                    "(column %d)",
                    max_iter, std::sqrt(rr), col);
      throw std::runtime_error(msg);
    }
    for (int i = 0; i < n; ++i) z.at(i, col) = std::max(0.0, x[i]);
  }
  return z;
}

Tensor one_hot_labels(const SplitPlan& plan, const std::vector<int>& labels, int n,
                      int classes) {
  Tensor y = Tensor::zeros({n, classes});
  for (int i : plan.labeled) {
    if (i < 0 || i >= n)
      throw std::invalid_argument("one_hot_labels: labeled index out of range");
    int cls = labels[i];
    if (cls < 0 || cls >= classes)
      throw std::invalid_argument("one_hot_labels: label out of range at row " +
                                  std::to_string(i));
    y.at(i, cls) = 1.0;
  }
  return y;
}

PseudoLabelSet assign_pseudo_labels(const Tensor& z_lp, const SplitPlan& plan,
                                    const std::vector<int>& labels, int top_k) {
  if (z_lp.rank() != 2) throw std::invalid_argument("assign_pseudo_labels: scores must be [n, c]");
  int n = z_lp.rows();
  int c = z_lp.cols();
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("assign_pseudo_labels: labels size mismatch");
  if (c < 2) throw std::invalid_argument("assign_pseudo_labels: need at least two classes");

  std::vector<uint8_t> is_labeled(n, 0);
  for (int i : plan.labeled) {
    if (i < 0 || i >= n)
      throw std::invalid_argument("assign_pseudo_labels: labeled index out of range");
    is_labeled[i] = 1;
  }

  PseudoLabelSet out;
  out.cls.assign(n, -1);
  out.weight.assign(n, 0.0);
  out.mask.assign(n, 0);

  double log_c = std::log(static_cast<double>(c));
  for (int i = 0; i < n; ++i) {
    if (is_labeled[i]) {
      out.cls[i] = labels[i];
      out.weight[i] = 1.0;
      out.mask[i] = 1;
      continue;
    }
    double total = 0.0;
    for (int j = 0; j < c; ++j) total += z_lp.at(i, j);
    if (total <= 0.0) continue;  // nothing reached this row
    int best = 0;
    double best_v = z_lp.at(i, 0);
    double entropy = 0.0;
    for (int j = 0; j < c; ++j) {
      double v = z_lp.at(i, j);
      if (v > best_v) {
        best_v = v;
        best = j;
      }
      double p = v / total;
      if (p > 0.0) entropy -= p * std::log(p);
    }
    double conf = 1.0 - entropy / log_c;
    out.cls[i] = best;
    out.weight[i] = std::clamp(conf, 0.0, 1.0);
    out.mask[i] = 1;
  }

  if (top_k > 0) {
    std::vector<int> candidates;
    for (int i = 0; i < n; ++i)
      if (out.mask[i] && !is_labeled[i]) candidates.push_back(i);
    if (static_cast<int>(candidates.size()) > top_k) {
      std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        if (out.weight[a] != out.weight[b]) return out.weight[a] > out.weight[b];
        return a < b;
      });
      for (size_t s = static_cast<size_t>(top_k); s < candidates.size(); ++s)
        out.weight[candidates[s]] = 0.0;
    }
  }
  return out;
}

void write_affinity_triplets(const std::string& path, const AffinityGraph& graph) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  std::string line;
  for (int i = 0; i < graph.w.n; ++i) {
    for (int p = graph.w.row_ptr[i]; p < graph.w.row_ptr[static_cast<size_t>(i) + 1]; ++p) {
      line.clear();
      line += std::to_string(i);
      line += ' ';
      line += std::to_string(graph.w.col[p]);
      line += ' ';
      append_double(line, graph.w.val[p]);
      line += '\n';
      f << line;
    }
  }
  if (!f) throw std::runtime_error("write failed for " + path);
}

void write_scores_csv(const std::string& path, const Tensor& z) {
  if (z.rank() != 2) throw std::invalid_argument("write_scores_csv: scores must be [n, c]");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  std::string line;
  for (int i = 0; i < z.rows(); ++i) {
    line.clear();
    for (int j = 0; j < z.cols(); ++j) {
      if (j) line += ',';
      append_double(line, z.at(i, j));
    }
    line += '\n';
    f << line;
  }
  if (!f) throw std::runtime_error("write failed for " + path);
}

}  // namespace muscle
