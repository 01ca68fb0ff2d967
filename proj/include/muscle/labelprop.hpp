#pragma once

#include <string>
#include <vector>

#include "muscle/data.hpp"
#include "muscle/kernels.hpp"
#include "muscle/model.hpp"
#include "muscle/pseudo_labels.hpp"
#include "muscle/tensor.hpp"

namespace muscle {

/// Eval-mode penultimate activations with L2-normalized rows.
/// Zero-activation rows are left as zeros and set the degenerate flag.
struct EmbeddingResult {
  Tensor rows;  // [N,E]
  bool degenerate = false;
};

EmbeddingResult extract_embeddings(const ClassifierConfig& cfg, const ParamSet& params,
                                   const Tensor& x);

/// Sparse symmetric k-NN affinity graph with zero diagonal.
/// W_ij = max(0, <e_i,e_j>)^3 for j among i's k nearest by inner
/// product, then W = max(W, W^T). Structural zeros are kept so every
/// row retains at least its k neighbor slots.
struct AffinityGraph {
  CsrMatrix w;
  int k = 0;
  double kappa = 0.99;  // diffusion coefficient, in (0,1)
};

AffinityGraph build_knn_graph(const Tensor& emb, int k, double kappa);

/// Solves (I - kappa * D^(-1/2) W D^(-1/2)) Z = Y by conjugate
/// gradients to residual < 1e-6 per column, then clips negatives to
/// zero. Y holds one-hot rows for labeled samples, zero rows otherwise.
/// Throws (carrying the residual) if an iteration cap is hit.
Tensor diffuse(const AffinityGraph& graph, const Tensor& y);

/// One-hot target matrix [n, classes] for the labeled rows of a plan.
Tensor one_hot_labels(const SplitPlan& plan, const std::vector<int>& labels, int n,
                      int classes);

/// Hard argmax classes with entropy-based confidence weights:
/// weight = 1 - H(p)/ln C on the row normalized to a distribution.
/// Ground-truth rows keep their labels at weight 1; all-zero rows stay
/// masked out. With top_k > 0 only the top_k most confident unlabeled
/// rows keep nonzero weight.
PseudoLabelSet assign_pseudo_labels(const Tensor& z_lp, const SplitPlan& plan,
                                    const std::vector<int>& labels, int top_k = 0);

/// Debug dumps: sparse triplets "i j w" and a plain CSV of scores.
void write_affinity_triplets(const std::string& path, const AffinityGraph& graph);
void write_scores_csv(const std::string& path, const Tensor& z);

}  // namespace muscle
