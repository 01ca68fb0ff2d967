#pragma once

#include <utility>
#include <vector>

#include "muscle/graph.hpp"
#include "muscle/pseudo_labels.hpp"
#include "muscle/tensor.hpp"

namespace muscle {

/// Probabilities below this floor are treated as zero inside logs
/// (0 ln 0 = 0 convention).
inline constexpr double kProbEps = 1e-12;

struct LossWeights {
  double alpha = 1.0;  // mutual-information weight
  double beta = 0.0;   // consistency weight
};

struct FixMatchConfig {
  double tau = 0.95;  // confidence gate, in (0,1)
};

/// Throws unless z is an [N,C] matrix of nonnegative rows summing to 1
/// within `tol`.
void check_likelihood_batch(const Tensor& z, double tol = 1e-9);

/// Symmetrized joint class distribution of two aligned likelihood
/// batches: P = (Q + Q^T)/2 with Q = (1/N) sum_i z_a,i z_b,i^T.
struct JointMatrix {
  Tensor p;                      // [C,C], symmetric, sums to 1
  std::vector<double> row_sum;   // P_c
  std::vector<double> col_sum;   // P_c'
};

JointMatrix joint_matrix(const Tensor& z_a, const Tensor& z_b);

/// I(P) = sum_cc' P_cc' ln(P_cc' / (P_c P_c')); entries <= kProbEps
/// contribute zero. Lies in [0, ln C] up to rounding.
double mutual_information(const JointMatrix& jm);

/// H(z) = -sum_c P_c ln P_c and H(z|z') = -sum_cc' P_cc' ln(P_cc'/P_c');
/// their difference equals mutual_information.
std::pair<double, double> entropy_terms(const JointMatrix& jm);

/// Mean over rows of -ln(z_i[y_i]) with eps-floored probabilities.
double supervised_ce(const Tensor& z, const std::vector<int>& labels);

/// (1/N) sum_i w_i * (-ln z_i[c_i]) over the pseudo set; weight-0 rows
/// contribute nothing. Throws on weights outside [0,1].
double weighted_pseudo_ce(const Tensor& z, const PseudoLabelSet& pseudo);

/// (1/N) sum_i ||z_t,i - z_s,i||^2.
double consistency_mse(const Tensor& z_teacher, const Tensor& z_student);

/// Euclidean distance between two distributions, zero iff equal.
double consistency_l2(const std::vector<double>& z, const std::vector<double>& zp);

/// Rows whose weak max exceeds tau get CE of the strong prediction
/// against argmax of the weak one (weak side treated as constant);
/// mean over the full batch, gated rows contributing zero.
double fixmatch_loss(const Tensor& z_weak, const Tensor& z_strong, const FixMatchConfig& cfg);

/// L = l_s - alpha * I(joint_matrix(z_a, z_b)).
double muscle_loss(double l_s, const Tensor& z_a, const Tensor& z_b, const LossWeights& w);

/// L = l_s - alpha * l_u + beta * l_c.
double total_loss(double l_s, double l_u, double l_c, const LossWeights& w);

/// Row gate and hard target for the FixMatch loss: target row i is
/// onehot(argmax z_weak,i) when max(z_weak,i) > tau, else all zero.
/// Computed outside any graph so no gradient reaches the weak side.
Tensor fixmatch_targets(const Tensor& z_weak, const FixMatchConfig& cfg);

/// Differentiable builders appending to a ComputeGraph. Each takes node
/// ids of [N,C] probability tensors and returns a scalar node.
namespace loss_graph {

/// -(1/denom) * sum(target * ln(max(probs, kProbEps))). With one-hot
/// target rows this is cross entropy; scaled or zeroed target rows give
/// the weighted and gated variants.
int masked_ce(ComputeGraph& g, int probs, int target, int denom);

/// Mutual information of the symmetrized joint matrix of two aligned
/// [N,C] probability nodes.
int mutual_information(ComputeGraph& g, int z_a, int z_b);

/// (1/N) * sum((z_a - z_b)^2).
int mse(ComputeGraph& g, int z_a, int z_b);

}  // namespace loss_graph

}  // namespace muscle
