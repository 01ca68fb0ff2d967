#include "muscle/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace muscle {

namespace {

double floored_log(double p) { return std::log(p < kProbEps ? kProbEps : p); }

void check_same_nc(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 2 || b.rank() != 2 || !a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": batches must share an [N,C] shape, got " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

void check_likelihood_batch(const Tensor& z, double tol) {
  if (z.rank() != 2)
    throw std::invalid_argument("likelihood batch must be [N,C], got " + shape_str(z.shape));
  for (int i = 0; i < z.rows(); ++i) {
    double sum = 0.0;
    for (int c = 0; c < z.cols(); ++c) {
      const double v = z.at(i, c);
      if (v < 0.0)
        throw std::invalid_argument("likelihood batch: negative entry at row " +
                                    std::to_string(i));
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol)
      throw std::invalid_argument("likelihood batch: row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum));
  }
}

JointMatrix joint_matrix(const Tensor& z_a, const Tensor& z_b) {
  check_same_nc(z_a, z_b, "joint_matrix");
  const int n = z_a.rows();
  const int c = z_a.cols();
  if (n < 1) throw std::invalid_argument("joint_matrix: empty batch");

  Tensor q({c, c});
  for (int i = 0; i < n; ++i)
    for (int ca = 0; ca < c; ++ca) {
      const double za = z_a.at(i, ca);
      for (int cb = 0; cb < c; ++cb) q.at(ca, cb) += za * z_b.at(i, cb);
    }
  const double inv_n = 1.0 / n;

  JointMatrix jm;
  jm.p = Tensor({c, c});
  for (int ca = 0; ca < c; ++ca)
    for (int cb = 0; cb < c; ++cb)
      jm.p.at(ca, cb) = 0.5 * (q.at(ca, cb) + q.at(cb, ca)) * inv_n;

  jm.row_sum.assign(static_cast<size_t>(c), 0.0);
  jm.col_sum.assign(static_cast<size_t>(c), 0.0);
  for (int ca = 0; ca < c; ++ca)
    for (int cb = 0; cb < c; ++cb) {
      jm.row_sum[static_cast<size_t>(ca)] += jm.p.at(ca, cb);
      jm.col_sum[static_cast<size_t>(cb)] += jm.p.at(ca, cb);
    }
  return jm;
}

double mutual_information(const JointMatrix& jm) {
  const int c = jm.p.rows();
  double i_total = 0.0;
  for (int ca = 0; ca < c; ++ca)
    for (int cb = 0; cb < c; ++cb) {
      const double p = jm.p.at(ca, cb);
      if (p <= kProbEps) continue;
      i_total += p * std::log(p / (jm.row_sum[static_cast<size_t>(ca)] *
                                   jm.col_sum[static_cast<size_t>(cb)]));
    }
  return i_total;
}

std::pair<double, double> entropy_terms(const JointMatrix& jm) {
  const int c = jm.p.rows();
  double h_z = 0.0;
  for (int ca = 0; ca < c; ++ca) {
    const double pc = jm.row_sum[static_cast<size_t>(ca)];
    if (pc > kProbEps) h_z -= pc * std::log(pc);
  }
  double h_cond = 0.0;
  for (int ca = 0; ca < c; ++ca)
    for (int cb = 0; cb < c; ++cb) {
      const double p = jm.p.at(ca, cb);
      if (p <= kProbEps) continue;
      h_cond -= p * std::log(p / jm.col_sum[static_cast<size_t>(cb)]);
    }
  return {h_z, h_cond};
}

double supervised_ce(const Tensor& z, const std::vector<int>& labels) {
  if (z.rank() != 2)
    throw std::invalid_argument("supervised_ce: batch must be [N,C], got " + shape_str(z.shape));
  if (static_cast<int>(labels.size()) != z.rows())
    throw std::invalid_argument("supervised_ce: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(z.rows()) + " rows");
  double acc = 0.0;
  for (int i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= z.cols())
      throw std::invalid_argument("supervised_ce: label " + std::to_string(y) + " at row " +
                                  std::to_string(i) + " outside [0," +
                                  std::to_string(z.cols()) + ")");
    acc -= floored_log(z.at(i, y));
  }
  return acc / z.rows();
}

double weighted_pseudo_ce(const Tensor& z, const PseudoLabelSet& pseudo) {
  if (z.rank() != 2)
    throw std::invalid_argument("weighted_pseudo_ce: batch must be [N,C]");
  if (pseudo.size() != z.rows())
    throw std::invalid_argument("weighted_pseudo_ce: pseudo set size " +
                                std::to_string(pseudo.size()) + " for " +
                                std::to_string(z.rows()) + " rows");
  double acc = 0.0;
  for (int i = 0; i < z.rows(); ++i) {
    const double w = pseudo.weight[static_cast<size_t>(i)];
    if (w < 0.0 || w > 1.0)
      throw std::invalid_argument("weighted_pseudo_ce: weight " + std::to_string(w) +
                                  " at row " + std::to_string(i) + " outside [0,1]");
    if (w == 0.0) continue;
    const int y = pseudo.cls[static_cast<size_t>(i)];
    if (y < 0 || y >= z.cols())
      throw std::invalid_argument("weighted_pseudo_ce: class " + std::to_string(y) +
                                  " at row " + std::to_string(i) + " outside [0," +
                                  std::to_string(z.cols()) + ")");
    acc -= w * floored_log(z.at(i, y));
  }
  return acc / z.rows();
}

double consistency_mse(const Tensor& z_teacher, const Tensor& z_student) {
  check_same_nc(z_teacher, z_student, "consistency_mse");
  double acc = 0.0;
  for (long long i = 0; i < z_teacher.numel(); ++i) {
    const double d = z_teacher.values[static_cast<size_t>(i)] -
                     z_student.values[static_cast<size_t>(i)];
    acc += d * d;
  }
  return acc / z_teacher.rows();
}

double consistency_l2(const std::vector<double>& z, const std::vector<double>& zp) {
  if (z.size() != zp.size())
    throw std::invalid_argument("consistency_l2: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - zp[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double fixmatch_loss(const Tensor& z_weak, const Tensor& z_strong, const FixMatchConfig& cfg) {
  check_same_nc(z_weak, z_strong, "fixmatch_loss");
  if (!(cfg.tau > 0.0 && cfg.tau < 1.0))
    throw std::invalid_argument("fixmatch_loss: tau must lie in (0,1)");
  double acc = 0.0;
  for (int i = 0; i < z_weak.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < z_weak.cols(); ++c)
      if (z_weak.at(i, c) > z_weak.at(i, best)) best = c;
    if (z_weak.at(i, best) > cfg.tau) acc -= floored_log(z_strong.at(i, best));
  }
  return acc / z_weak.rows();
}

Tensor fixmatch_targets(const Tensor& z_weak, const FixMatchConfig& cfg) {
  if (z_weak.rank() != 2)
    throw std::invalid_argument("fixmatch_targets: batch must be [N,C]");
  if (!(cfg.tau > 0.0 && cfg.tau < 1.0))
    throw std::invalid_argument("fixmatch_targets: tau must lie in (0,1)");
  Tensor t(z_weak.shape);
  for (int i = 0; i < z_weak.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < z_weak.cols(); ++c)
      if (z_weak.at(i, c) > z_weak.at(i, best)) best = c;
    if (z_weak.at(i, best) > cfg.tau) t.at(i, best) = 1.0;
  }
  return t;
}

double muscle_loss(double l_s, const Tensor& z_a, const Tensor& z_b, const LossWeights& w) {
  return l_s - w.alpha * mutual_information(joint_matrix(z_a, z_b));
}

double total_loss(double l_s, double l_u, double l_c, const LossWeights& w) {
  if (!std::isfinite(l_s) || !std::isfinite(l_u) || !std::isfinite(l_c))
    throw std::invalid_argument("total_loss: non-finite term");
  return l_s - w.alpha * l_u + w.beta * l_c;
}

namespace loss_graph {

int masked_ce(ComputeGraph& g, int probs, int target, int denom) {
  if (denom < 1) throw std::invalid_argument("masked_ce: denominator must be positive");
  const int logp = g.log(g.clamp_min(probs, kProbEps));
  const int s = g.sum(g.multiply(target, logp));
  return g.multiply(s, g.scalar(-1.0 / denom));
}

int mutual_information(ComputeGraph& g, int z_a, int z_b) {
  const auto& sa = g.shape(z_a);
  const auto& sb = g.shape(z_b);
  if (sa.size() != 2 || sa != sb)
    throw std::invalid_argument("mutual_information: nodes must share an [N,C] shape");
  const int n = sa[0];
  const int c = sa[1];
  const int q = g.multiply(g.matmul(g.transpose(z_a), z_b), g.scalar(1.0 / n));
  const int p = g.multiply(g.add(q, g.transpose(q)), g.scalar(0.5));
  const int row_sum = g.matmul(p, g.constant(Tensor::full({c, 1}, 1.0)));
  const int col_sum = g.matmul(g.constant(Tensor::full({1, c}, 1.0)), p);
  const int outer = g.matmul(row_sum, col_sum);
  const int log_p = g.log(g.clamp_min(p, kProbEps));
  const int log_outer = g.log(g.clamp_min(outer, kProbEps));
  const int diff = g.add(log_p, g.multiply(log_outer, g.scalar(-1.0)));
  return g.sum(g.multiply(p, diff));
}

int mse(ComputeGraph& g, int z_a, int z_b) {
  const std::vector<int> sa = g.shape(z_a);  // copy: builders below reallocate nodes
  if (sa.size() != 2 || sa != g.shape(z_b))
    throw std::invalid_argument("mse: nodes must share an [N,C] shape");
  const int diff = g.add(z_a, g.multiply(z_b, g.scalar(-1.0)));
  const int sq = g.multiply(diff, diff);
  return g.multiply(g.sum(sq), g.scalar(1.0 / sa[0]));
}

}  // namespace loss_graph
}  // namespace muscle
