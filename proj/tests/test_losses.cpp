#include <cmath>
#include <vector>

#include "doctest.h"
#include "muscle/graph.hpp"
#include "muscle/losses.hpp"
#include "muscle/pseudo_labels.hpp"
#include "muscle/rng.hpp"

using namespace muscle;

namespace {

Tensor random_likelihoods(int n, int c, Rng& rng) {
  Tensor z({n, c});
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      const double v = rng.uniform(0.01, 1.0);
      z.at(i, j) = v;
      sum += v;
    }
    for (int j = 0; j < c; ++j) z.at(i, j) /= sum;
  }
  return z;
}

Tensor one_hot_rows(const std::vector<int>& labels, int c) {
  Tensor z({static_cast<int>(labels.size()), c});
  for (size_t i = 0; i < labels.size(); ++i) z.at(static_cast<int>(i), labels[i]) = 1.0;
  return z;
}

}  // namespace

TEST_CASE("likelihood batches are validated") {
  Tensor ok({2, 3}, {0.2, 0.3, 0.5, 1.0, 0.0, 0.0});
  CHECK_NOTHROW(check_likelihood_batch(ok));
  Tensor bad_sum({1, 2}, {0.6, 0.6});
  CHECK_THROWS_AS(check_likelihood_batch(bad_sum), std::invalid_argument);
  Tensor negative({1, 2}, {1.2, -0.2});
  CHECK_THROWS_AS(check_likelihood_batch(negative), std::invalid_argument);
  Tensor rank1({2}, {0.5, 0.5});
  CHECK_THROWS_AS(check_likelihood_batch(rank1), std::invalid_argument);
}

TEST_CASE("joint matrix matches a brute-force accumulation") {
  Rng rng(100);
  const int n = 12, c = 4;
  const Tensor za = random_likelihoods(n, c, rng);
  const Tensor zb = random_likelihoods(n, c, rng);
  const JointMatrix jm = joint_matrix(za, zb);
  REQUIRE(jm.p.shape == std::vector<int>{c, c});
  for (int a = 0; a < c; ++a)
    for (int b = 0; b < c; ++b) {
      double q_ab = 0.0, q_ba = 0.0;
      for (int i = 0; i < n; ++i) {
        q_ab += za.at(i, a) * zb.at(i, b);
        q_ba += za.at(i, b) * zb.at(i, a);
      }
      const double expected = 0.5 * (q_ab + q_ba) / n;
      CHECK(jm.p.at(a, b) == doctest::Approx(expected).epsilon(1e-12));
    }
  // Symmetric, nonnegative, sums to one; marginals consistent.
  double total = 0.0;
  for (int a = 0; a < c; ++a) {
    double rs = 0.0;
    for (int b = 0; b < c; ++b) {
      CHECK(jm.p.at(a, b) == jm.p.at(b, a));
      CHECK(jm.p.at(a, b) >= 0.0);
      rs += jm.p.at(a, b);
      total += jm.p.at(a, b);
    }
    CHECK(jm.row_sum[a] == doctest::Approx(rs).epsilon(1e-12));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mutual information bounds, symmetry and decomposition") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + rng.below(20);
    const int c = 2 + rng.below(5);
    const Tensor za = random_likelihoods(n, c, rng);
    const Tensor zb = random_likelihoods(n, c, rng);
    const JointMatrix jm = joint_matrix(za, zb);
    const double mi = mutual_information(jm);
    CHECK(mi >= -1e-12);
    CHECK(mi <= std::log(static_cast<double>(c)) + 1e-9);
    // I = H(z) - H(z|z').
    const auto [h_z, h_cond] = entropy_terms(jm);
    CHECK(mi == doctest::Approx(h_z - h_cond).epsilon(1e-9));
    // Argument order cannot matter: the joint matrix is symmetrized.
    const double mi_swapped = mutual_information(joint_matrix(zb, za));
    CHECK(std::fabs(mi - mi_swapped) < 1e-12);
  }
}

TEST_CASE("mutual information analytic anchors") {
  SUBCASE("identical confident one-hot halves reach ln C") {
    const int c = 4;
    std::vector<int> labels;
    for (int i = 0; i < 4 * c; ++i) labels.push_back(i % c);
    const Tensor z = one_hot_rows(labels, c);
    const double mi = mutual_information(joint_matrix(z, z));
    CHECK(mi == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }
  SUBCASE("uniform predictions carry zero information") {
    const Tensor z = Tensor::full({10, 5}, 0.2);
    CHECK(std::fabs(mutual_information(joint_matrix(z, z))) < 1e-9);
  }
  SUBCASE("any constant prediction collapses to zero, the minimum") {
    // The degenerate solution a trivial optimizer would find: every
    // sample mapped to the same class. Its objective value is the
    // global minimum of the term, so gradient ascent moves away from
    // it rather than toward it.
    const int c = 3;
    Tensor z({6, c});
    for (int i = 0; i < 6; ++i) z.at(i, 1) = 1.0;
    const double collapsed = mutual_information(joint_matrix(z, z));
    CHECK(std::fabs(collapsed) < 1e-9);
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor other = random_likelihoods(6, c, rng);
      CHECK(mutual_information(joint_matrix(other, other)) >= collapsed - 1e-12);
    }
  }
}

TEST_CASE("supervised cross-entropy reduces as documented") {
  SUBCASE("perfect one-hot predictions cost only the clamp floor") {
    const std::vector<int> labels{0, 1, 2};
    const Tensor z = one_hot_rows(labels, 3);
    CHECK(supervised_ce(z, labels) == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("uniform predictions cost ln C") {
    const Tensor z = Tensor::full({4, 5}, 0.2);
    CHECK(supervised_ce(z, {0, 1, 2, 3}) == doctest::Approx(std::log(5.0)).epsilon(1e-9));
  }
  SUBCASE("hand-computed two-row case") {
    Tensor z({2, 2}, {0.8, 0.2, 0.4, 0.6});
    const double expected = -(std::log(0.8) + std::log(0.6)) / 2.0;
    CHECK(supervised_ce(z, {0, 1}) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("label out of range refused") {
    const Tensor z = Tensor::full({2, 2}, 0.5);
    CHECK_THROWS_AS(supervised_ce(z, {0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(supervised_ce(z, {0}), std::invalid_argument);
  }
}

TEST_CASE("weighted pseudo-label cross-entropy") {
  Tensor z({3, 2}, {0.9, 0.1, 0.3, 0.7, 0.5, 0.5});
  PseudoLabelSet ps;
  ps.cls = {0, 1, 0};
  ps.weight = {1.0, 0.5, 0.0};
  ps.mask = {1, 1, 0};
  // Denominator is the full row count; masked rows contribute nothing.
  const double expected = -(1.0 * std::log(0.9) + 0.5 * std::log(0.7)) / 3.0;
  CHECK(weighted_pseudo_ce(z, ps) == doctest::Approx(expected).epsilon(1e-12));

  PseudoLabelSet bad = ps;
  bad.weight[0] = 1.5;
  CHECK_THROWS_AS(weighted_pseudo_ce(z, bad), std::invalid_argument);
  PseudoLabelSet neg = ps;
  neg.weight[1] = -0.1;
  CHECK_THROWS_AS(weighted_pseudo_ce(z, neg), std::invalid_argument);
}

TEST_CASE("consistency terms") {
  Tensor a({2, 2}, {1.0, 0.0, 0.5, 0.5});
  Tensor b({2, 2}, {0.0, 1.0, 0.5, 0.5});
  // Mean over rows of squared Euclidean distance: row 0 differs by
  // (1,-1), row 1 matches, so (2 + 0) / 2.
  CHECK(consistency_mse(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(consistency_mse(a, a) == 0.0);
  CHECK(consistency_l2({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(consistency_l2({0.0, 0.0}, {3.0, 4.0}) == doctest::Approx(5.0).epsilon(1e-12));
  Tensor wrong({1, 2}, {0.5, 0.5});
  CHECK_THROWS_AS(consistency_mse(a, wrong), std::invalid_argument);
}

TEST_CASE("fixmatch loss gates on weak-view confidence") {
  FixMatchConfig cfg;
  cfg.tau = 0.95;
  SUBCASE("all rows below threshold give exactly zero") {
    const Tensor weak = Tensor::full({4, 4}, 0.25);
    Rng rng(31);
    const Tensor strong = random_likelihoods(4, 4, rng);
    CHECK(fixmatch_loss(weak, strong, cfg) == 0.0);
  }
  SUBCASE("threshold comparison is strict") {
    Tensor weak({1, 2}, {0.95, 0.05});
    Tensor strong({1, 2}, {0.5, 0.5});
    CHECK(fixmatch_loss(weak, strong, cfg) == 0.0);
    weak.at(0, 0) = 0.950001;
    CHECK(fixmatch_loss(weak, strong, cfg) == doctest::Approx(-std::log(0.5)).epsilon(1e-12));
  }
  SUBCASE("mixed batch divides by the full row count") {
    Tensor weak({2, 2}, {0.99, 0.01, 0.6, 0.4});
    Tensor strong({2, 2}, {0.7, 0.3, 0.2, 0.8});
    const double expected = -std::log(0.7) / 2.0;
    CHECK(fixmatch_loss(weak, strong, cfg) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("argmax ties resolve to the lower class index") {
    Tensor weak({1, 2}, {0.5, 0.5});
    FixMatchConfig low;
    low.tau = 0.4;
    Tensor strong({1, 2}, {0.3, 0.7});
    CHECK(fixmatch_loss(weak, strong, low) == doctest::Approx(-std::log(0.3)).epsilon(1e-12));
  }
}

TEST_CASE("fixmatch targets expose the gate as a tensor") {
  FixMatchConfig cfg;
  Tensor weak({3, 3}, {0.97, 0.02, 0.01, 0.3, 0.4, 0.3, 0.01, 0.01, 0.98});
  const Tensor t = fixmatch_targets(weak, cfg);
  REQUIRE(t.shape == weak.shape);
  CHECK(t.at(0, 0) == 1.0);
  CHECK(t.at(0, 1) == 0.0);
  for (int j = 0; j < 3; ++j) CHECK(t.at(1, j) == 0.0);
  CHECK(t.at(2, 2) == 1.0);
}

TEST_CASE("sub-threshold rows contribute zero gradient, not merely zero value") {
  // The gate must be built outside the graph so confidence cannot leak
  // a gradient path: a fuzzed sweep of sub-threshold weak batches must
  // produce a strong-view gradient that is identically zero.
  FixMatchConfig cfg;
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + rng.below(6), c = 2 + rng.below(4);
    Tensor weak({n, c});
    for (int i = 0; i < n; ++i) {
      // Rows capped well below tau = 0.95.
      double sum = 0.0;
      for (int j = 0; j < c; ++j) {
        weak.at(i, j) = rng.uniform(0.2, 1.0);
        sum += weak.at(i, j);
      }
      for (int j = 0; j < c; ++j) weak.at(i, j) /= sum;
      double mx = 0.0;
      for (int j = 0; j < c; ++j) mx = std::max(mx, weak.at(i, j));
      if (mx > 0.9) {
        for (int j = 0; j < c; ++j) weak.at(i, j) = 1.0 / c;
      }
    }
    const Tensor targets = fixmatch_targets(weak, cfg);
    for (double v : targets.values) REQUIRE(v == 0.0);

    ComputeGraph g;
    const int logits = g.input("logits", {n, c});
    const int probs = g.softmax(logits);
    g.set_output(loss_graph::masked_ce(g, probs, g.constant(targets), n));
    Bindings b;
    Tensor raw({n, c});
    for (double& v : raw.values) v = rng.uniform(-2.0, 2.0);
    b["logits"] = raw;
    CHECK(evaluate(g, b).values[0] == 0.0);
    const auto grads = gradients(g, b, {"logits"});
    for (double d : grads.at("logits").values) REQUIRE(d == 0.0);
  }
}

TEST_CASE("combined objectives") {
  Rng rng(13);
  const Tensor za = random_likelihoods(8, 3, rng);
  const Tensor zb = random_likelihoods(8, 3, rng);
  LossWeights w;
  w.alpha = 0.7;
  const double mi = mutual_information(joint_matrix(za, zb));
  CHECK(muscle_loss(2.0, za, zb, w) == doctest::Approx(2.0 - 0.7 * mi).epsilon(1e-12));
  w.beta = 0.3;
  CHECK(total_loss(2.0, mi, 0.1, w) ==
        doctest::Approx(2.0 - 0.7 * mi + 0.3 * 0.1).epsilon(1e-12));
  CHECK_THROWS_AS(total_loss(std::nan(""), 0.0, 0.0, w), std::invalid_argument);
}

TEST_CASE("graph-side losses match their value-level counterparts") {
  Rng rng(19);
  const int n = 6, c = 4;
  const Tensor za = random_likelihoods(n, c, rng);
  const Tensor zb = random_likelihoods(n, c, rng);
  SUBCASE("mutual information") {
    ComputeGraph g;
    const int ia = g.input("za", {n, c});
    const int ib = g.input("zb", {n, c});
    g.set_output(loss_graph::mutual_information(g, ia, ib));
    Bindings b;
    b["za"] = za;
    b["zb"] = zb;
    const double direct = mutual_information(joint_matrix(za, zb));
    CHECK(evaluate(g, b).values[0] == doctest::Approx(direct).epsilon(1e-10));
  }
  SUBCASE("masked cross-entropy against one-hot targets equals supervised_ce") {
    const std::vector<int> labels{1, 3, 0, 2, 1, 0};
    Tensor targets({n, c});
    for (int i = 0; i < n; ++i) targets.at(i, labels[i]) = 1.0;
    ComputeGraph g;
    const int z = g.input("z", {n, c});
    g.set_output(loss_graph::masked_ce(g, z, g.constant(targets), n));
    Bindings b;
    b["z"] = za;
    CHECK(evaluate(g, b).values[0] == doctest::Approx(supervised_ce(za, labels)).epsilon(1e-10));
  }
  SUBCASE("mse") {
    ComputeGraph g;
    const int ia = g.input("za", {n, c});
    const int ib = g.input("zb", {n, c});
    g.set_output(loss_graph::mse(g, ia, ib));
    Bindings b;
    b["za"] = za;
    b["zb"] = zb;
    CHECK(evaluate(g, b).values[0] == doctest::Approx(consistency_mse(za, zb)).epsilon(1e-12));
  }
}
