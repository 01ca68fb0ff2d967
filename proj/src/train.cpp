#include "muscle/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "muscle/rng.hpp"

namespace muscle {

namespace {

constexpr double kPi = 3.14159265358979323846;

double quiet_nan() { return std::numeric_limits<double>::quiet_NaN(); }

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

Method method_from(const std::string& name) {
  if (name == "supervised") return Method::Supervised;
  if (name == "muscle") return Method::Muscle;
  if (name == "muscle_mt") return Method::MuscleMT;
  if (name == "muscle_mt_lp") return Method::MuscleMTLP;
  if (name == "fixmatch") return Method::FixMatch;
  if (name == "muscle_fixmatch") return Method::MuscleFixMatch;
  throw std::invalid_argument("unknown method: " + name);
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Supervised: return "supervised";
    case Method::Muscle: return "muscle";
    case Method::MuscleMT: return "muscle_mt";
    case Method::MuscleMTLP: return "muscle_mt_lp";
    case Method::FixMatch: return "fixmatch";
    case Method::MuscleFixMatch: return "muscle_fixmatch";
  }
  return "unknown";
}

bool uses_mutual_information(Method m) {
  return m == Method::Muscle || m == Method::MuscleMT || m == Method::MuscleMTLP ||
         m == Method::MuscleFixMatch;
}

bool uses_teacher(Method m) { return m == Method::MuscleMT || m == Method::MuscleMTLP; }

bool uses_label_propagation(Method m) { return m == Method::MuscleMTLP; }

bool uses_fixmatch(Method m) {
  return m == Method::FixMatch || m == Method::MuscleFixMatch;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batches_per_epoch < 1) throw std::invalid_argument("train: batches per epoch must be >= 1");
  if (labeled_per_batch < 1) throw std::invalid_argument("train: J must be >= 1");
  if (ratio < 0.0) throw std::invalid_argument("train: ratio r must be nonnegative");
  if (!(lr.lr0 > 0.0)) throw std::invalid_argument("train: lr0 must be positive");
  if (lr.mode == LrMode::FullHorizon && lr.horizon != 0 && lr.horizon < epochs)
    throw std::invalid_argument("train: cosine horizon must be >= epochs");
  if (lr.mode == LrMode::CycleFraction && !(lr.fraction > 0.0 && lr.fraction <= 1.0))
    throw std::invalid_argument("train: lr cycle fraction must lie in (0,1]");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("train: momentum must lie in [0,1)");
  if (weights.alpha < 0.0 || weights.beta < 0.0)
    throw std::invalid_argument("train: loss weights must be nonnegative");
  if (alpha_warmup < 0) throw std::invalid_argument("train: alpha warmup must be >= 0");
  if (ema_mu < 0.0 || ema_mu > 1.0)
    throw std::invalid_argument("train: EMA mu must lie in [0,1]");
  if (!(fixmatch.tau > 0.0 && fixmatch.tau < 1.0))
    throw std::invalid_argument("train: tau must lie in (0,1)");
  if (hard_replicas < 1) throw std::invalid_argument("train: hard replica count must be >= 1");
  if (lp.knn < 1) throw std::invalid_argument("train: LP neighbor count must be >= 1");
  if (!(lp.kappa > 0.0 && lp.kappa < 1.0))
    throw std::invalid_argument("train: LP kappa must lie in (0,1)");
  if (lp.top_k < 0) throw std::invalid_argument("train: LP top-k must be >= 0");
  if (lp.warmup_frac < 0.0 || lp.warmup_frac > 1.0)
    throw std::invalid_argument("train: LP warmup fraction must lie in [0,1]");
  if (lp.weight < 0.0) throw std::invalid_argument("train: LP weight must be nonnegative");
  if (grad_clip < 0.0) throw std::invalid_argument("train: gradient clip must be nonnegative");
  if (top_k < 1) throw std::invalid_argument("train: top-k must be >= 1");
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("cosine_lr: epoch must be nonnegative");
  if (epoch == 0) return cfg.lr.lr0;  // cos 0 = 1 in both modes
  if (cfg.lr.mode == LrMode::FullHorizon) {
    const int horizon = cfg.lr.horizon > 0 ? cfg.lr.horizon : cfg.epochs;
    if (epoch > horizon)
      throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch) +
                                  " beyond horizon " + std::to_string(horizon));
    const double t = static_cast<double>(epoch) / horizon;
    return cfg.lr.lr0 * 0.5 * (1.0 + std::cos(kPi * t));
  }
  if (epoch > cfg.epochs)
    throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch) +
                                " beyond run length " + std::to_string(cfg.epochs));
  const double t = static_cast<double>(epoch) / cfg.epochs;
  return cfg.lr.lr0 * std::cos(cfg.lr.fraction * kPi * t);
}

void sgd_step(ParamSet& params, const std::vector<double>& grads, double lr,
              double momentum, std::vector<double>& velocity) {
  if (grads.size() != params.theta.size())
    throw std::invalid_argument("sgd_step: gradient size " + std::to_string(grads.size()) +
                                " does not match parameter size " +
                                std::to_string(params.theta.size()));
  if (velocity.empty()) velocity.assign(params.theta.size(), 0.0);
  if (velocity.size() != params.theta.size())
    throw std::invalid_argument("sgd_step: velocity size mismatch");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (std::isfinite(grads[i])) continue;
    std::string where = "component " + std::to_string(i);
    for (size_t l = 0; l < params.layout.size(); ++l) {
      const LayerDesc& d = params.layout[l];
      const long long off = static_cast<long long>(i);
      if (off >= d.w_off && off < d.w_off + d.w_len)
        where += " (layer " + std::to_string(l) + " weights)";
      else if (off >= d.b_off && off < d.b_off + d.b_len)
        where += " (layer " + std::to_string(l) + " bias)";
      else
        continue;
      break;
    }
    throw std::runtime_error("sgd_step: non-finite gradient at " + where);
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params.theta[i] -= lr * velocity[i];
  }
}

EvalResult evaluate_model(const ClassifierConfig& cfg, const ParamSet& params,
                          const Dataset& test, int top_k,
                          const std::vector<int>* types) {
  test.validate();
  const int n = test.size();
  if (n == 0) throw std::invalid_argument("evaluate_model: empty test set");
  if (types && static_cast<int>(types->size()) != n)
    throw std::invalid_argument("evaluate_model: class-type map size mismatch");
  const Tensor probs = predict(cfg, params, test.x, PredictMode::Eval);
  const int c = probs.cols();
  const int k = std::clamp(top_k, 1, c);

  long long hit1 = 0, hitk = 0;
  double entropy_sum = 0.0;
  std::vector<double> marginal(c, 0.0);
  long long type_n[2] = {0, 0};
  long long type_hit[2] = {0, 0};
  double type_entropy[2] = {0.0, 0.0};

  for (int i = 0; i < n; ++i) {
    const int y = test.labels[i];
    int best = 0;
    double best_v = probs.at(i, 0);
    double entropy = 0.0;
    const double py = probs.at(i, y);
    int rank = 0;
    for (int j = 0; j < c; ++j) {
      const double p = probs.at(i, j);
      if (p > best_v) {
        best_v = p;
        best = j;
      }
      if (p > py || (p == py && j < y)) ++rank;
      if (p > 0.0) entropy -= p * std::log(p);
      marginal[j] += p;
    }
    const bool top1 = best == y;
    const bool topk = rank < k;
    hit1 += top1;
    hitk += topk;
    entropy_sum += entropy;
    if (types) {
      const int t = (*types)[i];
      if (t < 0 || t > 1)
        throw std::invalid_argument("evaluate_model: class types must be 0 or 1");
      ++type_n[t];
      type_hit[t] += top1;
      type_entropy[t] += entropy;
    }
  }

  EvalResult out;
  out.top1 = static_cast<double>(hit1) / n;
  out.topk = static_cast<double>(hitk) / n;
  out.entropy_mean = entropy_sum / n;
  double h_marginal = 0.0;
  for (int j = 0; j < c; ++j) {
    const double p = marginal[j] / n;
    if (p > 0.0) h_marginal -= p * std::log(p);
  }
  out.entropy_marginal = h_marginal;
  out.has_types = types != nullptr;
  if (types) {
    for (int t = 0; t < 2; ++t) {
      const double acc = type_n[t] ? static_cast<double>(type_hit[t]) / type_n[t] : quiet_nan();
      const double ent = type_n[t] ? type_entropy[t] / type_n[t] : quiet_nan();
      (t == 0 ? out.acc_type0 : out.acc_type1) = acc;
      (t == 0 ? out.entropy_type0 : out.entropy_type1) = ent;
    }
  } else {
    out.acc_type0 = out.acc_type1 = quiet_nan();
    out.entropy_type0 = out.entropy_type1 = quiet_nan();
  }
  return out;
}

std::string metrics_csv_header() {
  return "epoch,lr,loss_sup,loss_mi,loss_cons,loss_fm,loss_lp,loss_total,"
         "student_top1,student_topk,teacher_top1,teacher_topk,"
         "entropy_mean,entropy_marginal,acc_type0,acc_type1,entropy_type0,entropy_type1";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::string line = std::to_string(r.epoch);
  const double cols[] = {r.lr,           r.loss_sup,     r.loss_mi,      r.loss_cons,
                         r.loss_fm,      r.loss_lp,      r.loss_total,   r.student_top1,
                         r.student_topk, r.teacher_top1, r.teacher_topk, r.entropy_mean,
                         r.entropy_marginal, r.acc_type0, r.acc_type1,   r.entropy_type0,
                         r.entropy_type1};
  for (double v : cols) {
    line += ',';
    append_double(line, v);
  }
  return line;
}

TrainState make_train_state(const ClassifierConfig& net, const TrainConfig& cfg,
                            const AugmentPolicy& light, const AugmentPolicy& hard,
                            Dataset train, Dataset test, SplitPlan plan, uint64_t seed,
                            std::vector<int> test_types) {
  net.validate();
  cfg.validate();
  train.validate();
  test.validate();
  if (train.class_count != test.class_count)
    throw std::invalid_argument("train/test class counts differ");
  if (!test_types.empty() && static_cast<int>(test_types.size()) != test.size())
    throw std::invalid_argument("class-type map does not cover the test set");
  if (plan.labeled.empty()) throw std::invalid_argument("labeled pool is empty");
  for (int i : plan.labeled)
    if (i < 0 || i >= train.size())
      throw std::invalid_argument("labeled index out of range");
  for (int i : plan.unlabeled)
    if (i < 0 || i >= train.size())
      throw std::invalid_argument("unlabeled index out of range");

  TrainState st;
  st.net = net;
  st.cfg = cfg;
  st.light = light;
  st.hard = hard;
  st.train = std::move(train);
  st.test = std::move(test);
  st.plan = std::move(plan);
  st.test_types = std::move(test_types);
  st.seed = seed;
  st.params = init_params(net, seed);
  st.velocity.assign(st.params.theta.size(), 0.0);
  if (uses_teacher(cfg.method)) {
    st.teacher.params = st.params;
    st.teacher.mu = cfg.ema_mu;
  }
  return st;
}

namespace {

// First `count` rows of a batch tensor, any rank.
Tensor take_rows(const Tensor& t, int count) {
  std::vector<int> shape = t.shape;
  shape[0] = count;
  Tensor out(std::move(shape));
  const size_t per_row = t.values.size() / static_cast<size_t>(t.dim(0));
  std::memcpy(out.data(), t.values.data(), sizeof(double) * per_row * count);
  return out;
}

std::vector<double> flatten_grads(const ParamSet& params,
                                  const std::map<std::string, Tensor>& grads,
                                  const std::string& prefix) {
  std::vector<double> flat(params.theta.size(), 0.0);
  for (size_t l = 0; l < params.layout.size(); ++l) {
    const LayerDesc& d = params.layout[l];
    const std::string tag = std::to_string(l);
    const Tensor& gw = grads.at(prefix + "w" + tag);
    const Tensor& gb = grads.at(prefix + "b" + tag);
    std::memcpy(flat.data() + d.w_off, gw.values.data(), sizeof(double) * gw.values.size());
    std::memcpy(flat.data() + d.b_off, gb.values.data(), sizeof(double) * gb.values.size());
  }
  return flat;
}

void refresh_pseudo(TrainState& st, int epoch) {
  const EmbeddingResult emb = extract_embeddings(st.net, st.params, st.train.x);
  const int n = st.train.size();
  const int knn = std::min(st.cfg.lp.knn, n - 1);
  const AffinityGraph graph = build_knn_graph(emb.rows, knn, st.cfg.lp.kappa);
  const Tensor y = one_hot_labels(st.plan, st.train.labels, n, st.train.class_count);
  const Tensor z = diffuse(graph, y);
  st.pseudo = assign_pseudo_labels(z, st.plan, st.train.labels, st.cfg.lp.top_k);
  st.lp_ready = true;
  if (!st.cfg.lp.dump_dir.empty() && !st.lp_dumped) {
    const std::string tag = std::to_string(epoch);
    write_affinity_triplets(st.cfg.lp.dump_dir + "/affinity_epoch" + tag + ".txt", graph);
    write_scores_csv(st.cfg.lp.dump_dir + "/scores_epoch" + tag + ".csv", z);
    st.lp_dumped = true;
  }
}

struct TermNodes {
  int sup = -1, mi = -1, cons = -1, fm = -1, lp = -1;
};

MetricsRecord eval_record(const TrainState& st) {
  MetricsRecord r;
  const std::vector<int>* types = st.test_types.empty() ? nullptr : &st.test_types;
  const EvalResult se = evaluate_model(st.net, st.params, st.test, st.cfg.top_k, types);
  r.student_top1 = se.top1;
  r.student_topk = se.topk;
  r.entropy_mean = se.entropy_mean;
  r.entropy_marginal = se.entropy_marginal;
  r.acc_type0 = se.acc_type0;
  r.acc_type1 = se.acc_type1;
  r.entropy_type0 = se.entropy_type0;
  r.entropy_type1 = se.entropy_type1;
  if (uses_teacher(st.cfg.method)) {
    const EvalResult te =
        evaluate_model(st.net, st.teacher.params, st.test, st.cfg.top_k, types);
    r.teacher_top1 = te.top1;
    r.teacher_topk = te.topk;
  } else {
    r.teacher_top1 = r.teacher_topk = quiet_nan();
  }
  return r;
}

}  // namespace

MetricsRecord train_epoch(TrainState& st, int epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& cfg = st.cfg;
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::invalid_argument("train_epoch: epoch out of range");

  const int j = cfg.labeled_per_batch;
  const int i_count = static_cast<int>(std::floor(cfg.ratio * j + 0.5));
  const int rows = i_count + j;
  const int c = st.train.class_count;
  const int k = cfg.hard_replicas;
  const double lr = cosine_lr(epoch, cfg);

  double alpha_eff = cfg.weights.alpha;
  if (cfg.alpha_warmup > 0)
    alpha_eff *= std::min(1.0, static_cast<double>(epoch + 1) / cfg.alpha_warmup);

  const bool mi_on = uses_mutual_information(cfg.method) && alpha_eff > 0.0;
  const bool cons_on = uses_teacher(cfg.method) && cfg.weights.beta > 0.0;
  const bool fm_on = uses_fixmatch(cfg.method) && i_count > 0;
  const int lp_start = static_cast<int>(cfg.lp.warmup_frac * cfg.epochs);
  const bool lp_phase =
      uses_label_propagation(cfg.method) && cfg.lp.weight > 0.0 && epoch >= lp_start;
  if (lp_phase) refresh_pseudo(st, epoch);
  const bool lp_on = lp_phase && i_count > 0;
  const bool need_hard = mi_on || fm_on;
  const bool dropping = st.net.use_dropout && st.net.dropout_rate > 0.0;

  // One graph serves the whole epoch; only bindings change per batch.
  ComputeGraph g;
  const ParamNodes pn = declare_param_inputs(g, st.net, "s_");
  const std::vector<int> x_shape =
      st.net.has_conv() ? std::vector<int>{rows, st.net.img_h, st.net.img_w, st.net.img_ch}
                        : std::vector<int>{rows, st.net.input_dim};
  auto declare_masks = [&](const std::string& view) {
    std::vector<int> masks;
    if (dropping)
      for (size_t l = 0; l < st.net.hidden.size(); ++l)
        masks.push_back(g.input("drop_" + view + "_" + std::to_string(l),
                                {rows, st.net.hidden[l]}));
    return masks;
  };
  const int x_light = g.input("x_light", x_shape);
  const ForwardNodes fl = forward_on(g, st.net, pn, x_light, declare_masks("light"));
  std::vector<ForwardNodes> fh;
  if (need_hard)
    for (int v = 0; v < k; ++v) {
      const std::string tag = std::to_string(v);
      const int x = g.input("x_hard" + tag, x_shape);
      fh.push_back(forward_on(g, st.net, pn, x, declare_masks("hard" + tag)));
    }

  TermNodes t;
  const int t_sup = g.input("t_sup", {rows, c});
  t.sup = loss_graph::masked_ce(g, fl.probs, t_sup, j);
  int total = t.sup;
  if (mi_on) {
    int acc = loss_graph::mutual_information(g, fl.probs, fh[0].probs);
    for (int v = 1; v < k; ++v)
      acc = g.add(acc, loss_graph::mutual_information(g, fl.probs, fh[v].probs));
    t.mi = k > 1 ? g.multiply(acc, g.scalar(1.0 / k)) : acc;
    total = g.add(total, g.multiply(t.mi, g.scalar(-alpha_eff)));
  }
  if (cons_on) {
    const int z_teacher = g.input("z_teacher", {rows, c});
    t.cons = loss_graph::mse(g, z_teacher, fl.probs);
    total = g.add(total, g.multiply(t.cons, g.scalar(cfg.weights.beta)));
  }
  if (fm_on) {
    const int t_fm = g.input("t_fm", {rows, c});
    int acc = loss_graph::masked_ce(g, fh[0].probs, t_fm, i_count);
    for (int v = 1; v < k; ++v)
      acc = g.add(acc, loss_graph::masked_ce(g, fh[v].probs, t_fm, i_count));
    t.fm = k > 1 ? g.multiply(acc, g.scalar(1.0 / k)) : acc;
    total = g.add(total, t.fm);
  }
  if (lp_on) {
    const int t_lp = g.input("t_lp", {rows, c});
    t.lp = loss_graph::masked_ce(g, fl.probs, t_lp, i_count);
    total = g.add(total, g.multiply(t.lp, g.scalar(cfg.lp.weight)));
  }
  g.set_output(total);

  std::set<std::string> wrt;
  for (size_t l = 0; l < st.params.layout.size(); ++l) {
    wrt.insert("s_w" + std::to_string(l));
    wrt.insert("s_b" + std::to_string(l));
  }
  std::vector<int> extra;
  for (int id : {t.sup, t.mi, t.cons, t.fm, t.lp})
    if (id >= 0) extra.push_back(id);

  MetricsRecord rec;
  rec.epoch = epoch;
  rec.lr = lr;

  for (int b = 0; b < cfg.batches_per_epoch; ++b) {
    Rng comp(mix_seed(st.seed, kBatchStream, static_cast<uint64_t>(epoch),
                      static_cast<uint64_t>(b)));
    ComposedBatch batch = compose_batch(st.train, st.plan, cfg.ratio, j, comp);
    fill_light(batch, st.light,
               mix_seed(st.seed, kLightStream, static_cast<uint64_t>(epoch),
                        static_cast<uint64_t>(b)));
    if (need_hard)
      expand_hard_replicas(batch, k, st.hard,
                           mix_seed(st.seed, kHardStream, static_cast<uint64_t>(epoch),
                                    static_cast<uint64_t>(b)));

    Bindings bind;
    bind["x_light"] = batch.light;
    bind_params(bind, st.net, st.params, "s_");
    if (need_hard)
      for (int v = 0; v < k; ++v) bind["x_hard" + std::to_string(v)] = batch.hard[v];
    if (dropping) {
      const uint64_t drop_base = mix_seed(st.seed, kTrainDropStream,
                                          static_cast<uint64_t>(epoch),
                                          static_cast<uint64_t>(b));
      auto bind_masks = [&](const std::string& view, uint64_t view_idx) {
        for (size_t l = 0; l < st.net.hidden.size(); ++l)
          bind["drop_" + view + "_" + std::to_string(l)] =
              dropout_mask(rows, st.net.hidden[l], st.net.dropout_rate,
                           mix_seed(drop_base, view_idx, static_cast<uint64_t>(l)));
      };
      bind_masks("light", 0);
      if (need_hard)
        for (int v = 0; v < k; ++v)
          bind_masks("hard" + std::to_string(v), static_cast<uint64_t>(v) + 1);
    }

    Tensor sup = Tensor::zeros({rows, c});
    for (int jj = 0; jj < j; ++jj) {
      const int y = batch.labels[jj];
      if (y < 0 || y >= c)
        throw std::runtime_error("train_epoch: label " + std::to_string(y) +
                                 " outside class range");
      sup.at(i_count + jj, y) = 1.0;
    }
    bind["t_sup"] = std::move(sup);

    if (cons_on)
      bind["z_teacher"] = predict(st.net, st.teacher.params, batch.light, PredictMode::Eval);
    if (fm_on) {
      const Tensor weak =
          predict(st.net, st.params, take_rows(batch.light, i_count), PredictMode::Eval);
      const Tensor targets = fixmatch_targets(weak, cfg.fixmatch);
      Tensor fm = Tensor::zeros({rows, c});
      std::memcpy(fm.data(), targets.values.data(),
                  sizeof(double) * targets.values.size());
      bind["t_fm"] = std::move(fm);
    }
    if (lp_on) {
      Tensor lp = Tensor::zeros({rows, c});
      for (int r = 0; r < i_count; ++r) {
        const int gi = batch.indices[r];
        if (st.pseudo.mask[gi] && st.pseudo.weight[gi] > 0.0)
          lp.at(r, st.pseudo.cls[gi]) = st.pseudo.weight[gi];
      }
      bind["t_lp"] = std::move(lp);
    }

    BackpropResult res = backprop(g, bind, wrt, extra);
    std::vector<double> flat = flatten_grads(st.params, res.grads, "s_");
    if (cfg.grad_clip > 0.0) {
      double sq = 0.0;
      for (double v : flat) sq += v * v;
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) {
        const double scale = cfg.grad_clip / norm;
        for (double& v : flat) v *= scale;
      }
    }
    sgd_step(st.params, flat, lr, cfg.momentum, st.velocity);
    if (uses_teacher(cfg.method)) ema_update(st.teacher, st.params);

    rec.loss_total += res.output.values[0];
    size_t slot = 0;
    auto take = [&](int id) {
      return id >= 0 ? res.node_values[slot++].values[0] : 0.0;
    };
    rec.loss_sup += take(t.sup);
    rec.loss_mi += take(t.mi);
    rec.loss_cons += take(t.cons);
    rec.loss_fm += take(t.fm);
    rec.loss_lp += take(t.lp);
  }

  const double inv_b = 1.0 / cfg.batches_per_epoch;
  rec.loss_total *= inv_b;
  rec.loss_sup *= inv_b;
  rec.loss_mi *= inv_b;
  rec.loss_cons *= inv_b;
  rec.loss_fm *= inv_b;
  rec.loss_lp *= inv_b;

  MetricsRecord ev = eval_record(st);
  rec.student_top1 = ev.student_top1;
  rec.student_topk = ev.student_topk;
  rec.teacher_top1 = ev.teacher_top1;
  rec.teacher_topk = ev.teacher_topk;
  rec.entropy_mean = ev.entropy_mean;
  rec.entropy_marginal = ev.entropy_marginal;
  rec.acc_type0 = ev.acc_type0;
  rec.acc_type1 = ev.acc_type1;
  rec.entropy_type0 = ev.entropy_type0;
  rec.entropy_type1 = ev.entropy_type1;

  rec.wall_clock =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

RunResult run_training(const ClassifierConfig& net, const TrainConfig& cfg,
                       const AugmentPolicy& light, const AugmentPolicy& hard,
                       const Dataset& train, const Dataset& test, const SplitPlan& plan,
                       uint64_t seed, const std::vector<int>& test_types) {
  RunResult out;
  out.state = make_train_state(net, cfg, light, hard, train, test, plan, seed, test_types);
  if (cfg.epochs == 0) {
    MetricsRecord r = eval_record(out.state);
    r.epoch = 0;
    r.lr = cosine_lr(0, cfg);
    out.records.push_back(r);
    return out;
  }
  for (int e = 0; e < cfg.epochs; ++e) out.records.push_back(train_epoch(out.state, e));
  return out;
}

PreparedData prepare_data(const DatasetSpec& data, int labels_per_class, bool sequester,
                          uint64_t seed) {
  PreparedData out;
  switch (data.source) {
    case DatasetSpec::Source::Synthetic:
      if (data.n < 1 || data.test_n < 1)
        throw std::invalid_argument("dataset: synthetic sizes must be positive");
      out.train = make_synthetic(data.kind, data.classes, data.n, data.noise,
                                 mix_seed(seed, kTrainDataStream), data.subclasses);
      out.test = make_synthetic(data.kind, data.classes, data.test_n, data.noise,
                                mix_seed(seed, kTestDataStream), data.subclasses);
      break;
    case DatasetSpec::Source::Csv: {
      Dataset ds = load_csv(data.path);
      auto [train, test] = split_holdout(ds, data.test_frac, mix_seed(seed, kTestDataStream));
      out.train = std::move(train);
      out.test = std::move(test);
      break;
    }
    case DatasetSpec::Source::Idx: {
      Dataset ds = load_idx(data.path, data.labels_path);
      auto [train, test] = split_holdout(ds, data.test_frac, mix_seed(seed, kTestDataStream));
      out.train = std::move(train);
      out.test = std::move(test);
      break;
    }
  }
  if (sequester) {
    if (!out.train.has_hierarchy())
      throw std::invalid_argument("sequestered protocol requires a hierarchical dataset");
    const SequesterPlan sp = sequester_classes(out.train, seed);
    out.plan = split_labeled_sequestered(out.train, sp, labels_per_class, seed);
    out.test_types = class_types(out.test, sp);
    out.train = to_superclass_targets(out.train);
    out.test = to_superclass_targets(out.test);
  } else {
    out.plan = split_labeled(out.train, labels_per_class, seed);
  }
  return out;
}

ClassifierConfig complete_net(ClassifierConfig net, const Dataset& train) {
  net.class_count = train.class_count;
  if (train.is_image()) {
    net.img_h = train.x.dim(1);
    net.img_w = train.x.dim(2);
    net.img_ch = train.x.dim(3);
    if (net.conv_channels == 0) {
      net.conv_channels = 8;
      net.conv_kernel = 3;
    }
    net.input_dim = 0;
  } else {
    if (net.conv_channels > 0)
      throw std::invalid_argument("conv front-end requires image data");
    net.input_dim = train.x.dim(1);
  }
  net.validate();
  return net;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir) {
  spec.train.validate();
  if (spec.seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
  std::filesystem::create_directories(out_dir);

  ExperimentResult result;
  std::string timing = "seed,seconds\n";
  std::string summary = "method,labels_per_class,seed,student_top1,student_topk,"
                        "teacher_top1,teacher_topk,entropy_mean,entropy_marginal\n";
  const std::string method = method_name(spec.train.method);

  std::vector<MetricsRecord> finals;
  for (uint64_t seed : spec.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    PreparedData pd = prepare_data(spec.data, spec.labels_per_class, spec.sequester, seed);
    const ClassifierConfig net = complete_net(spec.net, pd.train);
    TrainConfig tc = spec.train;
    if (spec.lp_dump) tc.lp.dump_dir = out_dir;

    const std::string stag = std::to_string(seed);
    std::ofstream mf(out_dir + "/metrics_seed" + stag + ".csv", std::ios::binary);
    if (!mf) throw std::runtime_error("cannot write metrics file in " + out_dir);
    mf << metrics_csv_header() << '\n';

    TrainState st = make_train_state(net, tc, spec.light, spec.hard, pd.train, pd.test,
                                     pd.plan, seed, pd.test_types);
    MetricsRecord last;
    if (tc.epochs == 0) {
      last = eval_record(st);
      last.lr = cosine_lr(0, tc);
      mf << metrics_csv_row(last) << '\n' << std::flush;
    } else {
      for (int e = 0; e < tc.epochs; ++e) {
        last = train_epoch(st, e);
        mf << metrics_csv_row(last) << '\n' << std::flush;
      }
    }

    Checkpoint ck;
    ck.config = net;
    ck.params = st.params;
    ck.has_teacher = uses_teacher(tc.method);
    if (ck.has_teacher) ck.teacher = st.teacher;
    ck.rng_state = seed;
    save_checkpoint(out_dir + "/checkpoint_seed" + stag + ".bin", ck);

    finals.push_back(last);
    result.seeds.push_back({seed, last});
    summary += method + ',' + std::to_string(spec.labels_per_class) + ',' + stag;
    const double cols[] = {last.student_top1, last.student_topk, last.teacher_top1,
                           last.teacher_topk, last.entropy_mean, last.entropy_marginal};
    for (double v : cols) {
      summary += ',';
      append_double(summary, v);
    }
    summary += '\n';
    timing += stag + ',';
    append_double(timing,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    timing += '\n';
  }

  const size_t n = finals.size();
  auto agg = [&](auto field) {
    double mean = 0.0;
    for (const MetricsRecord& r : finals) mean += field(r);
    mean /= static_cast<double>(n);
    double var = 0.0;
    if (n > 1) {
      for (const MetricsRecord& r : finals) {
        const double d = field(r) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n - 1);
    }
    return std::pair<double, double>{mean, std::sqrt(var)};
  };
  const auto [m1, s1] = agg([](const MetricsRecord& r) { return r.student_top1; });
  const auto [mk, sk] = agg([](const MetricsRecord& r) { return r.student_topk; });
  const auto [mt1, st1] = agg([](const MetricsRecord& r) { return r.teacher_top1; });
  const auto [mtk, stk] = agg([](const MetricsRecord& r) { return r.teacher_topk; });
  const auto [me, se] = agg([](const MetricsRecord& r) { return r.entropy_mean; });
  const auto [mm, sm] = agg([](const MetricsRecord& r) { return r.entropy_marginal; });
  result.mean_top1 = m1;
  result.std_top1 = s1;
  for (const char* row : {"mean", "std"}) {
    const bool is_mean = std::strcmp(row, "mean") == 0;
    summary += method + ',' + std::to_string(spec.labels_per_class) + ',' + row;
    const double cols[] = {is_mean ? m1 : s1, is_mean ? mk : sk, is_mean ? mt1 : st1,
                           is_mean ? mtk : stk, is_mean ? me : se, is_mean ? mm : sm};
    for (double v : cols) {
      summary += ',';
      append_double(summary, v);
    }
    summary += '\n';
  }

  std::ofstream sf(out_dir + "/summary.csv", std::ios::binary);
  sf << summary;
  if (!sf) throw std::runtime_error("cannot write summary in " + out_dir);
  std::ofstream tf(out_dir + "/timing.csv", std::ios::binary);
  tf << timing;
  if (!tf) throw std::runtime_error("cannot write timing in " + out_dir);
  return result;
}

}  // namespace muscle
