#include "muscle/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "muscle/rng.hpp"

namespace muscle {

void ClassifierConfig::validate() const {
  if (class_count < 2) throw std::invalid_argument("classifier: class count must be >= 2");
  for (int w : hidden)
    if (w < 1) throw std::invalid_argument("classifier: hidden widths must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("classifier: dropout rate must lie in [0,1)");
  if (has_conv()) {
    if (conv_kernel < 1) throw std::invalid_argument("classifier: conv kernel must be >= 1");
    if (img_h < 1 || img_w < 1 || img_ch < 1)
      throw std::invalid_argument("classifier: conv front-end needs image dimensions");
    if (img_h - 2 * (conv_kernel - 1) < 1 || img_w - 2 * (conv_kernel - 1) < 1)
      throw std::invalid_argument("classifier: conv kernel too large for image");
  } else if (input_dim < 1) {
    throw std::invalid_argument("classifier: input dim must be positive");
  }
}

int ClassifierConfig::dense_input_dim() const {
  if (!has_conv()) return input_dim;
  const int oh = img_h - 2 * (conv_kernel - 1);
  const int ow = img_w - 2 * (conv_kernel - 1);
  return oh * ow * conv_channels;
}

std::vector<LayerDesc> build_layout(const ClassifierConfig& cfg) {
  cfg.validate();
  std::vector<LayerDesc> layout;
  long long off = 0;
  auto add_conv = [&](int ci, int co) {
    LayerDesc d;
    d.conv = true;
    d.kh = d.kw = cfg.conv_kernel;
    d.ci = ci;
    d.co = co;
    d.w_len = static_cast<long long>(d.kh) * d.kw * ci * co;
    d.b_len = co;
    d.w_off = off;
    d.b_off = off + d.w_len;
    off += d.w_len + d.b_len;
    layout.push_back(d);
  };
  auto add_dense = [&](int in, int out) {
    LayerDesc d;
    d.in = in;
    d.out = out;
    d.w_len = static_cast<long long>(in) * out;
    d.b_len = out;
    d.w_off = off;
    d.b_off = off + d.w_len;
    off += d.w_len + d.b_len;
    layout.push_back(d);
  };
  if (cfg.has_conv()) {
    add_conv(cfg.img_ch, cfg.conv_channels);
    add_conv(cfg.conv_channels, cfg.conv_channels);
  }
  int width = cfg.dense_input_dim();
  for (int h : cfg.hidden) {
    add_dense(width, h);
    width = h;
  }
  add_dense(width, cfg.class_count);
  return layout;
}

ParamSet init_params(const ClassifierConfig& cfg, uint64_t seed) {
  ParamSet p;
  p.layout = build_layout(cfg);
  const LayerDesc& last = p.layout.back();
  p.theta.assign(static_cast<size_t>(last.b_off + last.b_len), 0.0);
  for (size_t l = 0; l < p.layout.size(); ++l) {
    const LayerDesc& d = p.layout[l];
    const long long fan_in = d.conv ? static_cast<long long>(d.kh) * d.kw * d.ci : d.in;
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng rng(mix_seed(seed, kInitStream, static_cast<uint64_t>(l)));
    for (long long i = 0; i < d.w_len; ++i)
      p.theta[static_cast<size_t>(d.w_off + i)] = scale * rng.normal();
  }
  return p;
}

ParamNodes declare_param_inputs(ComputeGraph& g, const ClassifierConfig& cfg,
                                const std::string& prefix) {
  const std::vector<LayerDesc> layout = build_layout(cfg);
  ParamNodes pn;
  for (size_t l = 0; l < layout.size(); ++l) {
    const LayerDesc& d = layout[l];
    const std::string tag = std::to_string(l);
    std::vector<int> wshape = d.conv ? std::vector<int>{d.kh, d.kw, d.ci, d.co}
                                     : std::vector<int>{d.in, d.out};
    pn.w.push_back(g.input(prefix + "w" + tag, std::move(wshape)));
    pn.b.push_back(g.input(prefix + "b" + tag, {d.conv ? d.co : d.out}));
  }
  return pn;
}

ForwardNodes forward_on(ComputeGraph& g, const ClassifierConfig& cfg, const ParamNodes& pn,
                        int x_node, const std::vector<int>& mask_nodes) {
  const std::vector<LayerDesc> layout = build_layout(cfg);
  if (pn.w.size() != layout.size() || pn.b.size() != layout.size())
    throw std::invalid_argument("forward_on: parameter nodes do not match config");
  if (!mask_nodes.empty() && mask_nodes.size() != cfg.hidden.size())
    throw std::invalid_argument("forward_on: need one dropout mask per hidden layer");
  const int rows = g.shape(x_node).at(0);

  ForwardNodes out;
  out.x = x_node;
  int h = x_node;
  size_t dense_seen = 0;
  for (size_t l = 0; l < layout.size(); ++l) {
    const LayerDesc& d = layout[l];
    if (d.conv) {
      h = g.relu(g.add(g.conv2d(h, pn.w[l]), pn.b[l]));
      if (l == 1)  // last conv layer: flatten for the dense chain
        h = g.reshape(h, {rows, cfg.dense_input_dim()});
      continue;
    }
    const bool final_layer = l + 1 == layout.size();
    if (final_layer) out.penult = h;
    h = g.add(g.matmul(h, pn.w[l]), pn.b[l]);
    if (!final_layer) {
      h = g.relu(h);
      if (!mask_nodes.empty()) h = g.multiply(h, mask_nodes[dense_seen]);
    }
    ++dense_seen;
  }
  out.logits = h;
  out.probs = g.softmax(h);
  return out;
}

ForwardNodes append_forward(ComputeGraph& g, const ClassifierConfig& cfg, int rows,
                            const std::string& prefix, bool dropout_active) {
  cfg.validate();
  if (rows < 1) throw std::invalid_argument("append_forward: rows must be positive");
  const int x = cfg.has_conv() ? g.input(prefix + "x", {rows, cfg.img_h, cfg.img_w, cfg.img_ch})
                               : g.input(prefix + "x", {rows, cfg.input_dim});
  ParamNodes pn = declare_param_inputs(g, cfg, prefix);
  std::vector<int> masks;
  if (dropout_active && cfg.use_dropout && cfg.dropout_rate > 0.0)
    for (size_t l = 0; l < cfg.hidden.size(); ++l)
      masks.push_back(g.input(prefix + "drop" + std::to_string(l),
                              {rows, cfg.hidden[l]}));
  return forward_on(g, cfg, pn, x, masks);
}

void bind_params(Bindings& b, const ClassifierConfig& cfg, const ParamSet& params,
                 const std::string& prefix) {
  const std::vector<LayerDesc> layout = build_layout(cfg);
  if (layout != params.layout)
    throw std::invalid_argument("bind_params: parameter layout does not match config");
  for (size_t l = 0; l < layout.size(); ++l) {
    const LayerDesc& d = layout[l];
    const std::string tag = std::to_string(l);
    std::vector<int> wshape = d.conv ? std::vector<int>{d.kh, d.kw, d.ci, d.co}
                                     : std::vector<int>{d.in, d.out};
    Tensor w(std::move(wshape));
    std::memcpy(w.data(), params.theta.data() + d.w_off, sizeof(double) * w.values.size());
    Tensor bias({d.conv ? d.co : d.out});
    std::memcpy(bias.data(), params.theta.data() + d.b_off,
                sizeof(double) * bias.values.size());
    b[prefix + "w" + tag] = std::move(w);
    b[prefix + "b" + tag] = std::move(bias);
  }
}

Tensor dropout_mask(int rows, int width, double rate, uint64_t stream_seed) {
  Tensor m({rows, width});
  Rng rng(stream_seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& v : m.values) v = rng.coin(rate) ? 0.0 : keep_scale;
  return m;
}

void bind_dropout(Bindings& b, const ClassifierConfig& cfg, int rows,
                  const std::string& prefix, uint64_t seed) {
  for (size_t l = 0; l < cfg.hidden.size(); ++l)
    b[prefix + "drop" + std::to_string(l)] =
        dropout_mask(rows, cfg.hidden[l], cfg.dropout_rate,
                     mix_seed(seed, kDropoutStream, static_cast<uint64_t>(l)));
}

namespace {

void check_input_shape(const ClassifierConfig& cfg, const Tensor& x) {
  if (cfg.has_conv()) {
    if (x.rank() != 4 || x.dim(1) != cfg.img_h || x.dim(2) != cfg.img_w ||
        x.dim(3) != cfg.img_ch)
      throw std::invalid_argument("predict: input " + shape_str(x.shape) +
                                  " does not match configured image dimensions");
  } else if (x.rank() != 2 || x.dim(1) != cfg.input_dim) {
    throw std::invalid_argument("predict: input " + shape_str(x.shape) +
                                " does not match input dim " + std::to_string(cfg.input_dim));
  }
}

}  // namespace

Tensor predict(const ClassifierConfig& cfg, const ParamSet& params, const Tensor& x,
               PredictMode mode, uint64_t seed) {
  check_input_shape(cfg, x);
  const int rows = x.dim(0);
  ComputeGraph g;
  const bool dropping = mode == PredictMode::Train;
  ForwardNodes nodes = append_forward(g, cfg, rows, "m_", dropping);
  g.set_output(nodes.probs);
  Bindings b;
  b["m_x"] = x;
  bind_params(b, cfg, params, "m_");
  if (dropping && cfg.use_dropout && cfg.dropout_rate > 0.0)
    bind_dropout(b, cfg, rows, "m_", seed);
  return evaluate(g, b);
}

ForwardResult forward_eval(const ClassifierConfig& cfg, const ParamSet& params,
                           const Tensor& x) {
  check_input_shape(cfg, x);
  ComputeGraph g;
  ForwardNodes nodes = append_forward(g, cfg, x.dim(0), "m_", false);
  g.set_output(nodes.probs);
  Bindings b;
  b["m_x"] = x;
  bind_params(b, cfg, params, "m_");
  std::vector<Tensor> vals = evaluate_nodes(g, b, {nodes.probs, nodes.penult});
  ForwardResult r;
  r.probs = std::move(vals[0]);
  r.penult = std::move(vals[1]);
  return r;
}

void ema_update(EmaTeacher& teacher, const ParamSet& student) {
  if (!teacher.params.same_layout(student))
    throw std::invalid_argument("ema_update: teacher and student layouts differ");
  if (teacher.mu < 0.0 || teacher.mu > 1.0)
    throw std::invalid_argument("ema_update: mu must lie in [0,1]");
  const double mu = teacher.mu;
  const double one_minus = 1.0 - mu;
  for (size_t i = 0; i < teacher.params.theta.size(); ++i)
    teacher.params.theta[i] = one_minus * student.theta[i] + mu * teacher.params.theta[i];
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'C', 'L', 'C', 'K', 'P', '1'};

template <class T>
void put(std::ostream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void get(std::istream& is, T& v, const std::string& path) {
  static_assert(std::is_trivially_copyable_v<T>);
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint truncated: " + path);
}

void put_params(std::ostream& os, const ParamSet& p) {
  put(os, static_cast<int64_t>(p.layout.size()));
  for (const LayerDesc& d : p.layout) {
    put(os, static_cast<uint8_t>(d.conv));
    put(os, d.in);
    put(os, d.out);
    put(os, d.kh);
    put(os, d.kw);
    put(os, d.ci);
    put(os, d.co);
    put(os, d.w_off);
    put(os, d.w_len);
    put(os, d.b_off);
    put(os, d.b_len);
  }
  put(os, static_cast<int64_t>(p.theta.size()));
  os.write(reinterpret_cast<const char*>(p.theta.data()),
           static_cast<std::streamsize>(sizeof(double) * p.theta.size()));
}

ParamSet get_params(std::istream& is, const std::string& path) {
  ParamSet p;
  int64_t layers = 0;
  get(is, layers, path);
  if (layers < 0 || layers > 1'000'000) throw std::runtime_error("checkpoint corrupt: " + path);
  p.layout.resize(static_cast<size_t>(layers));
  for (LayerDesc& d : p.layout) {
    uint8_t conv = 0;
    get(is, conv, path);
    d.conv = conv != 0;
    get(is, d.in, path);
    get(is, d.out, path);
    get(is, d.kh, path);
    get(is, d.kw, path);
    get(is, d.ci, path);
    get(is, d.co, path);
    get(is, d.w_off, path);
    get(is, d.w_len, path);
    get(is, d.b_off, path);
    get(is, d.b_len, path);
  }
  int64_t count = 0;
  get(is, count, path);
  if (count < 0) throw std::runtime_error("checkpoint corrupt: " + path);
  p.theta.resize(static_cast<size_t>(count));
  is.read(reinterpret_cast<char*>(p.theta.data()),
          static_cast<std::streamsize>(sizeof(double) * p.theta.size()));
  if (!is) throw std::runtime_error("checkpoint truncated: " + path);
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  const ClassifierConfig& c = ck.config;
  put(os, c.input_dim);
  put(os, static_cast<int64_t>(c.hidden.size()));
  for (int h : c.hidden) put(os, h);
  put(os, c.class_count);
  put(os, c.dropout_rate);
  put(os, static_cast<uint8_t>(c.use_dropout));
  put(os, c.conv_channels);
  put(os, c.conv_kernel);
  put(os, c.img_h);
  put(os, c.img_w);
  put(os, c.img_ch);
  put_params(os, ck.params);
  put(os, static_cast<uint8_t>(ck.has_teacher));
  if (ck.has_teacher) {
    put_params(os, ck.teacher.params);
    put(os, ck.teacher.mu);
  }
  put(os, ck.rng_state);
  if (!os) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  Checkpoint ck;
  ClassifierConfig& c = ck.config;
  get(is, c.input_dim, path);
  int64_t hidden = 0;
  get(is, hidden, path);
  if (hidden < 0 || hidden > 1'000'000) throw std::runtime_error("checkpoint corrupt: " + path);
  c.hidden.resize(static_cast<size_t>(hidden));
  for (int& h : c.hidden) get(is, h, path);
  get(is, c.class_count, path);
  get(is, c.dropout_rate, path);
  uint8_t flag = 0;
  get(is, flag, path);
  c.use_dropout = flag != 0;
  get(is, c.conv_channels, path);
  get(is, c.conv_kernel, path);
  get(is, c.img_h, path);
  get(is, c.img_w, path);
  get(is, c.img_ch, path);
  ck.params = get_params(is, path);
  get(is, flag, path);
  ck.has_teacher = flag != 0;
  if (ck.has_teacher) {
    ck.teacher.params = get_params(is, path);
    get(is, ck.teacher.mu, path);
  }
  get(is, ck.rng_state, path);
  return ck;
}

}  // namespace muscle
