#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muscle/graph.hpp"
#include "muscle/tensor.hpp"

namespace muscle {

/// Fixed stream tags so tests can replay the exact draws a model made.
/// Layer l of a net seeded with s draws from Rng(mix_seed(s, tag, l)).
inline constexpr uint64_t kInitStream = 0x6d736c2d696e6974ULL;
inline constexpr uint64_t kDropoutStream = 0x6d736c2d64726f70ULL;

/// Small softmax classifier: optional two-layer conv front-end for
/// image inputs, then an MLP with ReLU hidden layers.
struct ClassifierConfig {
  int input_dim = 0;              // vector data; ignored when conv active
  std::vector<int> hidden = {64, 64};
  int class_count = 0;
  double dropout_rate = 0.0;
  bool use_dropout = false;
  int conv_channels = 0;          // 0 disables the conv front-end
  int conv_kernel = 0;
  int img_h = 0, img_w = 0, img_ch = 0;

  bool has_conv() const { return conv_channels > 0; }
  void validate() const;  // throws std::invalid_argument
  /// Flattened feature width entering the dense chain.
  int dense_input_dim() const;
};

struct LayerDesc {
  bool conv = false;
  int in = 0, out = 0;             // dense
  int kh = 0, kw = 0, ci = 0, co = 0;  // conv
  long long w_off = 0, w_len = 0, b_off = 0, b_len = 0;

  bool operator==(const LayerDesc&) const = default;
};

/// Flat parameter vector plus the slice layout that maps it to layers.
struct ParamSet {
  std::vector<double> theta;
  std::vector<LayerDesc> layout;

  bool same_layout(const ParamSet& o) const { return layout == o.layout; }
};

std::vector<LayerDesc> build_layout(const ClassifierConfig& cfg);

/// Zero-mean weights with std 1/sqrt(fan-in); biases zero. Layer l
/// draws from Rng(mix_seed(seed, kInitStream, l)).
ParamSet init_params(const ClassifierConfig& cfg, uint64_t seed);

enum class PredictMode { Train, Eval };

/// Node ids of the classifier subgraph appended by append_forward.
struct ForwardNodes {
  int x = -1;
  int logits = -1;
  int probs = -1;
  int penult = -1;  // activation entering the final dense layer
};

/// Node ids of the parameter inputs shared by every view of one net.
struct ParamNodes {
  std::vector<int> w, b;  // one per layer, layout order
};

/// Declares prefix+"w<l>"/"b<l>" input nodes for every layer.
ParamNodes declare_param_inputs(ComputeGraph& g, const ClassifierConfig& cfg,
                                const std::string& prefix);

/// Appends one forward pass over an existing x input node, reusing
/// shared parameter inputs so several views can run through the same
/// weights. mask_nodes supplies one dropout-mask node per hidden layer,
/// or stays empty for a deterministic pass.
ForwardNodes forward_on(ComputeGraph& g, const ClassifierConfig& cfg, const ParamNodes& pn,
                        int x_node, const std::vector<int>& mask_nodes = {});

/// Appends the full forward pass for `rows` samples. Inputs are named
/// prefix+"x", prefix+"w<l>"/"b<l>" per layer, and (when dropout is
/// active) prefix+"drop<l>" per hidden layer.
ForwardNodes append_forward(ComputeGraph& g, const ClassifierConfig& cfg, int rows,
                            const std::string& prefix, bool dropout_active);

/// Binds prefix+"w<l>"/"b<l>" to slices of params.theta.
void bind_params(Bindings& b, const ClassifierConfig& cfg, const ParamSet& params,
                 const std::string& prefix);

/// Inverted-dropout mask: entries are 1/(1-rate) with probability
/// 1-rate, else 0.
Tensor dropout_mask(int rows, int width, double rate, uint64_t stream_seed);

/// Binds prefix+"drop<l>" for every hidden layer, layer l drawing from
/// Rng(mix_seed(seed, kDropoutStream, l)).
void bind_dropout(Bindings& b, const ClassifierConfig& cfg, int rows,
                  const std::string& prefix, uint64_t seed);

/// Likelihood rows for a batch: [N,C], each row a distribution. Train
/// mode applies dropout when configured; eval mode is deterministic.
Tensor predict(const ClassifierConfig& cfg, const ParamSet& params, const Tensor& x,
               PredictMode mode, uint64_t seed = 0);

/// Eval-mode forward returning both likelihoods and the penultimate
/// activations (the embedding layer).
struct ForwardResult {
  Tensor probs;   // [N,C]
  Tensor penult;  // [N,E]
};
ForwardResult forward_eval(const ClassifierConfig& cfg, const ParamSet& params, const Tensor& x);

struct EmaTeacher {
  ParamSet params;
  double mu = 0.99;
};

/// theta_t' = (1-mu)*theta_s' + mu*theta_t, applied in place to the
/// teacher. The updated student carries weight 1-mu.
void ema_update(EmaTeacher& teacher, const ParamSet& student);

/// Versioned binary snapshot of a training state; round-trips bit-exact.
struct Checkpoint {
  ClassifierConfig config;
  ParamSet params;
  bool has_teacher = false;
  EmaTeacher teacher;
  uint64_t rng_state = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace muscle
