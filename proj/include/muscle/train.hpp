#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muscle/data.hpp"
#include "muscle/labelprop.hpp"
#include "muscle/losses.hpp"
#include "muscle/model.hpp"
#include "muscle/pseudo_labels.hpp"

namespace muscle {

/// Stream tags for the training loop, mixed with the run seed so every
/// random decision has its own reproducible stream.
inline constexpr uint64_t kBatchStream = 0x6d736c2d62746368ULL;
inline constexpr uint64_t kLightStream = 0x6d736c2d6c696768ULL;
inline constexpr uint64_t kHardStream = 0x6d736c2d68617264ULL;
inline constexpr uint64_t kTrainDropStream = 0x6d736c2d74647270ULL;
inline constexpr uint64_t kTrainDataStream = 0x6d736c2d64617461ULL;
inline constexpr uint64_t kTestDataStream = 0x6d736c2d74657374ULL;

enum class Method {
  Supervised,
  Muscle,
  MuscleMT,
  MuscleMTLP,
  FixMatch,
  MuscleFixMatch,
};

Method method_from(const std::string& name);  // throws on unknown name
std::string method_name(Method m);

/// Which loss terms a method wires up. Terms also drop out of the
/// training graph entirely when their weight is zero, so a variant with
/// zeroed extras is bit-for-bit its base variant.
bool uses_mutual_information(Method m);
bool uses_teacher(Method m);
bool uses_label_propagation(Method m);
bool uses_fixmatch(Method m);

enum class LrMode { FullHorizon, CycleFraction };

struct LrSchedule {
  LrMode mode = LrMode::FullHorizon;
  double lr0 = 0.05;
  int horizon = 0;  // full-horizon zero point; 0 means "at epochs"
  double fraction = 7.0 / 16.0;
};

struct LabelPropSettings {
  int knn = 10;
  double kappa = 0.99;
  int top_k = 0;              // 0 keeps every confident row
  double warmup_frac = 0.5;   // fraction of epochs before LP starts
  double weight = 1.0;        // multiplier on the pseudo-label loss
  std::string dump_dir;       // when set, debug dumps on first refresh
};

struct TrainConfig {
  Method method = Method::Supervised;
  int epochs = 30;
  int batches_per_epoch = 20;
  int labeled_per_batch = 16;  // J
  double ratio = 1.0;          // r, unlabeled-to-labeled
  LrSchedule lr;
  double momentum = 0.9;
  LossWeights weights;     // alpha, beta
  int alpha_warmup = 0;    // epochs of linear ramp on alpha; 0 disables
  double ema_mu = 0.99;
  FixMatchConfig fixmatch;
  int hard_replicas = 3;   // k
  LabelPropSettings lp;
  double grad_clip = 0.0;  // max gradient norm; 0 disables
  int top_k = 5;           // for top-k accuracy, clamped to C
  uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

/// Piecewise-cosine learning rate. Full-horizon mode decays
/// lr0 * 0.5 * (1 + cos(pi * epoch/horizon)) and may put the zero past
/// the last trained epoch; cycle-fraction mode follows
/// lr0 * cos(fraction * pi * epoch/epochs) and never reaches zero.
double cosine_lr(int epoch, const TrainConfig& cfg);

/// Momentum SGD: v <- m*v + g; theta <- theta - lr*v. Throws on any
/// non-finite gradient, naming the parameter position.
void sgd_step(ParamSet& params, const std::vector<double>& grads, double lr,
              double momentum, std::vector<double>& velocity);

struct EvalResult {
  double top1 = 0.0, topk = 0.0;
  double entropy_mean = 0.0;      // mean per-row prediction entropy
  double entropy_marginal = 0.0;  // entropy of the averaged prediction
  bool has_types = false;
  // Class-type breakouts (0 = labeled-type, 1 = sequestered-type); NaN
  // when no type map was given or a type has no samples.
  double acc_type0 = 0.0, acc_type1 = 0.0;
  double entropy_type0 = 0.0, entropy_type1 = 0.0;
};

EvalResult evaluate_model(const ClassifierConfig& cfg, const ParamSet& params,
                          const Dataset& test, int top_k,
                          const std::vector<int>* types = nullptr);

struct MetricsRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_sup = 0.0;    // l_s, batch mean over the epoch
  double loss_mi = 0.0;     // l_u (raw mutual information)
  double loss_cons = 0.0;   // l_c (raw consistency MSE)
  double loss_fm = 0.0;     // thresholded pseudo-label CE
  double loss_lp = 0.0;     // diffusion pseudo-label CE
  double loss_total = 0.0;  // the optimized objective
  double student_top1 = 0.0, student_topk = 0.0;
  double teacher_top1 = 0.0, teacher_topk = 0.0;  // NaN without a teacher
  double entropy_mean = 0.0, entropy_marginal = 0.0;
  double acc_type0 = 0.0, acc_type1 = 0.0;          // NaN without a type map
  double entropy_type0 = 0.0, entropy_type1 = 0.0;  // likewise
  double wall_clock = 0.0;  // seconds; kept out of the metrics CSV
};

/// The fixed metrics CSV schema (wall-clock deliberately excluded so
/// identical runs produce identical bytes).
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);

struct TrainState {
  ClassifierConfig net;
  TrainConfig cfg;
  AugmentPolicy light, hard;
  Dataset train;  // targets already in the training label space
  Dataset test;
  SplitPlan plan;
  std::vector<int> test_types;  // empty unless sequestered
  ParamSet params;
  std::vector<double> velocity;
  EmaTeacher teacher;  // meaningful only when the method uses one
  PseudoLabelSet pseudo;
  bool lp_ready = false;
  bool lp_dumped = false;
  uint64_t seed = 0;
};

TrainState make_train_state(const ClassifierConfig& net, const TrainConfig& cfg,
                            const AugmentPolicy& light, const AugmentPolicy& hard,
                            Dataset train, Dataset test, SplitPlan plan, uint64_t seed,
                            std::vector<int> test_types = {});

/// One optimization epoch: composes batches, assembles the method's
/// loss graph, steps SGD once per batch (plus one EMA update per step
/// when a teacher is active), then evaluates on the test set.
MetricsRecord train_epoch(TrainState& st, int epoch);

struct RunResult {
  std::vector<MetricsRecord> records;  // one per epoch (or one eval-only row)
  TrainState state;                    // final parameters and teacher
};

/// Full single-seed run. epochs = 0 evaluates the initialized model
/// and emits a single record.
RunResult run_training(const ClassifierConfig& net, const TrainConfig& cfg,
                       const AugmentPolicy& light, const AugmentPolicy& hard,
                       const Dataset& train, const Dataset& test, const SplitPlan& plan,
                       uint64_t seed, const std::vector<int>& test_types = {});

/// Where the samples come from: a generator or a file pair.
struct DatasetSpec {
  enum class Source { Synthetic, Csv, Idx };
  Source source = Source::Synthetic;
  SyntheticKind kind = SyntheticKind::Blobs;
  int classes = 4;
  int subclasses = 2;  // hierarchical generator only
  int n = 2000;        // training samples per seed
  int test_n = 1000;
  double noise = 1.0;
  std::string path;         // csv file, or idx image file
  std::string labels_path;  // idx label file
  double test_frac = 0.25;  // holdout fraction for file sources
};

struct ExperimentSpec {
  DatasetSpec data;
  ClassifierConfig net;  // input dims and class count filled per dataset
  TrainConfig train;
  AugmentPolicy light, hard;
  int labels_per_class = 10;
  std::vector<uint64_t> seeds = {1};
  bool sequester = false;
  bool lp_dump = false;
};

struct PreparedData {
  Dataset train, test;
  SplitPlan plan;
  std::vector<int> test_types;  // empty unless sequestered
};

/// Materializes train/test sets and the labeled split for one seed.
/// Sequestered runs remap targets to superclasses and attach the
/// class-type map; they require a hierarchical dataset.
PreparedData prepare_data(const DatasetSpec& data, int labels_per_class, bool sequester,
                          uint64_t seed);

/// Fills input dimensions and class count from a concrete dataset.
ClassifierConfig complete_net(ClassifierConfig net, const Dataset& train);

struct SeedSummary {
  uint64_t seed = 0;
  MetricsRecord final_record;
};

struct ExperimentResult {
  std::vector<SeedSummary> seeds;
  double mean_top1 = 0.0;
  double std_top1 = 0.0;  // n-1 denominator; 0 for a single seed
};

/// Multi-seed experiment writing, under out_dir: metrics_seed<S>.csv
/// (flushed row by row), checkpoint_seed<S>.bin, summary.csv with
/// per-seed and aggregate rows, and timing.csv (wall-clock only).
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir);

}  // namespace muscle
