#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "muscle/rng.hpp"
#include "muscle/tensor.hpp"

namespace muscle {

/// Stream tags for the data module's seed derivations.
inline constexpr uint64_t kSplitStream = 0x6d736c2d73706c74ULL;
inline constexpr uint64_t kSequesterStream = 0x6d736c2d73657175ULL;
inline constexpr uint64_t kSynthStream = 0x6d736c2d73796e74ULL;

/// Feature matrix [N,D] or image stack [N,H,W,ch] plus integer labels.
/// `superclass`, when non-empty, maps each subclass label to its
/// superclass (hierarchical datasets).
struct Dataset {
  Tensor x;
  std::vector<int> labels;
  int class_count = 0;
  std::vector<int> superclass;

  int size() const { return x.rank() > 0 ? x.dim(0) : 0; }
  bool is_image() const { return x.rank() == 4; }
  bool has_hierarchy() const { return !superclass.empty(); }
  int superclass_count() const;
  void validate() const;  // throws std::invalid_argument
};

/// One row of the dataset as a rank-1 or rank-3 tensor.
Tensor dataset_row(const Dataset& ds, int i);

/// Rows of `ds` selected by `indices`, in order.
Dataset subset(const Dataset& ds, const std::vector<int>& indices);

struct SplitPlan {
  std::vector<int> labeled;
  std::vector<int> unlabeled;
  uint64_t seed = 0;
};

/// Uniformly samples `per_class` labeled indices from every class; the
/// rest become the unlabeled pool.
SplitPlan split_labeled(const Dataset& ds, int per_class, uint64_t seed);

struct SequesterPlan {
  std::vector<int> sequestered;      // chosen subclass per superclass
  std::vector<uint8_t> is_sequestered;  // per subclass

  bool all_sequestered() const;
};

/// Picks one subclass per superclass whose label information is fully
/// withheld; its samples may only ever enter the unlabeled pool.
SequesterPlan sequester_classes(const Dataset& ds, uint64_t seed);

/// split_labeled restricted to non-sequestered subclasses; sequestered
/// samples all land in the unlabeled pool.
SplitPlan split_labeled_sequestered(const Dataset& ds, const SequesterPlan& plan,
                                    int per_class, uint64_t seed);

/// The same samples with labels mapped to superclasses (the sequestered
/// training target).
Dataset to_superclass_targets(const Dataset& ds);

/// Per-sample class type for sequestered runs: 1 when the sample's
/// subclass is sequestered, else 0.
std::vector<int> class_types(const Dataset& ds, const SequesterPlan& plan);

/// Training batch [x_u1..x_uI, x_l1..x_lJ]: unlabeled block first,
/// labeled block last, views row-aligned across the whole batch.
struct ComposedBatch {
  std::vector<int> indices;
  int unlabeled_count = 0;  // I
  int labeled_count = 0;    // J
  std::vector<int> labels;  // for the labeled block
  Tensor base;              // raw rows
  Tensor light;             // filled by fill_light
  std::vector<Tensor> hard; // filled by expand_hard_replicas
};

/// I = round-half-up(r*J) unlabeled plus J labeled rows, each drawn
/// uniformly without replacement within the batch.
ComposedBatch compose_batch(const Dataset& ds, const SplitPlan& plan, double r, int j,
                            Rng& rng);

struct AugmentPolicy {
  enum class Kind { Light, Hard } kind = Kind::Light;
  double noise_std = 0.0;
  double scale_lo = 1.0, scale_hi = 1.0;  // multiplicative
  double rotation = 0.0;   // max |angle|, first two features of vector data
  double feature_dropout = 0.0;
  // image-only knobs
  bool flip = false;
  int shift = 0;           // max translation in pixels, zero fill
  double brightness = 0.0; // max additive offset
};

/// Deterministic per (x, policy, seed). Draw order: scale, rotation
/// (vectors) / flip, shift, brightness (images), per-feature dropout,
/// per-element noise.
Tensor augment(const Tensor& x, const AugmentPolicy& policy, uint64_t seed);

/// Applies `augment` to every row, row i seeded with mix_seed(seed, i).
Tensor augment_rows(const Tensor& rows, const AugmentPolicy& policy, uint64_t seed);

/// Populates batch.light from batch.base.
void fill_light(ComposedBatch& batch, const AugmentPolicy& policy, uint64_t seed);

/// Appends k hard views of batch.base, replica j seeded with
/// mix_seed(seed, j); all views stay aligned to the light view.
void expand_hard_replicas(ComposedBatch& batch, int k, const AugmentPolicy& policy,
                          uint64_t seed);

/// CSV: one sample per line, features then an integer label in the last
/// column; optional header. Parse errors carry the 1-based line number.
Dataset load_csv(const std::string& path);
void write_csv(const std::string& path, const Dataset& ds);

/// IDX pair: big-endian image container (magic 0x00000803, dims N,H,W,
/// bytes scaled to [0,1]) plus label container (magic 0x00000801).
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& ds);

enum class SyntheticKind { Blobs, Moons, HierarchicalBlobs };

SyntheticKind synthetic_kind_from(const std::string& name);  // throws on unknown

/// Deterministic 2-D toy datasets. Blobs: class centers on a circle of
/// radius 4 around the origin. Moons: two interleaved arcs (classes
/// must be 2). Hierarchical blobs: `classes` superclass centers, each
/// with `subclasses` satellite clusters at radius 1.2; labels are
/// subclass indices and the superclass map is filled in.
Dataset make_synthetic(SyntheticKind kind, int classes, int n, double noise, uint64_t seed,
                       int subclasses = 2);

/// Seeded shuffle split into (train, test) with the given test fraction.
std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double test_frac, uint64_t seed);

}  // namespace muscle
