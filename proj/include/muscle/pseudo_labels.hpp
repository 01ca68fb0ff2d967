#pragma once

#include <cstdint>
#include <vector>

namespace muscle {

/// Per-sample pseudo-label assignment. Ground-truth samples keep their
/// true class at weight 1. Samples that received no label (e.g. an
/// all-zero diffusion row) have mask 0, weight 0 and class -1.
struct PseudoLabelSet {
  std::vector<int> cls;
  std::vector<double> weight;   // in [0,1]
  std::vector<uint8_t> mask;    // 1 = received a label

  int size() const { return static_cast<int>(cls.size()); }
};

}  // namespace muscle
