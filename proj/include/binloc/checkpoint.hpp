#pragma once

#include <filesystem>

#include "binloc/features.hpp"
#include "binloc/nn.hpp"
#include "binloc/training.hpp"

namespace binloc {

struct Checkpoint {
  ModelState params;
  AdamState<float> optimizer;
  FeatureSetSpec feature_spec;

  /// Freshly initialized model with zeroed optimizer state (step 0).
  static Checkpoint fresh(const FeatureSetSpec& spec, std::uint64_t seed);
};

/// One JSON header line, then float32 blocks: parameters, first moments,
/// second moments, each in canonical block order.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also checks that the checkpoint was trained on `expected`'s plane count.
Checkpoint load_checkpoint(const std::filesystem::path& path, const FeatureSetSpec& expected);

}  // namespace binloc
