#pragma once

#include <map>
#include <string>
#include <vector>

#include "patchformer/data.hpp"
#include "patchformer/model.hpp"

namespace patchformer {

// Everything needed to rebuild a trained model and use it on raw data.
struct Checkpoint {
  ModelConfig config;
  std::map<std::string, std::string> metadata;  // free-form run info
  std::vector<std::string> channel_names;       // scaler channel order
  Scaler scaler;
  std::vector<std::string> param_names;
  std::vector<Shape> param_shapes;
  ParameterStore::Snapshot param_values;

  // Fresh model carrying the stored weights.
  PatchformerModel build_model() const;
  bool operator==(const Checkpoint&) const = default;
};

Checkpoint make_checkpoint(const PatchformerModel& model, const Scaler& scaler,
                           const std::vector<std::string>& channel_names,
                           const std::map<std::string, std::string>& metadata = {});

// Overwrites the model's weights; names and shapes must match exactly.
void load_weights(PatchformerModel& model, const Checkpoint& ckpt);

// Little-endian binary container; doubles are stored as raw IEEE-754 bits so
// a round trip is exact. Unreadable or malformed files are ConfigErrors.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace patchformer
