#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "pvtformer/model.hpp"
#include "pvtformer/optim.hpp"
#include "pvtformer/param.hpp"

namespace pvt {

// Checkpoint container: 8-byte magic "PVTCKPT1", u64 little-endian JSON
// length, JSON index (config snapshot, epoch, best val loss, optimizer step,
// tensor table: name/dtype/shape/offset), then contiguous f32 blobs in table
// order.
inline constexpr char kCheckpointMagic[8] = {'P', 'V', 'T', 'C',
                                             'K', 'P', 'T', '1'};

struct CheckpointMeta {
  int epoch = 0;
  double best_val_loss = 0.0;
  std::int64_t adam_t = 0;
  bool has_optimizer = false;
  PVTFormerConfig config;
};

nlohmann::json config_to_json(const PVTFormerConfig& cfg);
PVTFormerConfig config_from_json(const nlohmann::json& j);

// Registry traversal order defines blob order. Pass the optimizer to persist
// its moments as adam.m.<param> / adam.v.<param>.
void save_checkpoint(const std::string& path, const PVTFormerConfig& cfg,
                     const ParamRegistry<float>& reg, int epoch,
                     double best_val_loss, Adam<float>* opt = nullptr);

// Config stored in the checkpoint, for constructing the model before loading
// the tensors.
PVTFormerConfig checkpoint_config(const std::string& path);

// Fills every registry entry (shape-checked by name) and, when opt is given,
// its moments and step counter.
CheckpointMeta load_checkpoint(const std::string& path,
                               ParamRegistry<float>& reg,
                               Adam<float>* opt = nullptr);

}  // namespace pvt
