#pragma once

#include <string>
#include <vector>

#include "turbdet/model/config.hpp"
#include "turbdet/model/enhancement.hpp"
#include "turbdet/model/layers.hpp"
#include "turbdet/model/registration.hpp"

namespace turbdet::model {

// Snapshot: json metadata plus a named tensor map. The container behind
// checkpoints and optimizer state.
struct Snapshot {
  json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_snapshot(const std::string& path, const Snapshot& s);
Snapshot load_snapshot(const std::string& path);

// Registration + enhancement under one ordered layer list. The layer order is
// definition order and is recorded in checkpoints; the trainer's
// last-10-layers rule indexes into it.
class Mitigator {
 public:
  Mitigator(const MitigatorConfig& cfg, Rng& rng);

  struct Output {
    nn::Var mitigated;             // (3,H,W)
    std::vector<nn::Var> pyramid;  // detector-facing features
    nn::Var registered;            // (3,T,H,W)
    std::vector<nn::Var> fields;   // per-scale motion fields
  };

  Output forward(const nn::Var& window);  // (3,window,H,W)

  const std::vector<Layer>& layers() const { return layer_list; }
  std::vector<nn::Var> all_params() const;
  std::vector<nn::NamedBuffer> buffers();
  void set_training(bool training);
  // Marks which layers receive gradients; frozen layers also stop updating
  // their norm statistics.
  void set_trainable_tail(int64_t tail_layers);  // -1 = all trainable
  json describe() const;
  uint64_t fingerprint() const;

  void state_to(Snapshot& s) const;
  void load_state(const Snapshot& s, bool strict = true);

  MitigatorConfig cfg;
  RegistrationNet reg;
  EnhancementNet enh;
  std::vector<Layer> layer_list;
};

}  // namespace turbdet::model
