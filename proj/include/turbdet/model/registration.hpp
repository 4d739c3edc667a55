#pragma once

#include <vector>

#include "turbdet/model/config.hpp"
#include "turbdet/model/layers.hpp"
#include "turbdet/nn/modules.hpp"

namespace turbdet::model {

// Deformable Conv3D block: a plain conv branch predicts per-tap offsets, the
// deformable convolution consumes them, then 3D batch norm and ReLU.
class DeformBlock {
 public:
  DeformBlock() = default;
  DeformBlock(int64_t in_ch, int64_t out_ch, std::array<int, 3> kernel,
              std::array<int, 3> offset_kernel, Rng& rng, const std::string& name);

  nn::Var forward(const nn::Var& x);
  void layers(std::vector<Layer>& out);

  nn::Conv3d offset_conv;  // zero-init so training starts at the regular grid
  nn::Var w;               // deformable kernel weights
  nn::BatchNorm bn;
  std::array<int, 3> kernel{3, 3, 3};
  std::string name;
};

// Depth-4 UNet over frame volumes. Every scale, encoder and decoder, uses a
// deformable block; each scale emits a 2-D motion field. The level-0 field
// performs the frame registration; coarser fields condition the decoder.
class RegistrationNet {
 public:
  explicit RegistrationNet(const RegistrationConfig& cfg, Rng& rng);

  struct Output {
    std::vector<nn::Var> fields;  // per level l: (2, T, H/2^l, W/2^l), pixels at that scale
    nn::Var registered;           // (3, T, H, W)
    nn::Var features;             // decoder level-0 features (channels[0], T, H, W)
  };

  // window: (3, T, H, W) with H, W divisible by 8. Frames are registered to
  // the temporal center frame, which passes through unwarped.
  Output forward(const nn::Var& window);

  json describe() const;
  void layers(std::vector<Layer>& out);
  void set_training(bool training);

  RegistrationConfig cfg;
  std::vector<DeformBlock> enc;       // size levels
  std::vector<nn::BatchNorm> pool_bn; // downsampler norms (levels-1)
  std::vector<DeformBlock> dec;       // levels-1 blocks, index = level
  std::vector<nn::Conv3d> heads;      // per-level motion heads
};

}  // namespace turbdet::model
