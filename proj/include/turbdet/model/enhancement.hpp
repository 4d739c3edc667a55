#pragma once

#include <vector>

#include "turbdet/model/config.hpp"
#include "turbdet/model/layers.hpp"
#include "turbdet/nn/modules.hpp"

namespace turbdet::model {

// Residual Mamba block:
//   out = Conv1(SSM(Conv1(x))) + Conv1(x)
// where Conv1 is a 1x1x1 convolution with batch norm and ReLU, and SSM is a
// selective scan over the flattened spatial raster of each frame, applied to
// four augmented copies (identity, h-flip, v-flip, rot90) whose outputs are
// inverse-transformed and averaged.
class ResMambaBlock {
 public:
  enum class AugMode { kFull, kIdentityAugs, kSingle };

  ResMambaBlock() = default;
  ResMambaBlock(int64_t channels, int64_t state_dim, Rng& rng, const std::string& name);

  nn::Var forward(const nn::Var& x);  // (C,T,H,W) -> (C,T,H,W)
  void layers(std::vector<Layer>& out);
  void set_training(bool training);

  // Applies the selective scan to a (C,Ha,Wa) frame slice.
  nn::Var scan_frame(const nn::Var& frame_cs) const;

  nn::Conv3d conv_in, conv_out, conv_skip;
  nn::BatchNorm bn_in, bn_out, bn_skip;
  nn::Linear delta_proj, b_proj, c_proj;
  nn::Var a_log;  // (C, N); A = -exp(a_log)
  int64_t channels = 0, state_dim = 0;
  AugMode aug_mode = AugMode::kFull;
  bool ssm_identity = false;  // ablation switch: SSM acts as identity
  std::string name;
};

class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(int64_t in_ch, int64_t out_ch, Rng& rng, const std::string& name);
  nn::Var forward(const nn::Var& x);
  void layers(std::vector<Layer>& out);
  void set_training(bool training);

  nn::Conv3d conv1, conv2;
  nn::BatchNorm bn1, bn2;
  std::string name;
};

// 3D Mamba UNet: stem conv (3x7x7), three Res-Mamba encoder levels, three
// double-conv decoder blocks, then two transformer blocks refining the center
// frame before the output head. Produces the mitigated center frame plus
// per-scale pyramid features for the detector.
class EnhancementNet {
 public:
  EnhancementNet(const EnhancementConfig& cfg, int64_t reg_feature_channels, Rng& rng);

  struct Output {
    nn::Var mitigated;             // (3, H, W)
    std::vector<nn::Var> pyramid;  // 3 levels: (pyramid_channels, H/2^l, W/2^l)
  };

  // registered: (3,T,H,W); reg_features: (C_reg,T,H,W) from the registration
  // decoder. The mitigated frame is aligned to the window center.
  Output forward(const nn::Var& registered, const nn::Var& reg_features);

  json describe() const;
  void layers(std::vector<Layer>& out);
  void set_training(bool training);

  EnhancementConfig cfg;
  int64_t reg_ch = 0;
  nn::Conv3d stem;
  nn::BatchNorm stem_bn;
  std::vector<ResMambaBlock> blocks;   // 3
  std::vector<nn::Conv3d> down_proj;   // 2 transitions
  std::vector<nn::BatchNorm> down_bn;  // 2
  std::vector<DoubleConv> dec;         // 3
  std::vector<nn::Conv3d> pyramid_proj;  // 3
  std::vector<nn::TransformerBlock> tail;  // 2
  nn::Conv3d head;  // zero-init residual head
};

}  // namespace turbdet::model
