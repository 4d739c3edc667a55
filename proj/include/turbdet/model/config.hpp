#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace turbdet::model {

using json = nlohmann::json;

// Registration UNet: depth-4 ladder. Defaults follow the reference
// architecture; the "toy" preset trades kernel reach for desk-scale speed.
struct RegistrationConfig {
  int levels = 4;
  std::vector<std::array<int, 3>> kernels = {{3, 7, 7}, {3, 7, 7}, {3, 5, 5}, {3, 3, 3}};
  std::vector<int64_t> channels = {32, 128, 128, 256};
  std::array<int, 3> offset_kernel = {1, 3, 3};

  json to_json() const;
  static RegistrationConfig from_json(const json& j);
  static RegistrationConfig toy();
};

struct EnhancementConfig {
  std::array<int, 3> stem_kernel = {3, 7, 7};
  std::vector<int64_t> enc_channels = {32, 64, 96};
  int num_res_mamba = 3;  // structural: three encoder Res-Mamba blocks
  int64_t ssm_state = 8;
  int64_t attn_heads = 4;
  int attn_token_stride = 8;
  int num_tail_transformer = 2;  // structural: two tail transformer blocks
  int64_t pyramid_channels = 32;
  // Tail attention operates per-frame on the spatial grid (recorded choice).
  std::string attn_mode = "per_frame_spatial";
  std::string norm_kind = "batch";

  json to_json() const;
  static EnhancementConfig from_json(const json& j);
  static EnhancementConfig toy();
};

struct MitigatorConfig {
  RegistrationConfig reg;
  EnhancementConfig enh;
  int window = 10;  // frames per sliding window (5 backward, current, 4 forward)

  json to_json() const;
  static MitigatorConfig from_json(const json& j);
  static MitigatorConfig toy(int window = 5);
};

struct DetectorConfig {
  std::string tier = "tiny";  // tiny | small | medium
  int encoder_blocks = 6;     // fixed by the architecture
  int decoder_blocks = 3;     // fixed by the architecture
  int64_t embed_dim = 64;
  int64_t heads = 4;
  int64_t ffn_dim = 128;
  int64_t num_queries = 25;
  std::vector<int> backbone_blocks = {1, 1, 1, 1};
  std::vector<int64_t> backbone_channels = {16, 32, 64, 128};
  int64_t num_classes = 2;
  std::string norm_kind = "batch";  // "batch" per the text; "layer" available

  json to_json() const;
  static DetectorConfig from_json(const json& j);
  static DetectorConfig for_tier(const std::string& tier, int64_t num_classes);
};

// Stable fingerprint of a canonical config serialization; checkpoints refuse
// to load across fingerprint mismatches.
uint64_t config_fingerprint(const json& j);

}  // namespace turbdet::model
