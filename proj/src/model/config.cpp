#include "turbdet/model/config.hpp"

#include "turbdet/core/error.hpp"
#include "turbdet/core/rng.hpp"

namespace turbdet::model {

namespace {

json arr3(const std::array<int, 3>& a) { return json::array({a[0], a[1], a[2]}); }

std::array<int, 3> to_arr3(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

}  // namespace

json RegistrationConfig::to_json() const {
  json k = json::array();
  for (const auto& a : kernels) k.push_back(arr3(a));
  return json{{"levels", levels},
              {"kernels", k},
              {"channels", channels},
              {"offset_kernel", arr3(offset_kernel)}};
}

RegistrationConfig RegistrationConfig::from_json(const json& j) {
  RegistrationConfig c;
  c.levels = j.at("levels").get<int>();
  c.kernels.clear();
  for (const auto& a : j.at("kernels")) c.kernels.push_back(to_arr3(a));
  c.channels = j.at("channels").get<std::vector<int64_t>>();
  c.offset_kernel = to_arr3(j.at("offset_kernel"));
  return c;
}

RegistrationConfig RegistrationConfig::toy() {
  RegistrationConfig c;
  c.kernels = {{3, 3, 3}, {3, 3, 3}, {3, 3, 3}, {3, 3, 3}};
  c.channels = {8, 12, 16, 24};
  return c;
}

json EnhancementConfig::to_json() const {
  return json{{"stem_kernel", arr3(stem_kernel)},
              {"enc_channels", enc_channels},
              {"num_res_mamba", num_res_mamba},
              {"ssm_state", ssm_state},
              {"attn_heads", attn_heads},
              {"attn_token_stride", attn_token_stride},
              {"num_tail_transformer", num_tail_transformer},
              {"pyramid_channels", pyramid_channels},
              {"attn_mode", attn_mode},
              {"norm_kind", norm_kind}};
}

EnhancementConfig EnhancementConfig::from_json(const json& j) {
  EnhancementConfig c;
  c.stem_kernel = to_arr3(j.at("stem_kernel"));
  c.enc_channels = j.at("enc_channels").get<std::vector<int64_t>>();
  c.num_res_mamba = j.at("num_res_mamba").get<int>();
  c.ssm_state = j.at("ssm_state").get<int64_t>();
  c.attn_heads = j.at("attn_heads").get<int64_t>();
  c.attn_token_stride = j.at("attn_token_stride").get<int>();
  c.num_tail_transformer = j.at("num_tail_transformer").get<int>();
  c.pyramid_channels = j.at("pyramid_channels").get<int64_t>();
  c.attn_mode = j.at("attn_mode").get<std::string>();
  c.norm_kind = j.at("norm_kind").get<std::string>();
  return c;
}

EnhancementConfig EnhancementConfig::toy() {
  EnhancementConfig c;
  c.enc_channels = {12, 16, 24};
  c.ssm_state = 8;
  c.attn_heads = 4;
  c.pyramid_channels = 16;
  return c;
}

json MitigatorConfig::to_json() const {
  return json{{"reg", reg.to_json()}, {"enh", enh.to_json()}, {"window", window}};
}

MitigatorConfig MitigatorConfig::from_json(const json& j) {
  MitigatorConfig c;
  c.reg = RegistrationConfig::from_json(j.at("reg"));
  c.enh = EnhancementConfig::from_json(j.at("enh"));
  c.window = j.at("window").get<int>();
  return c;
}

MitigatorConfig MitigatorConfig::toy(int window) {
  MitigatorConfig c;
  c.reg = RegistrationConfig::toy();
  c.enh = EnhancementConfig::toy();
  c.window = window;
  return c;
}

json DetectorConfig::to_json() const {
  return json{{"tier", tier},
              {"encoder_blocks", encoder_blocks},
              {"decoder_blocks", decoder_blocks},
              {"embed_dim", embed_dim},
              {"heads", heads},
              {"ffn_dim", ffn_dim},
              {"num_queries", num_queries},
              {"backbone_blocks", backbone_blocks},
              {"backbone_channels", backbone_channels},
              {"num_classes", num_classes},
              {"norm_kind", norm_kind}};
}

DetectorConfig DetectorConfig::from_json(const json& j) {
  DetectorConfig c;
  c.tier = j.at("tier").get<std::string>();
  c.encoder_blocks = j.at("encoder_blocks").get<int>();
  c.decoder_blocks = j.at("decoder_blocks").get<int>();
  c.embed_dim = j.at("embed_dim").get<int64_t>();
  c.heads = j.at("heads").get<int64_t>();
  c.ffn_dim = j.at("ffn_dim").get<int64_t>();
  c.num_queries = j.at("num_queries").get<int64_t>();
  c.backbone_blocks = j.at("backbone_blocks").get<std::vector<int>>();
  c.backbone_channels = j.at("backbone_channels").get<std::vector<int64_t>>();
  c.num_classes = j.at("num_classes").get<int64_t>();
  c.norm_kind = j.at("norm_kind").get<std::string>();
  return c;
}

DetectorConfig DetectorConfig::for_tier(const std::string& tier, int64_t num_classes) {
  DetectorConfig c;
  c.tier = tier;
  c.num_classes = num_classes;
  if (tier == "tiny") {
    c.embed_dim = 64;
    c.heads = 4;
    c.ffn_dim = 128;
    c.backbone_blocks = {1, 1, 1, 1};
    c.backbone_channels = {16, 32, 64, 128};
  } else if (tier == "small") {
    c.embed_dim = 96;
    c.heads = 6;
    c.ffn_dim = 192;
    c.backbone_blocks = {2, 2, 2, 2};
    c.backbone_channels = {32, 64, 128, 256};
  } else if (tier == "medium") {
    c.embed_dim = 128;
    c.heads = 8;
    c.ffn_dim = 256;
    c.backbone_blocks = {3, 4, 4, 3};
    c.backbone_channels = {48, 96, 192, 384};
  } else {
    throw ModelError("DetectorConfig: unknown tier " + tier);
  }
  return c;
}

uint64_t config_fingerprint(const json& j) {
  return Rng::hash_str(j.dump());
}

}  // namespace turbdet::model
