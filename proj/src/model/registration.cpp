#include "turbdet/model/registration.hpp"

#include <cmath>

#include "turbdet/core/error.hpp"

namespace turbdet::model {

using namespace turbdet::nn;

DeformBlock::DeformBlock(int64_t in_ch, int64_t out_ch, std::array<int, 3> k,
                         std::array<int, 3> ok, Rng& rng, const std::string& nm)
    : kernel(k), name(nm) {
  const int64_t taps = static_cast<int64_t>(k[0]) * k[1] * k[2];
  offset_conv = Conv3d(in_ch, 3 * taps, ok, true, rng, name + ".offsets", 0.0f);
  const int64_t fan_in = in_ch * taps;
  Tensor wt({out_ch, in_ch, k[0], k[1], k[2]});
  rng.fill_normal(wt.data(), wt.numel(), 0.0f,
                  std::sqrt(2.0f / static_cast<float>(fan_in)));
  w = Var::param(std::move(wt), name + ".w");
  bn = BatchNorm(out_ch, name + ".bn");
}

Var DeformBlock::forward(const Var& x) {
  Var offsets = offset_conv.forward(x);
  Var y = deform_conv3d(x, offsets, w, Var());
  return relu(bn.forward(y, 0));
}

void DeformBlock::layers(std::vector<Layer>& out) {
  Layer off{name + ".offsets", {offset_conv.w}, {}};
  if (offset_conv.b.defined()) off.params.push_back(offset_conv.b);
  out.push_back(std::move(off));
  out.push_back(Layer{name + ".deform", {w}, {}});
  out.push_back(Layer{name + ".bn", {bn.gamma, bn.beta}, {&bn}});
}

RegistrationNet::RegistrationNet(const RegistrationConfig& c, Rng& rng) : cfg(c) {
  if (static_cast<int>(cfg.kernels.size()) != cfg.levels ||
      static_cast<int>(cfg.channels.size()) != cfg.levels)
    throw ModelError("RegistrationNet: ladder lengths must equal levels");
  int64_t in_ch = 3;
  for (int l = 0; l < cfg.levels; ++l) {
    enc.emplace_back(in_ch, cfg.channels[static_cast<size_t>(l)],
                     cfg.kernels[static_cast<size_t>(l)], cfg.offset_kernel, rng,
                     "reg.enc" + std::to_string(l));
    in_ch = cfg.channels[static_cast<size_t>(l)];
    if (l + 1 < cfg.levels)
      pool_bn.emplace_back(in_ch, "reg.pool" + std::to_string(l) + ".bn");
  }
  dec.resize(static_cast<size_t>(cfg.levels - 1));
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const int64_t cin = cfg.channels[static_cast<size_t>(l + 1)] + 2 +
                        cfg.channels[static_cast<size_t>(l)];
    dec[static_cast<size_t>(l)] =
        DeformBlock(cin, cfg.channels[static_cast<size_t>(l)],
                    cfg.kernels[static_cast<size_t>(l)], cfg.offset_kernel, rng,
                    "reg.dec" + std::to_string(l));
  }
  for (int l = 0; l < cfg.levels; ++l) {
    // Near-zero init: fields start close to the identity warp.
    heads.emplace_back(cfg.channels[static_cast<size_t>(l)], 2,
                       std::array<int, 3>{1, 3, 3}, true, rng,
                       "reg.head" + std::to_string(l), 1e-3f);
  }
}

RegistrationNet::Output RegistrationNet::forward(const Var& window) {
  if (window.value().ndim() != 4 || window.dim(0) != 3)
    throw ShapeError("RegistrationNet: expects (3,T,H,W) window");
  const int64_t T = window.dim(1), H = window.dim(2), W = window.dim(3);
  const int64_t down = int64_t{1} << (cfg.levels - 1);
  if (H % down != 0 || W % down != 0)
    throw ShapeError("RegistrationNet: H,W must be divisible by " + std::to_string(down));

  std::vector<Var> skips;
  Var x = window;
  for (int l = 0; l < cfg.levels; ++l) {
    x = enc[static_cast<size_t>(l)].forward(x);
    skips.push_back(x);
    if (l + 1 < cfg.levels)
      x = relu(pool_bn[static_cast<size_t>(l)].forward(maxpool3d_spatial2(x), 0));
  }

  Output out;
  out.fields.resize(static_cast<size_t>(cfg.levels));
  Var d = skips.back();
  out.fields[static_cast<size_t>(cfg.levels - 1)] =
      heads[static_cast<size_t>(cfg.levels - 1)].forward(d);
  for (int l = cfg.levels - 2; l >= 0; --l) {
    Var aug = concat({d, out.fields[static_cast<size_t>(l + 1)]}, 0);
    Var up = upsample_trilinear_spatial2(aug);
    d = dec[static_cast<size_t>(l)].forward(concat({up, skips[static_cast<size_t>(l)]}, 0));
    out.fields[static_cast<size_t>(l)] = heads[static_cast<size_t>(l)].forward(d);
  }
  out.registered = warp_frames(window, out.fields[0], T / 2);
  out.features = d;
  return out;
}

json RegistrationNet::describe() const {
  // Introspect the actual modules rather than echoing the config.
  json kernels = json::array(), channels = json::array();
  for (const auto& b : enc) {
    const auto& ws = b.w.shape();
    kernels.push_back(json::array({ws[2], ws[3], ws[4]}));
    channels.push_back(ws[0]);
  }
  return json{{"levels", static_cast<int>(enc.size())},
              {"kernels", kernels},
              {"channels", channels},
              {"decoder_blocks", static_cast<int>(dec.size())},
              {"motion_heads", static_cast<int>(heads.size())},
              {"downsample", "maxpool+bn3d"},
              {"upsample", "trilinear"}};
}

void RegistrationNet::layers(std::vector<Layer>& out) {
  for (int l = 0; l < cfg.levels; ++l) {
    enc[static_cast<size_t>(l)].layers(out);
    if (l + 1 < cfg.levels) {
      auto& bn = pool_bn[static_cast<size_t>(l)];
      out.push_back(Layer{bn.name, {bn.gamma, bn.beta}, {&bn}});
    }
  }
  for (int l = cfg.levels - 2; l >= 0; --l) dec[static_cast<size_t>(l)].layers(out);
  for (int l = 0; l < cfg.levels; ++l) {
    auto& h = heads[static_cast<size_t>(l)];
    Layer lay{h.name, {h.w}, {}};
    if (h.b.defined()) lay.params.push_back(h.b);
    out.push_back(std::move(lay));
  }
}

void RegistrationNet::set_training(bool training) {
  for (auto& b : enc) b.bn.set_training(training);
  for (auto& b : dec) b.bn.set_training(training);
  for (auto& b : pool_bn) b.set_training(training);
}

}  // namespace turbdet::model
