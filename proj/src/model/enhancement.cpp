#include "turbdet/model/enhancement.hpp"

#include <cmath>

#include "turbdet/core/error.hpp"

namespace turbdet::model {

using namespace turbdet::nn;

ResMambaBlock::ResMambaBlock(int64_t c, int64_t n, Rng& rng, const std::string& nm)
    : channels(c), state_dim(n), name(nm) {
  conv_in = Conv3d(c, c, {1, 1, 1}, false, rng, name + ".conv_in");
  conv_out = Conv3d(c, c, {1, 1, 1}, false, rng, name + ".conv_out");
  conv_skip = Conv3d(c, c, {1, 1, 1}, false, rng, name + ".conv_skip");
  bn_in = BatchNorm(c, name + ".bn_in");
  bn_out = BatchNorm(c, name + ".bn_out");
  bn_skip = BatchNorm(c, name + ".bn_skip");
  delta_proj = Linear(c, c, true, rng, name + ".delta_proj");
  // Start with small step sizes: softplus(-2) ~ 0.127.
  delta_proj.b.value().fill(-2.0f);
  b_proj = Linear(c, n, false, rng, name + ".b_proj");
  c_proj = Linear(c, n, false, rng, name + ".c_proj");
  // S4D-real style: A = -exp(a_log) with a_log = log(1..N) per channel.
  Tensor alog({c, n});
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < n; ++j)
      alog.at({i, j}) = std::log(static_cast<float>(j + 1));
  a_log = Var::param(std::move(alog), name + ".a_log");
}

namespace {

// Spatial transforms for the four augmented scan copies.
Var aug_apply(const Var& x, int aug) {
  switch (aug) {
    case 0: return x;                          // identity
    case 1: return flip(x, {3});               // horizontal flip
    case 2: return flip(x, {2});               // vertical flip
    case 3: return flip(permute(x, {0, 1, 3, 2}), {2});  // rot90
  }
  throw ModelError("aug_apply: bad augmentation index");
}

Var aug_invert(const Var& x, int aug) {
  switch (aug) {
    case 0: return x;
    case 1: return flip(x, {3});
    case 2: return flip(x, {2});
    case 3: return permute(flip(x, {2}), {0, 1, 3, 2});
  }
  throw ModelError("aug_invert: bad augmentation index");
}

}  // namespace

Var ResMambaBlock::scan_frame(const Var& frame_cs) const {
  const int64_t C = frame_cs.dim(0);
  const int64_t L = frame_cs.numel() / C;
  Var u = permute(reshape(frame_cs, {C, L}), {1, 0});  // (L, C)
  Var delta = softplus(delta_proj.forward(u));
  Var bs = b_proj.forward(u);
  Var cs = c_proj.forward(u);
  Var a = neg(exp_op(a_log));
  Var y = ssm_scan(u, delta, bs, cs, a);  // (L, C)
  return reshape(permute(y, {1, 0}), frame_cs.shape());
}

Var ResMambaBlock::forward(const Var& x) {
  Var h = relu(bn_in.forward(conv_in.forward(x), 0));
  Var s;
  if (ssm_identity) {
    s = h;
  } else {
    const int64_t C = h.dim(0), T = h.dim(1), H = h.dim(2), W = h.dim(3);
    const int n_augs = aug_mode == AugMode::kSingle ? 1 : 4;
    Var acc;
    for (int aug = 0; aug < n_augs; ++aug) {
      const int eff = aug_mode == AugMode::kFull ? aug : 0;
      Var vol = aug_apply(h, eff);
      std::vector<Var> frames_out;
      frames_out.reserve(static_cast<size_t>(T));
      for (int64_t t = 0; t < T; ++t) {
        Var frame = reshape(narrow(vol, 1, t, 1), {C, vol.dim(2), vol.dim(3)});
        Var yf = scan_frame(frame);
        frames_out.push_back(reshape(yf, {C, 1, vol.dim(2), vol.dim(3)}));
      }
      Var scanned = concat(frames_out, 1);
      Var undone = aug_invert(scanned, eff);
      acc = acc.defined() ? add(acc, undone) : undone;
    }
    s = n_augs > 1 ? scale(acc, 1.0f / static_cast<float>(n_augs)) : acc;
    (void)H;
    (void)W;
  }
  Var out = relu(bn_out.forward(conv_out.forward(s), 0));
  Var skip = relu(bn_skip.forward(conv_skip.forward(x), 0));
  return add(out, skip);
}

void ResMambaBlock::layers(std::vector<Layer>& out) {
  out.push_back(Layer{name + ".conv_in", {conv_in.w}, {}});
  out.push_back(Layer{name + ".bn_in", {bn_in.gamma, bn_in.beta}, {&bn_in}});
  Layer ssm{name + ".ssm", {delta_proj.w, delta_proj.b, b_proj.w, c_proj.w, a_log}, {}};
  out.push_back(std::move(ssm));
  out.push_back(Layer{name + ".conv_out", {conv_out.w}, {}});
  out.push_back(Layer{name + ".bn_out", {bn_out.gamma, bn_out.beta}, {&bn_out}});
  out.push_back(Layer{name + ".conv_skip", {conv_skip.w}, {}});
  out.push_back(Layer{name + ".bn_skip", {bn_skip.gamma, bn_skip.beta}, {&bn_skip}});
}

void ResMambaBlock::set_training(bool t) {
  bn_in.set_training(t);
  bn_out.set_training(t);
  bn_skip.set_training(t);
}

DoubleConv::DoubleConv(int64_t in_ch, int64_t out_ch, Rng& rng, const std::string& nm)
    : name(nm) {
  conv1 = Conv3d(in_ch, out_ch, {3, 3, 3}, false, rng, name + ".conv1");
  conv2 = Conv3d(out_ch, out_ch, {3, 3, 3}, false, rng, name + ".conv2");
  bn1 = BatchNorm(out_ch, name + ".bn1");
  bn2 = BatchNorm(out_ch, name + ".bn2");
}

Var DoubleConv::forward(const Var& x) {
  Var h = relu(bn1.forward(conv1.forward(x), 0));
  return relu(bn2.forward(conv2.forward(h), 0));
}

void DoubleConv::layers(std::vector<Layer>& out) {
  out.push_back(Layer{name + ".conv1", {conv1.w}, {}});
  out.push_back(Layer{name + ".bn1", {bn1.gamma, bn1.beta}, {&bn1}});
  out.push_back(Layer{name + ".conv2", {conv2.w}, {}});
  out.push_back(Layer{name + ".bn2", {bn2.gamma, bn2.beta}, {&bn2}});
}

void DoubleConv::set_training(bool t) {
  bn1.set_training(t);
  bn2.set_training(t);
}

EnhancementNet::EnhancementNet(const EnhancementConfig& c, int64_t reg_feature_channels,
                               Rng& rng)
    : cfg(c), reg_ch(reg_feature_channels) {
  if (static_cast<int>(cfg.enc_channels.size()) != 3)
    throw ModelError("EnhancementNet: expects 3 encoder channel entries");
  const auto& ch = cfg.enc_channels;
  stem = Conv3d(3 + reg_ch, ch[0], cfg.stem_kernel, false, rng, "enh.stem");
  stem_bn = BatchNorm(ch[0], "enh.stem.bn");
  for (int i = 0; i < cfg.num_res_mamba; ++i)
    blocks.emplace_back(ch[static_cast<size_t>(i)], cfg.ssm_state, rng,
                        "enh.block" + std::to_string(i));
  for (int i = 0; i < 2; ++i) {
    down_proj.emplace_back(ch[static_cast<size_t>(i)], ch[static_cast<size_t>(i + 1)],
                           std::array<int, 3>{1, 1, 1}, false, rng,
                           "enh.down" + std::to_string(i));
    down_bn.emplace_back(ch[static_cast<size_t>(i + 1)],
                         "enh.down" + std::to_string(i) + ".bn");
  }
  dec.resize(3);
  dec[2] = DoubleConv(ch[2], ch[2], rng, "enh.dec2");
  dec[1] = DoubleConv(ch[2] + ch[1], ch[1], rng, "enh.dec1");
  dec[0] = DoubleConv(ch[1] + ch[0], ch[0], rng, "enh.dec0");
  for (int i = 0; i < 3; ++i)
    pyramid_proj.emplace_back(ch[static_cast<size_t>(i)], cfg.pyramid_channels,
                              std::array<int, 3>{1, 1, 1}, true, rng,
                              "enh.pyr" + std::to_string(i));
  for (int i = 0; i < cfg.num_tail_transformer; ++i)
    tail.emplace_back(ch[0], cfg.attn_heads, ch[0] * 2, cfg.norm_kind, rng,
                      "enh.tail" + std::to_string(i));
  head = Conv3d(ch[0], 3, {1, 3, 3}, true, rng, "enh.head", 0.0f);  // zero-init residual
}

EnhancementNet::Output EnhancementNet::forward(const Var& registered,
                                               const Var& reg_features) {
  if (registered.dim(0) != 3) throw ShapeError("EnhancementNet: registered must be (3,T,H,W)");
  if (reg_features.dim(0) != reg_ch)
    throw ShapeError("EnhancementNet: reg feature channels mismatch");
  const int64_t T = registered.dim(1), H = registered.dim(2), W = registered.dim(3);
  const int64_t center = T / 2;

  Var x = concat({registered, reg_features}, 0);
  Var s = relu(stem_bn.forward(stem.forward(x), 0));

  std::vector<Var> encs;
  Var cur = s;
  for (int i = 0; i < 3; ++i) {
    cur = blocks[static_cast<size_t>(i)].forward(cur);
    encs.push_back(cur);
    if (i < 2)
      cur = relu(down_bn[static_cast<size_t>(i)].forward(
          down_proj[static_cast<size_t>(i)].forward(maxpool3d_spatial2(cur)), 0));
  }

  Var d = dec[2].forward(encs[2]);
  d = dec[1].forward(concat({upsample_trilinear_spatial2(d), encs[1]}, 0));
  d = dec[0].forward(concat({upsample_trilinear_spatial2(d), encs[0]}, 0));

  const int64_t c0 = d.dim(0);
  Var f = reshape(narrow(d, 1, center, 1), {c0, H, W});

  // Two transformer blocks over a pooled spatial token grid of the center
  // frame, fused back residually.
  const int stride = cfg.attn_token_stride;
  if (H % stride != 0 || W % stride != 0)
    throw ShapeError("EnhancementNet: H,W must be divisible by attn_token_stride");
  Var tok_map = avgpool2d(f, stride);
  const int64_t th = tok_map.dim(1), tw = tok_map.dim(2);
  Var tokens = permute(reshape(tok_map, {c0, th * tw}), {1, 0});
  tokens = add(tokens, Var::constant(positional_encoding_2d(th, tw, c0)));
  for (auto& blk : tail) tokens = blk.forward(tokens);
  Var back = reshape(permute(tokens, {1, 0}), {c0, 1, th, tw});
  int ups = 0;
  for (int s2 = stride; s2 > 1; s2 /= 2) ++ups;
  for (int i = 0; i < ups; ++i) back = upsample_trilinear_spatial2(back);
  Var fused = add(f, reshape(back, {c0, H, W}));

  Var delta = head.forward(reshape(fused, {c0, 1, H, W}));
  Var center_frame = reshape(narrow(registered, 1, center, 1), {3, H, W});
  Output out;
  out.mitigated = add(center_frame, reshape(delta, {3, H, W}));
  for (int i = 0; i < 3; ++i) {
    const Var& e = encs[static_cast<size_t>(i)];
    Var ec = narrow(e, 1, center, 1);
    Var p = pyramid_proj[static_cast<size_t>(i)].forward(ec);
    out.pyramid.push_back(reshape(p, {cfg.pyramid_channels, e.dim(2), e.dim(3)}));
  }
  return out;
}

json EnhancementNet::describe() const {
  const auto& ws = stem.w.shape();
  return json{{"stem_kernel", json::array({ws[2], ws[3], ws[4]})},
              {"res_mamba_blocks", static_cast<int>(blocks.size())},
              {"decoder_double_conv_blocks", static_cast<int>(dec.size())},
              {"tail_transformer_blocks", static_cast<int>(tail.size())},
              {"enc_channels", cfg.enc_channels},
              {"ssm_state", cfg.ssm_state},
              {"attn_mode", cfg.attn_mode}};
}

void EnhancementNet::layers(std::vector<Layer>& out) {
  out.push_back(Layer{"enh.stem", {stem.w}, {}});
  out.push_back(Layer{"enh.stem.bn", {stem_bn.gamma, stem_bn.beta}, {&stem_bn}});
  for (int i = 0; i < 3; ++i) {
    blocks[static_cast<size_t>(i)].layers(out);
    if (i < 2) {
      out.push_back(Layer{down_proj[static_cast<size_t>(i)].name,
                          {down_proj[static_cast<size_t>(i)].w},
                          {}});
      auto& bn = down_bn[static_cast<size_t>(i)];
      out.push_back(Layer{bn.name, {bn.gamma, bn.beta}, {&bn}});
    }
  }
  for (int i = 2; i >= 0; --i) dec[static_cast<size_t>(i)].layers(out);
  for (int i = 0; i < 3; ++i) {
    auto& p = pyramid_proj[static_cast<size_t>(i)];
    Layer lay{p.name, {p.w}, {}};
    if (p.b.defined()) lay.params.push_back(p.b);
    out.push_back(std::move(lay));
  }
  for (auto& blk : tail) {
    Layer attn{blk.name + ".attn", {}, {}};
    std::vector<NamedParam> ps;
    blk.attn.collect(ps);
    for (auto& p : ps) attn.params.push_back(p.var);
    out.push_back(std::move(attn));
    Layer n1{blk.name + ".norm1", {}, {}};
    ps.clear();
    blk.norm1.collect(ps);
    for (auto& p : ps) n1.params.push_back(p.var);
    if (blk.norm1.kind == "batch") n1.bns.push_back(&blk.norm1.bn);
    out.push_back(std::move(n1));
    Layer ff{blk.name + ".ffn", {}, {}};
    ps.clear();
    blk.ffn.collect(ps);
    for (auto& p : ps) ff.params.push_back(p.var);
    out.push_back(std::move(ff));
    Layer n2{blk.name + ".norm2", {}, {}};
    ps.clear();
    blk.norm2.collect(ps);
    for (auto& p : ps) n2.params.push_back(p.var);
    if (blk.norm2.kind == "batch") n2.bns.push_back(&blk.norm2.bn);
    out.push_back(std::move(n2));
  }
  Layer h{"enh.head", {head.w}, {}};
  if (head.b.defined()) h.params.push_back(head.b);
  out.push_back(std::move(h));
}

void EnhancementNet::set_training(bool t) {
  stem_bn.set_training(t);
  for (auto& b : blocks) b.set_training(t);
  for (auto& b : down_bn) b.set_training(t);
  for (auto& d : dec) d.set_training(t);
  for (auto& blk : tail) blk.set_training(t);
}

}  // namespace turbdet::model
