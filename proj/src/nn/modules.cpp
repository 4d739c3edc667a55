#include "turbdet/nn/modules.hpp"

#include <cmath>

#include "turbdet/core/error.hpp"

namespace turbdet::nn {

namespace {

bool preq(Node& n, size_t i) { return n.parents[i]->requires_grad; }
Tensor& pgrad(Node& n, size_t i) { return n.parents[i]->ensure_grad(); }

}  // namespace

Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  if (x.value().ndim() != 2) throw ShapeError("layernorm: expects (S,E)");
  const int64_t S = x.dim(0), E = x.dim(1);
  Tensor y(x.shape());
  std::vector<float> mean(static_cast<size_t>(S)), invstd(static_cast<size_t>(S));
  for (int64_t s = 0; s < S; ++s) {
    const float* row = x.value().data() + s * E;
    double m = 0.0, m2 = 0.0;
    for (int64_t e = 0; e < E; ++e) {
      m += row[e];
      m2 += static_cast<double>(row[e]) * row[e];
    }
    m /= E;
    const double var = std::max(0.0, m2 / E - m * m);
    mean[static_cast<size_t>(s)] = static_cast<float>(m);
    invstd[static_cast<size_t>(s)] = static_cast<float>(1.0 / std::sqrt(var + eps));
    float* yr = y.data() + s * E;
    for (int64_t e = 0; e < E; ++e)
      yr[e] = (row[e] - mean[static_cast<size_t>(s)]) * invstd[static_cast<size_t>(s)] *
                  gamma.value()[e] +
              beta.value()[e];
  }
  Tensor xv = x.value(), gv = gamma.value();
  return make_op(
      std::move(y), {x, gamma, beta},
      [xv, gv, mean, invstd, S, E](Node& n) {
        const float* gy = n.grad.data();
        for (int64_t s = 0; s < S; ++s) {
          const float m = mean[static_cast<size_t>(s)];
          const float is = invstd[static_cast<size_t>(s)];
          const float* xr = xv.data() + s * E;
          const float* gr = gy + s * E;
          double sg = 0.0, sgx = 0.0;
          for (int64_t e = 0; e < E; ++e) {
            const float xhat = (xr[e] - m) * is;
            const float gg = gr[e] * gv[e];
            sg += gg;
            sgx += static_cast<double>(gg) * xhat;
          }
          if (preq(n, 1)) {
            float* ggam = pgrad(n, 1).data();
            for (int64_t e = 0; e < E; ++e) ggam[e] += gr[e] * (xr[e] - m) * is;
          }
          if (preq(n, 2)) {
            float* gbet = pgrad(n, 2).data();
            for (int64_t e = 0; e < E; ++e) gbet[e] += gr[e];
          }
          if (preq(n, 0)) {
            float* gx = pgrad(n, 0).data() + s * E;
            const float mg = static_cast<float>(sg / E);
            const float mgx = static_cast<float>(sgx / E);
            for (int64_t e = 0; e < E; ++e) {
              const float xhat = (xr[e] - m) * is;
              gx[e] += is * (gr[e] * gv[e] - mg - xhat * mgx);
            }
          }
        }
      },
      "layernorm");
}

BatchNorm::BatchNorm(int64_t channels, std::string nm) : name(std::move(nm)) {
  gamma = Var::param(Tensor::full({channels}, 1.0f), name + ".gamma");
  beta = Var::param(Tensor::zeros({channels}), name + ".beta");
  run_mean = Tensor::zeros({channels});
  run_var = Tensor::full({channels}, 1.0f);
}

Var BatchNorm::forward(const Var& x, int64_t channel_axis) {
  return batchnorm(x, gamma, beta, run_mean, run_var, channel_axis, training, training,
                   momentum, eps);
}

void BatchNorm::collect(std::vector<NamedParam>& params) const {
  params.push_back({gamma.name(), gamma});
  params.push_back({beta.name(), beta});
}

void BatchNorm::collect_buffers(std::vector<NamedBuffer>& bufs) {
  bufs.push_back({name + ".run_mean", &run_mean});
  bufs.push_back({name + ".run_var", &run_var});
}

Conv3d::Conv3d(int64_t in_ch, int64_t out_ch, std::array<int, 3> k, bool bias, Rng& rng,
               std::string nm, float gain)
    : kernel(k), name(std::move(nm)) {
  const int64_t fan_in = in_ch * k[0] * k[1] * k[2];
  const float std = gain * std::sqrt(2.0f / static_cast<float>(fan_in));
  Tensor wt({out_ch, in_ch, k[0], k[1], k[2]});
  if (std > 0.0f) rng.fill_normal(wt.data(), wt.numel(), 0.0f, std);
  w = Var::param(std::move(wt), name + ".w");
  if (bias) b = Var::param(Tensor::zeros({out_ch}), name + ".b");
}

Var Conv3d::forward(const Var& x) const {
  return conv3d(x, w, b, kernel[0] / 2, kernel[1] / 2, kernel[2] / 2);
}

void Conv3d::collect(std::vector<NamedParam>& params) const {
  params.push_back({w.name(), w});
  if (b.defined()) params.push_back({b.name(), b});
}

Linear::Linear(int64_t in, int64_t out, bool bias, Rng& rng, std::string nm, float gain)
    : name(std::move(nm)) {
  const float std = gain * std::sqrt(1.0f / static_cast<float>(in));
  Tensor wt({out, in});
  if (std > 0.0f) rng.fill_normal(wt.data(), wt.numel(), 0.0f, std);
  w = Var::param(std::move(wt), name + ".w");
  if (bias) b = Var::param(Tensor::zeros({out}), name + ".b");
}

Var Linear::forward(const Var& x) const {
  Var y = matmul(x, w, false, true);
  if (b.defined()) y = add_channel_bias(y, b, 1);
  return y;
}

void Linear::collect(std::vector<NamedParam>& params) const {
  params.push_back({w.name(), w});
  if (b.defined()) params.push_back({b.name(), b});
}

TokenNorm::TokenNorm(int64_t dim, std::string k, std::string nm)
    : kind(std::move(k)), name(std::move(nm)) {
  if (kind == "batch") {
    bn = BatchNorm(dim, name);
  } else if (kind == "layer") {
    gamma = Var::param(Tensor::full({dim}, 1.0f), name + ".gamma");
    beta = Var::param(Tensor::zeros({dim}), name + ".beta");
  } else {
    throw ModelError("TokenNorm: unknown kind " + kind);
  }
}

Var TokenNorm::forward(const Var& x) {
  if (kind == "batch") return bn.forward(x, 1);
  return layernorm(x, gamma, beta, 1e-5f);
}

void TokenNorm::collect(std::vector<NamedParam>& params) const {
  if (kind == "batch") {
    bn.collect(params);
  } else {
    params.push_back({gamma.name(), gamma});
    params.push_back({beta.name(), beta});
  }
}

void TokenNorm::collect_buffers(std::vector<NamedBuffer>& bufs) {
  if (kind == "batch") bn.collect_buffers(bufs);
}

Mha::Mha(int64_t e, int64_t h, Rng& rng, std::string nm)
    : heads(h), embed(e), name(std::move(nm)) {
  if (e % h != 0) throw ModelError("Mha: embed not divisible by heads");
  wq = Linear(e, e, true, rng, name + ".wq");
  wk = Linear(e, e, true, rng, name + ".wk");
  wv = Linear(e, e, true, rng, name + ".wv");
  wo = Linear(e, e, true, rng, name + ".wo");
}

Var Mha::forward(const Var& query, const Var& keyval) const {
  const int64_t dh = embed / heads;
  Var q = wq.forward(query);
  Var k = wk.forward(keyval);
  Var v = wv.forward(keyval);
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int64_t h = 0; h < heads; ++h) {
    Var qh = narrow(q, 1, h * dh, dh);
    Var kh = narrow(k, 1, h * dh, dh);
    Var vh = narrow(v, 1, h * dh, dh);
    Var att = softmax_lastdim(scale(matmul(qh, kh, false, true), inv_sqrt));
    outs.push_back(matmul(att, vh));
  }
  return wo.forward(concat(outs, 1));
}

void Mha::collect(std::vector<NamedParam>& params) const {
  wq.collect(params);
  wk.collect(params);
  wv.collect(params);
  wo.collect(params);
}

Ffn::Ffn(int64_t embed, int64_t hidden, Rng& rng, std::string nm) : name(std::move(nm)) {
  fc1 = Linear(embed, hidden, true, rng, name + ".fc1");
  fc2 = Linear(hidden, embed, true, rng, name + ".fc2");
}

Var Ffn::forward(const Var& x) const { return fc2.forward(relu(fc1.forward(x))); }

void Ffn::collect(std::vector<NamedParam>& params) const {
  fc1.collect(params);
  fc2.collect(params);
}

TransformerBlock::TransformerBlock(int64_t embed, int64_t heads, int64_t ffn_dim,
                                   const std::string& norm, Rng& rng, std::string nm)
    : name(std::move(nm)) {
  attn = Mha(embed, heads, rng, name + ".attn");
  ffn = Ffn(embed, ffn_dim, rng, name + ".ffn");
  norm1 = TokenNorm(embed, norm, name + ".norm1");
  norm2 = TokenNorm(embed, norm, name + ".norm2");
}

Var TransformerBlock::forward(const Var& tokens) {
  Var x = norm1.forward(add(tokens, attn.forward(tokens, tokens)));
  return norm2.forward(add(x, ffn.forward(x)));
}

void TransformerBlock::collect(std::vector<NamedParam>& params) const {
  attn.collect(params);
  norm1.collect(params);
  ffn.collect(params);
  norm2.collect(params);
}

void TransformerBlock::collect_buffers(std::vector<NamedBuffer>& bufs) {
  norm1.collect_buffers(bufs);
  norm2.collect_buffers(bufs);
}

void TransformerBlock::set_training(bool t) {
  norm1.set_training(t);
  norm2.set_training(t);
}

Tensor positional_encoding_2d(int64_t h, int64_t w, int64_t embed) {
  if (embed % 4 != 0) throw ModelError("positional_encoding_2d: embed must be mult of 4");
  Tensor pe({h * w, embed});
  const int64_t quarter = embed / 4;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float* row = pe.data() + (y * w + x) * embed;
      for (int64_t i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / (embed / 2));
        row[2 * i] = static_cast<float>(std::sin(y * freq));
        row[2 * i + 1] = static_cast<float>(std::cos(y * freq));
        row[2 * quarter + 2 * i] = static_cast<float>(std::sin(x * freq));
        row[2 * quarter + 2 * i + 1] = static_cast<float>(std::cos(x * freq));
      }
    }
  return pe;
}

Adam::Adam(std::vector<Var> ps, float learning_rate) : lr(learning_rate) {
  set_params(std::move(ps));
}

void Adam::set_params(std::vector<Var> ps) {
  params = std::move(ps);
  m.resize(params.size());
  v.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    if (!m[i].defined() || !m[i].same_shape(params[i].value())) {
      m[i] = Tensor::zeros(params[i].shape());
      v[i] = Tensor::zeros(params[i].shape());
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params) p.zero_grad();
}

void Adam::step() {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Var& p = params[i];
    if (!p.grad().defined()) continue;
    const float* g = p.grad().data();
    float* w = p.value().data();
    float* mi = m[i].data();
    float* vi = v[i].data();
    const int64_t n = p.numel();
    for (int64_t j = 0; j < n; ++j) {
      mi[j] = beta1 * mi[j] + (1.0f - beta1) * g[j];
      vi[j] = beta2 * vi[j] + (1.0f - beta2) * g[j] * g[j];
      const double mhat = mi[j] / bc1;
      const double vhat = vi[j] / bc2;
      w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

}  // namespace turbdet::nn
