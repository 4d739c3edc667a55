#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "turbdet/core/rng.hpp"
#include "turbdet/nn/autograd.hpp"

namespace turbdet::nn {

struct NamedParam {
  std::string name;
  Var var;
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps);

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(int64_t channels, std::string name);

  Var forward(const Var& x, int64_t channel_axis);

  void collect(std::vector<NamedParam>& params) const;
  void collect_buffers(std::vector<NamedBuffer>& bufs);
  void set_training(bool t) { training = t; }

  Var gamma, beta;
  Tensor run_mean, run_var;
  bool training = true;
  float momentum = 0.1f;
  float eps = 1e-5f;
  std::string name;
};

class Conv3d {
 public:
  Conv3d() = default;
  // Kaiming-normal weights; gain scales the init (0 freezes to zero init).
  Conv3d(int64_t in_ch, int64_t out_ch, std::array<int, 3> kernel, bool bias, Rng& rng,
         std::string name, float gain = 1.0f);

  Var forward(const Var& x) const;  // same padding, stride 1
  void collect(std::vector<NamedParam>& params) const;

  Var w, b;
  std::array<int, 3> kernel{1, 1, 1};
  std::string name;
};

class Linear {
 public:
  Linear() = default;
  Linear(int64_t in, int64_t out, bool bias, Rng& rng, std::string name,
         float gain = 1.0f);

  Var forward(const Var& x) const;  // x (S,in) -> (S,out)
  void collect(std::vector<NamedParam>& params) const;

  Var w, b;  // w (out,in)
  std::string name;
};

// Token norm used inside transformer blocks; "batch" normalizes each embedding
// channel over the token axis, "layer" normalizes each token over channels.
class TokenNorm {
 public:
  TokenNorm() = default;
  TokenNorm(int64_t dim, std::string kind, std::string name);

  Var forward(const Var& x);  // (S, E)
  void collect(std::vector<NamedParam>& params) const;
  void collect_buffers(std::vector<NamedBuffer>& bufs);
  void set_training(bool t) { bn.set_training(t); }

  std::string kind = "batch";
  BatchNorm bn;       // used when kind == "batch"
  Var gamma, beta;    // used when kind == "layer"
  std::string name;
};

class Mha {
 public:
  Mha() = default;
  Mha(int64_t embed, int64_t heads, Rng& rng, std::string name);

  Var forward(const Var& query, const Var& keyval) const;  // (Sq,E),(Sk,E)->(Sq,E)
  void collect(std::vector<NamedParam>& params) const;

  Linear wq, wk, wv, wo;
  int64_t heads = 1;
  int64_t embed = 0;
  std::string name;
};

class Ffn {
 public:
  Ffn() = default;
  Ffn(int64_t embed, int64_t hidden, Rng& rng, std::string name);
  Var forward(const Var& x) const;
  void collect(std::vector<NamedParam>& params) const;

  Linear fc1, fc2;
  std::string name;
};

// Post-norm transformer encoder block: x = N1(x + MHA(x)); x = N2(x + FFN(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(int64_t embed, int64_t heads, int64_t ffn_dim, const std::string& norm,
                   Rng& rng, std::string name);
  Var forward(const Var& tokens);
  void collect(std::vector<NamedParam>& params) const;
  void collect_buffers(std::vector<NamedBuffer>& bufs);
  void set_training(bool t);

  Mha attn;
  Ffn ffn;
  TokenNorm norm1, norm2;
  std::string name;
};

// 2-D sinusoidal positional encoding for an (h x w) grid, (h*w, embed).
Tensor positional_encoding_2d(int64_t h, int64_t w, int64_t embed);

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var> params, float lr);

  void zero_grad();
  void step();
  void set_params(std::vector<Var> params);  // keeps state by index

  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t t = 0;
  std::vector<Var> params;
  std::vector<Tensor> m, v;
};

}  // namespace turbdet::nn
