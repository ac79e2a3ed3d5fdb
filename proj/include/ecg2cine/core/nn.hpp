// Copyright 2026 The ecg2cine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ECG2CINE_CORE_NN_HPP_
#define ECG2CINE_CORE_NN_HPP_

#include <string>
#include <utility>
#include <vector>

#include "ecg2cine/core/narc.hpp"
#include "ecg2cine/core/rng.hpp"
#include "ecg2cine/core/tensor.hpp"

namespace ecg2cine::core {

// Named trainable leaves of a model, in a stable registration order.
struct ParamRef {
  std::string name;
  Tensor tensor;
};
using Params = std::vector<ParamRef>;

void zero_grads(Params& params);
uint64_t params_hash(const Params& params);
NamedArrays params_to_archive(const Params& params);
void params_from_archive(Params& params, const NamedArrays& archive);

// Truncated-normal-free inits; scaling follows common transformer practice.
Tensor init_linear_weight(Rng& rng, int64_t fan_in, int64_t fan_out);
Tensor init_zeros(Shape shape);
Tensor init_normal(Rng& rng, Shape shape, double stddev);

// Fixed sine/cosine positional table [len, dim].
ArrayD sinusoidal_table(int64_t len, int64_t dim);
// Sine/cosine features of a scalar per batch row: [B, dim].
ArrayD sinusoidal_scalar(const std::vector<double>& t, int64_t dim,
                         double max_period = 10000.0);

struct Linear {
  Tensor w, b;
  static Linear make(Rng& rng, int64_t in, int64_t out, bool bias = true);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  void collect(Params& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor g, b;
  static LayerNorm make(int64_t dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, g, b); }
  void collect(Params& out, const std::string& prefix) const;
};

// Pre-LN multi-head self-attention over [R, T, W] (R treated as batch).
struct SelfAttention {
  int heads = 1;
  Linear qkv, proj;
  static SelfAttention make(Rng& rng, int64_t width, int heads);
  Tensor forward(const Tensor& x) const;
  void collect(Params& out, const std::string& prefix) const;
};

// Multi-head cross-attention: queries from x[B,T,W], keys/values from
// ctx[B,S,Wc].
struct CrossAttention {
  int heads = 1;
  Linear q, kv, proj;
  static CrossAttention make(Rng& rng, int64_t width, int64_t ctx_width,
                             int heads);
  Tensor forward(const Tensor& x, const Tensor& ctx) const;
  void collect(Params& out, const std::string& prefix) const;
};

struct Mlp {
  Linear fc1, fc2;
  static Mlp make(Rng& rng, int64_t width, int64_t hidden);
  Tensor forward(const Tensor& x) const;
  void collect(Params& out, const std::string& prefix) const;
};

// Standard pre-LN encoder block: x += attn(ln(x)); x += mlp(ln(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  SelfAttention attn;
  Mlp mlp;
  static TransformerBlock make(Rng& rng, int64_t width, int heads,
                               int64_t mlp_hidden);
  Tensor forward(const Tensor& x) const;
  void collect(Params& out, const std::string& prefix) const;
};

// Decoupled-weight-decay Adam. Weight decay is applied directly to the
// weights, not through the gradient moments.
class AdamW {
 public:
  AdamW(Params params, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad() { zero_grads(params_); }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  Params params_;
  std::vector<ArrayD> m_, v_;
  double lr_, wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace ecg2cine::core

#endif  // ECG2CINE_CORE_NN_HPP_
