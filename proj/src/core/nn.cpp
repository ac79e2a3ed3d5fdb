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

#include "ecg2cine/core/nn.hpp"

#include <cmath>

#include "ecg2cine/core/hash.hpp"

namespace ecg2cine::core {

void zero_grads(Params& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

uint64_t params_hash(const Params& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    h = fnv1a64(p.name.data(), p.name.size(), h);
    const ArrayD& v = p.tensor.value();
    h = fnv1a64(v.data(), static_cast<size_t>(v.size()) * sizeof(double), h);
  }
  return h;
}

NamedArrays params_to_archive(const Params& params) {
  NamedArrays na;
  for (const auto& p : params) na.put(p.name, p.tensor.value());
  return na;
}

void params_from_archive(Params& params, const NamedArrays& archive) {
  for (auto& p : params) {
    const ArrayD& stored = archive.f64(p.name);
    if (stored.shape() != p.tensor.shape()) {
      throw IoError("checkpoint tensor '" + p.name + "' has shape " +
                    shape_str(stored.shape()) + ", model expects " +
                    shape_str(p.tensor.shape()));
    }
    p.tensor.value_mut() = stored;
  }
}

Tensor init_linear_weight(Rng& rng, int64_t fan_in, int64_t fan_out) {
  ArrayD w({fan_in, fan_out});
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  rng.fill_normal(w.data(), w.size(), stddev);
  return Tensor::param(std::move(w));
}

Tensor init_zeros(Shape shape) { return Tensor::param(ArrayD::zeros(std::move(shape))); }

Tensor init_normal(Rng& rng, Shape shape, double stddev) {
  ArrayD w(std::move(shape));
  rng.fill_normal(w.data(), w.size(), stddev);
  return Tensor::param(std::move(w));
}

ArrayD sinusoidal_table(int64_t len, int64_t dim) {
  ArrayD pe({len, dim});
  for (int64_t pos = 0; pos < len; ++pos) {
    for (int64_t i = 0; i < dim / 2; ++i) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe[pos * dim + 2 * i] = std::sin(pos * freq);
      pe[pos * dim + 2 * i + 1] = std::cos(pos * freq);
    }
  }
  return pe;
}

ArrayD sinusoidal_scalar(const std::vector<double>& t, int64_t dim,
                         double max_period) {
  const int64_t B = static_cast<int64_t>(t.size());
  ArrayD out({B, dim});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t i = 0; i < dim / 2; ++i) {
      const double freq =
          std::pow(max_period, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      // scalar t is in [0,1]; scale up so the fastest channel resolves it
      out[b * dim + 2 * i] = std::sin(t[static_cast<size_t>(b)] * 1000.0 * freq);
      out[b * dim + 2 * i + 1] = std::cos(t[static_cast<size_t>(b)] * 1000.0 * freq);
    }
  }
  return out;
}

Linear Linear::make(Rng& rng, int64_t in, int64_t out, bool bias) {
  Linear l;
  l.w = init_linear_weight(rng, in, out);
  if (bias) l.b = init_zeros({out});
  return l;
}

void Linear::collect(Params& out, const std::string& prefix) const {
  out.push_back({prefix + ".w", w});
  if (b.defined()) out.push_back({prefix + ".b", b});
}

LayerNorm LayerNorm::make(int64_t dim) {
  LayerNorm ln;
  ln.g = Tensor::param(ArrayD::full({dim}, 1.0));
  ln.b = init_zeros({dim});
  return ln;
}

void LayerNorm::collect(Params& out, const std::string& prefix) const {
  out.push_back({prefix + ".g", g});
  out.push_back({prefix + ".b", b});
}

SelfAttention SelfAttention::make(Rng& rng, int64_t width, int heads) {
  SelfAttention a;
  a.heads = heads;
  a.qkv = Linear::make(rng, width, 3 * width);
  a.proj = Linear::make(rng, width, width);
  return a;
}

Tensor SelfAttention::forward(const Tensor& x) const {
  const int64_t W = x.shape().back();
  Tensor qkv_out = qkv.forward(x);
  Tensor q = split_heads(slice_last(qkv_out, 0, W), heads);
  Tensor k = split_heads(slice_last(qkv_out, W, 2 * W), heads);
  Tensor v = split_heads(slice_last(qkv_out, 2 * W, 3 * W), heads);
  return proj.forward(merge_heads(attention(q, k, v)));
}

void SelfAttention::collect(Params& out, const std::string& prefix) const {
  qkv.collect(out, prefix + ".qkv");
  proj.collect(out, prefix + ".proj");
}

CrossAttention CrossAttention::make(Rng& rng, int64_t width, int64_t ctx_width,
                                    int heads) {
  CrossAttention a;
  a.heads = heads;
  a.q = Linear::make(rng, width, width);
  a.kv = Linear::make(rng, ctx_width, 2 * width);
  a.proj = Linear::make(rng, width, width);
  return a;
}

Tensor CrossAttention::forward(const Tensor& x, const Tensor& ctx) const {
  const int64_t W = x.shape().back();
  Tensor qh = split_heads(q.forward(x), heads);
  Tensor kv_out = kv.forward(ctx);
  Tensor kh = split_heads(slice_last(kv_out, 0, W), heads);
  Tensor vh = split_heads(slice_last(kv_out, W, 2 * W), heads);
  return proj.forward(merge_heads(attention(qh, kh, vh)));
}

void CrossAttention::collect(Params& out, const std::string& prefix) const {
  q.collect(out, prefix + ".q");
  kv.collect(out, prefix + ".kv");
  proj.collect(out, prefix + ".proj");
}

Mlp Mlp::make(Rng& rng, int64_t width, int64_t hidden) {
  Mlp m;
  m.fc1 = Linear::make(rng, width, hidden);
  m.fc2 = Linear::make(rng, hidden, width);
  return m;
}

Tensor Mlp::forward(const Tensor& x) const {
  return fc2.forward(gelu(fc1.forward(x)));
}

void Mlp::collect(Params& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

TransformerBlock TransformerBlock::make(Rng& rng, int64_t width, int heads,
                                        int64_t mlp_hidden) {
  TransformerBlock b;
  b.ln1 = LayerNorm::make(width);
  b.ln2 = LayerNorm::make(width);
  b.attn = SelfAttention::make(rng, width, heads);
  b.mlp = Mlp::make(rng, width, mlp_hidden);
  return b;
}

Tensor TransformerBlock::forward(const Tensor& x) const {
  Tensor h = add(x, attn.forward(ln1.forward(x)));
  return add(h, mlp.forward(ln2.forward(h)));
}

void TransformerBlock::collect(Params& out, const std::string& prefix) const {
  ln1.collect(out, prefix + ".ln1");
  attn.collect(out, prefix + ".attn");
  ln2.collect(out, prefix + ".ln2");
  mlp.collect(out, prefix + ".mlp");
}

AdamW::AdamW(Params params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      wd_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(ArrayD::zeros(p.tensor.shape()));
    v_.push_back(ArrayD::zeros(p.tensor.shape()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& t = params_[pi].tensor;
    const ArrayD& g = t.grad();
    if (g.empty()) continue;  // parameter unused in this step's graph
    ArrayD& w = t.value_mut();
    ArrayD& m = m_[pi];
    ArrayD& v = v_[pi];
    for (int64_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
    }
  }
}

}  // namespace ecg2cine::core
