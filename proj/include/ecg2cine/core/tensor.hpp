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

#ifndef ECG2CINE_CORE_TENSOR_HPP_
#define ECG2CINE_CORE_TENSOR_HPP_

#include <functional>
#include <memory>
#include <vector>

#include "ecg2cine/core/array.hpp"

namespace ecg2cine::core {

// Reverse-mode autodiff over dense double arrays. Ops build an eager tape;
// backward(loss) runs it once in reverse topological order. Double precision
// throughout so analytic gradients can be validated against central finite
// differences at ε=1e-4 without drowning in rounding noise.
class Tensor {
 public:
  struct Node {
    ArrayD value;
    ArrayD grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backprop;  // reads this node's grad
    int visit_mark = 0;

    ArrayD& ensure_grad() {
      if (grad.empty() && !value.empty()) grad = ArrayD::zeros(value.shape());
      return grad;
    }
  };

  Tensor() = default;

  static Tensor constant(ArrayD v) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->value = std::move(v);
    return t;
  }

  static Tensor param(ArrayD v) {
    Tensor t = constant(std::move(v));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const ArrayD& value() const { return node_->value; }
  ArrayD& value_mut() { return node_->value; }  // leaf updates (optimizer)
  const ArrayD& grad() const { return node_->grad; }
  ArrayD& grad_mut() { return node_->ensure_grad(); }
  void zero_grad() {
    if (node_) node_->grad = ArrayD();
  }

  const Shape& shape() const { return node_->value.shape(); }
  int64_t size() const { return node_->value.size(); }
  int64_t dim(int i) const { return node_->value.dim(i); }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar (size-1) tensor.
void backward(const Tensor& loss);

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor sin_t(const Tensor& a);
Tensor cos_t(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);  // erf form

// --- shape ---
Tensor reshape(const Tensor& a, Shape shape);
// [B,T,H*dh] -> [B,H,T,dh]
Tensor split_heads(const Tensor& x, int heads);
// [B,H,T,dh] -> [B,T,H*dh]
Tensor merge_heads(const Tensor& x);
// 4-d [A,B,C,D] -> [A,C,B,D]
Tensor transpose12(const Tensor& x);
// concat along last dim; all leading dims equal
Tensor concat_last(const Tensor& a, const Tensor& b);
// slice along dim 1 of rank>=2 tensor: [D0,D1,...] -> [D0,c1-c0,...]
Tensor slice_dim1(const Tensor& x, int64_t c0, int64_t c1);
// slice along last dim
Tensor slice_last(const Tensor& x, int64_t c0, int64_t c1);
// x[B,T,D], idx into T -> [B,|idx|,D]
Tensor gather_rows(const Tensor& x, std::vector<int64_t> idx);
// inverse of gather for MAE decoding: visible rows land at vis_idx, all
// other slots take the learned mask token. -> [B,total_rows,D]
Tensor assemble_tokens(const Tensor& visible, const Tensor& mask_token,
                       std::vector<int64_t> vis_idx, int64_t total_rows);

// --- broadcast helpers ---
// x[..., D] + b[D]
Tensor add_bias(const Tensor& x, const Tensor& b);
// x[B, rest...] + c[rest...]  (positional encodings etc.)
Tensor add_bcast0(const Tensor& x, const Tensor& c);
// x[B,T,W] * (1 + s[B,W]) + h[B,W]  (adaptive layer-norm modulation)
Tensor modulate(const Tensor& x, const Tensor& s, const Tensor& h);
// x[B,T,W] * g[B,W]  (per-sample gating)
Tensor row_scale(const Tensor& x, const Tensor& g);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N]
// x[...,K] * w[K,N] (+ b[N] if defined)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// layer norm over last dim; g/b may be undefined for a plain normalize
Tensor layer_norm(const Tensor& x, const Tensor& g, const Tensor& b,
                  double eps = 1e-5);
// scaled dot-product attention, softmax over keys.
// q[B,H,Tq,dh], k/v[B,H,Tk,dh] -> [B,H,Tq,dh]
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

// --- reductions ---
Tensor sum_all(const Tensor& x);   // -> [1]
Tensor mean_all(const Tensor& x);  // -> [1]
Tensor mse_loss(const Tensor& a, const Tensor& b);  // mean over elements

// --- conv ---
// x[B,Cin,T,H,W], w[Cout,Cin,kt,kh,kw], b[Cout] (optional), zero padding
// k/2 per axis. Output [B,Cout,To,Ho,Wo].
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride_t,
              int stride_h, int stride_w);
// nearest-neighbour 2x upsample of H and W
Tensor upsample2x_spatial(const Tensor& x);

}  // namespace ecg2cine::core

#endif  // ECG2CINE_CORE_TENSOR_HPP_
