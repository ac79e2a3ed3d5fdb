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

#include "ecg2cine/core/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace ecg2cine::core {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                               Eigen::Dynamic, Eigen::RowMajor>>;

using Node = Tensor::Node;

Tensor make_op(ArrayD value, std::vector<Tensor> parents,
               std::function<void(Node&)> backprop) {
  Tensor out = Tensor::constant(std::move(value));
  Node& n = *out.node();
  for (const Tensor& p : parents) {
    if (p.requires_grad()) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backprop = std::move(backprop);
  }
  return out;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Unary elementwise with derivative computed from input value.
Tensor unary_op(const Tensor& a, double (*f)(double), double (*df)(double)) {
  const ArrayD& av = a.value();
  ArrayD out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_op(std::move(out), {a}, [a, df](Node& self) {
    if (!a.requires_grad()) return;
    ArrayD& ga = a.node()->ensure_grad();
    const ArrayD& av = a.value();
    const ArrayD& g = self.grad;
    for (int64_t i = 0; i < av.size(); ++i) ga[i] += df(av[i]) * g[i];
  });
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a defined scalar tensor");
  }
  // Topological order by iterative DFS.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, size_t>> stack;
  std::unordered_set<Node*> seen;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].node().get();
      ++next;
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  ArrayD out(a.shape());
  const ArrayD &av = a.value(), &bv = b.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const ArrayD& g = self.grad;
    if (a.requires_grad()) {
      ArrayD& ga = a.node()->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      ArrayD& gb = b.node()->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  ArrayD out(a.shape());
  const ArrayD &av = a.value(), &bv = b.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const ArrayD& g = self.grad;
    if (a.requires_grad()) {
      ArrayD& ga = a.node()->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      ArrayD& gb = b.node()->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  ArrayD out(a.shape());
  const ArrayD &av = a.value(), &bv = b.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const ArrayD& g = self.grad;
    const ArrayD &av = a.value(), &bv = b.value();
    if (a.requires_grad()) {
      ArrayD& ga = a.node()->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      ArrayD& gb = b.node()->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  ArrayD out(a.shape());
  const ArrayD& av = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return make_op(std::move(out), {a}, [a, s](Node& self) {
    ArrayD& ga = a.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  ArrayD out(a.shape());
  const ArrayD& av = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  return make_op(std::move(out), {a}, [a](Node& self) {
    ArrayD& ga = a.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor square(const Tensor& a) {
  ArrayD out(a.shape());
  const ArrayD& av = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  return make_op(std::move(out), {a}, [a](Node& self) {
    ArrayD& ga = a.node()->ensure_grad();
    const ArrayD& av = a.value();
    const ArrayD& g = self.grad;
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
  });
}

Tensor exp_t(const Tensor& a) {
  ArrayD out(a.shape());
  const ArrayD& av = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  Tensor result = make_op(std::move(out), {a}, nullptr);
  if (result.requires_grad()) {
    // derivative is the output itself; capture by node to avoid a copy
    auto out_node = result.node();
    result.node()->backprop = [a, out_node](Node& self) {
      ArrayD& ga = a.node()->ensure_grad();
      const ArrayD& y = out_node->value;
      const ArrayD& g = self.grad;
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += y[i] * g[i];
    };
  }
  return result;
}

Tensor sin_t(const Tensor& a) {
  return unary_op(
      a, +[](double x) { return std::sin(x); },
      +[](double x) { return std::cos(x); });
}

Tensor cos_t(const Tensor& a) {
  return unary_op(
      a, +[](double x) { return std::cos(x); },
      +[](double x) { return -std::sin(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, +[](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      +[](double x) {
        const double y = 1.0 / (1.0 + std::exp(-x));
        return y * (1.0 - y);
      });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(
      a, +[](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      +[](double x) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
               x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  ArrayD out = a.value().reshaped(shape);
  return make_op(std::move(out), {a}, [a](Node& self) {
    ArrayD& ga = a.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor split_heads(const Tensor& x, int heads) {
  if (x.shape().size() != 3 || x.dim(2) % heads != 0) {
    throw ShapeError("split_heads: need [B,T,H*dh], got " +
                     shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), T = x.dim(1), W = x.dim(2);
  const int64_t dh = W / heads;
  ArrayD out({B, heads, T, dh});
  const ArrayD& xv = x.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t h = 0; h < heads; ++h) {
        const double* src = xv.data() + ((b * T + t) * W + h * dh);
        double* dst = out.data() + (((b * heads + h) * T + t) * dh);
        std::copy(src, src + dh, dst);
      }
  return make_op(std::move(out), {x}, [x, heads, B, T, W, dh](Node& self) {
    ArrayD& gx = x.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t h = 0; h < heads; ++h) {
          const double* src = g.data() + (((b * heads + h) * T + t) * dh);
          double* dst = gx.data() + ((b * T + t) * W + h * dh);
          for (int64_t i = 0; i < dh; ++i) dst[i] += src[i];
        }
  });
}

Tensor merge_heads(const Tensor& x) {
  if (x.shape().size() != 4) {
    throw ShapeError("merge_heads: need [B,H,T,dh], got " +
                     shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), H = x.dim(1), T = x.dim(2), dh = x.dim(3);
  ArrayD out({B, T, H * dh});
  const ArrayD& xv = x.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t t = 0; t < T; ++t) {
        const double* src = xv.data() + (((b * H + h) * T + t) * dh);
        double* dst = out.data() + ((b * T + t) * (H * dh) + h * dh);
        std::copy(src, src + dh, dst);
      }
  return make_op(std::move(out), {x}, [x, B, H, T, dh](Node& self) {
    ArrayD& gx = x.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t t = 0; t < T; ++t) {
          const double* src = g.data() + ((b * T + t) * (H * dh) + h * dh);
          double* dst = gx.data() + (((b * H + h) * T + t) * dh);
          for (int64_t i = 0; i < dh; ++i) dst[i] += src[i];
        }
  });
}

Tensor transpose12(const Tensor& x) {
  if (x.shape().size() != 4) {
    throw ShapeError("transpose12: need rank-4, got " + shape_str(x.shape()));
  }
  const int64_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  ArrayD out({A, C, B, D});
  const ArrayD& xv = x.value();
  for (int64_t a = 0; a < A; ++a)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        const double* src = xv.data() + (((a * B + b) * C + c) * D);
        double* dst = out.data() + (((a * C + c) * B + b) * D);
        std::copy(src, src + D, dst);
      }
  return make_op(std::move(out), {x}, [x, A, B, C, D](Node& self) {
    ArrayD& gx = x.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t a = 0; a < A; ++a)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t b = 0; b < B; ++b) {
          const double* src = g.data() + (((a * C + c) * B + b) * D);
          double* dst = gx.data() + (((a * B + b) * C + c) * D);
          for (int64_t i = 0; i < D; ++i) dst[i] += src[i];
        }
  });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() ||
      !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_last: incompatible " + shape_str(sa) + " and " +
                     shape_str(sb));
  }
  const int64_t Da = sa.back(), Db = sb.back();
  const int64_t rows = a.size() / Da;
  Shape os = sa;
  os.back() = Da + Db;
  ArrayD out(os);
  const ArrayD &av = a.value(), &bv = b.value();
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(av.data() + r * Da, av.data() + (r + 1) * Da,
              out.data() + r * (Da + Db));
    std::copy(bv.data() + r * Db, bv.data() + (r + 1) * Db,
              out.data() + r * (Da + Db) + Da);
  }
  return make_op(std::move(out), {a, b}, [a, b, rows, Da, Db](Node& self) {
    const ArrayD& g = self.grad;
    if (a.requires_grad()) {
      ArrayD& ga = a.node()->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < Da; ++i)
          ga[r * Da + i] += g[r * (Da + Db) + i];
    }
    if (b.requires_grad()) {
      ArrayD& gb = b.node()->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < Db; ++i)
          gb[r * Db + i] += g[r * (Da + Db) + Da + i];
    }
  });
}

Tensor slice_dim1(const Tensor& x, int64_t c0, int64_t c1) {
  const Shape& s = x.shape();
  if (s.size() < 2 || c0 < 0 || c1 > s[1] || c0 >= c1) {
    throw ShapeError("slice_dim1: bad range on " + shape_str(s));
  }
  const int64_t D0 = s[0], D1 = s[1];
  int64_t inner = 1;
  for (size_t i = 2; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[1] = c1 - c0;
  ArrayD out(os);
  const ArrayD& xv = x.value();
  for (int64_t d0 = 0; d0 < D0; ++d0)
    for (int64_t c = c0; c < c1; ++c) {
      const double* src = xv.data() + (d0 * D1 + c) * inner;
      double* dst = out.data() + (d0 * (c1 - c0) + (c - c0)) * inner;
      std::copy(src, src + inner, dst);
    }
  return make_op(std::move(out), {x}, [x, D0, D1, c0, c1, inner](Node& self) {
    ArrayD& gx = x.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t d0 = 0; d0 < D0; ++d0)
      for (int64_t c = c0; c < c1; ++c) {
        const double* src = g.data() + (d0 * (c1 - c0) + (c - c0)) * inner;
        double* dst = gx.data() + (d0 * D1 + c) * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
}

Tensor slice_last(const Tensor& x, int64_t c0, int64_t c1) {
  const Shape& s = x.shape();
  const int64_t D = s.back();
  if (c0 < 0 || c1 > D || c0 >= c1) {
    throw ShapeError("slice_last: bad range on " + shape_str(s));
  }
  const int64_t rows = x.size() / D;
  Shape os = s;
  os.back() = c1 - c0;
  ArrayD out(os);
  const ArrayD& xv = x.value();
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(xv.data() + r * D + c0, xv.data() + r * D + c1,
              out.data() + r * (c1 - c0));
  }
  return make_op(std::move(out), {x}, [x, rows, D, c0, c1](Node& self) {
    ArrayD& gx = x.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < c1 - c0; ++i)
        gx[r * D + c0 + i] += g[r * (c1 - c0) + i];
  });
}

Tensor gather_rows(const Tensor& x, std::vector<int64_t> idx) {
  if (x.shape().size() != 3) {
    throw ShapeError("gather_rows: need [B,T,D], got " + shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  const int64_t Tv = static_cast<int64_t>(idx.size());
  for (int64_t i : idx) {
    if (i < 0 || i >= T) throw ShapeError("gather_rows: index out of range");
  }
  ArrayD out({B, Tv, D});
  const ArrayD& xv = x.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t r = 0; r < Tv; ++r) {
      const double* src = xv.data() + (b * T + idx[static_cast<size_t>(r)]) * D;
      std::copy(src, src + D, out.data() + (b * Tv + r) * D);
    }
  return make_op(std::move(out), {x},
                 [x, idx = std::move(idx), B, T, D, Tv](Node& self) {
                   ArrayD& gx = x.node()->ensure_grad();
                   const ArrayD& g = self.grad;
                   for (int64_t b = 0; b < B; ++b)
                     for (int64_t r = 0; r < Tv; ++r) {
                       const double* src = g.data() + (b * Tv + r) * D;
                       double* dst =
                           gx.data() + (b * T + idx[static_cast<size_t>(r)]) * D;
                       for (int64_t i = 0; i < D; ++i) dst[i] += src[i];
                     }
                 });
}

Tensor assemble_tokens(const Tensor& visible, const Tensor& mask_token,
                       std::vector<int64_t> vis_idx, int64_t total_rows) {
  if (visible.shape().size() != 3 ||
      visible.dim(1) != static_cast<int64_t>(vis_idx.size())) {
    throw ShapeError("assemble_tokens: visible must be [B,|vis_idx|,D]");
  }
  const int64_t B = visible.dim(0), Tv = visible.dim(1), D = visible.dim(2);
  if (mask_token.shape() != Shape{D}) {
    throw ShapeError("assemble_tokens: mask token must be [D]");
  }
  std::vector<int64_t> slot(static_cast<size_t>(total_rows), -1);
  for (int64_t r = 0; r < Tv; ++r) slot[static_cast<size_t>(vis_idx[static_cast<size_t>(r)])] = r;
  ArrayD out({B, total_rows, D});
  const ArrayD& vv = visible.value();
  const ArrayD& mv = mask_token.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < total_rows; ++t) {
      double* dst = out.data() + (b * total_rows + t) * D;
      const int64_t r = slot[static_cast<size_t>(t)];
      if (r >= 0) {
        const double* src = vv.data() + (b * Tv + r) * D;
        std::copy(src, src + D, dst);
      } else {
        std::copy(mv.data(), mv.data() + D, dst);
      }
    }
  return make_op(
      std::move(out), {visible, mask_token},
      [visible, mask_token, slot = std::move(slot), B, Tv, D,
       total_rows](Node& self) {
        const ArrayD& g = self.grad;
        if (visible.requires_grad()) {
          ArrayD& gv = visible.node()->ensure_grad();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < total_rows; ++t) {
              const int64_t r = slot[static_cast<size_t>(t)];
              if (r < 0) continue;
              const double* src = g.data() + (b * total_rows + t) * D;
              double* dst = gv.data() + (b * Tv + r) * D;
              for (int64_t i = 0; i < D; ++i) dst[i] += src[i];
            }
        }
        if (mask_token.requires_grad()) {
          ArrayD& gm = mask_token.node()->ensure_grad();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < total_rows; ++t) {
              if (slot[static_cast<size_t>(t)] >= 0) continue;
              const double* src = g.data() + (b * total_rows + t) * D;
              for (int64_t i = 0; i < D; ++i) gm[i] += src[i];
            }
        }
      });
}

// ---------------------------------------------------------------------------
// broadcast helpers
// ---------------------------------------------------------------------------

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const int64_t D = x.shape().back();
  if (b.shape() != Shape{D}) {
    throw ShapeError("add_bias: bias must be [last dim] of " +
                     shape_str(x.shape()));
  }
  const int64_t rows = x.size() / D;
  ArrayD out(x.shape());
  const ArrayD &xv = x.value(), &bv = b.value();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t i = 0; i < D; ++i) out[r * D + i] = xv[r * D + i] + bv[i];
  return make_op(std::move(out), {x, b}, [x, b, rows, D](Node& self) {
    const ArrayD& g = self.grad;
    if (x.requires_grad()) {
      ArrayD& gx = x.node()->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (b.requires_grad()) {
      ArrayD& gb = b.node()->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < D; ++i) gb[i] += g[r * D + i];
    }
  });
}

Tensor add_bcast0(const Tensor& x, const Tensor& c) {
  const Shape& xs = x.shape();
  const Shape& cs = c.shape();
  if (xs.size() != cs.size() + 1 ||
      !std::equal(cs.begin(), cs.end(), xs.begin() + 1)) {
    throw ShapeError("add_bcast0: " + shape_str(cs) +
                     " does not broadcast over " + shape_str(xs));
  }
  const int64_t B = xs[0], inner = c.size();
  ArrayD out(xs);
  const ArrayD &xv = x.value(), &cv = c.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < inner; ++i)
      out[b * inner + i] = xv[b * inner + i] + cv[i];
  return make_op(std::move(out), {x, c}, [x, c, B, inner](Node& self) {
    const ArrayD& g = self.grad;
    if (x.requires_grad()) {
      ArrayD& gx = x.node()->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (c.requires_grad()) {
      ArrayD& gc = c.node()->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < inner; ++i) gc[i] += g[b * inner + i];
    }
  });
}

Tensor modulate(const Tensor& x, const Tensor& s, const Tensor& h) {
  if (x.shape().size() != 3) {
    throw ShapeError("modulate: x must be [B,T,W]");
  }
  const int64_t B = x.dim(0), T = x.dim(1), W = x.dim(2);
  if (s.shape() != Shape{B, W} || h.shape() != Shape{B, W}) {
    throw ShapeError("modulate: scale/shift must be [B,W]");
  }
  ArrayD out(x.shape());
  const ArrayD &xv = x.value(), &sv = s.value(), &hv = h.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t i = 0; i < W; ++i) {
        const int64_t k = (b * T + t) * W + i;
        out[k] = xv[k] * (1.0 + sv[b * W + i]) + hv[b * W + i];
      }
  return make_op(std::move(out), {x, s, h}, [x, s, h, B, T, W](Node& self) {
    const ArrayD& g = self.grad;
    const ArrayD &xv = x.value(), &sv = s.value();
    if (x.requires_grad()) {
      ArrayD& gx = x.node()->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
          for (int64_t i = 0; i < W; ++i) {
            const int64_t k = (b * T + t) * W + i;
            gx[k] += g[k] * (1.0 + sv[b * W + i]);
          }
    }
    if (s.requires_grad()) {
      ArrayD& gs = s.node()->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
          for (int64_t i = 0; i < W; ++i) {
            const int64_t k = (b * T + t) * W + i;
            gs[b * W + i] += g[k] * xv[k];
          }
    }
    if (h.requires_grad()) {
      ArrayD& gh = h.node()->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
          for (int64_t i = 0; i < W; ++i)
            gh[b * W + i] += g[(b * T + t) * W + i];
    }
  });
}

Tensor row_scale(const Tensor& x, const Tensor& gmul) {
  if (x.shape().size() != 3) {
    throw ShapeError("row_scale: x must be [B,T,W]");
  }
  const int64_t B = x.dim(0), T = x.dim(1), W = x.dim(2);
  if (gmul.shape() != Shape{B, W}) {
    throw ShapeError("row_scale: gate must be [B,W]");
  }
  ArrayD out(x.shape());
  const ArrayD &xv = x.value(), &gv = gmul.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t i = 0; i < W; ++i) {
        const int64_t k = (b * T + t) * W + i;
        out[k] = xv[k] * gv[b * W + i];
      }
  return make_op(std::move(out), {x, gmul}, [x, gmul, B, T, W](Node& self) {
    const ArrayD& g = self.grad;
    const ArrayD &xv = x.value(), &gv = gmul.value();
    if (x.requires_grad()) {
      ArrayD& gx = x.node()->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
          for (int64_t i = 0; i < W; ++i) {
            const int64_t k = (b * T + t) * W + i;
            gx[k] += g[k] * gv[b * W + i];
          }
    }
    if (gmul.requires_grad()) {
      ArrayD& gg = gmul.node()->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
          for (int64_t i = 0; i < W; ++i) {
            const int64_t k = (b * T + t) * W + i;
            gg[b * W + i] += g[k] * xv[k];
          }
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  ArrayD out({M, N});
  {
    CMatMap am(a.value().data(), M, K), bm(b.value().data(), K, N);
    MatMap om(out.data(), M, N);
    om.noalias() = am * bm;
  }
  return make_op(std::move(out), {a, b}, [a, b, M, K, N](Node& self) {
    CMatMap g(self.grad.data(), M, N);
    if (a.requires_grad()) {
      MatMap ga(a.node()->ensure_grad().data(), M, K);
      CMatMap bm(b.value().data(), K, N);
      ga.noalias() += g * bm.transpose();
    }
    if (b.requires_grad()) {
      MatMap gb(b.node()->ensure_grad().data(), K, N);
      CMatMap am(a.value().data(), M, K);
      gb.noalias() += am.transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape& xs = x.shape();
  const int64_t K = xs.back();
  if (w.shape().size() != 2 || w.dim(0) != K) {
    throw ShapeError("linear: weight " + shape_str(w.shape()) +
                     " incompatible with input " + shape_str(xs));
  }
  const int64_t N = w.dim(1);
  const int64_t R = x.size() / K;
  Shape os = xs;
  os.back() = N;
  ArrayD out(os);
  {
    CMatMap xm(x.value().data(), R, K), wm(w.value().data(), K, N);
    MatMap om(out.data(), R, N);
    om.noalias() = xm * wm;
    if (b.defined()) {
      const ArrayD& bv = b.value();
      if (bv.shape() != Shape{N}) throw ShapeError("linear: bias must be [N]");
      for (int64_t r = 0; r < R; ++r)
        for (int64_t i = 0; i < N; ++i) out[r * N + i] += bv[i];
    }
  }
  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_op(std::move(out), std::move(parents),
                 [x, w, b, R, K, N](Node& self) {
                   CMatMap g(self.grad.data(), R, N);
                   if (x.requires_grad()) {
                     MatMap gx(x.node()->ensure_grad().data(), R, K);
                     CMatMap wm(w.value().data(), K, N);
                     gx.noalias() += g * wm.transpose();
                   }
                   if (w.requires_grad()) {
                     MatMap gw(w.node()->ensure_grad().data(), K, N);
                     CMatMap xm(x.value().data(), R, K);
                     gw.noalias() += xm.transpose() * g;
                   }
                   if (b.defined() && b.requires_grad()) {
                     ArrayD& gb = b.node()->ensure_grad();
                     const ArrayD& gr = self.grad;
                     for (int64_t r = 0; r < R; ++r)
                       for (int64_t i = 0; i < N; ++i) gb[i] += gr[r * N + i];
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& g, const Tensor& b,
                  double eps) {
  const int64_t D = x.shape().back();
  const int64_t R = x.size() / D;
  if (g.defined() && g.shape() != Shape{D}) {
    throw ShapeError("layer_norm: gamma must be [D]");
  }
  if (b.defined() && b.shape() != Shape{D}) {
    throw ShapeError("layer_norm: beta must be [D]");
  }
  ArrayD out(x.shape());
  auto xhat = std::make_shared<ArrayD>(x.shape());
  auto inv_std = std::make_shared<ArrayD>(Shape{R});
  const ArrayD& xv = x.value();
  for (int64_t r = 0; r < R; ++r) {
    const double* row = xv.data() + r * D;
    double mean = 0.0;
    for (int64_t i = 0; i < D; ++i) mean += row[i];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (int64_t i = 0; i < D; ++i) {
      const double d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int64_t i = 0; i < D; ++i) {
      const double xh = (row[i] - mean) * is;
      (*xhat)[r * D + i] = xh;
      double y = xh;
      if (g.defined()) y *= g.value()[i];
      if (b.defined()) y += b.value()[i];
      out[r * D + i] = y;
    }
  }
  std::vector<Tensor> parents = {x};
  if (g.defined()) parents.push_back(g);
  if (b.defined()) parents.push_back(b);
  return make_op(
      std::move(out), std::move(parents),
      [x, g, b, xhat, inv_std, R, D](Node& self) {
        const ArrayD& go = self.grad;
        if (g.defined() && g.requires_grad()) {
          ArrayD& gg = g.node()->ensure_grad();
          for (int64_t r = 0; r < R; ++r)
            for (int64_t i = 0; i < D; ++i)
              gg[i] += go[r * D + i] * (*xhat)[r * D + i];
        }
        if (b.defined() && b.requires_grad()) {
          ArrayD& gb = b.node()->ensure_grad();
          for (int64_t r = 0; r < R; ++r)
            for (int64_t i = 0; i < D; ++i) gb[i] += go[r * D + i];
        }
        if (x.requires_grad()) {
          ArrayD& gx = x.node()->ensure_grad();
          for (int64_t r = 0; r < R; ++r) {
            // dxhat = dy * gamma; dx = (dxhat - mean(dxhat)
            //         - xhat * mean(dxhat*xhat)) * inv_std
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int64_t i = 0; i < D; ++i) {
              double dxh = go[r * D + i];
              if (g.defined()) dxh *= g.value()[i];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * (*xhat)[r * D + i];
            }
            const double mean_dxh = sum_dxh / static_cast<double>(D);
            const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(D);
            const double is = (*inv_std)[r];
            for (int64_t i = 0; i < D; ++i) {
              double dxh = go[r * D + i];
              if (g.defined()) dxh *= g.value()[i];
              gx[r * D + i] +=
                  (dxh - mean_dxh - (*xhat)[r * D + i] * mean_dxh_xh) * is;
            }
          }
        }
      });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  if (qs.size() != 4 || ks.size() != 4 || v.shape() != ks || qs[0] != ks[0] ||
      qs[1] != ks[1] || qs[3] != ks[3]) {
    throw ShapeError("attention: need q[B,H,Tq,dh], k/v[B,H,Tk,dh]");
  }
  const int64_t B = qs[0], H = qs[1], Tq = qs[2], Tk = ks[2], dh = qs[3];
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  ArrayD out({B, H, Tq, dh});
  auto probs = std::make_shared<ArrayD>(Shape{B, H, Tq, Tk});
  const ArrayD &qv = q.value(), &kv = k.value(), &vv = v.value();
  for (int64_t bh = 0; bh < B * H; ++bh) {
    CMatMap qm(qv.data() + bh * Tq * dh, Tq, dh);
    CMatMap km(kv.data() + bh * Tk * dh, Tk, dh);
    CMatMap vm(vv.data() + bh * Tk * dh, Tk, dh);
    MatMap pm(probs->data() + bh * Tq * Tk, Tq, Tk);
    pm.noalias() = qm * km.transpose() * sc;
    // row softmax, numerically stable
    for (int64_t r = 0; r < Tq; ++r) {
      double* row = probs->data() + bh * Tq * Tk + r * Tk;
      double mx = row[0];
      for (int64_t i = 1; i < Tk; ++i) mx = std::max(mx, row[i]);
      double sum = 0.0;
      for (int64_t i = 0; i < Tk; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
      }
      const double inv = 1.0 / sum;
      for (int64_t i = 0; i < Tk; ++i) row[i] *= inv;
    }
    MatMap om(out.data() + bh * Tq * dh, Tq, dh);
    om.noalias() = pm * vm;
  }
  return make_op(
      std::move(out), {q, k, v},
      [q, k, v, probs, B, H, Tq, Tk, dh, sc](Node& self) {
        ArrayD dS({Tq, Tk});
        for (int64_t bh = 0; bh < B * H; ++bh) {
          CMatMap g(self.grad.data() + bh * Tq * dh, Tq, dh);
          CMatMap pm(probs->data() + bh * Tq * Tk, Tq, Tk);
          CMatMap vm(v.value().data() + bh * Tk * dh, Tk, dh);
          if (v.requires_grad()) {
            MatMap gv(v.node()->ensure_grad().data() + bh * Tk * dh, Tk, dh);
            gv.noalias() += pm.transpose() * g;
          }
          // dP, then softmax backward into dS
          MatMap dSm(dS.data(), Tq, Tk);
          dSm.noalias() = g * vm.transpose();
          for (int64_t r = 0; r < Tq; ++r) {
            const double* p = probs->data() + bh * Tq * Tk + r * Tk;
            double* ds = dS.data() + r * Tk;
            double dot = 0.0;
            for (int64_t i = 0; i < Tk; ++i) dot += ds[i] * p[i];
            for (int64_t i = 0; i < Tk; ++i) ds[i] = (ds[i] - dot) * p[i] * sc;
          }
          CMatMap qm(q.value().data() + bh * Tq * dh, Tq, dh);
          CMatMap km(k.value().data() + bh * Tk * dh, Tk, dh);
          if (q.requires_grad()) {
            MatMap gq(q.node()->ensure_grad().data() + bh * Tq * dh, Tq, dh);
            gq.noalias() += dSm * km;
          }
          if (k.requires_grad()) {
            MatMap gk(k.node()->ensure_grad().data() + bh * Tk * dh, Tk, dh);
            gk.noalias() += dSm.transpose() * qm;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  ArrayD out({1});
  const ArrayD& xv = x.value();
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
  out[0] = s;
  return make_op(std::move(out), {x}, [x](Node& self) {
    ArrayD& gx = x.node()->ensure_grad();
    const double g = self.grad[0];
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse_loss");
  return mean_all(square(sub(a, b)));
}

// ---------------------------------------------------------------------------
// conv
// ---------------------------------------------------------------------------

namespace {

struct Conv3dDims {
  int64_t B, Cin, T, H, W;
  int64_t Cout, kt, kh, kw;
  int st, sh, sw;
  int64_t pt, ph, pw;
  int64_t To, Ho, Wo;
  int64_t patch() const { return Cin * kt * kh * kw; }
  int64_t cols() const { return To * Ho * Wo; }
};

Conv3dDims conv_dims(const Shape& xs, const Shape& ws, int st, int sh, int sw) {
  Conv3dDims d;
  d.B = xs[0];
  d.Cin = xs[1];
  d.T = xs[2];
  d.H = xs[3];
  d.W = xs[4];
  d.Cout = ws[0];
  d.kt = ws[2];
  d.kh = ws[3];
  d.kw = ws[4];
  d.st = st;
  d.sh = sh;
  d.sw = sw;
  d.pt = d.kt / 2;
  d.ph = d.kh / 2;
  d.pw = d.kw / 2;
  d.To = (d.T + 2 * d.pt - d.kt) / st + 1;
  d.Ho = (d.H + 2 * d.ph - d.kh) / sh + 1;
  d.Wo = (d.W + 2 * d.pw - d.kw) / sw + 1;
  return d;
}

// Gathers one sample's receptive fields into [patch, cols].
void im2col(const double* x, const Conv3dDims& d, double* col) {
  const int64_t cols = d.cols();
  for (int64_t c = 0; c < d.Cin; ++c)
    for (int64_t it = 0; it < d.kt; ++it)
      for (int64_t ih = 0; ih < d.kh; ++ih)
        for (int64_t iw = 0; iw < d.kw; ++iw) {
          const int64_t row = ((c * d.kt + it) * d.kh + ih) * d.kw + iw;
          double* out_row = col + row * cols;
          for (int64_t ot = 0; ot < d.To; ++ot) {
            const int64_t t = ot * d.st + it - d.pt;
            for (int64_t oh = 0; oh < d.Ho; ++oh) {
              const int64_t h = oh * d.sh + ih - d.ph;
              double* dst = out_row + (ot * d.Ho + oh) * d.Wo;
              if (t < 0 || t >= d.T || h < 0 || h >= d.H) {
                std::fill(dst, dst + d.Wo, 0.0);
                continue;
              }
              const double* src = x + ((c * d.T + t) * d.H + h) * d.W;
              for (int64_t ow = 0; ow < d.Wo; ++ow) {
                const int64_t w = ow * d.sw + iw - d.pw;
                dst[ow] = (w < 0 || w >= d.W) ? 0.0 : src[w];
              }
            }
          }
        }
}

// Scatter-adds a [patch, cols] gradient back onto one sample's input.
void col2im_add(const double* col, const Conv3dDims& d, double* gx) {
  const int64_t cols = d.cols();
  for (int64_t c = 0; c < d.Cin; ++c)
    for (int64_t it = 0; it < d.kt; ++it)
      for (int64_t ih = 0; ih < d.kh; ++ih)
        for (int64_t iw = 0; iw < d.kw; ++iw) {
          const int64_t row = ((c * d.kt + it) * d.kh + ih) * d.kw + iw;
          const double* src_row = col + row * cols;
          for (int64_t ot = 0; ot < d.To; ++ot) {
            const int64_t t = ot * d.st + it - d.pt;
            if (t < 0 || t >= d.T) continue;
            for (int64_t oh = 0; oh < d.Ho; ++oh) {
              const int64_t h = oh * d.sh + ih - d.ph;
              if (h < 0 || h >= d.H) continue;
              const double* src = src_row + (ot * d.Ho + oh) * d.Wo;
              double* dst = gx + ((c * d.T + t) * d.H + h) * d.W;
              for (int64_t ow = 0; ow < d.Wo; ++ow) {
                const int64_t w = ow * d.sw + iw - d.pw;
                if (w >= 0 && w < d.W) dst[w] += src[ow];
              }
            }
          }
        }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride_t,
              int stride_h, int stride_w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5 || ws[1] != xs[1]) {
    throw ShapeError("conv3d: need x[B,Cin,T,H,W], w[Cout,Cin,kt,kh,kw]; got " +
                     shape_str(xs) + " and " + shape_str(ws));
  }
  const Conv3dDims d = conv_dims(xs, ws, stride_t, stride_h, stride_w);
  ArrayD out({d.B, d.Cout, d.To, d.Ho, d.Wo});
  ArrayD col({d.patch(), d.cols()});
  const int64_t osz = d.Cout * d.cols();
  for (int64_t s = 0; s < d.B; ++s) {
    im2col(x.value().data() + s * d.Cin * d.T * d.H * d.W, d, col.data());
    CMatMap wm(w.value().data(), d.Cout, d.patch());
    CMatMap cm(col.data(), d.patch(), d.cols());
    MatMap om(out.data() + s * osz, d.Cout, d.cols());
    om.noalias() = wm * cm;
  }
  if (b.defined()) {
    if (b.shape() != Shape{d.Cout}) throw ShapeError("conv3d: bias must be [Cout]");
    for (int64_t s = 0; s < d.B; ++s)
      for (int64_t c = 0; c < d.Cout; ++c) {
        double* dst = out.data() + s * osz + c * d.cols();
        const double bv = b.value()[c];
        for (int64_t i = 0; i < d.cols(); ++i) dst[i] += bv;
      }
  }
  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_op(std::move(out), std::move(parents), [x, w, b, d, osz](Node& self) {
    ArrayD col({d.patch(), d.cols()});
    ArrayD dcol({d.patch(), d.cols()});
    const int64_t xsz = d.Cin * d.T * d.H * d.W;
    for (int64_t s = 0; s < d.B; ++s) {
      CMatMap g(self.grad.data() + s * osz, d.Cout, d.cols());
      if (w.requires_grad()) {
        im2col(x.value().data() + s * xsz, d, col.data());
        MatMap gw(w.node()->ensure_grad().data(), d.Cout, d.patch());
        CMatMap cm(col.data(), d.patch(), d.cols());
        gw.noalias() += g * cm.transpose();
      }
      if (x.requires_grad()) {
        CMatMap wm(w.value().data(), d.Cout, d.patch());
        MatMap dcm(dcol.data(), d.patch(), d.cols());
        dcm.noalias() = wm.transpose() * g;
        col2im_add(dcol.data(), d, x.node()->ensure_grad().data() + s * xsz);
      }
    }
    if (b.defined() && b.requires_grad()) {
      ArrayD& gb = b.node()->ensure_grad();
      for (int64_t s = 0; s < d.B; ++s)
        for (int64_t c = 0; c < d.Cout; ++c) {
          const double* src = self.grad.data() + s * osz + c * d.cols();
          double acc = 0.0;
          for (int64_t i = 0; i < d.cols(); ++i) acc += src[i];
          gb[c] += acc;
        }
    }
  });
}

Tensor upsample2x_spatial(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 5) throw ShapeError("upsample2x_spatial: need [B,C,T,H,W]");
  const int64_t B = s[0], C = s[1], T = s[2], H = s[3], W = s[4];
  ArrayD out({B, C, T, 2 * H, 2 * W});
  const ArrayD& xv = x.value();
  for (int64_t bct = 0; bct < B * C * T; ++bct) {
    const double* src = xv.data() + bct * H * W;
    double* dst = out.data() + bct * 4 * H * W;
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const double v = src[h * W + w];
        dst[(2 * h) * 2 * W + 2 * w] = v;
        dst[(2 * h) * 2 * W + 2 * w + 1] = v;
        dst[(2 * h + 1) * 2 * W + 2 * w] = v;
        dst[(2 * h + 1) * 2 * W + 2 * w + 1] = v;
      }
  }
  return make_op(std::move(out), {x}, [x, B, C, T, H, W](Node& self) {
    ArrayD& gx = x.node()->ensure_grad();
    const ArrayD& g = self.grad;
    for (int64_t bct = 0; bct < B * C * T; ++bct) {
      const double* src = g.data() + bct * 4 * H * W;
      double* dst = gx.data() + bct * H * W;
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          dst[h * W + w] += src[(2 * h) * 2 * W + 2 * w] +
                            src[(2 * h) * 2 * W + 2 * w + 1] +
                            src[(2 * h + 1) * 2 * W + 2 * w] +
                            src[(2 * h + 1) * 2 * W + 2 * w + 1];
        }
    }
  });
}

}  // namespace ecg2cine::core
