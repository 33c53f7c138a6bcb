#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "catsg/core/parallel.hpp"
#include "catsg/nn/graph.hpp"

namespace catsg {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

// ---------------------------------------------------------------- elementwise

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  CATSG_CHECK(a->val.same_shape(b->val), NumericError, "add: shape mismatch");
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a->val.v[i] + b->val.v[i];
  return make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& o) {
    accumulate(a, o.grad);
    accumulate(b, o.grad);
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  CATSG_CHECK(a->val.same_shape(b->val), NumericError, "sub: shape mismatch");
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a->val.v[i] - b->val.v[i];
  return make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& o) {
    accumulate(a, o.grad);
    if (b->needs_grad) {
      Tensor<S>& g = b->grad_buf();
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] -= o.grad.v[i];
    }
  });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  CATSG_CHECK(a->val.same_shape(b->val), NumericError, "mul: shape mismatch");
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a->val.v[i] * b->val.v[i];
  return make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& o) {
    if (a->needs_grad) {
      Tensor<S>& g = a->grad_buf();
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += o.grad.v[i] * b->val.v[i];
    }
    if (b->needs_grad) {
      Tensor<S>& g = b->grad_buf();
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += o.grad.v[i] * a->val.v[i];
    }
  });
}

template <class S>
Var<S> scale(const Var<S>& a, double s) {
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = a->val.v[i] * static_cast<S>(s);
  return make_op<S>(std::move(out), {a}, [a, s](Node<S>& o) {
    if (!a->needs_grad) return;
    Tensor<S>& g = a->grad_buf();
    for (size_t i = 0; i < g.v.size(); ++i)
      g.v[i] += o.grad.v[i] * static_cast<S>(s);
  });
}

template <class S>
Var<S> square(const Var<S>& a) {
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a->val.v[i] * a->val.v[i];
  return make_op<S>(std::move(out), {a}, [a](Node<S>& o) {
    if (!a->needs_grad) return;
    Tensor<S>& g = a->grad_buf();
    for (size_t i = 0; i < g.v.size(); ++i)
      g.v[i] += S(2) * a->val.v[i] * o.grad.v[i];
  });
}

template <class S>
Var<S> silu(const Var<S>& a) {
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i) {
    S x = a->val.v[i];
    out.v[i] = x / (S(1) + std::exp(-x));
  }
  return make_op<S>(std::move(out), {a}, [a](Node<S>& o) {
    if (!a->needs_grad) return;
    Tensor<S>& g = a->grad_buf();
    for (size_t i = 0; i < g.v.size(); ++i) {
      S x = a->val.v[i];
      S sig = S(1) / (S(1) + std::exp(-x));
      g.v[i] += o.grad.v[i] * sig * (S(1) + x * (S(1) - sig));
    }
  });
}

template <class S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = a->val.v[i] > S(0) ? a->val.v[i] : S(0);
  return make_op<S>(std::move(out), {a}, [a](Node<S>& o) {
    if (!a->needs_grad) return;
    Tensor<S>& g = a->grad_buf();
    for (size_t i = 0; i < g.v.size(); ++i)
      if (a->val.v[i] > S(0)) g.v[i] += o.grad.v[i];
  });
}

template <class S>
Var<S> tanh_op(const Var<S>& a) {
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::tanh(a->val.v[i]);
  return make_op<S>(std::move(out), {a}, [a](Node<S>& o) {
    if (!a->needs_grad) return;
    Tensor<S>& g = a->grad_buf();
    for (size_t i = 0; i < g.v.size(); ++i) {
      S y = o.val.v[i];
      g.v[i] += o.grad.v[i] * (S(1) - y * y);
    }
  });
}

// elementwise product with a plain tensor (no gradient into the tensor)
template <class S>
Var<S> mul_const(const Var<S>& a, Tensor<S> t) {
  CATSG_CHECK(a->val.same_shape(t), NumericError, "mul_const: shape mismatch");
  Tensor<S> out(a->val.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a->val.v[i] * t.v[i];
  auto tt = std::make_shared<Tensor<S>>(std::move(t));
  return make_op<S>(std::move(out), {a}, [a, tt](Node<S>& o) {
    if (!a->needs_grad) return;
    Tensor<S>& g = a->grad_buf();
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += o.grad.v[i] * tt->v[i];
  });
}

// -------------------------------------------------------------------- shapes

template <class S>
Var<S> reshape(const Var<S>& a, std::vector<int> shape) {
  Tensor<S> out = a->val.reshaped(shape);
  return make_op<S>(std::move(out), {a}, [a](Node<S>& o) {
    if (!a->needs_grad) return;
    Tensor<S>& g = a->grad_buf();
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += o.grad.v[i];
  });
}

// ---------------------------------------------------------------- reductions

template <class S>
Var<S> sum_all(const Var<S>& a) {
  Tensor<S> out({1});
  S acc = S(0);
  for (S x : a->val.v) acc += x;
  out.v[0] = acc;
  return make_op<S>(std::move(out), {a}, [a](Node<S>& o) {
    if (!a->needs_grad) return;
    S g = o.grad.v[0];
    Tensor<S>& buf = a->grad_buf();
    for (auto& x : buf.v) x += g;
  });
}

template <class S>
Var<S> mean_all(const Var<S>& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a->val.numel()));
}

// mean squared difference over every element
template <class S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  return mean_all(square(sub(a, b)));
}

// ------------------------------------------------------------ dense algebra

// x:[N,in] W:[out,in] b:[out] -> [N,out]
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& W, const Var<S>& b) {
  const int N = x->val.dim(0), in = x->val.dim(1), out_f = W->val.dim(0);
  CATSG_CHECK(W->val.dim(1) == in, NumericError, "linear: fan-in mismatch");
  CATSG_CHECK(b->val.dim(0) == out_f, NumericError, "linear: bias mismatch");
  Tensor<S> out({N, out_f});
  {
    ECMap<S> X(x->val.data(), N, in);
    ECMap<S> Wm(W->val.data(), out_f, in);
    EMap<S> O(out.data(), N, out_f);
    O.noalias() = X * Wm.transpose();
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < out_f; ++f) out.at(n, f) += b->val.at(f);
  }
  return make_op<S>(std::move(out), {x, W, b}, [x, W, b, N, in, out_f](Node<S>& o) {
    ECMap<S> G(o.grad.data(), N, out_f);
    if (x->needs_grad) {
      ECMap<S> Wm(W->val.data(), out_f, in);
      EMap<S> GX(x->grad_buf().data(), N, in);
      GX.noalias() += G * Wm;
    }
    if (W->needs_grad) {
      ECMap<S> X(x->val.data(), N, in);
      EMap<S> GW(W->grad_buf().data(), out_f, in);
      GW.noalias() += G.transpose() * X;
    }
    if (b->needs_grad) {
      Tensor<S>& gb = b->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < out_f; ++f) gb.at(f) += o.grad.at(n, f);
    }
  });
}

// a:[N,H] b:[K,H] -> [N,K] = a b^T  (cosine scores against bank rows)
template <class S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  const int N = a->val.dim(0), H = a->val.dim(1), K = b->val.dim(0);
  CATSG_CHECK(b->val.dim(1) == H, NumericError, "matmul_nt: inner dim mismatch");
  Tensor<S> out({N, K});
  {
    ECMap<S> A(a->val.data(), N, H);
    ECMap<S> B(b->val.data(), K, H);
    EMap<S> O(out.data(), N, K);
    O.noalias() = A * B.transpose();
  }
  return make_op<S>(std::move(out), {a, b}, [a, b, N, H, K](Node<S>& o) {
    ECMap<S> G(o.grad.data(), N, K);
    if (a->needs_grad) {
      ECMap<S> B(b->val.data(), K, H);
      EMap<S> GA(a->grad_buf().data(), N, H);
      GA.noalias() += G * B;
    }
    if (b->needs_grad) {
      ECMap<S> A(a->val.data(), N, H);
      EMap<S> GB(b->grad_buf().data(), K, H);
      GB.noalias() += G.transpose() * A;
    }
  });
}

// ------------------------------------------------------------------- softmax

template <class S>
Var<S> softmax_rows(const Var<S>& x) {
  const int N = x->val.dim(0), K = x->val.dim(1);
  Tensor<S> out({N, K});
  for (int n = 0; n < N; ++n) {
    S mx = x->val.at(n, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, x->val.at(n, k));
    S total = S(0);
    for (int k = 0; k < K; ++k) {
      S e = std::exp(x->val.at(n, k) - mx);
      out.at(n, k) = e;
      total += e;
    }
    for (int k = 0; k < K; ++k) out.at(n, k) /= total;
  }
  return make_op<S>(std::move(out), {x}, [x, N, K](Node<S>& o) {
    if (!x->needs_grad) return;
    Tensor<S>& g = x->grad_buf();
    for (int n = 0; n < N; ++n) {
      S dot = S(0);
      for (int k = 0; k < K; ++k) dot += o.grad.at(n, k) * o.val.at(n, k);
      for (int k = 0; k < K; ++k)
        g.at(n, k) += o.val.at(n, k) * (o.grad.at(n, k) - dot);
    }
  });
}

template <class S>
Var<S> log_softmax_rows(const Var<S>& x) {
  const int N = x->val.dim(0), K = x->val.dim(1);
  Tensor<S> out({N, K});
  for (int n = 0; n < N; ++n) {
    S mx = x->val.at(n, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, x->val.at(n, k));
    S total = S(0);
    for (int k = 0; k < K; ++k) total += std::exp(x->val.at(n, k) - mx);
    S lse = mx + std::log(total);
    for (int k = 0; k < K; ++k) out.at(n, k) = x->val.at(n, k) - lse;
  }
  return make_op<S>(std::move(out), {x}, [x, N, K](Node<S>& o) {
    if (!x->needs_grad) return;
    Tensor<S>& g = x->grad_buf();
    for (int n = 0; n < N; ++n) {
      S gsum = S(0);
      for (int k = 0; k < K; ++k) gsum += o.grad.at(n, k);
      for (int k = 0; k < K; ++k)
        g.at(n, k) += o.grad.at(n, k) - std::exp(o.val.at(n, k)) * gsum;
    }
  });
}

// mean over rows of -sum_k target[n,k] * log_probs[n,k]; targets carry no grad
template <class S>
Var<S> cross_entropy_rows(const Tensor<S>& targets, const Var<S>& log_probs) {
  CATSG_CHECK(targets.same_shape(log_probs->val), NumericError,
              "cross_entropy: shape mismatch");
  Tensor<S> neg = targets;
  for (auto& v : neg.v) v = -v;
  return scale(sum_all(mul_const(log_probs, std::move(neg))),
               1.0 / targets.dim(0));
}

// ------------------------------------------------------------- convolutions

enum class Pad { Same, Causal };

// x:[N,Ci,T] W:[Co,Ci,k] b:[Co] -> [N,Co,To]; To = T/stride (stride divides T).
// Same: symmetric zero padding ((k-1)*dil split left/right). Causal: all
// padding on the left, so output t sees inputs <= t (stride 1 use only).
//
// The whole batch is lowered into one im2col matrix so each direction is a
// single gemm. Workers only fill and scatter sample-owned regions, which
// keeps results bitwise identical for any thread count.
template <class S>
Var<S> conv1d(const Var<S>& x, const Var<S>& W, const Var<S>& b, int stride = 1,
              int dilation = 1, Pad pad = Pad::Same) {
  const int N = x->val.dim(0), Ci = x->val.dim(1), T = x->val.dim(2);
  const int Co = W->val.dim(0), k = W->val.dim(2);
  CATSG_CHECK(W->val.dim(1) == Ci, NumericError, "conv1d: channel mismatch");
  CATSG_CHECK(T % stride == 0, NumericError, "conv1d: stride must divide T");
  const int To = T / stride;
  const int span = (k - 1) * dilation;
  const int pad_left = pad == Pad::Causal ? span : span / 2;
  const size_t cols = static_cast<size_t>(N) * To;

  auto fill_col = [N, Ci, T, k, To, stride, dilation, pad_left,
                   cols](const Tensor<S>& xv, EMat<S>& col) {
    parallel_for(N, [&](int n) {
      const S* xin = xv.data() + static_cast<size_t>(n) * Ci * T;
      for (int ci = 0; ci < Ci; ++ci)
        for (int j = 0; j < k; ++j) {
          S* row = col.data() + static_cast<size_t>(ci * k + j) * cols +
                   static_cast<size_t>(n) * To;
          for (int to = 0; to < To; ++to) {
            int src = to * stride + j * dilation - pad_left;
            row[to] = (src >= 0 && src < T)
                          ? xin[static_cast<size_t>(ci) * T + src]
                          : S(0);
          }
        }
    });
  };

  Tensor<S> out({N, Co, To});
  {
    EMat<S> col(Ci * k, static_cast<Eigen::Index>(cols));
    fill_col(x->val, col);
    ECMap<S> Wm(W->val.data(), Co, Ci * k);
    EMat<S> O(Co, static_cast<Eigen::Index>(cols));
    O.noalias() = Wm * col;
    parallel_for(N, [&](int n) {
      for (int co = 0; co < Co; ++co) {
        const S* src = O.data() + static_cast<size_t>(co) * cols +
                       static_cast<size_t>(n) * To;
        S* dst = out.data() + (static_cast<size_t>(n) * Co + co) * To;
        S bias = b->val.at(co);
        for (int to = 0; to < To; ++to) dst[to] = src[to] + bias;
      }
    });
  }

  return make_op<S>(
      std::move(out), {x, W, b},
      [x, W, b, N, Ci, T, Co, k, To, stride, dilation, pad_left, cols,
       fill_col](Node<S>& o) {
        EMat<S> G(Co, static_cast<Eigen::Index>(cols));
        parallel_for(N, [&](int n) {
          for (int co = 0; co < Co; ++co)
            std::copy_n(o.grad.data() + (static_cast<size_t>(n) * Co + co) * To,
                        static_cast<size_t>(To),
                        G.data() + static_cast<size_t>(co) * cols +
                            static_cast<size_t>(n) * To);
        });
        if (W->needs_grad || x->needs_grad) {
          EMat<S> col(Ci * k, static_cast<Eigen::Index>(cols));
          fill_col(x->val, col);
          if (W->needs_grad) {
            EMap<S> GW(W->grad_buf().data(), Co, Ci * k);
            GW.noalias() += G * col.transpose();
          }
          if (x->needs_grad) {
            ECMap<S> Wm(W->val.data(), Co, Ci * k);
            col.noalias() = Wm.transpose() * G;  // reuse as dcol
            Tensor<S>& gxt = x->grad_buf();
            parallel_for(N, [&](int n) {
              S* gx = gxt.data() + static_cast<size_t>(n) * Ci * T;
              for (int ci = 0; ci < Ci; ++ci)
                for (int j = 0; j < k; ++j) {
                  const S* src = col.data() +
                                 static_cast<size_t>(ci * k + j) * cols +
                                 static_cast<size_t>(n) * To;
                  for (int to = 0; to < To; ++to) {
                    int dst = to * stride + j * dilation - pad_left;
                    if (dst >= 0 && dst < T)
                      gx[static_cast<size_t>(ci) * T + dst] += src[to];
                  }
                }
            });
          }
        }
        if (b->needs_grad) {
          Tensor<S>& gb = b->grad_buf();
          for (int co = 0; co < Co; ++co) {
            const S* row = G.data() + static_cast<size_t>(co) * cols;
            S acc = S(0);
            for (size_t i = 0; i < cols; ++i) acc += row[i];
            gb.at(co) += acc;
          }
        }
      });
}

template <class S>
Var<S> upsample2(const Var<S>& x) {
  const int N = x->val.dim(0), C = x->val.dim(1), T = x->val.dim(2);
  Tensor<S> out({N, C, 2 * T});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) {
        S v = x->val.at(n, c, t);
        out.at(n, c, 2 * t) = v;
        out.at(n, c, 2 * t + 1) = v;
      }
  return make_op<S>(std::move(out), {x}, [x, N, C, T](Node<S>& o) {
    if (!x->needs_grad) return;
    Tensor<S>& g = x->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
          g.at(n, c, t) += o.grad.at(n, c, 2 * t) + o.grad.at(n, c, 2 * t + 1);
  });
}

template <class S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
  CATSG_CHECK(!parts.empty(), NumericError, "concat_channels: empty input");
  const int N = parts[0]->val.dim(0), T = parts[0]->val.dim(2);
  int C = 0;
  for (const auto& p : parts) {
    CATSG_CHECK(p->val.dim(0) == N && p->val.dim(2) == T, NumericError,
                "concat_channels: shape mismatch");
    C += p->val.dim(1);
  }
  Tensor<S> out({N, C, T});
  for (int n = 0; n < N; ++n) {
    int off = 0;
    for (const auto& p : parts) {
      int pc = p->val.dim(1);
      std::copy_n(p->val.data() + static_cast<size_t>(n) * pc * T,
                  static_cast<size_t>(pc) * T,
                  out.data() + (static_cast<size_t>(n) * C + off) * T);
      off += pc;
    }
  }
  return make_op<S>(std::move(out), parts, [parts, N, C, T](Node<S>& o) {
    for (int n = 0; n < N; ++n) {
      int off = 0;
      for (const auto& p : parts) {
        int pc = p->val.dim(1);
        if (p->needs_grad) {
          S* dst = p->grad_buf().data() + static_cast<size_t>(n) * pc * T;
          const S* src = o.grad.data() + (static_cast<size_t>(n) * C + off) * T;
          for (size_t i = 0; i < static_cast<size_t>(pc) * T; ++i) dst[i] += src[i];
        }
        off += pc;
      }
    }
  });
}

// --------------------------------------------------------------------- norms

template <class S>
Var<S> group_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                  int groups, double eps = 1e-5) {
  const int N = x->val.dim(0), C = x->val.dim(1), T = x->val.dim(2);
  CATSG_CHECK(C % groups == 0, NumericError, "group_norm: C % groups != 0");
  const int cg = C / groups;
  const int m = cg * T;

  Tensor<S> out({N, C, T});
  // saved normalized values and inverse stddev per (n, group)
  auto xhat = std::make_shared<Tensor<S>>(std::vector<int>{N, C, T});
  auto istd = std::make_shared<Tensor<S>>(std::vector<int>{N, groups});
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < groups; ++g) {
      double mean = 0.0;
      for (int c = g * cg; c < (g + 1) * cg; ++c)
        for (int t = 0; t < T; ++t) mean += x->val.at(n, c, t);
      mean /= m;
      double var = 0.0;
      for (int c = g * cg; c < (g + 1) * cg; ++c)
        for (int t = 0; t < T; ++t) {
          double d = x->val.at(n, c, t) - mean;
          var += d * d;
        }
      var /= m;
      S is = static_cast<S>(1.0 / std::sqrt(var + eps));
      istd->at(n, g) = is;
      for (int c = g * cg; c < (g + 1) * cg; ++c)
        for (int t = 0; t < T; ++t) {
          S xh = (x->val.at(n, c, t) - static_cast<S>(mean)) * is;
          xhat->at(n, c, t) = xh;
          out.at(n, c, t) = gamma->val.at(c) * xh + beta->val.at(c);
        }
    }

  return make_op<S>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, istd, N, C, T, groups, cg, m](Node<S>& o) {
        if (gamma->needs_grad) {
          Tensor<S>& gg = gamma->grad_buf();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
              for (int t = 0; t < T; ++t)
                gg.at(c) += o.grad.at(n, c, t) * xhat->at(n, c, t);
        }
        if (beta->needs_grad) {
          Tensor<S>& gb = beta->grad_buf();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
              for (int t = 0; t < T; ++t) gb.at(c) += o.grad.at(n, c, t);
        }
        if (!x->needs_grad) return;
        Tensor<S>& gx = x->grad_buf();
        for (int n = 0; n < N; ++n)
          for (int g = 0; g < groups; ++g) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (int c = g * cg; c < (g + 1) * cg; ++c)
              for (int t = 0; t < T; ++t) {
                double d = o.grad.at(n, c, t) * gamma->val.at(c);
                sum_d += d;
                sum_dx += d * xhat->at(n, c, t);
              }
            double mean_d = sum_d / m, mean_dx = sum_dx / m;
            S is = istd->at(n, g);
            for (int c = g * cg; c < (g + 1) * cg; ++c)
              for (int t = 0; t < T; ++t) {
                double d = o.grad.at(n, c, t) * gamma->val.at(c);
                gx.at(n, c, t) += static_cast<S>(
                    is * (d - mean_d - xhat->at(n, c, t) * mean_dx));
              }
          }
      });
}

// x:[N,F]; gamma,beta:[F]
template <class S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                  double eps = 1e-5) {
  const int N = x->val.dim(0), F = x->val.dim(1);
  Tensor<S> out({N, F});
  auto xhat = std::make_shared<Tensor<S>>(std::vector<int>{N, F});
  auto istd = std::make_shared<Tensor<S>>(std::vector<int>{N});
  for (int n = 0; n < N; ++n) {
    double mean = 0.0;
    for (int f = 0; f < F; ++f) mean += x->val.at(n, f);
    mean /= F;
    double var = 0.0;
    for (int f = 0; f < F; ++f) {
      double d = x->val.at(n, f) - mean;
      var += d * d;
    }
    var /= F;
    S is = static_cast<S>(1.0 / std::sqrt(var + eps));
    istd->at(n) = is;
    for (int f = 0; f < F; ++f) {
      S xh = (x->val.at(n, f) - static_cast<S>(mean)) * is;
      xhat->at(n, f) = xh;
      out.at(n, f) = gamma->val.at(f) * xh + beta->val.at(f);
    }
  }
  return make_op<S>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, istd, N, F](Node<S>& o) {
        if (gamma->needs_grad) {
          Tensor<S>& gg = gamma->grad_buf();
          for (int n = 0; n < N; ++n)
            for (int f = 0; f < F; ++f)
              gg.at(f) += o.grad.at(n, f) * xhat->at(n, f);
        }
        if (beta->needs_grad) {
          Tensor<S>& gb = beta->grad_buf();
          for (int n = 0; n < N; ++n)
            for (int f = 0; f < F; ++f) gb.at(f) += o.grad.at(n, f);
        }
        if (!x->needs_grad) return;
        Tensor<S>& gx = x->grad_buf();
        for (int n = 0; n < N; ++n) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (int f = 0; f < F; ++f) {
            double d = o.grad.at(n, f) * gamma->val.at(f);
            sum_d += d;
            sum_dx += d * xhat->at(n, f);
          }
          double mean_d = sum_d / F, mean_dx = sum_dx / F;
          for (int f = 0; f < F; ++f) {
            double d = o.grad.at(n, f) * gamma->val.at(f);
            gx.at(n, f) += static_cast<S>(istd->at(n) *
                                          (d - mean_d - xhat->at(n, f) * mean_dx));
          }
        }
      });
}

// ------------------------------------------------- series feature reductions

template <class S>
Var<S> time_mean(const Var<S>& x) {
  const int N = x->val.dim(0), C = x->val.dim(1), T = x->val.dim(2);
  Tensor<S> out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      S acc = S(0);
      for (int t = 0; t < T; ++t) acc += x->val.at(n, c, t);
      out.at(n, c) = acc / T;
    }
  return make_op<S>(std::move(out), {x}, [x, N, C, T](Node<S>& o) {
    if (!x->needs_grad) return;
    Tensor<S>& g = x->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        S gv = o.grad.at(n, c) / T;
        for (int t = 0; t < T; ++t) g.at(n, c, t) += gv;
      }
  });
}

// population standard deviation over time, exactly zero for a constant
// signal; the backward pass takes the zero subgradient there
template <class S>
Var<S> time_std(const Var<S>& x) {
  const int N = x->val.dim(0), C = x->val.dim(1), T = x->val.dim(2);
  Tensor<S> out({N, C});
  auto mean = std::make_shared<Tensor<S>>(std::vector<int>{N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double mu = 0.0;
      for (int t = 0; t < T; ++t) mu += x->val.at(n, c, t);
      mu /= T;
      mean->at(n, c) = static_cast<S>(mu);
      double var = 0.0;
      for (int t = 0; t < T; ++t) {
        double d = x->val.at(n, c, t) - mu;
        var += d * d;
      }
      out.at(n, c) = static_cast<S>(std::sqrt(var / T));
    }
  return make_op<S>(std::move(out), {x}, [x, mean, N, C, T](Node<S>& o) {
    if (!x->needs_grad) return;
    Tensor<S>& g = x->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        S sd = o.val.at(n, c);
        if (sd == S(0)) continue;
        S gv = o.grad.at(n, c) / (sd * T);
        for (int t = 0; t < T; ++t)
          g.at(n, c, t) += gv * (x->val.at(n, c, t) - mean->at(n, c));
      }
  });
}

template <class S>
Var<S> time_max(const Var<S>& x) {
  const int N = x->val.dim(0), C = x->val.dim(1), T = x->val.dim(2);
  Tensor<S> out({N, C});
  auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      int best = 0;
      for (int t = 1; t < T; ++t)
        if (x->val.at(n, c, t) > x->val.at(n, c, best)) best = t;
      (*arg)[static_cast<size_t>(n) * C + c] = best;
      out.at(n, c) = x->val.at(n, c, best);
    }
  return make_op<S>(std::move(out), {x}, [x, arg, N, C](Node<S>& o) {
    if (!x->needs_grad) return;
    Tensor<S>& g = x->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        g.at(n, c, (*arg)[static_cast<size_t>(n) * C + c]) += o.grad.at(n, c);
  });
}

// attention pooling: weights a:[N,1,T] (softmaxed), values h:[N,C,T] -> [N,C]
template <class S>
Var<S> weighted_time_sum(const Var<S>& h, const Var<S>& a) {
  const int N = h->val.dim(0), C = h->val.dim(1), T = h->val.dim(2);
  CATSG_CHECK(a->val.dim(0) == N && a->val.dim(1) == 1 && a->val.dim(2) == T,
              NumericError, "weighted_time_sum: weight shape mismatch");
  Tensor<S> out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      S acc = S(0);
      for (int t = 0; t < T; ++t) acc += h->val.at(n, c, t) * a->val.at(n, 0, t);
      out.at(n, c) = acc;
    }
  return make_op<S>(std::move(out), {h, a}, [h, a, N, C, T](Node<S>& o) {
    if (h->needs_grad) {
      Tensor<S>& g = h->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          S gv = o.grad.at(n, c);
          for (int t = 0; t < T; ++t) g.at(n, c, t) += gv * a->val.at(n, 0, t);
        }
    }
    if (a->needs_grad) {
      Tensor<S>& g = a->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int t = 0; t < T; ++t) {
          S acc = S(0);
          for (int c = 0; c < C; ++c)
            acc += o.grad.at(n, c) * h->val.at(n, c, t);
          g.at(n, 0, t) += acc;
        }
    }
  });
}

// -------------------------------------------------------- spectral features

// power spectrum from the real DFT: P[n,c,f] = Re^2 + Im^2, f = 0..T/2.
// T is small here, so the transform runs as two dense matmuls, which keeps
// the backward pass exact and trivial.
template <class S>
Var<S> dft_power(const Var<S>& x) {
  const int N = x->val.dim(0), C = x->val.dim(1), T = x->val.dim(2);
  const int F = T / 2 + 1;
  EMat<double> cosm(F, T), sinm(F, T);
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < T; ++t) {
      double ang = 2.0 * std::numbers::pi * f * t / T;
      cosm(f, t) = std::cos(ang);
      sinm(f, t) = std::sin(ang);
    }
  auto re = std::make_shared<Tensor<S>>(std::vector<int>{N, C, F});
  auto im = std::make_shared<Tensor<S>>(std::vector<int>{N, C, F});
  Tensor<S> out({N, C, F});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int f = 0; f < F; ++f) {
        double r = 0.0, i = 0.0;
        for (int t = 0; t < T; ++t) {
          double v = x->val.at(n, c, t);
          r += v * cosm(f, t);
          i += v * sinm(f, t);
        }
        re->at(n, c, f) = static_cast<S>(r);
        im->at(n, c, f) = static_cast<S>(i);
        out.at(n, c, f) = static_cast<S>(r * r + i * i);
      }
  return make_op<S>(std::move(out), {x}, [x, re, im, N, C, T, F](Node<S>& o) {
    if (!x->needs_grad) return;
    Tensor<S>& g = x->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t) {
          double acc = 0.0;
          for (int f = 0; f < F; ++f) {
            double ang = 2.0 * std::numbers::pi * f * t / T;
            acc += 2.0 * o.grad.at(n, c, f) *
                   (re->at(n, c, f) * std::cos(ang) + im->at(n, c, f) * std::sin(ang));
          }
          g.at(n, c, t) += static_cast<S>(acc);
        }
  });
}

// spectral centroid per channel: sum_f f P_f / (sum_f P_f + tiny). The tiny
// denominator term only matters for an all-zero channel (centroid 0).
template <class S>
Var<S> spectral_centroid(const Var<S>& P) {
  const int N = P->val.dim(0), C = P->val.dim(1), F = P->val.dim(2);
  const double tiny = 1e-30;
  Tensor<S> out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double num = 0.0, den = tiny;
      for (int f = 0; f < F; ++f) {
        num += f * static_cast<double>(P->val.at(n, c, f));
        den += P->val.at(n, c, f);
      }
      out.at(n, c) = static_cast<S>(num / den);
    }
  return make_op<S>(std::move(out), {P}, [P, N, C, F, tiny](Node<S>& o) {
    if (!P->needs_grad) return;
    Tensor<S>& g = P->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double den = tiny;
        for (int f = 0; f < F; ++f) den += P->val.at(n, c, f);
        S gv = o.grad.at(n, c);
        for (int f = 0; f < F; ++f)
          g.at(n, c, f) += static_cast<S>(gv * (f - o.val.at(n, c)) / den);
      }
  });
}

// top-k values of the channel-averaged power spectrum, sorted descending;
// ties resolve to the lower frequency to stay deterministic
template <class S>
Var<S> topk_mean_power(const Var<S>& P, int k) {
  const int N = P->val.dim(0), C = P->val.dim(1), F = P->val.dim(2);
  CATSG_CHECK(k >= 1 && k <= F, NumericError, "topk_mean_power: bad k");
  Tensor<S> out({N, k});
  auto picks = std::make_shared<std::vector<int>>(static_cast<size_t>(N) * k);
  for (int n = 0; n < N; ++n) {
    std::vector<S> m(static_cast<size_t>(F), S(0));
    for (int c = 0; c < C; ++c)
      for (int f = 0; f < F; ++f) m[static_cast<size_t>(f)] += P->val.at(n, c, f);
    for (auto& v : m) v /= C;
    std::vector<int> idx(static_cast<size_t>(F));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&m](int a, int b) { return m[a] > m[b]; });
    for (int j = 0; j < k; ++j) {
      (*picks)[static_cast<size_t>(n) * k + j] = idx[static_cast<size_t>(j)];
      out.at(n, j) = m[static_cast<size_t>(idx[static_cast<size_t>(j)])];
    }
  }
  return make_op<S>(std::move(out), {P}, [P, picks, N, C, k](Node<S>& o) {
    if (!P->needs_grad) return;
    Tensor<S>& g = P->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int j = 0; j < k; ++j) {
        int f = (*picks)[static_cast<size_t>(n) * k + j];
        S gv = o.grad.at(n, j) / C;
        for (int c = 0; c < C; ++c) g.at(n, c, f) += gv;
      }
  });
}

// --------------------------------------------------------- rows and batching

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  CATSG_CHECK(!parts.empty(), NumericError, "concat_cols: empty input");
  const int N = parts[0]->val.dim(0);
  int F = 0;
  for (const auto& p : parts) {
    CATSG_CHECK(p->val.dim(0) == N, NumericError, "concat_cols: row mismatch");
    F += p->val.dim(1);
  }
  Tensor<S> out({N, F});
  for (int n = 0; n < N; ++n) {
    int off = 0;
    for (const auto& p : parts) {
      int pf = p->val.dim(1);
      std::copy_n(p->val.data() + static_cast<size_t>(n) * pf,
                  static_cast<size_t>(pf),
                  out.data() + static_cast<size_t>(n) * F + off);
      off += pf;
    }
  }
  return make_op<S>(std::move(out), parts, [parts, N, F](Node<S>& o) {
    for (int n = 0; n < N; ++n) {
      int off = 0;
      for (const auto& p : parts) {
        int pf = p->val.dim(1);
        if (p->needs_grad) {
          S* dst = p->grad_buf().data() + static_cast<size_t>(n) * pf;
          const S* src = o.grad.data() + static_cast<size_t>(n) * F + off;
          for (int f = 0; f < pf; ++f) dst[f] += src[f];
        }
        off += pf;
      }
    }
  });
}

// y[n,f] = x[n,f] * s[n]
template <class S>
Var<S> mul_rows(const Var<S>& x, const Var<S>& s) {
  const int N = x->val.dim(0), F = x->val.dim(1);
  CATSG_CHECK(s->val.dim(0) == N && s->val.rank() == 1, NumericError,
              "mul_rows: scale must be one value per row");
  Tensor<S> out({N, F});
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f) out.at(n, f) = x->val.at(n, f) * s->val.at(n);
  return make_op<S>(std::move(out), {x, s}, [x, s, N, F](Node<S>& o) {
    if (x->needs_grad) {
      Tensor<S>& g = x->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f) g.at(n, f) += o.grad.at(n, f) * s->val.at(n);
    }
    if (s->needs_grad) {
      Tensor<S>& g = s->grad_buf();
      for (int n = 0; n < N; ++n) {
        S acc = S(0);
        for (int f = 0; f < F; ++f) acc += o.grad.at(n, f) * x->val.at(n, f);
        g.at(n) += acc;
      }
    }
  });
}

// rows y_i = x_i / sqrt(|x_i|^2 + eps)
template <class S>
Var<S> l2_normalize_rows(const Var<S>& x, double eps = 1e-12) {
  const int N = x->val.dim(0), H = x->val.dim(1);
  Tensor<S> out({N, H});
  auto inv = std::make_shared<Tensor<S>>(std::vector<int>{N});
  for (int n = 0; n < N; ++n) {
    double ss = eps;
    for (int h = 0; h < H; ++h)
      ss += static_cast<double>(x->val.at(n, h)) * x->val.at(n, h);
    S r = static_cast<S>(1.0 / std::sqrt(ss));
    inv->at(n) = r;
    for (int h = 0; h < H; ++h) out.at(n, h) = x->val.at(n, h) * r;
  }
  return make_op<S>(std::move(out), {x}, [x, inv, N, H](Node<S>& o) {
    if (!x->needs_grad) return;
    Tensor<S>& g = x->grad_buf();
    for (int n = 0; n < N; ++n) {
      S dot = S(0);
      for (int h = 0; h < H; ++h) dot += o.grad.at(n, h) * o.val.at(n, h);
      for (int h = 0; h < H; ++h)
        g.at(n, h) += inv->at(n) * (o.grad.at(n, h) - o.val.at(n, h) * dot);
    }
  });
}

// ||M M^T - I||_F^2 for row-normalized M:[K,H]; gradient is 4 (G - I) M
template <class S>
Var<S> gram_orth_loss(const Var<S>& M) {
  const int K = M->val.dim(0), H = M->val.dim(1);
  ECMap<S> Mm(M->val.data(), K, H);
  EMat<S> G = Mm * Mm.transpose();
  for (int i = 0; i < K; ++i) G(i, i) -= S(1);
  Tensor<S> out({1});
  out.v[0] = G.squaredNorm();
  auto Gm = std::make_shared<EMat<S>>(std::move(G));
  return make_op<S>(std::move(out), {M}, [M, Gm, K, H](Node<S>& o) {
    if (!M->needs_grad) return;
    ECMap<S> Mm(M->val.data(), K, H);
    EMap<S> gM(M->grad_buf().data(), K, H);
    gM.noalias() += S(4) * o.grad.v[0] * (*Gm) * Mm;
  });
}

template <class S>
Var<S> concat_rows(const Var<S>& a, const Var<S>& b) {
  const int Ka = a->val.dim(0), Kb = b->val.dim(0), H = a->val.dim(1);
  CATSG_CHECK(b->val.dim(1) == H, NumericError, "concat_rows: width mismatch");
  Tensor<S> out({Ka + Kb, H});
  std::copy_n(a->val.data(), a->val.numel(), out.data());
  std::copy_n(b->val.data(), b->val.numel(), out.data() + a->val.numel());
  return make_op<S>(std::move(out), {a, b}, [a, b, Ka, Kb, H](Node<S>& o) {
    if (a->needs_grad) {
      Tensor<S>& g = a->grad_buf();
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += o.grad.v[i];
    }
    if (b->needs_grad) {
      Tensor<S>& g = b->grad_buf();
      size_t off = static_cast<size_t>(Ka) * H;
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += o.grad.v[off + i];
    }
  });
}

template <class S>
Var<S> gather_rows(const Var<S>& M, std::vector<int> idx) {
  const int H = M->val.dim(1);
  const int N = static_cast<int>(idx.size());
  Tensor<S> out({N, H});
  for (int n = 0; n < N; ++n) {
    CATSG_CHECK(idx[static_cast<size_t>(n)] >= 0 &&
                    idx[static_cast<size_t>(n)] < M->val.dim(0),
                NumericError, "gather_rows: index out of range");
    std::copy_n(M->val.data() + static_cast<size_t>(idx[static_cast<size_t>(n)]) * H,
                static_cast<size_t>(H), out.data() + static_cast<size_t>(n) * H);
  }
  auto ii = std::make_shared<std::vector<int>>(std::move(idx));
  return make_op<S>(std::move(out), {M}, [M, ii, N, H](Node<S>& o) {
    if (!M->needs_grad) return;
    Tensor<S>& g = M->grad_buf();
    for (int n = 0; n < N; ++n) {
      S* dst = g.data() + static_cast<size_t>((*ii)[static_cast<size_t>(n)]) * H;
      const S* src = o.grad.data() + static_cast<size_t>(n) * H;
      for (int h = 0; h < H; ++h) dst[h] += src[h];
    }
  });
}

// v:[C] -> [N,C]
template <class S>
Var<S> broadcast_row(const Var<S>& v, int N) {
  const int C = v->val.dim(0);
  Tensor<S> out({N, C});
  for (int n = 0; n < N; ++n)
    std::copy_n(v->val.data(), static_cast<size_t>(C),
                out.data() + static_cast<size_t>(n) * C);
  return make_op<S>(std::move(out), {v}, [v, N, C](Node<S>& o) {
    if (!v->needs_grad) return;
    Tensor<S>& g = v->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) g.at(c) += o.grad.at(n, c);
  });
}

// v:[N,C] -> [N,C,T]
template <class S>
Var<S> repeat_time(const Var<S>& v, int T) {
  const int N = v->val.dim(0), C = v->val.dim(1);
  Tensor<S> out({N, C, T});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) out.at(n, c, t) = v->val.at(n, c);
  return make_op<S>(std::move(out), {v}, [v, N, C, T](Node<S>& o) {
    if (!v->needs_grad) return;
    Tensor<S>& g = v->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        S acc = S(0);
        for (int t = 0; t < T; ++t) acc += o.grad.at(n, c, t);
        g.at(n, c) += acc;
      }
  });
}

// x:[N,C,T] + v:[N,C] broadcast over time (timestep embedding injection)
template <class S>
Var<S> add_time_broadcast(const Var<S>& x, const Var<S>& v) {
  const int N = x->val.dim(0), C = x->val.dim(1), T = x->val.dim(2);
  CATSG_CHECK(v->val.dim(0) == N && v->val.dim(1) == C, NumericError,
              "add_time_broadcast: shape mismatch");
  Tensor<S> out({N, C, T});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      S b = v->val.at(n, c);
      for (int t = 0; t < T; ++t) out.at(n, c, t) = x->val.at(n, c, t) + b;
    }
  return make_op<S>(std::move(out), {x, v}, [x, v, N, C, T](Node<S>& o) {
    if (x->needs_grad) accumulate(x, o.grad);
    if (v->needs_grad) {
      Tensor<S>& g = v->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          S acc = S(0);
          for (int t = 0; t < T; ++t) acc += o.grad.at(n, c, t);
          g.at(n, c) += acc;
        }
    }
  });
}

// branch mixture: eps:[N*K,C,T], w:[N,K] fixed weights -> [N,C,T]
template <class S>
Var<S> mix_branches(const Var<S>& eps, const Tensor<S>& w) {
  const int NK = eps->val.dim(0), C = eps->val.dim(1), T = eps->val.dim(2);
  const int N = w.dim(0), K = w.dim(1);
  CATSG_CHECK(NK == N * K, NumericError, "mix_branches: N*K mismatch");
  Tensor<S> out({N, C, T});
  const size_t plane = static_cast<size_t>(C) * T;
  for (int n = 0; n < N; ++n) {
    S* dst = out.data() + static_cast<size_t>(n) * plane;
    for (int k = 0; k < K; ++k) {
      S wk = w.at(n, k);
      const S* src = eps->val.data() + (static_cast<size_t>(n) * K + k) * plane;
      for (size_t i = 0; i < plane; ++i) dst[i] += wk * src[i];
    }
  }
  auto ww = std::make_shared<Tensor<S>>(w);
  return make_op<S>(std::move(out), {eps}, [eps, ww, N, K, plane](Node<S>& o) {
    if (!eps->needs_grad) return;
    Tensor<S>& g = eps->grad_buf();
    for (int n = 0; n < N; ++n) {
      const S* src = o.grad.data() + static_cast<size_t>(n) * plane;
      for (int k = 0; k < K; ++k) {
        S wk = ww->at(n, k);
        S* dst = g.data() + (static_cast<size_t>(n) * K + k) * plane;
        for (size_t i = 0; i < plane; ++i) dst[i] += wk * src[i];
      }
    }
  });
}

// sample-axis repetition: [N,...] -> [N*K,...] with branch index fastest,
// so row n*K+k is the k-th copy of sample n (matches mix_branches layout)
template <class S>
Var<S> repeat_samples(const Var<S>& a, int K) {
  CATSG_CHECK(K >= 1, NumericError, "repeat_samples: K must be positive");
  const int N = a->val.dim(0);
  const size_t row = a->val.numel() / static_cast<size_t>(N);
  std::vector<int> shp = a->val.shape;
  shp[0] = N * K;
  Tensor<S> out(shp);
  for (int n = 0; n < N; ++n) {
    const S* src = a->val.data() + static_cast<size_t>(n) * row;
    for (int k = 0; k < K; ++k)
      std::copy_n(src, row, out.data() + (static_cast<size_t>(n) * K + k) * row);
  }
  return make_op<S>(std::move(out), {a}, [a, N, K, row](Node<S>& o) {
    if (!a->needs_grad) return;
    Tensor<S>& g = a->grad_buf();
    for (int n = 0; n < N; ++n) {
      S* dst = g.data() + static_cast<size_t>(n) * row;
      for (int k = 0; k < K; ++k) {
        const S* src = o.grad.data() + (static_cast<size_t>(n) * K + k) * row;
        for (size_t i = 0; i < row; ++i) dst[i] += src[i];
      }
    }
  });
}

// categorical channel embedding: table:[V,E], idx:[N,T] -> [N,E,T]
template <class S>
Var<S> embedding_time(const Var<S>& table, const std::vector<int>& idx, int N,
                      int T) {
  const int V = table->val.dim(0), E = table->val.dim(1);
  CATSG_CHECK(static_cast<int>(idx.size()) == N * T, NumericError,
              "embedding_time: index count mismatch");
  Tensor<S> out({N, E, T});
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t) {
      int id = idx[static_cast<size_t>(n) * T + t];
      CATSG_CHECK(id >= 0 && id < V, DataError,
                  "embedding_time: vocabulary index out of range");
      for (int e = 0; e < E; ++e) out.at(n, e, t) = table->val.at(id, e);
    }
  auto ii = std::make_shared<std::vector<int>>(idx);
  return make_op<S>(std::move(out), {table}, [table, ii, N, T](Node<S>& o) {
    if (!table->needs_grad) return;
    const int E = table->val.dim(1);
    Tensor<S>& g = table->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int t = 0; t < T; ++t) {
        int id = (*ii)[static_cast<size_t>(n) * T + t];
        for (int e = 0; e < E; ++e) g.at(id, e) += o.grad.at(n, e, t);
      }
  });
}

}  // namespace catsg
