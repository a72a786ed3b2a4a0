#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

// live_out, when given, marks output channels to compute; masked channels are
// written as +0.0f and skipped entirely. Skipping only output channels keeps
// the result bitwise identical to running with physically zeroed filters:
// masked input activations are exact +0.0f and contribute signed zeros the
// same way a zeroed weight would.

inline void check_conv_shapes(const Tensor4D& x, const ConvWeights& w, int stride,
                              int pad, const char* who) {
  if (x.c != w.n_in)
    throw ShapeError(std::string(who) + ": input channels != filter n_in (x=" +
                     x.dims_str() + ", w=" + w.dims_str() + ")");
  if (stride < 1) throw ShapeError(std::string(who) + ": stride must be >= 1");
  if (pad < 0) throw ShapeError(std::string(who) + ": pad must be >= 0");
  int eh = x.h + 2 * pad - w.k;
  int ew = x.w + 2 * pad - w.k;
  if (eh < 0 || ew < 0 || eh % stride != 0 || ew % stride != 0)
    throw ShapeError(std::string(who) + ": output dims not positive integers (x=" +
                     x.dims_str() + ", w=" + w.dims_str() + ", stride=" +
                     std::to_string(stride) + ", pad=" + std::to_string(pad) + ")");
}

inline Tensor4D conv2d_forward(const Tensor4D& x, const ConvWeights& w, int stride,
                               int pad, const std::vector<uint8_t>* live_out = nullptr) {
  check_conv_shapes(x, w, stride, pad, "conv2d_forward");
  const int h_out = (x.h + 2 * pad - w.k) / stride + 1;
  const int w_out = (x.w + 2 * pad - w.k) / stride + 1;
  Tensor4D y(x.n, w.n_out, h_out, w_out);

  const int k = w.k;
  for (int in = 0; in < x.n; ++in) {
    for (int oc = 0; oc < w.n_out; ++oc) {
      if (live_out && !(*live_out)[oc]) continue;  // stays +0.0f
      const double b = w.has_bias ? static_cast<double>(w.bias[oc]) : 0.0;
      float* yrow = &y.data[y.idx(in, oc, 0, 0)];
      for (int oh = 0; oh < h_out; ++oh) {
        const int ih0 = oh * stride - pad;
        const int kh_lo = std::max(0, -ih0);
        const int kh_hi = std::min(k, x.h - ih0);
        for (int ow = 0; ow < w_out; ++ow) {
          const int iw0 = ow * stride - pad;
          const int kw_lo = std::max(0, -iw0);
          const int kw_hi = std::min(k, x.w - iw0);
          double acc = 0.0;
          for (int ic = 0; ic < x.c; ++ic) {
            const float* xc = &x.data[x.idx(in, ic, 0, 0)];
            const float* wc = &w.filters[w.idx(oc, ic, 0, 0)];
            for (int kh = kh_lo; kh < kh_hi; ++kh) {
              const float* xr = xc + static_cast<size_t>(ih0 + kh) * x.w + iw0;
              const float* wr = wc + static_cast<size_t>(kh) * k;
              for (int kw = kw_lo; kw < kw_hi; ++kw)
                acc += static_cast<double>(xr[kw]) * static_cast<double>(wr[kw]);
            }
          }
          yrow[static_cast<size_t>(oh) * w_out + ow] = static_cast<float>(acc + b);
        }
      }
    }
  }
  return y;
}

struct ConvGrads {
  Tensor4D gx;
  ConvWeights gw;  // filters/bias fields hold the gradients
};

inline ConvGrads conv2d_backward(const Tensor4D& x, const ConvWeights& w,
                                 const Tensor4D& grad_out, int stride, int pad,
                                 const std::vector<uint8_t>* live_out = nullptr) {
  check_conv_shapes(x, w, stride, pad, "conv2d_backward");
  const int h_out = (x.h + 2 * pad - w.k) / stride + 1;
  const int w_out = (x.w + 2 * pad - w.k) / stride + 1;
  if (grad_out.n != x.n || grad_out.c != w.n_out || grad_out.h != h_out ||
      grad_out.w != w_out)
    throw ShapeError("conv2d_backward: grad_out dims " + grad_out.dims_str() +
                     " do not match forward output " + std::to_string(x.n) + "x" +
                     std::to_string(w.n_out) + "x" + std::to_string(h_out) + "x" +
                     std::to_string(w_out));

  std::vector<double> gx_acc(x.size(), 0.0);
  std::vector<double> gw_acc(w.filters.size(), 0.0);
  std::vector<double> gb_acc(w.n_out, 0.0);

  const int k = w.k;
  for (int in = 0; in < x.n; ++in) {
    for (int oc = 0; oc < w.n_out; ++oc) {
      if (live_out && !(*live_out)[oc]) continue;
      for (int oh = 0; oh < h_out; ++oh) {
        const int ih0 = oh * stride - pad;
        const int kh_lo = std::max(0, -ih0);
        const int kh_hi = std::min(k, x.h - ih0);
        for (int ow = 0; ow < w_out; ++ow) {
          const double g = grad_out.at(in, oc, oh, ow);
          if (g == 0.0) continue;
          const int iw0 = ow * stride - pad;
          const int kw_lo = std::max(0, -iw0);
          const int kw_hi = std::min(k, x.w - iw0);
          gb_acc[oc] += g;
          for (int ic = 0; ic < x.c; ++ic) {
            const float* xc = &x.data[x.idx(in, ic, 0, 0)];
            double* gxc = &gx_acc[x.idx(in, ic, 0, 0)];
            const float* wc = &w.filters[w.idx(oc, ic, 0, 0)];
            double* gwc = &gw_acc[w.idx(oc, ic, 0, 0)];
            for (int kh = kh_lo; kh < kh_hi; ++kh) {
              const size_t row = static_cast<size_t>(ih0 + kh) * x.w + iw0;
              const float* xr = xc + row;
              double* gxr = gxc + row;
              const float* wr = wc + static_cast<size_t>(kh) * k;
              double* gwr = gwc + static_cast<size_t>(kh) * k;
              for (int kw = kw_lo; kw < kw_hi; ++kw) {
                gwr[kw] += g * static_cast<double>(xr[kw]);
                gxr[kw] += g * static_cast<double>(wr[kw]);
              }
            }
          }
        }
      }
    }
  }

  ConvGrads out;
  out.gx = Tensor4D(x.n, x.c, x.h, x.w);
  for (size_t i = 0; i < gx_acc.size(); ++i) out.gx.data[i] = static_cast<float>(gx_acc[i]);
  out.gw = ConvWeights(w.n_out, w.n_in, w.k, w.has_bias);
  for (size_t i = 0; i < gw_acc.size(); ++i) out.gw.filters[i] = static_cast<float>(gw_acc[i]);
  if (w.has_bias)
    for (int oc = 0; oc < w.n_out; ++oc) out.gw.bias[oc] = static_cast<float>(gb_acc[oc]);
  return out;
}

inline Tensor4D relu(const Tensor4D& x) {
  Tensor4D y = x;
  for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
  return y;
}

// derivative taken as 1 for y > 0, 0 otherwise (subgradient 0 at the kink)
inline Tensor4D relu_backward(const Tensor4D& y, const Tensor4D& grad_out) {
  if (y.size() != grad_out.size())
    throw ShapeError("relu_backward: size mismatch " + y.dims_str() + " vs " +
                     grad_out.dims_str());
  Tensor4D gx = grad_out;
  for (size_t i = 0; i < gx.data.size(); ++i)
    if (!(y.data[i] > 0.0f)) gx.data[i] = 0.0f;
  return gx;
}

inline int pooled_extent(int in, int window, int stride) {
  return (in - window) / stride + 1;
}

inline void check_pool_shapes(const Tensor4D& x, int window, int stride, const char* who) {
  if (window < 1 || stride < 1)
    throw ShapeError(std::string(who) + ": window and stride must be >= 1");
  if (window > x.h || window > x.w)
    throw ShapeError(std::string(who) + ": window " + std::to_string(window) +
                     " exceeds input " + x.dims_str());
}

inline Tensor4D maxpool_forward(const Tensor4D& x, int window, int stride,
                                std::vector<int>* argmax = nullptr) {
  check_pool_shapes(x, window, stride, "maxpool_forward");
  const int h_out = pooled_extent(x.h, window, stride);
  const int w_out = pooled_extent(x.w, window, stride);
  Tensor4D y(x.n, x.c, h_out, w_out);
  if (argmax) argmax->assign(y.size(), 0);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oh = 0; oh < h_out; ++oh)
        for (int ow = 0; ow < w_out; ++ow) {
          float best = -std::numeric_limits<float>::infinity();
          int best_idx = 0;
          for (int kh = 0; kh < window; ++kh)
            for (int kw = 0; kw < window; ++kw) {
              const int ih = oh * stride + kh, iw = ow * stride + kw;
              const float v = x.at(in, ic, ih, iw);
              if (v > best) {  // strict: ties resolve to the first position
                best = v;
                best_idx = static_cast<int>(x.idx(in, ic, ih, iw));
              }
            }
          const size_t oi = y.idx(in, ic, oh, ow);
          y.data[oi] = best;
          if (argmax) (*argmax)[oi] = best_idx;
        }
  return y;
}

inline Tensor4D maxpool_backward(const Tensor4D& x, const Tensor4D& grad_out,
                                 const std::vector<int>& argmax) {
  Tensor4D gx(x.n, x.c, x.h, x.w);
  if (argmax.size() != grad_out.size())
    throw ShapeError("maxpool_backward: argmax/grad size mismatch");
  for (size_t i = 0; i < grad_out.data.size(); ++i)
    gx.data[argmax[i]] += grad_out.data[i];
  return gx;
}

inline Tensor4D avgpool_forward(const Tensor4D& x, int window, int stride) {
  check_pool_shapes(x, window, stride, "avgpool_forward");
  const int h_out = pooled_extent(x.h, window, stride);
  const int w_out = pooled_extent(x.w, window, stride);
  const double inv = 1.0 / (static_cast<double>(window) * window);
  Tensor4D y(x.n, x.c, h_out, w_out);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oh = 0; oh < h_out; ++oh)
        for (int ow = 0; ow < w_out; ++ow) {
          double acc = 0.0;
          for (int kh = 0; kh < window; ++kh)
            for (int kw = 0; kw < window; ++kw)
              acc += x.at(in, ic, oh * stride + kh, ow * stride + kw);
          y.at(in, ic, oh, ow) = static_cast<float>(acc * inv);
        }
  return y;
}

inline Tensor4D avgpool_backward(const Tensor4D& x, const Tensor4D& grad_out,
                                 int window, int stride) {
  Tensor4D gx(x.n, x.c, x.h, x.w);
  const float inv = 1.0f / (static_cast<float>(window) * window);
  for (int in = 0; in < grad_out.n; ++in)
    for (int ic = 0; ic < grad_out.c; ++ic)
      for (int oh = 0; oh < grad_out.h; ++oh)
        for (int ow = 0; ow < grad_out.w; ++ow) {
          const float g = grad_out.at(in, ic, oh, ow) * inv;
          for (int kh = 0; kh < window; ++kh)
            for (int kw = 0; kw < window; ++kw)
              gx.at(in, ic, oh * stride + kh, ow * stride + kw) += g;
        }
  return gx;
}

inline Matrix flatten(const Tensor4D& x) {
  Matrix m(x.n, x.c * x.h * x.w);
  m.data = x.data;
  return m;
}

inline Tensor4D unflatten(const Matrix& m, int c, int h, int w) {
  if (m.cols != c * h * w)
    throw ShapeError("unflatten: cols " + std::to_string(m.cols) + " != " +
                     std::to_string(c * h * w));
  Tensor4D x(m.rows, c, h, w);
  x.data = m.data;
  return x;
}

inline Matrix linear_forward(const Matrix& x, const LinearWeights& lw) {
  if (x.cols != lw.in_features)
    throw ShapeError("linear_forward: features " + std::to_string(x.cols) +
                     " != " + std::to_string(lw.in_features));
  Matrix y(x.rows, lw.out_features);
  for (int r = 0; r < x.rows; ++r) {
    const float* xr = &x.data[static_cast<size_t>(r) * x.cols];
    for (int o = 0; o < lw.out_features; ++o) {
      const float* wr = &lw.w[static_cast<size_t>(o) * lw.in_features];
      double acc = lw.bias[o];
      for (int i = 0; i < lw.in_features; ++i)
        acc += static_cast<double>(xr[i]) * static_cast<double>(wr[i]);
      y.at(r, o) = static_cast<float>(acc);
    }
  }
  return y;
}

struct LinearGrads {
  Matrix gx;
  LinearWeights gw;
};

inline LinearGrads linear_backward(const Matrix& x, const LinearWeights& lw,
                                   const Matrix& grad_out) {
  if (grad_out.rows != x.rows || grad_out.cols != lw.out_features)
    throw ShapeError("linear_backward: grad dims mismatch");
  std::vector<double> gx_acc(x.data.size(), 0.0);
  std::vector<double> gw_acc(lw.w.size(), 0.0);
  std::vector<double> gb_acc(lw.out_features, 0.0);
  for (int r = 0; r < x.rows; ++r) {
    const float* xr = &x.data[static_cast<size_t>(r) * x.cols];
    double* gxr = &gx_acc[static_cast<size_t>(r) * x.cols];
    for (int o = 0; o < lw.out_features; ++o) {
      const double g = grad_out.at(r, o);
      if (g == 0.0) continue;
      gb_acc[o] += g;
      const float* wr = &lw.w[static_cast<size_t>(o) * lw.in_features];
      double* gwr = &gw_acc[static_cast<size_t>(o) * lw.in_features];
      for (int i = 0; i < lw.in_features; ++i) {
        gwr[i] += g * static_cast<double>(xr[i]);
        gxr[i] += g * static_cast<double>(wr[i]);
      }
    }
  }
  LinearGrads out;
  out.gx = Matrix(x.rows, x.cols);
  for (size_t i = 0; i < gx_acc.size(); ++i) out.gx.data[i] = static_cast<float>(gx_acc[i]);
  out.gw = LinearWeights(lw.in_features, lw.out_features);
  for (size_t i = 0; i < gw_acc.size(); ++i) out.gw.w[i] = static_cast<float>(gw_acc[i]);
  for (int o = 0; o < lw.out_features; ++o) out.gw.bias[o] = static_cast<float>(gb_acc[o]);
  return out;
}

struct LossResult {
  double loss = 0.0;
  Matrix grad_logits;  // d(mean cross-entropy)/d logits
};

inline LossResult softmax_xent(const Matrix& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.rows)
    throw ShapeError("softmax_xent: label count " + std::to_string(labels.size()) +
                     " != batch " + std::to_string(logits.rows));
  LossResult res;
  res.grad_logits = Matrix(logits.rows, logits.cols);
  double total = 0.0;
  const double inv_n = 1.0 / logits.rows;
  std::vector<double> p(logits.cols);
  for (int r = 0; r < logits.rows; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= logits.cols)
      throw DataError("softmax_xent: label " + std::to_string(y) + " out of range");
    double mx = logits.at(r, 0);
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, static_cast<double>(logits.at(r, c)));
    double z = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      p[c] = std::exp(static_cast<double>(logits.at(r, c)) - mx);
      z += p[c];
    }
    total += -(std::log(p[y] / z));
    for (int c = 0; c < logits.cols; ++c) {
      const double soft = p[c] / z;
      res.grad_logits.at(r, c) =
          static_cast<float>((soft - (c == y ? 1.0 : 0.0)) * inv_n);
    }
  }
  res.loss = total * inv_n;
  return res;
}

}  // namespace prunekit
