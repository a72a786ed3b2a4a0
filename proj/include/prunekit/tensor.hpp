#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "prunekit/errors.hpp"

namespace prunekit {

// Dense NCHW tensor, f32 storage. All reductions over it accumulate in f64.
struct Tensor4D {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor4D() = default;
  Tensor4D(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      throw ShapeError("Tensor4D: all dims must be >= 1, got " + dims_str());
    data.assign(static_cast<size_t>(n) * c * h * w, 0.0f);
  }

  size_t size() const { return data.size(); }

  size_t idx(int in, int ic, int ih, int iw) const {
    return ((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw;
  }

  float& at(int in, int ic, int ih, int iw) { return data[idx(in, ic, ih, iw)]; }
  float at(int in, int ic, int ih, int iw) const { return data[idx(in, ic, ih, iw)]; }

  std::string dims_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }
};

// Row-major (rows x cols); used for flattened features and logits.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c) {
    if (r < 1 || c < 1)
      throw ShapeError("Matrix: dims must be >= 1, got " + std::to_string(r) + "x" +
                       std::to_string(c));
    data.assign(static_cast<size_t>(r) * c, 0.0f);
  }

  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// n_out filters of shape n_in x k x k plus an optional per-filter bias.
// Also reused as the gradient container for a conv layer.
struct ConvWeights {
  int n_out = 0, n_in = 0, k = 0;
  std::vector<float> filters;  // n_out * n_in * k * k
  std::vector<float> bias;     // n_out, empty when has_bias == false
  bool has_bias = true;

  ConvWeights() = default;
  ConvWeights(int n_out_, int n_in_, int k_, bool with_bias = true)
      : n_out(n_out_), n_in(n_in_), k(k_), has_bias(with_bias) {
    if (n_out < 1 || n_in < 1 || k < 1)
      throw ShapeError("ConvWeights: n_out, n_in, k must be >= 1, got " + dims_str());
    filters.assign(static_cast<size_t>(n_out) * n_in * k * k, 0.0f);
    if (has_bias) bias.assign(static_cast<size_t>(n_out), 0.0f);
  }

  size_t idx(int oc, int ic, int kh, int kw) const {
    return ((static_cast<size_t>(oc) * n_in + ic) * k + kh) * k + kw;
  }

  float& at(int oc, int ic, int kh, int kw) { return filters[idx(oc, ic, kh, kw)]; }
  float at(int oc, int ic, int kh, int kw) const { return filters[idx(oc, ic, kh, kw)]; }

  size_t filter_size() const { return static_cast<size_t>(n_in) * k * k; }

  std::string dims_str() const {
    return std::to_string(n_out) + "x" + std::to_string(n_in) + "x" +
           std::to_string(k) + "x" + std::to_string(k);
  }
};

// w is out_features x in_features row-major; bias always present.
struct LinearWeights {
  int in_features = 0, out_features = 0;
  std::vector<float> w;
  std::vector<float> bias;

  LinearWeights() = default;
  LinearWeights(int in_f, int out_f) : in_features(in_f), out_features(out_f) {
    if (in_f < 1 || out_f < 1)
      throw ShapeError("LinearWeights: features must be >= 1, got " +
                       std::to_string(in_f) + "->" + std::to_string(out_f));
    w.assign(static_cast<size_t>(out_f) * in_f, 0.0f);
    bias.assign(static_cast<size_t>(out_f), 0.0f);
  }

  float& at(int o, int i) { return w[static_cast<size_t>(o) * in_features + i]; }
  float at(int o, int i) const { return w[static_cast<size_t>(o) * in_features + i]; }
};

}  // namespace prunekit
