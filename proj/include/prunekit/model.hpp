#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/ops.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class LayerKind { Conv, Relu, MaxPool, AvgPool, Flatten, Linear };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Linear: return "linear";
  }
  return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "relu") return LayerKind::Relu;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "avgpool") return LayerKind::AvgPool;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "linear") return LayerKind::Linear;
  throw ConfigError("unknown layer kind '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // conv
  int n_in = 0, n_out = 0, k = 0, stride = 1, pad = 0;
  // pool
  int window = 0, pstride = 0;
  // linear
  int in_features = 0, out_features = 0;

  static LayerSpec conv(int n_in, int n_out, int k, int stride = 1, int pad = 0) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.n_in = n_in; s.n_out = n_out; s.k = k; s.stride = stride; s.pad = pad;
    return s;
  }
  static LayerSpec relu() { LayerSpec s; s.kind = LayerKind::Relu; return s; }
  static LayerSpec maxpool(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.window = window; s.pstride = stride;
    return s;
  }
  static LayerSpec avgpool(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::AvgPool;
    s.window = window; s.pstride = stride;
    return s;
  }
  static LayerSpec flatten() { LayerSpec s; s.kind = LayerKind::Flatten; return s; }
  static LayerSpec linear(int in_f, int out_f) {
    LayerSpec s;
    s.kind = LayerKind::Linear;
    s.in_features = in_f; s.out_features = out_f;
    return s;
  }
};

// One bit per output filter. 1 = live, 0 = pruned.
struct FilterMask {
  std::vector<uint8_t> bits;

  FilterMask() = default;
  explicit FilterMask(int n_out) : bits(static_cast<size_t>(n_out), 1) {}

  int size() const { return static_cast<int>(bits.size()); }
  int live() const {
    int n = 0;
    for (uint8_t b : bits) n += b ? 1 : 0;
    return n;
  }
  bool any_masked() const { return live() != size(); }
};

// Identity shortcut: output of layer `from` is added onto the output of layer
// `to`. Shapes must match. Built-in architectures do not use these; masking
// still works with them, compaction refuses them.
struct SkipConnection {
  int from = 0, to = 0;
};

struct ModelState {
  std::string arch_id;
  std::vector<LayerSpec> specs;
  std::vector<ConvWeights> conv_w;      // by conv occurrence order
  std::vector<LinearWeights> linear_w;  // by linear occurrence order
  std::vector<FilterMask> masks;        // one per conv layer
  std::vector<SkipConnection> skips;
  int input_c = 0, input_h = 0, input_w = 0;
  int epoch = 0;
  int round = 0;

  int n_conv() const { return static_cast<int>(conv_w.size()); }

  // conv slot index for a layer index, -1 for non-conv layers
  int conv_slot(int layer) const {
    int slot = -1;
    for (int l = 0; l <= layer && l < static_cast<int>(specs.size()); ++l)
      if (specs[l].kind == LayerKind::Conv) ++slot;
    return specs[layer].kind == LayerKind::Conv ? slot : -1;
  }
};

struct LayerShape {
  bool is_matrix = false;
  int c = 0, h = 0, w = 0;  // tensor domain
  int features = 0;         // matrix domain
};

// Shape of the data before each layer and after the last one; index 0 is the
// input, index L the final output. Throws on any incompatibility.
inline std::vector<LayerShape> shape_trace(const std::vector<LayerSpec>& specs, int in_c,
                                           int in_h, int in_w) {
  std::vector<LayerShape> tr;
  LayerShape cur;
  cur.c = in_c;
  cur.h = in_h;
  cur.w = in_w;
  tr.push_back(cur);
  for (size_t l = 0; l < specs.size(); ++l) {
    const LayerSpec& s = specs[l];
    const std::string where = "layer " + std::to_string(l) + " (" +
                              layer_kind_name(s.kind) + ")";
    switch (s.kind) {
      case LayerKind::Conv: {
        if (cur.is_matrix) throw ShapeError(where + ": conv after flatten");
        if (cur.c != s.n_in)
          throw ShapeError(where + ": expects " + std::to_string(s.n_in) +
                           " channels, input has " + std::to_string(cur.c));
        const int eh = cur.h + 2 * s.pad - s.k;
        const int ew = cur.w + 2 * s.pad - s.k;
        if (eh < 0 || ew < 0 || eh % s.stride != 0 || ew % s.stride != 0)
          throw ShapeError(where + ": invalid spatial dims " + std::to_string(cur.h) +
                           "x" + std::to_string(cur.w));
        cur.c = s.n_out;
        cur.h = eh / s.stride + 1;
        cur.w = ew / s.stride + 1;
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        if (cur.is_matrix) throw ShapeError(where + ": pool after flatten");
        if (s.window < 1 || s.pstride < 1 || s.window > cur.h || s.window > cur.w)
          throw ShapeError(where + ": window " + std::to_string(s.window) +
                           " does not fit " + std::to_string(cur.h) + "x" +
                           std::to_string(cur.w));
        cur.h = pooled_extent(cur.h, s.window, s.pstride);
        cur.w = pooled_extent(cur.w, s.window, s.pstride);
        break;
      }
      case LayerKind::Flatten:
        if (cur.is_matrix) throw ShapeError(where + ": double flatten");
        cur.is_matrix = true;
        cur.features = cur.c * cur.h * cur.w;
        break;
      case LayerKind::Linear:
        if (!cur.is_matrix) throw ShapeError(where + ": linear before flatten");
        if (cur.features != s.in_features)
          throw ShapeError(where + ": expects " + std::to_string(s.in_features) +
                           " features, input has " + std::to_string(cur.features));
        cur.features = s.out_features;
        break;
    }
    tr.push_back(cur);
  }
  return tr;
}

inline void validate_model(const ModelState& m) {
  auto tr = shape_trace(m.specs, m.input_c, m.input_h, m.input_w);
  int convs = 0, linears = 0;
  for (const auto& s : m.specs) {
    if (s.kind == LayerKind::Conv) ++convs;
    if (s.kind == LayerKind::Linear) ++linears;
  }
  if (convs != static_cast<int>(m.conv_w.size()) ||
      convs != static_cast<int>(m.masks.size()))
    throw ShapeError("model: conv weight/mask count mismatch");
  if (linears != static_cast<int>(m.linear_w.size()))
    throw ShapeError("model: linear weight count mismatch");
  for (const auto& sk : m.skips) {
    if (sk.from < 0 || sk.to <= sk.from || sk.to >= static_cast<int>(m.specs.size()))
      throw ShapeError("model: skip indices out of range");
    const LayerShape &a = tr[sk.from + 1], &b = tr[sk.to + 1];
    if (a.is_matrix || b.is_matrix || a.c != b.c || a.h != b.h || a.w != b.w)
      throw ShapeError("model: skip endpoints shape-incompatible");
  }
  if (!tr.back().is_matrix)
    throw ShapeError("model: network must end in the matrix domain (logits)");
}

// ---------------------------------------------------------------------------
// forward / backward

struct ForwardArtifacts {
  std::vector<Tensor4D> t_out;             // per layer, tensor-domain outputs
  std::vector<Matrix> m_out;               // per layer, matrix-domain outputs
  std::vector<std::vector<int>> pool_idx;  // per layer, maxpool argmax
  Matrix logits;
};

inline ForwardArtifacts forward_model(const ModelState& m, const Tensor4D& x) {
  if (x.c != m.input_c || x.h != m.input_h || x.w != m.input_w)
    throw ShapeError("forward: input " + x.dims_str() + " does not match declared " +
                     std::to_string(m.input_c) + "x" + std::to_string(m.input_h) +
                     "x" + std::to_string(m.input_w));
  const int L = static_cast<int>(m.specs.size());
  ForwardArtifacts art;
  art.t_out.resize(L);
  art.m_out.resize(L);
  art.pool_idx.resize(L);

  Tensor4D t = x;
  Matrix mat;
  bool in_matrix = false;
  int conv_i = 0, lin_i = 0;
  for (int l = 0; l < L; ++l) {
    const LayerSpec& s = m.specs[l];
    switch (s.kind) {
      case LayerKind::Conv:
        t = conv2d_forward(t, m.conv_w[conv_i], s.stride, s.pad,
                           &m.masks[conv_i].bits);
        ++conv_i;
        break;
      case LayerKind::Relu:
        if (in_matrix)
          throw ShapeError("forward: relu in matrix domain unsupported");
        t = relu(t);
        break;
      case LayerKind::MaxPool:
        t = maxpool_forward(t, s.window, s.pstride, &art.pool_idx[l]);
        break;
      case LayerKind::AvgPool:
        t = avgpool_forward(t, s.window, s.pstride);
        break;
      case LayerKind::Flatten:
        mat = flatten(t);
        in_matrix = true;
        break;
      case LayerKind::Linear:
        mat = linear_forward(mat, m.linear_w[lin_i]);
        ++lin_i;
        break;
    }
    // apply any skip terminating here (tensor domain only, validated)
    for (const auto& sk : m.skips)
      if (sk.to == l) {
        const Tensor4D& src = art.t_out[sk.from];
        for (size_t i = 0; i < t.data.size(); ++i) t.data[i] += src.data[i];
      }
    if (in_matrix)
      art.m_out[l] = mat;
    else
      art.t_out[l] = t;
  }
  art.logits = mat;
  return art;
}

// Post-ReLU activation of each conv layer: the output of the relu immediately
// following the conv when there is one, else the conv output itself.
inline std::vector<Tensor4D> capture_activations(const ModelState& m,
                                                 const ForwardArtifacts& art) {
  std::vector<Tensor4D> acts;
  const int L = static_cast<int>(m.specs.size());
  for (int l = 0; l < L; ++l)
    if (m.specs[l].kind == LayerKind::Conv) {
      if (l + 1 < L && m.specs[l + 1].kind == LayerKind::Relu)
        acts.push_back(art.t_out[l + 1]);
      else
        acts.push_back(art.t_out[l]);
    }
  return acts;
}

struct MaskedForwardResult {
  Matrix logits;
  std::vector<Tensor4D> activations;  // per conv layer when captured
};

inline MaskedForwardResult masked_forward(const ModelState& m, const Tensor4D& x,
                                          bool capture = false) {
  ForwardArtifacts art = forward_model(m, x);
  MaskedForwardResult res;
  res.logits = std::move(art.logits);
  if (capture) res.activations = capture_activations(m, art);
  return res;
}

struct ModelGrads {
  std::vector<ConvWeights> conv;
  std::vector<LinearWeights> linear;
};

inline void accumulate(Tensor4D& dst, const Tensor4D& src) {
  if (dst.size() == 0) {
    dst = src;
    return;
  }
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

inline ModelGrads backward_model(const ModelState& m, const Tensor4D& x,
                                 const ForwardArtifacts& art,
                                 const Matrix& grad_logits) {
  const int L = static_cast<int>(m.specs.size());
  ModelGrads grads;
  grads.conv.resize(m.conv_w.size());
  grads.linear.resize(m.linear_w.size());

  // accumulated gradient at each layer's output
  std::vector<Tensor4D> gt(L);
  std::vector<Matrix> gm(L);
  gm[L - 1] = grad_logits;

  int conv_i = static_cast<int>(m.conv_w.size());
  int lin_i = static_cast<int>(m.linear_w.size());
  for (int l = L - 1; l >= 0; --l) {
    const LayerSpec& s = m.specs[l];
    // route this output's grad to skip sources first
    for (const auto& sk : m.skips)
      if (sk.to == l) {
        Tensor4D& src = gt[sk.from];
        if (src.size() == 0) src = Tensor4D(gt[l].n, gt[l].c, gt[l].h, gt[l].w);
        for (size_t i = 0; i < src.data.size(); ++i) src.data[i] += gt[l].data[i];
      }
    const Tensor4D& t_in = (l == 0) ? x : art.t_out[l - 1];
    switch (s.kind) {
      case LayerKind::Conv: {
        --conv_i;
        ConvGrads g = conv2d_backward(t_in, m.conv_w[conv_i], gt[l], s.stride, s.pad,
                                      &m.masks[conv_i].bits);
        grads.conv[conv_i] = std::move(g.gw);
        if (l > 0) accumulate(gt[l - 1], g.gx);
        break;
      }
      case LayerKind::Relu: {
        Tensor4D g = relu_backward(art.t_out[l], gt[l]);
        if (l > 0) accumulate(gt[l - 1], g);
        break;
      }
      case LayerKind::MaxPool: {
        Tensor4D g = maxpool_backward(t_in, gt[l], art.pool_idx[l]);
        if (l > 0) accumulate(gt[l - 1], g);
        break;
      }
      case LayerKind::AvgPool: {
        Tensor4D g = avgpool_backward(t_in, gt[l], s.window, s.pstride);
        if (l > 0) accumulate(gt[l - 1], g);
        break;
      }
      case LayerKind::Flatten: {
        const Tensor4D& shape_src = t_in;
        Tensor4D g = unflatten(gm[l], shape_src.c, shape_src.h, shape_src.w);
        if (l > 0) accumulate(gt[l - 1], g);
        break;
      }
      case LayerKind::Linear: {
        --lin_i;
        const Matrix& x_in = art.m_out[l - 1];  // a linear always follows flatten
        LinearGrads g = linear_backward(x_in, m.linear_w[lin_i], gm[l]);
        grads.linear[lin_i] = std::move(g.gw);
        gm[l - 1] = std::move(g.gx);
        break;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// accounting

struct Accounting {
  std::vector<long long> conv_params;  // per conv layer, formula N^i (no bias)
  std::vector<long long> conv_flops;   // per conv layer, 2*h*w*N^i
  long long conv_params_total = 0;
  long long conv_flops_total = 0;
  long long linear_params = 0;  // in_live*out + out, bias included
  long long linear_flops = 0;   // 2*in_live*out
  long long conv_bias_params = 0;  // reported separately, never in totals
  long long total_params = 0;      // conv formula + linear
  long long total_flops = 0;
};

inline long long layer_params(const LayerSpec& spec, const FilterMask& mask_this,
                              const FilterMask* mask_prev) {
  if (spec.kind != LayerKind::Conv)
    throw AccountingError("layer_params: not a conv layer");
  const long long live_in = mask_prev ? mask_prev->live() : spec.n_in;
  const long long live_out = mask_this.live();
  return live_in * spec.k * spec.k * live_out;
}

inline long long layer_flops(const LayerSpec& spec, const FilterMask& mask_this,
                             const FilterMask* mask_prev, int h_out, int w_out) {
  return 2LL * h_out * w_out * layer_params(spec, mask_this, mask_prev);
}

inline Accounting total_accounting(const ModelState& m,
                                   const std::vector<FilterMask>* mask_override =
                                       nullptr) {
  auto tr = shape_trace(m.specs, m.input_c, m.input_h, m.input_w);
  Accounting acc;
  const FilterMask* prev_mask = nullptr;
  int conv_i = 0, last_conv_live = m.input_c;
  for (size_t l = 0; l < m.specs.size(); ++l) {
    const LayerSpec& s = m.specs[l];
    if (s.kind == LayerKind::Conv) {
      const FilterMask& mask =
          mask_override ? (*mask_override)[conv_i] : m.masks[conv_i];
      const long long p = layer_params(s, mask, prev_mask);
      const long long f = layer_flops(s, mask, prev_mask, tr[l + 1].h, tr[l + 1].w);
      acc.conv_params.push_back(p);
      acc.conv_flops.push_back(f);
      acc.conv_params_total += p;
      acc.conv_flops_total += f;
      if (m.conv_w[conv_i].has_bias) acc.conv_bias_params += mask.live();
      prev_mask = &mask;
      last_conv_live = mask.live();
      ++conv_i;
    } else if (s.kind == LayerKind::Linear) {
      // features of masked channels are structurally dead only for the linear
      // layer directly fed by the flattened conv stack
      long long in_live = s.in_features;
      if (l > 0 && m.specs[l - 1].kind == LayerKind::Flatten && prev_mask) {
        const LayerShape& before = tr[l - 1];  // shape entering flatten
        in_live = static_cast<long long>(last_conv_live) * before.h * before.w;
      }
      acc.linear_params += in_live * s.out_features + s.out_features;
      acc.linear_flops += 2LL * in_live * s.out_features;
    }
  }
  acc.total_params = acc.conv_params_total + acc.linear_params;
  acc.total_flops = acc.conv_flops_total + acc.linear_flops;
  return acc;
}

// ---------------------------------------------------------------------------
// compaction

inline ModelState export_compact(const ModelState& m) {
  if (!m.skips.empty())
    throw TopologyError(
        "export_compact: architectures with skip connections are not supported");
  validate_model(m);
  auto tr = shape_trace(m.specs, m.input_c, m.input_h, m.input_w);

  ModelState out;
  out.arch_id = m.arch_id.empty() ? "compact" : m.arch_id + "-compact";
  out.input_c = m.input_c;
  out.input_h = m.input_h;
  out.input_w = m.input_w;
  out.epoch = m.epoch;
  out.round = m.round;

  std::vector<int> live_prev;  // live input-channel indices for the next conv
  for (int i = 0; i < m.input_c; ++i) live_prev.push_back(i);
  bool prev_is_input = true;
  int conv_i = 0;

  for (size_t l = 0; l < m.specs.size(); ++l) {
    LayerSpec s = m.specs[l];
    switch (s.kind) {
      case LayerKind::Conv: {
        const ConvWeights& w = m.conv_w[conv_i];
        const FilterMask& mask = m.masks[conv_i];
        std::vector<int> live_out;
        for (int oc = 0; oc < mask.size(); ++oc)
          if (mask.bits[oc]) live_out.push_back(oc);
        if (live_out.empty())
          throw TopologyError("export_compact: conv layer " + std::to_string(l) +
                              " has no live filters");
        ConvWeights cw(static_cast<int>(live_out.size()),
                       static_cast<int>(live_prev.size()), w.k, w.has_bias);
        for (size_t no = 0; no < live_out.size(); ++no) {
          for (size_t ni = 0; ni < live_prev.size(); ++ni)
            for (int kh = 0; kh < w.k; ++kh)
              for (int kw = 0; kw < w.k; ++kw)
                cw.at(static_cast<int>(no), static_cast<int>(ni), kh, kw) =
                    w.at(live_out[no], live_prev[ni], kh, kw);
          if (w.has_bias) cw.bias[no] = w.bias[live_out[no]];
        }
        s.n_in = static_cast<int>(live_prev.size());
        s.n_out = static_cast<int>(live_out.size());
        out.conv_w.push_back(std::move(cw));
        out.masks.emplace_back(s.n_out);
        live_prev = live_out;
        prev_is_input = false;
        ++conv_i;
        break;
      }
      case LayerKind::Linear: {
        const LinearWeights& lw = m.linear_w[out.linear_w.size()];
        // only the first linear after the conv stack sees removed features
        if (l > 0 && m.specs[l - 1].kind == LayerKind::Flatten && !prev_is_input) {
          const LayerShape& before = tr[l - 1];
          const int plane = before.h * before.w;
          LinearWeights nw(static_cast<int>(live_prev.size()) * plane,
                           lw.out_features);
          nw.bias = lw.bias;
          for (int o = 0; o < lw.out_features; ++o) {
            int col = 0;
            for (int c : live_prev)
              for (int p = 0; p < plane; ++p)
                nw.at(o, col++) = lw.at(o, c * plane + p);
          }
          s.in_features = nw.in_features;
          out.linear_w.push_back(std::move(nw));
        } else {
          out.linear_w.push_back(lw);
        }
        break;
      }
      default:
        break;
    }
    out.specs.push_back(s);
  }
  validate_model(out);
  return out;
}

// ---------------------------------------------------------------------------
// architectures

inline ModelState build_arch(const std::string& id, int in_c, int in_h, int in_w,
                             int classes) {
  ModelState m;
  m.arch_id = id;
  m.input_c = in_c;
  m.input_h = in_h;
  m.input_w = in_w;

  auto add_conv = [&](int n_in, int n_out, int k, int pad) {
    m.specs.push_back(LayerSpec::conv(n_in, n_out, k, 1, pad));
    m.conv_w.emplace_back(n_out, n_in, k);
    m.masks.emplace_back(n_out);
    m.specs.push_back(LayerSpec::relu());
  };
  auto current_hw = [&]() {
    auto tr = shape_trace(m.specs, in_c, in_h, in_w);
    return tr.back();
  };

  if (id == "tiny2") {
    add_conv(in_c, 4, 3, 1);
    m.specs.push_back(LayerSpec::maxpool(2, 2));
    add_conv(4, 8, 3, 1);
    LayerShape sh = current_hw();
    m.specs.push_back(LayerSpec::avgpool(sh.h, sh.h));
    m.specs.push_back(LayerSpec::flatten());
    m.linear_w.emplace_back(8, classes);
    m.specs.push_back(LayerSpec::linear(8, classes));
  } else if (id == "toy2") {
    add_conv(in_c, 8, 3, 1);
    m.specs.push_back(LayerSpec::maxpool(2, 2));
    add_conv(8, 16, 3, 1);
    m.specs.push_back(LayerSpec::maxpool(2, 2));
    LayerShape sh = current_hw();
    const int feats = 16 * sh.h * sh.w;
    m.specs.push_back(LayerSpec::flatten());
    m.linear_w.emplace_back(feats, classes);
    m.specs.push_back(LayerSpec::linear(feats, classes));
  } else if (id == "toy4") {
    add_conv(in_c, 16, 3, 1);
    m.specs.push_back(LayerSpec::maxpool(2, 2));
    add_conv(16, 32, 3, 1);
    m.specs.push_back(LayerSpec::maxpool(2, 2));
    add_conv(32, 48, 3, 1);
    add_conv(48, 64, 3, 1);
    LayerShape sh = current_hw();
    m.specs.push_back(LayerSpec::avgpool(sh.h, sh.h));
    m.specs.push_back(LayerSpec::flatten());
    m.linear_w.emplace_back(64, classes);
    m.specs.push_back(LayerSpec::linear(64, classes));
  } else {
    throw ConfigError("unknown architecture '" + id + "'");
  }
  validate_model(m);
  return m;
}

// He-normal init, bias zero. One WeightInit stream consumed in layer order
// keeps init a pure function of the seed.
inline void init_weights(ModelState& m, uint64_t seed) {
  CounterRng rng(seed, Stream::WeightInit);
  for (auto& w : m.conv_w) {
    const double std = std::sqrt(2.0 / (static_cast<double>(w.n_in) * w.k * w.k));
    for (float& v : w.filters) v = static_cast<float>(rng.normal() * std);
    for (float& v : w.bias) v = 0.0f;
  }
  for (auto& lw : m.linear_w) {
    const double std = std::sqrt(2.0 / static_cast<double>(lw.in_features));
    for (float& v : lw.w) v = static_cast<float>(rng.normal() * std);
    for (float& v : lw.bias) v = 0.0f;
  }
}

// Physically zero the storage of masked filters (and their bias). The forward
// path never reads them, but checkpoints, norms, and weight decay see storage.
inline void apply_masks_to_storage(ModelState& m) {
  for (int ci = 0; ci < m.n_conv(); ++ci) {
    ConvWeights& w = m.conv_w[ci];
    const FilterMask& mask = m.masks[ci];
    for (int oc = 0; oc < w.n_out; ++oc)
      if (!mask.bits[oc]) {
        std::fill_n(w.filters.begin() + oc * w.filter_size(), w.filter_size(), 0.0f);
        if (w.has_bias) w.bias[oc] = 0.0f;
      }
  }
}

}  // namespace prunekit
