#pragma once

// Small trainable classifiers with hand-written backpropagation.
//
// Three architectures are supported:
//   linear : logits = W x + b; the penultimate features are the raw input.
//   mlp    : two ReLU hidden layers, then a linear head.
//   conv   : four 3x3 conv blocks (ReLU; 2x2 max-pool after block 2), global
//            average pooling, then a linear head. Block 4 is the "last
//            convolutional layer" for channel pruning.
//
// Models are templated on the scalar type: training runs in float, gradient
// checks in double. Parameters live in one flat vector whose layout is a
// pure function of the ModelSpec.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mat/dataset.hpp"
#include "mat/error.hpp"
#include "mat/rng.hpp"

namespace mat {

enum class Arch : std::uint32_t { linear = 0, mlp = 1, conv = 2 };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::linear: return "linear";
    case Arch::mlp: return "mlp";
    case Arch::conv: return "conv";
  }
  return "unknown";
}

inline Arch parse_arch(const std::string& s) {
  if (s == "linear") return Arch::linear;
  if (s == "mlp") return Arch::mlp;
  if (s == "conv") return Arch::conv;
  throw ConfigError("unknown architecture '" + s + "' (expected linear, mlp or conv)");
}

struct ModelSpec {
  Arch arch = Arch::mlp;
  int num_classes = 2;
  Shape input_shape;
  // mlp: {hidden1, hidden2}; conv: {c1, c2, c3, c4}; linear: unused.
  std::vector<int> widths;

  bool operator==(const ModelSpec&) const = default;

  std::size_t input_dim() const { return shape_size(input_shape); }

  void validate() const {
    if (num_classes < 2) throw InputError("num_classes must be >= 2");
    if (input_shape.empty()) throw InputError("input_shape must not be empty");
    for (int d : input_shape)
      if (d <= 0) throw InputError("input_shape entries must be positive");
    const std::size_t want = arch == Arch::linear ? 0 : arch == Arch::mlp ? 2 : 4;
    if (widths.size() != want)
      throw InputError(to_string(arch) + " expects " + std::to_string(want) + " widths");
    for (int w : widths)
      if (w <= 0) throw InputError("layer widths must be positive");
    if (arch == Arch::conv && input_shape.size() != 3)
      throw InputError("conv input_shape must be {channels, height, width}");
  }

  std::size_t feature_dim() const {
    switch (arch) {
      case Arch::linear: return input_dim();
      case Arch::mlp: return static_cast<std::size_t>(widths[1]);
      case Arch::conv: return static_cast<std::size_t>(widths[3]);
    }
    return 0;
  }

  std::size_t param_count() const;
};

namespace detail {

struct DenseLayout {
  std::size_t w = 0, b = 0, in = 0, out = 0;
};

struct ConvLayout {
  std::size_t w = 0, b = 0;
  int cin = 0, cout = 0, h = 0, w_px = 0;  // spatial size of input == output
  std::size_t weight_count() const { return static_cast<std::size_t>(cout) * cin * 9; }
};

struct Layout {
  std::vector<ConvLayout> convs;
  std::vector<DenseLayout> dense;  // hidden layers then the head
  int pooled_h = 0, pooled_w = 0;  // spatial size after the 2x2 pool
  std::size_t total = 0;
};

inline Layout make_layout(const ModelSpec& spec) {
  Layout L;
  std::size_t off = 0;
  auto add_dense = [&](std::size_t in, std::size_t out) {
    DenseLayout d{off, off + in * out, in, out};
    off += in * out + out;
    L.dense.push_back(d);
  };
  const std::size_t K = static_cast<std::size_t>(spec.num_classes);
  switch (spec.arch) {
    case Arch::linear:
      add_dense(spec.input_dim(), K);
      break;
    case Arch::mlp:
      add_dense(spec.input_dim(), static_cast<std::size_t>(spec.widths[0]));
      add_dense(static_cast<std::size_t>(spec.widths[0]), static_cast<std::size_t>(spec.widths[1]));
      add_dense(static_cast<std::size_t>(spec.widths[1]), K);
      break;
    case Arch::conv: {
      int cin = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
      for (int i = 0; i < 4; ++i) {
        ConvLayout c;
        c.cin = cin;
        c.cout = spec.widths[static_cast<std::size_t>(i)];
        c.h = h;
        c.w_px = w;
        c.w = off;
        c.b = off + c.weight_count();
        off += c.weight_count() + static_cast<std::size_t>(c.cout);
        L.convs.push_back(c);
        cin = c.cout;
        if (i == 1) {
          h = std::max(1, h / 2);
          w = std::max(1, w / 2);
          L.pooled_h = h;
          L.pooled_w = w;
        }
      }
      add_dense(static_cast<std::size_t>(spec.widths[3]), K);
      break;
    }
  }
  L.total = off;
  return L;
}

}  // namespace detail

inline std::size_t ModelSpec::param_count() const {
  validate();
  return detail::make_layout(*this).total;
}

template <class T>
struct Model {
  ModelSpec spec;
  std::vector<T> params;
  // Conv only: 1 = active channel of the last conv layer, 0 = pruned.
  std::vector<std::uint8_t> channel_mask;
  std::int64_t epoch = 0;
  std::string rng_state;

  template <class U>
  Model<U> cast() const {
    Model<U> m;
    m.spec = spec;
    m.params.assign(params.begin(), params.end());
    m.channel_mask = channel_mask;
    m.epoch = epoch;
    m.rng_state = rng_state;
    return m;
  }

  std::size_t num_classes() const { return static_cast<std::size_t>(spec.num_classes); }
  std::size_t feature_dim() const { return spec.feature_dim(); }
};

// Persistent, float-precision model; the unit stored on disk.
using ModelCheckpoint = Model<float>;

template <class T>
Model<T> zero_model(const ModelSpec& spec) {
  spec.validate();
  Model<T> m;
  m.spec = spec;
  m.params.assign(spec.param_count(), T(0));
  if (spec.arch == Arch::conv) m.channel_mask.assign(static_cast<std::size_t>(spec.widths[3]), 1);
  return m;
}

// He-normal weights for ReLU layers, LeCun-normal for the head, zero biases.
template <class T>
Model<T> init_model(const ModelSpec& spec, std::uint64_t seed) {
  Model<T> m = zero_model<T>(spec);
  const auto L = detail::make_layout(spec);
  Rng rng(seed);
  for (const auto& c : L.convs) {
    const double sd = std::sqrt(2.0 / (9.0 * c.cin));
    for (std::size_t i = 0; i < c.weight_count(); ++i) m.params[c.w + i] = static_cast<T>(rng.normal(0.0, sd));
  }
  for (std::size_t li = 0; li < L.dense.size(); ++li) {
    const auto& d = L.dense[li];
    const bool head = li + 1 == L.dense.size();
    const double sd = std::sqrt((head ? 1.0 : 2.0) / static_cast<double>(d.in));
    for (std::size_t i = 0; i < d.in * d.out; ++i) m.params[d.w + i] = static_cast<T>(rng.normal(0.0, sd));
  }
  return m;
}

// Cached intermediate values of one forward pass, needed for backward().
template <class T>
struct ForwardPass {
  std::size_t batch = 0;
  std::vector<T> input;
  std::vector<std::vector<T>> hidden;  // post-ReLU outputs per hidden layer
  std::vector<std::uint32_t> pool_index;
  std::vector<T> pooled;
  std::vector<T> features;  // batch x feature_dim
  std::vector<T> logits;    // batch x num_classes
};

namespace detail {

// out[n x dout] = in[n x din] * W^T + b
template <class T>
void dense_forward(const std::vector<T>& p, const DenseLayout& d, std::span<const T> in, std::size_t n,
                   std::vector<T>& out) {
  out.assign(n * d.out, T(0));
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * d.in;
    T* y = out.data() + s * d.out;
    for (std::size_t o = 0; o < d.out; ++o) {
      const T* w = p.data() + d.w + o * d.in;
      T acc = p[d.b + o];
      for (std::size_t i = 0; i < d.in; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
}

template <class T>
void dense_backward(const std::vector<T>& p, const DenseLayout& d, std::span<const T> in, std::size_t n,
                    std::span<const T> dout, std::vector<T>& grad, std::vector<T>* din) {
  if (din) din->assign(n * d.in, T(0));
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * d.in;
    const T* g = dout.data() + s * d.out;
    for (std::size_t o = 0; o < d.out; ++o) {
      const T go = g[o];
      if (go == T(0)) continue;
      grad[d.b + o] += go;
      T* gw = grad.data() + d.w + o * d.in;
      for (std::size_t i = 0; i < d.in; ++i) gw[i] += go * x[i];
      if (din) {
        const T* w = p.data() + d.w + o * d.in;
        T* dx = din->data() + s * d.in;
        for (std::size_t i = 0; i < d.in; ++i) dx[i] += go * w[i];
      }
    }
  }
}

template <class T>
void relu_inplace(std::vector<T>& v) {
  for (auto& x : v) x = x > T(0) ? x : T(0);
}

template <class T>
void relu_backward(const std::vector<T>& activated, std::vector<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activated[i] > T(0))) grad[i] = T(0);
}

// 3x3 convolution, stride 1, zero padding 1, one sample.
template <class T>
void conv_forward_one(const std::vector<T>& p, const ConvLayout& c, const T* in, T* out) {
  const int H = c.h, W = c.w_px;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int co = 0; co < c.cout; ++co) {
    T* o = out + co * plane;
    std::fill(o, o + plane, p[c.b + co]);
    for (int ci = 0; ci < c.cin; ++ci) {
      const T* x = in + ci * plane;
      const T* k = p.data() + c.w + (static_cast<std::size_t>(co) * c.cin + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const T wv = k[ky * 3 + kx];
          const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
          const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
          for (int y = y0; y < y1; ++y) {
            T* orow = o + y * W;
            const T* xrow = x + (y + ky - 1) * W + (kx - 1);
            for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
          }
        }
      }
    }
  }
}

template <class T>
void conv_backward_one(const std::vector<T>& p, const ConvLayout& c, const T* in, const T* dout,
                       std::vector<T>& grad, T* din) {
  const int H = c.h, W = c.w_px;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int co = 0; co < c.cout; ++co) {
    const T* g = dout + co * plane;
    T bsum = T(0);
    for (std::size_t i = 0; i < plane; ++i) bsum += g[i];
    grad[c.b + co] += bsum;
    for (int ci = 0; ci < c.cin; ++ci) {
      const T* x = in + ci * plane;
      T* dx = din ? din + ci * plane : nullptr;
      const std::size_t koff = c.w + (static_cast<std::size_t>(co) * c.cin + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const T wv = p[koff + ky * 3 + kx];
          const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
          const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
          T acc = T(0);
          for (int y = y0; y < y1; ++y) {
            const T* grow = g + y * W;
            const int off = (y + ky - 1) * W + (kx - 1);
            const T* xrow = x + off;
            for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
            if (dx) {
              T* dxrow = dx + off;
              for (int xx = x0; xx < x1; ++xx) dxrow[xx] += wv * grow[xx];
            }
          }
          grad[koff + ky * 3 + kx] += acc;
        }
      }
    }
  }
}

inline void check_batch(const ModelSpec& spec, std::size_t values, std::size_t n) {
  if (values != n * spec.input_dim())
    throw InputError("batch of " + std::to_string(values) + " values does not hold " + std::to_string(n) +
                     " samples of width " + std::to_string(spec.input_dim()));
}

}  // namespace detail

// Applies the final linear layer to penultimate features.
template <class T>
std::vector<T> final_linear(const Model<T>& m, std::span<const T> features, std::size_t n) {
  const auto L = detail::make_layout(m.spec);
  if (features.size() != n * L.dense.back().in) throw InputError("feature batch has the wrong width");
  std::vector<T> out;
  detail::dense_forward(m.params, L.dense.back(), features, n, out);
  return out;
}

template <class T>
ForwardPass<T> forward(const Model<T>& m, std::span<const T> batch, std::size_t n) {
  detail::check_batch(m.spec, batch.size(), n);
  const auto L = detail::make_layout(m.spec);
  ForwardPass<T> fp;
  fp.batch = n;
  fp.input.assign(batch.begin(), batch.end());
  switch (m.spec.arch) {
    case Arch::linear:
      fp.features = fp.input;
      break;
    case Arch::mlp: {
      fp.hidden.resize(2);
      detail::dense_forward(m.params, L.dense[0], std::span<const T>(fp.input), n, fp.hidden[0]);
      detail::relu_inplace(fp.hidden[0]);
      detail::dense_forward(m.params, L.dense[1], std::span<const T>(fp.hidden[0]), n, fp.hidden[1]);
      detail::relu_inplace(fp.hidden[1]);
      fp.features = fp.hidden[1];
      break;
    }
    case Arch::conv: {
      fp.hidden.resize(4);
      const auto& c = L.convs;
      const std::size_t plane = static_cast<std::size_t>(c[0].h) * c[0].w_px;
      const std::size_t pplane = static_cast<std::size_t>(L.pooled_h) * L.pooled_w;
      const std::size_t in_sz = m.spec.input_dim();
      std::size_t sz[4];
      for (int i = 0; i < 4; ++i)
        sz[i] = static_cast<std::size_t>(c[i].cout) * (i < 2 ? plane : pplane);
      for (int i = 0; i < 4; ++i) fp.hidden[i].assign(n * sz[i], T(0));
      const std::size_t c2 = static_cast<std::size_t>(c[1].cout);
      fp.pooled.assign(n * c2 * pplane, T(0));
      fp.pool_index.assign(n * c2 * pplane, 0);
      const std::size_t c4 = static_cast<std::size_t>(c[3].cout);
      fp.features.assign(n * c4, T(0));
      const int H = c[0].h, W = c[0].w_px;
      for (std::size_t s = 0; s < n; ++s) {
        T* a0 = fp.hidden[0].data() + s * sz[0];
        detail::conv_forward_one(m.params, c[0], fp.input.data() + s * in_sz, a0);
        for (std::size_t i = 0; i < sz[0]; ++i) a0[i] = a0[i] > T(0) ? a0[i] : T(0);
        T* a1 = fp.hidden[1].data() + s * sz[1];
        detail::conv_forward_one(m.params, c[1], a0, a1);
        for (std::size_t i = 0; i < sz[1]; ++i) a1[i] = a1[i] > T(0) ? a1[i] : T(0);
        // 2x2 max-pool (floor); a 1-pixel axis passes through unpooled.
        T* pl = fp.pooled.data() + s * c2 * pplane;
        std::uint32_t* pidx = fp.pool_index.data() + s * c2 * pplane;
        const int sy = H >= 2 ? 2 : 1, sx = W >= 2 ? 2 : 1;
        for (std::size_t ch = 0; ch < c2; ++ch) {
          for (int py = 0; py < L.pooled_h; ++py) {
            for (int px = 0; px < L.pooled_w; ++px) {
              std::uint32_t best = static_cast<std::uint32_t>(ch * plane + py * sy * W + px * sx);
              for (int dy = 0; dy < sy; ++dy)
                for (int dx = 0; dx < sx; ++dx) {
                  const auto idx = static_cast<std::uint32_t>(ch * plane + (py * sy + dy) * W + px * sx + dx);
                  if (a1[idx] > a1[best]) best = idx;
                }
              const std::size_t o = ch * pplane + static_cast<std::size_t>(py) * L.pooled_w + px;
              pl[o] = a1[best];
              pidx[o] = best;
            }
          }
        }
        T* a2 = fp.hidden[2].data() + s * sz[2];
        detail::conv_forward_one(m.params, c[2], pl, a2);
        for (std::size_t i = 0; i < sz[2]; ++i) a2[i] = a2[i] > T(0) ? a2[i] : T(0);
        T* a3 = fp.hidden[3].data() + s * sz[3];
        detail::conv_forward_one(m.params, c[3], a2, a3);
        for (std::size_t ch = 0; ch < c4; ++ch) {
          T* plane3 = a3 + ch * pplane;
          const bool active = m.channel_mask.empty() || m.channel_mask[ch];
          T sum = T(0);
          for (std::size_t i = 0; i < pplane; ++i) {
            plane3[i] = (active && plane3[i] > T(0)) ? plane3[i] : T(0);
            sum += plane3[i];
          }
          fp.features[s * c4 + ch] = sum / static_cast<T>(pplane);
        }
      }
      break;
    }
  }
  detail::dense_forward(m.params, L.dense.back(), std::span<const T>(fp.features), n, fp.logits);
  return fp;
}

// Gradient of a loss with respect to all parameters, given the loss's
// gradients w.r.t. the logits and (optionally) the penultimate features.
template <class T>
std::vector<T> backward(const Model<T>& m, const ForwardPass<T>& fp, std::span<const T> dlogits,
                        std::span<const T> dfeatures = {}) {
  const std::size_t n = fp.batch;
  const auto L = detail::make_layout(m.spec);
  const std::size_t K = m.num_classes(), P = m.feature_dim();
  if (dlogits.size() != n * K) throw InputError("dlogits has the wrong size");
  if (!dfeatures.empty() && dfeatures.size() != n * P) throw InputError("dfeatures has the wrong size");
  std::vector<T> grad(m.params.size(), T(0));
  std::vector<T> dfeat;
  const bool need_feature_grad = m.spec.arch != Arch::linear;
  detail::dense_backward(m.params, L.dense.back(), std::span<const T>(fp.features), n, dlogits, grad,
                         need_feature_grad ? &dfeat : nullptr);
  if (!need_feature_grad) return grad;  // features are the raw input
  if (!dfeatures.empty())
    for (std::size_t i = 0; i < dfeat.size(); ++i) dfeat[i] += dfeatures[i];

  if (m.spec.arch == Arch::mlp) {
    std::vector<T> d1;
    detail::relu_backward(fp.hidden[1], dfeat);
    detail::dense_backward(m.params, L.dense[1], std::span<const T>(fp.hidden[0]), n, std::span<const T>(dfeat),
                           grad, &d1);
    detail::relu_backward(fp.hidden[0], d1);
    detail::dense_backward(m.params, L.dense[0], std::span<const T>(fp.input), n, std::span<const T>(d1), grad,
                           static_cast<std::vector<T>*>(nullptr));
    return grad;
  }

  const auto& c = L.convs;
  const std::size_t plane = static_cast<std::size_t>(c[0].h) * c[0].w_px;
  const std::size_t pplane = static_cast<std::size_t>(L.pooled_h) * L.pooled_w;
  const std::size_t in_sz = m.spec.input_dim();
  const std::size_t sz0 = static_cast<std::size_t>(c[0].cout) * plane;
  const std::size_t sz1 = static_cast<std::size_t>(c[1].cout) * plane;
  const std::size_t sz2 = static_cast<std::size_t>(c[2].cout) * pplane;
  const std::size_t sz3 = static_cast<std::size_t>(c[3].cout) * pplane;
  const std::size_t c2 = static_cast<std::size_t>(c[1].cout);
  std::vector<T> g3(sz3), g2(sz2), gp(c2 * pplane), g1(sz1), g0(sz0);
  for (std::size_t s = 0; s < n; ++s) {
    const T* a3 = fp.hidden[3].data() + s * sz3;
    for (std::size_t ch = 0; ch < P; ++ch) {
      const T gv = dfeat[s * P + ch] / static_cast<T>(pplane);
      for (std::size_t i = 0; i < pplane; ++i) g3[ch * pplane + i] = a3[ch * pplane + i] > T(0) ? gv : T(0);
    }
    const T* a2 = fp.hidden[2].data() + s * sz2;
    std::fill(g2.begin(), g2.end(), T(0));
    detail::conv_backward_one(m.params, c[3], a2, g3.data(), grad, g2.data());
    for (std::size_t i = 0; i < sz2; ++i)
      if (!(a2[i] > T(0))) g2[i] = T(0);
    std::fill(gp.begin(), gp.end(), T(0));
    detail::conv_backward_one(m.params, c[2], fp.pooled.data() + s * c2 * pplane, g2.data(), grad, gp.data());
    std::fill(g1.begin(), g1.end(), T(0));
    const std::uint32_t* pidx = fp.pool_index.data() + s * c2 * pplane;
    for (std::size_t i = 0; i < c2 * pplane; ++i) g1[pidx[i]] += gp[i];
    const T* a1 = fp.hidden[1].data() + s * sz1;
    for (std::size_t i = 0; i < sz1; ++i)
      if (!(a1[i] > T(0))) g1[i] = T(0);
    const T* a0 = fp.hidden[0].data() + s * sz0;
    std::fill(g0.begin(), g0.end(), T(0));
    detail::conv_backward_one(m.params, c[1], a0, g1.data(), grad, g0.data());
    for (std::size_t i = 0; i < sz0; ++i)
      if (!(a0[i] > T(0))) g0[i] = T(0);
    detail::conv_backward_one(m.params, c[0], fp.input.data() + s * in_sz, g0.data(), grad, static_cast<T*>(nullptr));
  }
  return grad;
}

template <class T>
std::vector<T> forward_logits(const Model<T>& m, std::span<const T> batch, std::size_t n) {
  return forward(m, batch, n).logits;
}

template <class T>
std::vector<T> forward_features(const Model<T>& m, std::span<const T> batch, std::size_t n) {
  return forward(m, batch, n).features;
}

// Dataset-level helpers for float models; they check the sample shape.
inline void check_dataset_shape(const ModelSpec& spec, const Dataset& d) {
  const bool ok = spec.arch == Arch::conv ? d.input_shape == spec.input_shape : d.dim() == spec.input_dim();
  if (!ok) throw InputError("dataset '" + d.name + "' sample shape does not match the model input shape");
}

// Runs the model over `rows` of `d` in chunks; returns logits (rows x K).
inline std::vector<float> dataset_logits(const ModelCheckpoint& m, const Dataset& d,
                                         std::span<const std::size_t> rows, std::size_t chunk = 256) {
  check_dataset_shape(m.spec, d);
  std::vector<float> out;
  out.reserve(rows.size() * m.num_classes());
  for (std::size_t i = 0; i < rows.size(); i += chunk) {
    const auto part = rows.subspan(i, std::min(chunk, rows.size() - i));
    const auto x = d.gather(part);
    const auto z = forward_logits(m, std::span<const float>(x), part.size());
    out.insert(out.end(), z.begin(), z.end());
  }
  return out;
}

inline std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> r(d.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
  return r;
}

inline std::vector<float> dataset_logits(const ModelCheckpoint& m, const Dataset& d) {
  const auto rows = all_rows(d);
  return dataset_logits(m, d, rows);
}

// First index of the maximum; ties resolve to the lowest class.
template <class T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline std::vector<int> predict(const ModelCheckpoint& m, const Dataset& d) {
  const auto z = dataset_logits(m, d);
  const std::size_t K = m.num_classes();
  std::vector<int> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    out[i] = static_cast<int>(argmax(std::span<const float>(z.data() + i * K, K)));
  return out;
}

inline double accuracy(const ModelCheckpoint& m, const Dataset& d) {
  if (d.empty()) return 0.0;
  const auto p = predict(m, d);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == d.labels[i];
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

// Zeros a last-conv-layer channel: mask bit, kernel and bias.
template <class T>
void prune_channel(Model<T>& m, std::size_t channel) {
  if (m.spec.arch != Arch::conv) throw InputError("only conv models have prunable channels");
  const auto L = detail::make_layout(m.spec);
  const auto& c = L.convs[3];
  if (channel >= static_cast<std::size_t>(c.cout)) throw InputError("channel index out of range");
  m.channel_mask[channel] = 0;
  const std::size_t per = static_cast<std::size_t>(c.cin) * 9;
  std::fill(m.params.begin() + static_cast<std::ptrdiff_t>(c.w + channel * per),
            m.params.begin() + static_cast<std::ptrdiff_t>(c.w + (channel + 1) * per), T(0));
  m.params[c.b + channel] = T(0);
}

// Re-zeros parameters of pruned channels (used after optimizer steps).
template <class T>
void apply_channel_mask(Model<T>& m) {
  if (m.spec.arch != Arch::conv) return;
  for (std::size_t ch = 0; ch < m.channel_mask.size(); ++ch)
    if (!m.channel_mask[ch]) prune_channel(m, ch);
}

}  // namespace mat
