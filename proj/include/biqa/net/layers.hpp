#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "biqa/error.hpp"
#include "biqa/net/tensor.hpp"
#include "biqa/rng.hpp"

namespace biqa::net {

enum class LayerKind { conv2d, relu, gap, fully_connected, dropout, concat, softmax };
enum class Padding { valid, same };
enum class Mode { train, eval };

const char* to_string(LayerKind kind) noexcept;
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::valid;
  int in_features = 0;
  int out_features = 0;
  double drop_prob = 0.0;

  static LayerSpec conv(int in, int out, int kernel, int stride = 1, int dilation = 1,
                        Padding padding = Padding::valid) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = kernel;
    s.stride = stride;
    s.dilation = dilation;
    s.padding = padding;
    return s;
  }
  static LayerSpec fc(int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::fully_connected;
    s.in_features = in;
    s.out_features = out;
    return s;
  }
  static LayerSpec dropout(double p) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.drop_prob = p;
    return s;
  }
  static LayerSpec of(LayerKind kind) {
    LayerSpec s;
    s.kind = kind;
    return s;
  }

  bool has_params() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::fully_connected; }

  int pad() const noexcept { return padding == Padding::same ? dilation * (kernel - 1) / 2 : 0; }

  /// Output spatial extent of a conv layer for a given input extent.
  int conv_out(int extent) const noexcept {
    return (extent + 2 * pad() - dilation * (kernel - 1) - 1) / stride + 1;
  }

  void validate() const {
    switch (kind) {
      case LayerKind::conv2d:
        if (in_channels <= 0 || out_channels <= 0) fail(ErrorCode::invalid_config, "conv channels must be positive");
        if (kernel <= 0 || kernel % 2 == 0) fail(ErrorCode::invalid_config, "conv kernel must be odd-sized");
        if (stride <= 0 || dilation <= 0) fail(ErrorCode::invalid_config, "conv stride/dilation must be positive");
        break;
      case LayerKind::fully_connected:
        if (in_features <= 0 || out_features <= 0) fail(ErrorCode::invalid_config, "fc widths must be positive");
        break;
      case LayerKind::dropout:
        if (!(drop_prob >= 0.0 && drop_prob < 1.0))
          fail(ErrorCode::invalid_config, "drop probability must lie in [0, 1)");
        break;
      default:
        break;
    }
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

template <class T>
struct LayerParams {
  Tensor<T> weight;  // conv [O, C, K, K]; fc [O, I]
  Tensor<T> bias;    // [O]

  template <class U>
  LayerParams<U> cast() const {
    return {weight.template cast<U>(), bias.template cast<U>()};
  }
};

/// What backward needs from the matching forward call.
template <class T>
struct Cache {
  LayerKind kind = LayerKind::relu;
  Shape input_shape;
  Tensor<T> saved;  // conv/fc: input; relu: input; dropout: mask; softmax: output
  bool valid = false;
};

template <class T>
struct ConcatCache {
  Shape a_shape;
  Shape b_shape;
  bool valid = false;
};

inline const char* to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::gap: return "gap";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::dropout: return "dropout";
    case LayerKind::concat: return "concat";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

inline LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::conv2d, LayerKind::relu, LayerKind::gap, LayerKind::fully_connected, LayerKind::dropout,
                 LayerKind::concat, LayerKind::softmax})
    if (name == to_string(k)) return k;
  fail(ErrorCode::invalid_config, "unknown layer kind '" + name + "'");
}

/// Fan-in scaled Gaussian weights (std = gain * sqrt(2 / fan_in)), zero biases.
template <class T>
LayerParams<T> init_params(const LayerSpec& spec, RngStream& rng, double gain = 1.0) {
  spec.validate();
  LayerParams<T> p;
  if (spec.kind == LayerKind::conv2d) {
    const auto k = static_cast<std::size_t>(spec.kernel);
    p.weight = Tensor<T>({static_cast<std::size_t>(spec.out_channels), static_cast<std::size_t>(spec.in_channels), k, k});
    p.bias = Tensor<T>({static_cast<std::size_t>(spec.out_channels)});
    const double sd = gain * std::sqrt(2.0 / static_cast<double>(spec.in_channels * spec.kernel * spec.kernel));
    for (auto& w : p.weight.values()) w = static_cast<T>(rng.normal(0.0, sd));
  } else if (spec.kind == LayerKind::fully_connected) {
    p.weight = Tensor<T>({static_cast<std::size_t>(spec.out_features), static_cast<std::size_t>(spec.in_features)});
    p.bias = Tensor<T>({static_cast<std::size_t>(spec.out_features)});
    const double sd = gain * std::sqrt(2.0 / static_cast<double>(spec.in_features));
    for (auto& w : p.weight.values()) w = static_cast<T>(rng.normal(0.0, sd));
  }
  return p;
}

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank)
    fail(ErrorCode::shape_mismatch, std::string(what) + " expects a rank-" + std::to_string(rank) +
                                        " input, got " + shape_string(s));
}

// cols[(c*K + ky)*K + kx][oy*Wo + ox] = x[c][oy*s - pad + ky*d][ox*s - pad + kx*d] (0 outside)
template <class T>
void im2col(const T* x, int C, int H, int W, const LayerSpec& s, int Ho, int Wo, T* cols) {
  const int K = s.kernel, pad = s.pad();
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * hw;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s.stride - pad + ky * s.dilation;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s.stride - pad + kx * s.dilation;
            row[static_cast<std::size_t>(oy) * Wo + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x[(static_cast<std::size_t>(c) * H + iy) * W + ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, int C, int H, int W, const LayerSpec& s, int Ho, int Wo, T* dx) {
  const int K = s.kernel, pad = s.pad();
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * hw;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s.stride - pad + ky * s.dilation;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s.stride - pad + kx * s.dilation;
            if (ix >= 0 && ix < W) dx[(static_cast<std::size_t>(c) * H + iy) * W + ix] += row[static_cast<std::size_t>(oy) * Wo + ox];
          }
        }
      }
}

template <class T>
Tensor<T> conv_forward(const LayerSpec& s, const LayerParams<T>& p, const Tensor<T>& x) {
  require_rank(x.shape(), 4, "conv2d");
  const int N = static_cast<int>(x.dim(0)), C = static_cast<int>(x.dim(1)), H = static_cast<int>(x.dim(2)),
            W = static_cast<int>(x.dim(3));
  if (C != s.in_channels)
    fail(ErrorCode::shape_mismatch, "conv2d expects " + std::to_string(s.in_channels) + " channels, got " +
                                        std::to_string(C));
  const int Ho = s.conv_out(H), Wo = s.conv_out(W);
  if (Ho <= 0 || Wo <= 0) fail(ErrorCode::shape_mismatch, "conv2d input " + shape_string(x.shape()) + " too small");
  const int O = s.out_channels;
  const std::size_t ckk = static_cast<std::size_t>(C) * s.kernel * s.kernel;
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  Tensor<T> y({x.dim(0), static_cast<std::size_t>(O), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
  std::vector<T> cols(ckk * hw);
  for (int n = 0; n < N; ++n) {
    im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, s, Ho, Wo, cols.data());
    T* out = y.data() + static_cast<std::size_t>(n) * O * hw;
    for (int o = 0; o < O; ++o) {
      T* orow = out + static_cast<std::size_t>(o) * hw;
      std::fill(orow, orow + hw, p.bias[static_cast<std::size_t>(o)]);
      const T* wrow = p.weight.data() + static_cast<std::size_t>(o) * ckk;
      for (std::size_t r = 0; r < ckk; ++r) {
        const T w = wrow[r];
        const T* crow = cols.data() + r * hw;
        for (std::size_t i = 0; i < hw; ++i) orow[i] += w * crow[i];
      }
    }
  }
  return y;
}

template <class T>
std::pair<Tensor<T>, LayerParams<T>> conv_backward(const LayerSpec& s, const LayerParams<T>& p, const Tensor<T>& x,
                                                   const Tensor<T>& g) {
  const int N = static_cast<int>(x.dim(0)), C = static_cast<int>(x.dim(1)), H = static_cast<int>(x.dim(2)),
            W = static_cast<int>(x.dim(3));
  const int Ho = s.conv_out(H), Wo = s.conv_out(W), O = s.out_channels;
  if (g.shape() != Shape{x.dim(0), static_cast<std::size_t>(O), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)})
    fail(ErrorCode::shape_mismatch, "conv2d upstream gradient has shape " + shape_string(g.shape()));
  const std::size_t ckk = static_cast<std::size_t>(C) * s.kernel * s.kernel;
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  LayerParams<T> grads{Tensor<T>(p.weight.shape()), Tensor<T>(p.bias.shape())};
  Tensor<T> dx(x.shape());
  std::vector<T> cols(ckk * hw), dcols(ckk * hw);
  for (int n = 0; n < N; ++n) {
    im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, s, Ho, Wo, cols.data());
    std::fill(dcols.begin(), dcols.end(), T(0));
    const T* gn = g.data() + static_cast<std::size_t>(n) * O * hw;
    for (int o = 0; o < O; ++o) {
      const T* grow = gn + static_cast<std::size_t>(o) * hw;
      T bsum = 0;
      for (std::size_t i = 0; i < hw; ++i) bsum += grow[i];
      grads.bias[static_cast<std::size_t>(o)] += bsum;
      const T* wrow = p.weight.data() + static_cast<std::size_t>(o) * ckk;
      T* dwrow = grads.weight.data() + static_cast<std::size_t>(o) * ckk;
      for (std::size_t r = 0; r < ckk; ++r) {
        const T* crow = cols.data() + r * hw;
        T* drow = dcols.data() + r * hw;
        const T w = wrow[r];
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) {
          acc += grow[i] * crow[i];
          drow[i] += w * grow[i];
        }
        dwrow[r] += acc;
      }
    }
    col2im_add(dcols.data(), C, H, W, s, Ho, Wo, dx.data() + static_cast<std::size_t>(n) * C * H * W);
  }
  return {std::move(dx), std::move(grads)};
}

}  // namespace detail

/// Runs one unary layer. Concat has its own two-input entry point.
template <class T>
std::pair<Tensor<T>, Cache<T>> forward(const LayerSpec& spec, const LayerParams<T>& params, const Tensor<T>& x,
                                       Mode mode, RngStream& rng) {
  spec.validate();
  Cache<T> cache;
  cache.kind = spec.kind;
  cache.input_shape = x.shape();
  cache.valid = true;
  switch (spec.kind) {
    case LayerKind::conv2d:
      cache.saved = x;
      return {detail::conv_forward(spec, params, x), std::move(cache)};
    case LayerKind::relu: {
      Tensor<T> y = x;
      for (auto& v : y.values()) v = v > T(0) ? v : T(0);
      cache.saved = x;
      return {std::move(y), std::move(cache)};
    }
    case LayerKind::gap: {
      detail::require_rank(x.shape(), 4, "gap");
      const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
      Tensor<T> y({N, C});
      for (std::size_t i = 0; i < N * C; ++i) {
        T acc = 0;
        const T* src = x.data() + i * hw;
        for (std::size_t k = 0; k < hw; ++k) acc += src[k];
        y[i] = acc / static_cast<T>(hw);
      }
      return {std::move(y), std::move(cache)};
    }
    case LayerKind::fully_connected: {
      detail::require_rank(x.shape(), 2, "fully_connected");
      const std::size_t N = x.dim(0), I = x.dim(1), O = static_cast<std::size_t>(spec.out_features);
      if (I != static_cast<std::size_t>(spec.in_features))
        fail(ErrorCode::shape_mismatch, "fully_connected expects " + std::to_string(spec.in_features) +
                                            " features, got " + std::to_string(I));
      Tensor<T> y({N, O});
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) {
          T acc = params.bias[o];
          const T* w = params.weight.data() + o * I;
          const T* in = x.data() + n * I;
          for (std::size_t i = 0; i < I; ++i) acc += w[i] * in[i];
          y[n * O + o] = acc;
        }
      cache.saved = x;
      return {std::move(y), std::move(cache)};
    }
    case LayerKind::dropout: {
      Tensor<T> mask(x.shape(), T(1));
      if (mode == Mode::train && spec.drop_prob > 0.0) {
        const T scale = static_cast<T>(1.0 / (1.0 - spec.drop_prob));
        for (auto& m : mask.values()) m = rng.bernoulli(spec.drop_prob) ? T(0) : scale;
      }
      Tensor<T> y = x;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
      cache.saved = std::move(mask);
      return {std::move(y), std::move(cache)};
    }
    case LayerKind::softmax: {
      detail::require_rank(x.shape(), 2, "softmax");
      const std::size_t N = x.dim(0), K = x.dim(1);
      Tensor<T> y(x.shape());
      for (std::size_t n = 0; n < N; ++n) {
        const T* in = x.data() + n * K;
        T* out = y.data() + n * K;
        const T mx = *std::max_element(in, in + K);
        T sum = 0;
        for (std::size_t k = 0; k < K; ++k) sum += out[k] = std::exp(in[k] - mx);
        for (std::size_t k = 0; k < K; ++k) out[k] /= sum;
      }
      cache.saved = y;
      return {std::move(y), std::move(cache)};
    }
    case LayerKind::concat:
      fail(ErrorCode::shape_mismatch, "concat takes two inputs; use concat_forward");
  }
  fail(ErrorCode::invalid_config, "unknown layer kind");
}

/// Exact gradients with respect to the layer input and parameters.
template <class T>
std::pair<Tensor<T>, LayerParams<T>> backward(const LayerSpec& spec, const LayerParams<T>& params,
                                              const Cache<T>& cache, const Tensor<T>& g) {
  if (!cache.valid || cache.kind != spec.kind)
    fail(ErrorCode::state, std::string("stale or mismatched cache for ") + to_string(spec.kind) + " backward");
  switch (spec.kind) {
    case LayerKind::conv2d:
      return detail::conv_backward(spec, params, cache.saved, g);
    case LayerKind::relu:
    case LayerKind::dropout: {
      if (g.shape() != cache.input_shape)
        fail(ErrorCode::shape_mismatch, std::string(to_string(spec.kind)) + " upstream gradient shape mismatch");
      Tensor<T> dx = g;
      if (spec.kind == LayerKind::relu) {
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (!(cache.saved[i] > T(0))) dx[i] = T(0);
      } else {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= cache.saved[i];
      }
      return {std::move(dx), {}};
    }
    case LayerKind::gap: {
      const auto& s = cache.input_shape;
      if (g.shape() != Shape{s[0], s[1]}) fail(ErrorCode::shape_mismatch, "gap upstream gradient shape mismatch");
      const std::size_t hw = s[2] * s[3];
      Tensor<T> dx(s);
      for (std::size_t i = 0; i < s[0] * s[1]; ++i) {
        const T v = g[i] / static_cast<T>(hw);
        std::fill(dx.data() + i * hw, dx.data() + (i + 1) * hw, v);
      }
      return {std::move(dx), {}};
    }
    case LayerKind::fully_connected: {
      const auto& x = cache.saved;
      const std::size_t N = x.dim(0), I = x.dim(1), O = static_cast<std::size_t>(spec.out_features);
      if (g.shape() != Shape{N, O}) fail(ErrorCode::shape_mismatch, "fully_connected upstream gradient shape mismatch");
      LayerParams<T> grads{Tensor<T>(params.weight.shape()), Tensor<T>(params.bias.shape())};
      Tensor<T> dx(x.shape());
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) {
          const T go = g[n * O + o];
          grads.bias[o] += go;
          const T* w = params.weight.data() + o * I;
          T* dw = grads.weight.data() + o * I;
          const T* in = x.data() + n * I;
          T* din = dx.data() + n * I;
          for (std::size_t i = 0; i < I; ++i) {
            dw[i] += go * in[i];
            din[i] += go * w[i];
          }
        }
      return {std::move(dx), std::move(grads)};
    }
    case LayerKind::softmax: {
      const auto& y = cache.saved;
      if (g.shape() != y.shape()) fail(ErrorCode::shape_mismatch, "softmax upstream gradient shape mismatch");
      const std::size_t N = y.dim(0), K = y.dim(1);
      Tensor<T> dx(y.shape());
      for (std::size_t n = 0; n < N; ++n) {
        T dot = 0;
        for (std::size_t k = 0; k < K; ++k) dot += g[n * K + k] * y[n * K + k];
        for (std::size_t k = 0; k < K; ++k) dx[n * K + k] = y[n * K + k] * (g[n * K + k] - dot);
      }
      return {std::move(dx), {}};
    }
    case LayerKind::concat:
      fail(ErrorCode::shape_mismatch, "concat takes two inputs; use concat_backward");
  }
  fail(ErrorCode::invalid_config, "unknown layer kind");
}

/// Concatenates along axis 1 (channels for maps, features for vectors);
/// every other extent must agree.
template <class T>
std::pair<Tensor<T>, ConcatCache<T>> concat_forward(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() < 2)
    fail(ErrorCode::shape_mismatch, "concat inputs differ in rank: " + shape_string(a.shape()) + " vs " +
                                        shape_string(b.shape()));
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != 1 && a.dim(i) != b.dim(i))
      fail(ErrorCode::shape_mismatch, "concat spatial/batch extents differ: " + shape_string(a.shape()) + " vs " +
                                          shape_string(b.shape()));
  Shape out_shape = a.shape();
  out_shape[1] = a.dim(1) + b.dim(1);
  const std::size_t inner = shape_size(a.shape()) / (a.dim(0) * a.dim(1));
  const std::size_t na = a.dim(1) * inner, nb = b.dim(1) * inner;
  Tensor<T> y(out_shape);
  for (std::size_t n = 0; n < a.dim(0); ++n) {
    std::copy(a.data() + n * na, a.data() + (n + 1) * na, y.data() + n * (na + nb));
    std::copy(b.data() + n * nb, b.data() + (n + 1) * nb, y.data() + n * (na + nb) + na);
  }
  return {std::move(y), ConcatCache<T>{a.shape(), b.shape(), true}};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const ConcatCache<T>& cache, const Tensor<T>& g) {
  if (!cache.valid) fail(ErrorCode::state, "stale concat cache");
  Shape expect = cache.a_shape;
  expect[1] += cache.b_shape[1];
  if (g.shape() != expect) fail(ErrorCode::shape_mismatch, "concat upstream gradient shape mismatch");
  const std::size_t inner = shape_size(cache.a_shape) / (cache.a_shape[0] * cache.a_shape[1]);
  const std::size_t na = cache.a_shape[1] * inner, nb = cache.b_shape[1] * inner;
  Tensor<T> da(cache.a_shape), db(cache.b_shape);
  for (std::size_t n = 0; n < cache.a_shape[0]; ++n) {
    std::copy(g.data() + n * (na + nb), g.data() + n * (na + nb) + na, da.data() + n * na);
    std::copy(g.data() + n * (na + nb) + na, g.data() + (n + 1) * (na + nb), db.data() + n * nb);
  }
  return {std::move(da), std::move(db)};
}

}  // namespace biqa::net
