#include "divcot/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace divcot {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

void require_rank4(const Shape& s, const std::string& layer) {
  if (s.size() != 4) throw ShapeError(layer + ": expected NxCxHxW input, got " + shape_str(s));
}

void require_channels(const Shape& s, std::size_t c, const std::string& layer) {
  require_rank4(s, layer);
  if (s[1] != c)
    throw ShapeError(layer + ": expected " + std::to_string(c) + " input channels, got shape " + shape_str(s));
}

std::size_t conv_out(std::size_t n, std::size_t stride) { return (n + 2 - 3) / stride + 1; }

// ---- Conv3x3 ------------------------------------------------------------

void im2col(const double* x, std::size_t c_in, std::size_t h, std::size_t w, std::size_t stride, std::size_t oh,
            std::size_t ow, double* cols) {
  const std::size_t p = oh * ow;
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols + ((c * 3 + ky) * 3 + kx) * p;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - 1;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - 1;
            row[oy * ow + ox] = (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                                    ? 0.0
                                    : x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
}

void col2im(const double* cols, std::size_t c_in, std::size_t h, std::size_t w, std::size_t stride, std::size_t oh,
            std::size_t ow, double* gx) {
  const std::size_t p = oh * ow;
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = cols + ((c * 3 + ky) * 3 + kx) * p;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            gx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * ow + ox];
          }
        }
      }
}

Shape out_shape(const Conv3x3& l, const Shape& s) {
  require_channels(s, l.in_channels, "conv3x3");
  if (l.stride != 1 && l.stride != 2) throw ShapeError("conv3x3: stride must be 1 or 2");
  return {s[0], l.out_channels, conv_out(s[2], l.stride), conv_out(s[3], l.stride)};
}

// Fixed summation order, independent of buffer alignment.
void add_row_sums(const double* m, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += m[r * cols + c];
    out[r] += acc;
  }
}

void add_col_sums(const double* m, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
}

Tensor forward(const Conv3x3& l, const Tensor& x, const ParamSet& ps, LayerCache* cache) {
  const Shape os = out_shape(l, x.shape());
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), oh = os[2], ow = os[3], p = oh * ow;
  const std::size_t k = l.in_channels * 9;
  Tensor out(os);
  Tensor cols({n, k, p});
  ConstMapMat weight(ps.value(l.weight).data(), static_cast<long>(l.out_channels), static_cast<long>(k));
  ConstMapVec bias(ps.value(l.bias).data(), static_cast<long>(l.out_channels));
  for (std::size_t s = 0; s < n; ++s) {
    double* col = cols.data() + s * k * p;
    im2col(x.data() + s * l.in_channels * h * w, l.in_channels, h, w, l.stride, oh, ow, col);
    MapMat y(out.data() + s * l.out_channels * p, static_cast<long>(l.out_channels), static_cast<long>(p));
    y.noalias() = weight * ConstMapMat(col, static_cast<long>(k), static_cast<long>(p));
    y.colwise() += bias;
  }
  if (cache) {
    cache->input_shape = x.shape();
    cache->aux = std::move(cols);
  }
  return out;
}

Tensor backward(const Conv3x3& l, const Tensor& gy, const LayerCache& cache, const ParamSet& ps, GradBuffer& g) {
  const Shape& is = cache.input_shape;
  const std::size_t n = is[0], h = is[2], w = is[3], oh = gy.dim(2), ow = gy.dim(3), p = oh * ow;
  const std::size_t k = l.in_channels * 9;
  const auto oc = static_cast<long>(l.out_channels);
  ConstMapMat weight(ps.value(l.weight).data(), oc, static_cast<long>(k));
  MapMat gw(g[l.weight].data(), oc, static_cast<long>(k));
  MapVec gb(g[l.bias].data(), oc);
  Tensor gx(is);
  RowMat gcol(static_cast<long>(k), static_cast<long>(p));
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat gys(gy.data() + s * l.out_channels * p, oc, static_cast<long>(p));
    ConstMapMat col(cache.aux.data() + s * k * p, static_cast<long>(k), static_cast<long>(p));
    gw.noalias() += gys * col.transpose();
    add_row_sums(gys.data(), l.out_channels, p, gb.data());
    gcol.noalias() = weight.transpose() * gys;
    col2im(gcol.data(), l.in_channels, h, w, l.stride, oh, ow, gx.data() + s * l.in_channels * h * w);
  }
  return gx;
}

// ---- Dense (pointwise) ----------------------------------------------------

Shape out_shape(const Dense& l, const Shape& s) {
  require_channels(s, l.in_features, "dense");
  return {s[0], l.out_features, s[2], s[3]};
}

Tensor forward(const Dense& l, const Tensor& x, const ParamSet& ps, LayerCache* cache) {
  const Shape os = out_shape(l, x.shape());
  const std::size_t n = x.dim(0), p = x.dim(2) * x.dim(3);
  Tensor out(os);
  ConstMapMat weight(ps.value(l.weight).data(), static_cast<long>(l.out_features), static_cast<long>(l.in_features));
  ConstMapVec bias(ps.value(l.bias).data(), static_cast<long>(l.out_features));
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat xs(x.data() + s * l.in_features * p, static_cast<long>(l.in_features), static_cast<long>(p));
    MapMat y(out.data() + s * l.out_features * p, static_cast<long>(l.out_features), static_cast<long>(p));
    y.noalias() = weight * xs;
    y.colwise() += bias;
  }
  if (cache) cache->input = x;
  return out;
}

Tensor backward(const Dense& l, const Tensor& gy, const LayerCache& cache, const ParamSet& ps, GradBuffer& g) {
  const Tensor& x = cache.input;
  const std::size_t n = x.dim(0), p = x.dim(2) * x.dim(3);
  const auto fi = static_cast<long>(l.in_features), fo = static_cast<long>(l.out_features);
  ConstMapMat weight(ps.value(l.weight).data(), fo, fi);
  MapMat gw(g[l.weight].data(), fo, fi);
  MapVec gb(g[l.bias].data(), fo);
  Tensor gx(x.shape());
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat xs(x.data() + s * l.in_features * p, fi, static_cast<long>(p));
    ConstMapMat gys(gy.data() + s * l.out_features * p, fo, static_cast<long>(p));
    gw.noalias() += gys * xs.transpose();
    add_row_sums(gys.data(), l.out_features, p, gb.data());
    MapMat(gx.data() + s * l.in_features * p, fi, static_cast<long>(p)).noalias() = weight.transpose() * gys;
  }
  return gx;
}

// ---- TokenMix -------------------------------------------------------------

Shape out_shape(const TokenMix& l, const Shape& s) {
  require_rank4(s, "token-mix");
  if (s[2] * s[3] != l.tokens)
    throw ShapeError("token-mix: expected " + std::to_string(l.tokens) + " tokens, got shape " + shape_str(s));
  return s;
}

Tensor forward(const TokenMix& l, const Tensor& x, const ParamSet& ps, LayerCache* cache) {
  out_shape(l, x.shape());
  const std::size_t n = x.dim(0), c = x.dim(1), t = l.tokens;
  Tensor out(x.shape());
  ConstMapMat weight(ps.value(l.weight).data(), static_cast<long>(t), static_cast<long>(t));
  Eigen::Map<const Eigen::RowVectorXd> bias(ps.value(l.bias).data(), static_cast<long>(t));
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat xs(x.data() + s * c * t, static_cast<long>(c), static_cast<long>(t));
    MapMat y(out.data() + s * c * t, static_cast<long>(c), static_cast<long>(t));
    y.noalias() = xs * weight.transpose();
    y.rowwise() += bias;
  }
  if (cache) cache->input = x;
  return out;
}

Tensor backward(const TokenMix& l, const Tensor& gy, const LayerCache& cache, const ParamSet& ps, GradBuffer& g) {
  const Tensor& x = cache.input;
  const std::size_t n = x.dim(0), c = x.dim(1), t = l.tokens;
  const auto tl = static_cast<long>(t), cl = static_cast<long>(c);
  ConstMapMat weight(ps.value(l.weight).data(), tl, tl);
  MapMat gw(g[l.weight].data(), tl, tl);
  Eigen::Map<Eigen::RowVectorXd> gb(g[l.bias].data(), tl);
  Tensor gx(x.shape());
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat xs(x.data() + s * c * t, cl, tl);
    ConstMapMat gys(gy.data() + s * c * t, cl, tl);
    gw.noalias() += gys.transpose() * xs;
    add_col_sums(gys.data(), c, t, gb.data());
    MapMat(gx.data() + s * c * t, cl, tl).noalias() = gys * weight;
  }
  return gx;
}

// ---- Relu -----------------------------------------------------------------

Shape out_shape(const Relu&, const Shape& s) {
  require_rank4(s, "relu");
  return s;
}

Tensor forward(const Relu&, const Tensor& x, const ParamSet&, LayerCache* cache) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < 0.0 ? 0.0 : x[i];
  if (cache) cache->input = x;
  return out;
}

Tensor backward(const Relu&, const Tensor& gy, const LayerCache& cache, const ParamSet&, GradBuffer&) {
  Tensor gx(gy.shape());
  for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = cache.input[i] > 0.0 ? gy[i] : 0.0;
  return gx;
}

// ---- GroupNorm ------------------------------------------------------------

Shape out_shape(const GroupNorm& l, const Shape& s) {
  require_channels(s, l.channels, "groupnorm");
  if (l.groups == 0 || l.channels % l.groups != 0)
    throw ShapeError("groupnorm: " + std::to_string(l.channels) + " channels not divisible into " +
                     std::to_string(l.groups) + " groups");
  return s;
}

Tensor forward(const GroupNorm& l, const Tensor& x, const ParamSet& ps, LayerCache* cache) {
  out_shape(l, x.shape());
  const std::size_t n = x.dim(0), p = x.dim(2) * x.dim(3), cg = l.channels / l.groups;
  const std::size_t group_len = cg * p;
  const Tensor& gamma = ps.value(l.gamma);
  const Tensor& beta = ps.value(l.beta);
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(n * l.groups);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t gi = 0; gi < l.groups; ++gi) {
      const std::size_t base = (s * l.channels + gi * cg) * p;
      double mean = 0.0;
      for (std::size_t i = 0; i < group_len; ++i) mean += x[base + i];
      mean /= static_cast<double>(group_len);
      double var = 0.0;
      for (std::size_t i = 0; i < group_len; ++i) {
        const double d = x[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_len);
      const double is = 1.0 / std::sqrt(var + l.eps);
      inv_std[s * l.groups + gi] = is;
      for (std::size_t cc = 0; cc < cg; ++cc) {
        const std::size_t ch = gi * cg + cc;
        for (std::size_t i = 0; i < p; ++i) {
          const std::size_t idx = base + cc * p + i;
          xhat[idx] = (x[idx] - mean) * is;
          out[idx] = gamma[ch] * xhat[idx] + beta[ch];
        }
      }
    }
  if (cache) {
    cache->aux = std::move(xhat);
    cache->stats = std::move(inv_std);
  }
  return out;
}

Tensor backward(const GroupNorm& l, const Tensor& gy, const LayerCache& cache, const ParamSet& ps, GradBuffer& g) {
  const Tensor& xhat = cache.aux;
  const std::size_t n = gy.dim(0), p = gy.dim(2) * gy.dim(3), cg = l.channels / l.groups;
  const std::size_t group_len = cg * p;
  const Tensor& gamma = ps.value(l.gamma);
  Tensor& ggamma = g[l.gamma];
  Tensor& gbeta = g[l.beta];
  Tensor gx(gy.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t gi = 0; gi < l.groups; ++gi) {
      const std::size_t base = (s * l.channels + gi * cg) * p;
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t cc = 0; cc < cg; ++cc) {
        const std::size_t ch = gi * cg + cc;
        double gg = 0.0, gbsum = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
          const std::size_t idx = base + cc * p + i;
          gg += gy[idx] * xhat[idx];
          gbsum += gy[idx];
          const double gxh = gy[idx] * gamma[ch];
          sum_g += gxh;
          sum_gx += gxh * xhat[idx];
        }
        ggamma[ch] += gg;
        gbeta[ch] += gbsum;
      }
      const double mean_g = sum_g / static_cast<double>(group_len);
      const double mean_gx = sum_gx / static_cast<double>(group_len);
      const double is = cache.stats[s * l.groups + gi];
      for (std::size_t cc = 0; cc < cg; ++cc) {
        const std::size_t ch = gi * cg + cc;
        for (std::size_t i = 0; i < p; ++i) {
          const std::size_t idx = base + cc * p + i;
          gx[idx] = is * (gy[idx] * gamma[ch] - mean_g - xhat[idx] * mean_gx);
        }
      }
    }
  return gx;
}

// ---- Upsample -------------------------------------------------------------

Shape out_shape(const Upsample& l, const Shape& s) {
  require_rank4(s, "upsample");
  if (l.factor == 0) throw ShapeError("upsample: factor must be positive");
  return {s[0], s[1], s[2] * l.factor, s[3] * l.factor};
}

Tensor forward(const Upsample& l, const Tensor& x, const ParamSet&, LayerCache* cache) {
  const Shape os = out_shape(l, x.shape());
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), k = l.factor;
  Tensor out(os);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * h * w;
    double* dst = out.data() + pl * h * w * k * k;
    for (std::size_t y = 0; y < h * k; ++y)
      for (std::size_t xx = 0; xx < w * k; ++xx) dst[y * w * k + xx] = src[(y / k) * w + xx / k];
  }
  if (cache) cache->input_shape = x.shape();
  return out;
}

Tensor backward(const Upsample& l, const Tensor& gy, const LayerCache& cache, const ParamSet&, GradBuffer&) {
  const Shape& is = cache.input_shape;
  const std::size_t planes = is[0] * is[1], h = is[2], w = is[3], k = l.factor;
  Tensor gx(is);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = gy.data() + pl * h * w * k * k;
    double* dst = gx.data() + pl * h * w;
    for (std::size_t y = 0; y < h * k; ++y)
      for (std::size_t xx = 0; xx < w * k; ++xx) dst[(y / k) * w + xx / k] += src[y * w * k + xx];
  }
  return gx;
}

// ---- SpaceToDepth ---------------------------------------------------------

Shape out_shape(const SpaceToDepth& l, const Shape& s) {
  require_rank4(s, "space-to-depth");
  if (l.factor == 0 || s[2] % l.factor || s[3] % l.factor)
    throw ShapeError("space-to-depth: spatial extents of " + shape_str(s) + " not divisible by " +
                     std::to_string(l.factor));
  return {s[0], s[1] * l.factor * l.factor, s[2] / l.factor, s[3] / l.factor};
}

template <bool kForward>
void space_to_depth_copy(const Shape& in, std::size_t k, const double* from, double* to) {
  const std::size_t n = in[0], c = in[1], h = in[2], w = in[3], oh = h / k, ow = w / k;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t src = ((s * c + ch) * h + y) * w + x;
          const std::size_t oc = (ch * k + y % k) * k + x % k;
          const std::size_t dst = ((s * c * k * k + oc) * oh + y / k) * ow + x / k;
          if constexpr (kForward)
            to[dst] = from[src];
          else
            to[src] = from[dst];
        }
}

Tensor forward(const SpaceToDepth& l, const Tensor& x, const ParamSet&, LayerCache* cache) {
  Tensor out(out_shape(l, x.shape()));
  space_to_depth_copy<true>(x.shape(), l.factor, x.data(), out.data());
  if (cache) cache->input_shape = x.shape();
  return out;
}

Tensor backward(const SpaceToDepth& l, const Tensor& gy, const LayerCache& cache, const ParamSet&, GradBuffer&) {
  Tensor gx(cache.input_shape);
  space_to_depth_copy<false>(cache.input_shape, l.factor, gy.data(), gx.data());
  return gx;
}

// ---- Softmax over channels -------------------------------------------------

Shape out_shape(const SoftmaxChannels&, const Shape& s) {
  require_rank4(s, "softmax");
  return s;
}

Tensor forward(const SoftmaxChannels&, const Tensor& x, const ParamSet&, LayerCache* cache) {
  Tensor y = softmax_channels(x);
  if (cache) cache->aux = y;
  return y;
}

Tensor backward(const SoftmaxChannels&, const Tensor& gy, const LayerCache& cache, const ParamSet&, GradBuffer&) {
  const Tensor& y = cache.aux;
  const std::size_t n = y.dim(0), c = y.dim(1), p = y.dim(2) * y.dim(3);
  Tensor gx(y.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < p; ++i) {
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) dot += gy[(s * c + ch) * p + i] * y[(s * c + ch) * p + i];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t idx = (s * c + ch) * p + i;
        gx[idx] = y[idx] * (gy[idx] - dot);
      }
    }
  return gx;
}

}  // namespace

Tensor softmax_channels(const Tensor& logits) {
  require_rank4(logits.shape(), "softmax");
  const std::size_t n = logits.dim(0), c = logits.dim(1), p = logits.dim(2) * logits.dim(3);
  Tensor out(logits.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < p; ++i) {
      double mx = logits[(s * c) * p + i];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, logits[(s * c + ch) * p + i]);
      double z = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t idx = (s * c + ch) * p + i;
        out[idx] = std::exp(logits[idx] - mx);
        z += out[idx];
      }
      for (std::size_t ch = 0; ch < c; ++ch) out[(s * c + ch) * p + i] /= z;
    }
  return out;
}

std::string layer_name(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const Conv3x3& l) { return "conv3x3(stride " + std::to_string(l.stride) + ")"; },
                        [](const Dense&) { return std::string("dense"); },
                        [](const TokenMix&) { return std::string("token-mix-dense"); },
                        [](const Relu&) { return std::string("relu"); },
                        [](const GroupNorm&) { return std::string("groupnorm"); },
                        [](const Upsample& l) { return "nearest-upsample(" + std::to_string(l.factor) + ")"; },
                        [](const SpaceToDepth& l) { return "patchify(" + std::to_string(l.factor) + ")"; },
                        [](const SoftmaxChannels&) { return std::string("softmax-over-channels"); },
                    },
                    layer);
}

Shape layer_output_shape(const Layer& layer, const Shape& input) {
  return std::visit([&](const auto& l) { return out_shape(l, input); }, layer);
}

Tensor layer_forward(const Layer& layer, const Tensor& input, const ParamSet& params) {
  return std::visit([&](const auto& l) { return forward(l, input, params, nullptr); }, layer);
}

Tensor layer_forward(const Layer& layer, const Tensor& input, const ParamSet& params, LayerCache& cache) {
  return std::visit([&](const auto& l) { return forward(l, input, params, &cache); }, layer);
}

Tensor layer_backward(const Layer& layer, const Tensor& grad_output, const LayerCache& cache, const ParamSet& params,
                      GradBuffer& grads) {
  return std::visit([&](const auto& l) { return backward(l, grad_output, cache, params, grads); }, layer);
}

}  // namespace divcot
