#include "lmnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "gemm.hpp"

namespace lmnet {

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + a.str() + " does not match " + b.str());
  }
}

// col[(ci*k + u)*k + v][y*w + x] = in[ci][y + d(u - k/2)][x + d(v - k/2)], zero outside.
template <typename T>
void im2col(const T* in, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, int dilation,
            T* col) {
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = h * w;
  for (std::size_t ci = 0; ci < channels; ++ci) {
    const T* src = in + ci * plane;
    for (std::size_t u = 0; u < k; ++u) {
      const std::ptrdiff_t dy = dilation * (static_cast<std::ptrdiff_t>(u) - half);
      for (std::size_t v = 0; v < k; ++v) {
        const std::ptrdiff_t dx = dilation * (static_cast<std::ptrdiff_t>(v) - half);
        T* row = col + ((ci * k + u) * k + v) * plane;
        const std::ptrdiff_t x0 = std::clamp<std::ptrdiff_t>(-dx, 0, ww);
        const std::ptrdiff_t x1 = std::clamp<std::ptrdiff_t>(ww - dx, x0, ww);
        for (std::ptrdiff_t y = 0; y < hh; ++y) {
          T* out = row + y * ww;
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= hh) {
            std::fill(out, out + ww, T{0});
            continue;
          }
          std::fill(out, out + x0, T{0});
          if (x1 > x0) std::memcpy(out + x0, src + sy * ww + x0 + dx, static_cast<std::size_t>(x1 - x0) * sizeof(T));
          std::fill(out + x1, out + ww, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: scatters each column row back onto the input plane it was read from.
template <typename T>
void col2im_accumulate(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
                       int dilation, T* in) {
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = h * w;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(channels); ++cc) {
    const auto ci = static_cast<std::size_t>(cc);
    T* dst = in + ci * plane;
    for (std::size_t u = 0; u < k; ++u) {
      const std::ptrdiff_t dy = dilation * (static_cast<std::ptrdiff_t>(u) - half);
      for (std::size_t v = 0; v < k; ++v) {
        const std::ptrdiff_t dx = dilation * (static_cast<std::ptrdiff_t>(v) - half);
        const T* row = col + ((ci * k + u) * k + v) * plane;
        const std::ptrdiff_t x0 = std::clamp<std::ptrdiff_t>(-dx, 0, ww);
        const std::ptrdiff_t x1 = std::clamp<std::ptrdiff_t>(ww - dx, x0, ww);
        const std::ptrdiff_t y0 = std::clamp<std::ptrdiff_t>(-dy, 0, hh);
        const std::ptrdiff_t y1 = std::clamp<std::ptrdiff_t>(hh - dy, y0, hh);
        for (std::ptrdiff_t y = y0; y < y1; ++y) {
          const T* src = row + y * ww;
          T* out = dst + (y + dy) * ww + dx;
          for (std::ptrdiff_t x = x0; x < x1; ++x) out[x] += src[x];
        }
      }
    }
  }
}

void check_conv_input(const Shape& in, std::size_t in_channels) {
  if (in.c != in_channels) {
    throw ShapeError("conv2d: input " + in.str() + " has " + std::to_string(in.c) +
                     " channels, kernel expects " + std::to_string(in_channels));
  }
  if (in.h == 0 || in.w == 0) {
    throw ShapeError("conv2d: input " + in.str() + " has an empty spatial extent");
  }
}

}  // namespace

template <typename T>
ConvParams<T>::ConvParams(Tensor<T> weights, std::vector<T> bias, int dilation)
    : weights_(std::move(weights)), bias_(std::move(bias)), dilation_(dilation) {
  const Shape& s = weights_.shape();
  if (s.h != s.w) {
    throw ShapeError("conv kernel must be square, got " + s.str());
  }
  if (s.h % 2 == 0) {
    throw ShapeError("conv kernel size must be odd for same padding, got " + std::to_string(s.h));
  }
  if (bias_.size() != s.n) {
    throw ShapeError("conv bias length " + std::to_string(bias_.size()) + " does not match " +
                     std::to_string(s.n) + " output channels");
  }
  if (dilation_ < 1) {
    throw std::invalid_argument("conv dilation must be >= 1, got " + std::to_string(dilation_));
  }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params) {
  const Shape in = input.shape();
  check_conv_input(in, params.in_channels());
  const std::size_t k = params.kernel_size();
  const std::size_t co = params.out_channels();
  const std::size_t reduce = in.c * k * k;
  const std::size_t plane = in.plane();

  Tensor<T> out({in.n, co, in.h, in.w});
  std::vector<T> col(k == 1 ? 0 : reduce * plane);
  for (std::size_t b = 0; b < in.n; ++b) {
    for (std::size_t o = 0; o < co; ++o) {
      std::fill_n(out.plane(b, o), plane, params.bias()[o]);
    }
    const T* rhs = input.plane(b, 0);
    if (k != 1) {
      im2col(input.plane(b, 0), in.c, in.h, in.w, k, params.dilation(), col.data());
      rhs = col.data();
    }
    detail::gemm_accumulate(co, plane, reduce, params.weights().data().data(), reduce, rhs, plane,
                            out.plane(b, 0), plane);
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params, const Tensor<T>& grad_out) {
  const Shape in = input.shape();
  check_conv_input(in, params.in_channels());
  const std::size_t k = params.kernel_size();
  const std::size_t co = params.out_channels();
  require_same_shape(grad_out.shape(), Shape{in.n, co, in.h, in.w}, "conv2d_backward grad_out");
  const std::size_t reduce = in.c * k * k;
  const std::size_t plane = in.plane();

  ConvGrads<T> g{Tensor<T>(in), Tensor<T>(params.weights().shape()), std::vector<T>(co, T{0})};

  std::vector<T> wt(reduce * co);
  const T* w = params.weights().data().data();
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t r = 0; r < reduce; ++r) wt[r * co + o] = w[o * reduce + r];
  }

  std::vector<T> col(k == 1 ? 0 : reduce * plane);
  std::vector<T> grad_col(k == 1 ? 0 : reduce * plane);
  for (std::size_t b = 0; b < in.n; ++b) {
    const T* go = grad_out.plane(b, 0);
    for (std::size_t o = 0; o < co; ++o) {
      T acc = g.bias[o];
      const T* row = go + o * plane;
      for (std::size_t p = 0; p < plane; ++p) acc += row[p];
      g.bias[o] = acc;
    }

    const T* cols = input.plane(b, 0);
    if (k != 1) {
      im2col(input.plane(b, 0), in.c, in.h, in.w, k, params.dilation(), col.data());
      cols = col.data();
    }
    detail::gemm_nt_accumulate(co, reduce, plane, go, plane, cols, plane, g.weights.data().data(), reduce);

    if (k == 1) {
      detail::gemm_accumulate(reduce, plane, co, wt.data(), co, go, plane, g.input.plane(b, 0), plane);
    } else {
      std::fill(grad_col.begin(), grad_col.end(), T{0});
      detail::gemm_accumulate(reduce, plane, co, wt.data(), co, go, plane, grad_col.data(), plane);
      col2im_accumulate(grad_col.data(), in.c, in.h, in.w, k, params.dilation(), g.input.plane(b, 0));
    }
  }
  return g;
}

template <typename T>
PoolResult<T> maxpool2(const Tensor<T>& input) {
  const Shape in = input.shape();
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    throw ShapeError("maxpool2 needs even spatial dims, got " + in.str());
  }
  const std::size_t oh = in.h / 2;
  const std::size_t ow = in.w / 2;
  PoolResult<T> r{Tensor<T>({in.n, in.c, oh, ow}), std::vector<std::size_t>(in.n * in.c * oh * ow)};
  for (std::size_t b = 0; b < in.n; ++b) {
    for (std::size_t ch = 0; ch < in.c; ++ch) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          std::size_t best = input.index(b, ch, 2 * y, 2 * x);
          const std::size_t cand[3] = {best + 1, best + in.w, best + in.w + 1};
          for (std::size_t idx : cand) {
            if (input[idx] > input[best]) best = idx;
          }
          const std::size_t o = r.output.index(b, ch, y, x);
          r.output[o] = input[best];
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                            const Shape& input_shape) {
  if (argmax.size() != grad_out.size() || grad_out.n() != input_shape.n || grad_out.c() != input_shape.c ||
      grad_out.h() * 2 != input_shape.h || grad_out.w() * 2 != input_shape.w) {
    throw ShapeError("maxpool2_backward: grad_out " + grad_out.shape().str() + " does not match input " +
                     input_shape.str());
  }
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& input) {
  const Shape in = input.shape();
  Tensor<T> out({in.n, in.c, in.h * 2, in.w * 2});
  for (std::size_t b = 0; b < in.n; ++b) {
    for (std::size_t ch = 0; ch < in.c; ++ch) {
      const T* src = input.plane(b, ch);
      T* dst = out.plane(b, ch);
      for (std::size_t y = 0; y < in.h * 2; ++y) {
        const T* s = src + (y / 2) * in.w;
        T* d = dst + y * in.w * 2;
        for (std::size_t x = 0; x < in.w * 2; ++x) d[x] = s[x / 2];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2_backward(const Tensor<T>& grad_out) {
  const Shape go = grad_out.shape();
  if (go.h % 2 != 0 || go.w % 2 != 0) {
    throw ShapeError("upsample_nearest2_backward needs even spatial dims, got " + go.str());
  }
  const std::size_t h = go.h / 2;
  const std::size_t w = go.w / 2;
  Tensor<T> g({go.n, go.c, h, w});
  for (std::size_t b = 0; b < go.n; ++b) {
    for (std::size_t ch = 0; ch < go.c; ++ch) {
      const T* src = grad_out.plane(b, ch);
      T* dst = g.plane(b, ch);
      for (std::size_t y = 0; y < h; ++y) {
        const T* r0 = src + 2 * y * go.w;
        const T* r1 = r0 + go.w;
        for (std::size_t x = 0; x < w; ++x) {
          dst[y * w + x] = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
        }
      }
    }
  }
  return g;
}

template <typename T>
BatchNormState<T>::BatchNormState(std::size_t channels, double momentum, double epsilon)
    : gamma(channels, T{1}),
      beta(channels, T{0}),
      running_mean(channels, T{0}),
      running_var(channels, T{1}),
      momentum_(momentum),
      epsilon_(epsilon) {
  if (!(momentum > 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("batch norm momentum must lie in (0,1), got " + std::to_string(momentum));
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("batch norm epsilon must be positive, got " + std::to_string(epsilon));
  }
}

namespace {

// `update` receives the running-statistic blend in Train mode; it aliases `state`.
template <typename T>
BatchNormResult<T> batchnorm_impl(const Tensor<T>& input, const BatchNormState<T>& state, Mode mode,
                                  BatchNormState<T>* update) {
  const Shape in = input.shape();
  if (in.c != state.channels()) {
    throw ShapeError("batchnorm: input " + in.str() + " has " + std::to_string(in.c) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  const std::size_t plane = in.plane();
  const std::size_t count = in.n * plane;
  if (mode == Mode::Train && count <= 1) {
    throw std::invalid_argument("batchnorm: Train mode needs more than one value per channel, got input " +
                                in.str());
  }

  BatchNormResult<T> r{Tensor<T>(in), BatchNormCache<T>{mode, Tensor<T>(in), std::vector<T>(in.c)}};
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(in.c); ++cc) {
    const auto ch = static_cast<std::size_t>(cc);
    double mean = 0.0;
    double inv_std = 0.0;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < in.n; ++b) {
        const T* x = input.plane(b, ch);
        for (std::size_t p = 0; p < plane; ++p) sum += x[p];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < in.n; ++b) {
        const T* x = input.plane(b, ch);
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = x[p] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      inv_std = 1.0 / std::sqrt(var + state.epsilon());
      const double m = state.momentum();
      update->running_mean[ch] = static_cast<T>((1.0 - m) * state.running_mean[ch] + m * mean);
      update->running_var[ch] = static_cast<T>((1.0 - m) * state.running_var[ch] + m * var);
    } else {
      mean = state.running_mean[ch];
      inv_std = 1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) + state.epsilon());
    }
    r.cache.inv_std[ch] = static_cast<T>(inv_std);
    const T g = state.gamma[ch];
    const T bt = state.beta[ch];
    for (std::size_t b = 0; b < in.n; ++b) {
      const T* x = input.plane(b, ch);
      T* xh = r.cache.normalized.plane(b, ch);
      T* y = r.output.plane(b, ch);
      for (std::size_t p = 0; p < plane; ++p) {
        xh[p] = static_cast<T>((x[p] - mean) * inv_std);
        y[p] = g * xh[p] + bt;
      }
    }
  }
  return r;
}

}  // namespace

template <typename T>
BatchNormResult<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, Mode mode) {
  return batchnorm_impl(input, state, mode, &state);
}

template <typename T>
BatchNormResult<T> batchnorm(const Tensor<T>& input, const BatchNormState<T>& state) {
  return batchnorm_impl<T>(input, state, Mode::Eval, nullptr);
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache) {
  const Shape s = grad_out.shape();
  require_same_shape(s, cache.normalized.shape(), "batchnorm_backward grad_out");
  if (s.c != state.channels()) {
    throw ShapeError("batchnorm_backward: channel count does not match state");
  }
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n * plane);
  BatchNormGrads<T> g{Tensor<T>(s), std::vector<T>(s.c), std::vector<T>(s.c)};
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(s.c); ++cc) {
    const auto ch = static_cast<std::size_t>(cc);
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < s.n; ++b) {
      const T* dy = grad_out.plane(b, ch);
      const T* xh = cache.normalized.plane(b, ch);
      for (std::size_t p = 0; p < plane; ++p) {
        sum_dy += dy[p];
        sum_dy_xh += static_cast<double>(dy[p]) * xh[p];
      }
    }
    g.beta[ch] = static_cast<T>(sum_dy);
    g.gamma[ch] = static_cast<T>(sum_dy_xh);
    const double scale = static_cast<double>(state.gamma[ch]) * cache.inv_std[ch];
    for (std::size_t b = 0; b < s.n; ++b) {
      const T* dy = grad_out.plane(b, ch);
      const T* xh = cache.normalized.plane(b, ch);
      T* dx = g.input.plane(b, ch);
      if (cache.mode == Mode::Train) {
        for (std::size_t p = 0; p < plane; ++p) {
          dx[p] = static_cast<T>(scale / count * (count * dy[p] - sum_dy - xh[p] * sum_dy_xh));
        }
      } else {
        for (std::size_t p = 0; p < plane; ++p) dx[p] = static_cast<T>(scale * dy[p]);
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  require_same_shape(input.shape(), grad_out.shape(), "relu_backward");
  Tensor<T> g(input.shape());
  auto x = input.data();
  auto dy = grad_out.data();
  auto dx = g.data();
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
  return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = T{1} / (T{1} + std::exp(-src[i]));
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  require_same_shape(output.shape(), grad_out.shape(), "sigmoid_backward");
  Tensor<T> g(output.shape());
  auto s = output.data();
  auto dy = grad_out.data();
  auto dx = g.data();
  for (std::size_t i = 0; i < s.size(); ++i) dx[i] = dy[i] * s[i] * (T{1} - s[i]);
  return g;
}

template <typename T>
DropoutResult<T> dropout(const Tensor<T>& input, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) {
    return {input, Tensor<T>(input.shape(), T{1})};
  }
  DropoutResult<T> r{Tensor<T>(input.shape()), Tensor<T>(input.shape())};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto x = input.data();
  auto y = r.output.data();
  auto m = r.mask.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = uniform01(rng) < rate ? T{0} : keep_scale;
    y[i] = x[i] * m[i];
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask) {
  require_same_shape(grad_out.shape(), mask.shape(), "dropout_backward");
  Tensor<T> g(grad_out.shape());
  auto dy = grad_out.data();
  auto m = mask.data();
  auto dx = g.data();
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * m[i];
  return g;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: " + sa.str() + " and " + sb.str() + " disagree outside the channel axis");
  }
  Tensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t plane = sa.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.plane(n, 0), sa.c * plane, out.plane(n, 0));
    std::copy_n(b.plane(n, 0), sb.c * plane, out.plane(n, sa.c));
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t first_channels) {
  const Shape s = t.shape();
  if (first_channels > s.c) {
    throw ShapeError("split_channels: cannot take " + std::to_string(first_channels) + " channels from " + s.str());
  }
  Tensor<T> a({s.n, first_channels, s.h, s.w});
  Tensor<T> b({s.n, s.c - first_channels, s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(t.plane(n, 0), first_channels * plane, a.plane(n, 0));
    std::copy_n(t.plane(n, first_channels), (s.c - first_channels) * plane, b.plane(n, 0));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
double bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "bce_loss");
  auto p = pred.data();
  auto t = target.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(static_cast<double>(p[i]), kBceClip, 1.0 - kBceClip);
    const double ti = t[i];
    sum -= ti * std::log(pc) + (1.0 - ti) * std::log(1.0 - pc);
  }
  return p.empty() ? 0.0 : sum / static_cast<double>(p.size());
}

template <typename T>
Tensor<T> bce_loss_backward(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "bce_loss_backward");
  Tensor<T> g(pred.shape());
  auto p = pred.data();
  auto t = target.data();
  auto d = g.data();
  const double count = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    if (pi < kBceClip || pi > 1.0 - kBceClip) {
      d[i] = T{0};
      continue;
    }
    const double ti = t[i];
    d[i] = static_cast<T>((-ti / pi + (1.0 - ti) / (1.0 - pi)) / count);
  }
  return g;
}

template <typename T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "mse_loss");
  auto p = pred.data();
  auto t = target.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    sum += d * d;
  }
  return p.empty() ? 0.0 : sum / static_cast<double>(p.size());
}

template <typename T>
Tensor<T> mse_loss_backward(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "mse_loss_backward");
  Tensor<T> g(pred.shape());
  auto p = pred.data();
  auto t = target.data();
  auto d = g.data();
  const double count = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    d[i] = static_cast<T>(2.0 * (static_cast<double>(p[i]) - t[i]) / count);
  }
  return g;
}

#define LMNET_INSTANTIATE_OPS(T)                                                                          \
  template class ConvParams<T>;                                                                           \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvParams<T>&);                                      \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const ConvParams<T>&, const Tensor<T>&);        \
  template PoolResult<T> maxpool2(const Tensor<T>&);                                                      \
  template Tensor<T> maxpool2_backward(const Tensor<T>&, const std::vector<std::size_t>&, const Shape&);   \
  template Tensor<T> upsample_nearest2(const Tensor<T>&);                                                 \
  template Tensor<T> upsample_nearest2_backward(const Tensor<T>&);                                        \
  template class BatchNormState<T>;                                                                       \
  template BatchNormResult<T> batchnorm(const Tensor<T>&, BatchNormState<T>&, Mode);                      \
  template BatchNormResult<T> batchnorm(const Tensor<T>&, const BatchNormState<T>&);                      \
  template BatchNormGrads<T> batchnorm_backward(const Tensor<T>&, const BatchNormState<T>&,              \
                                                const BatchNormCache<T>&);                                \
  template Tensor<T> relu(const Tensor<T>&);                                                              \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                           \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                \
  template DropoutResult<T> dropout(const Tensor<T>&, double, Rng&, Mode);                                \
  template Tensor<T> dropout_backward(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                 \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, std::size_t);                 \
  template double bce_loss(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> bce_loss_backward(const Tensor<T>&, const Tensor<T>&);                               \
  template double mse_loss(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mse_loss_backward(const Tensor<T>&, const Tensor<T>&);

LMNET_INSTANTIATE_OPS(float)
LMNET_INSTANTIATE_OPS(double)

}  // namespace lmnet
