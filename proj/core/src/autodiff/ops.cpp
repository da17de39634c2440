#include "mrkd/autodiff/ops.hpp"

#include <Eigen/Core>
#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <numeric>

namespace mrkd::ad {
namespace {

// Every training step allocates and frees the same few-megabyte activation
// buffers. Keep them on the heap rather than mapping fresh zeroed pages each
// time.
[[maybe_unused]] const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
  return true;
}();

// Sum of f(0..n-1) in a fixed order: 16 interleaved partial sums, then the
// tail. Vectorises without depending on where the data happens to start.
template <typename T, typename F>
T lane_sum(std::size_t n, F&& f) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += f(i + l);
  }
  T total{0};
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  for (; i < n; ++i) total += f(i);
  return total;
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::kShape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad_h, pad_w, oh, ow;
  std::size_t k() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ws, Conv2dOptions opt) {
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1]) shape_error("conv2d", xs, ws);
  if (opt.stride == 0) fail(ErrorKind::kParameter, "conv2d: stride must be >= 1");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], opt.stride, 0, 0, 0, 0};
  if (opt.padding == Padding::kSame) {
    g.pad_h = (g.kh - 1) / 2;
    g.pad_w = (g.kw - 1) / 2;
  }
  if (g.h + 2 * g.pad_h < g.kh || g.w + 2 * g.pad_w < g.kw) shape_error("conv2d", xs, ws);
  g.oh = (g.h + 2 * g.pad_h - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad_w - g.kw) / g.stride + 1;
  return g;
}

// Output columns [lo, hi) whose input column ox * stride + kx - pad lies inside [0, w).
inline void valid_range(const ConvGeometry& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad_w);
  const auto k = static_cast<std::ptrdiff_t>(kx);
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  std::ptrdiff_t first = pad > k ? (pad - k + s - 1) / s : 0;
  std::ptrdiff_t last = (w - 1 + pad - k) / s + 1;  // exclusive
  first = std::min<std::ptrdiff_t>(first, static_cast<std::ptrdiff_t>(g.ow));
  last = std::clamp<std::ptrdiff_t>(last, first, static_cast<std::ptrdiff_t>(g.ow));
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(last);
}

// cols is K x (n * OH * OW) for `n` samples starting at x, row = (c, ky, kx),
// column = (sample, oy, ox).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t n, T* cols) {
  const std::size_t p = g.positions();
  const std::size_t np = n * p;
  if (g.stride == 1 && g.oh == g.h && g.ow == g.w) {
    // Each row is the input plane shifted by (ky - pad_h, kx - pad_w): one
    // flat copy, then zero the columns that wrapped across a row edge.
    const auto pp = static_cast<std::ptrdiff_t>(p);
    for (std::size_t c = 0; c < g.c; ++c) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - static_cast<std::ptrdiff_t>(g.pad_h);
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad_w);
          const std::ptrdiff_t shift = dy * static_cast<std::ptrdiff_t>(g.w) + dx;
          const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-shift, 0, pp);
          const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(pp - shift, lo, pp);
          T* row = cols + ((c * g.kh + ky) * g.kw + kx) * np;
          for (std::size_t s = 0; s < n; ++s) {
            const T* plane = x + (s * g.c + c) * p;
            T* out = row + s * p;
            std::fill(out, out + lo, T{0});
            std::copy(plane + lo + shift, plane + hi + shift, out + lo);
            std::fill(out + hi, out + pp, T{0});
            if (dx < 0) {
              for (std::size_t oy = 0; oy < g.oh; ++oy) std::fill_n(out + oy * g.w, -dx, T{0});
            } else if (dx > 0) {
              for (std::size_t oy = 0; oy < g.oh; ++oy) std::fill_n(out + oy * g.w + g.w - dx, dx, T{0});
            }
          }
        }
      }
    }
    return;
  }
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        std::size_t lo, hi;
        valid_range(g, kx, lo, hi);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad_w);
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * np;
        for (std::size_t s = 0; s < n; ++s) {
          const T* plane = x + (s * g.c + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            T* out = row + s * p + oy * g.ow;
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(out, out + g.ow, T{0});
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * g.w;
            std::fill(out, out + lo, T{0});
            std::fill(out + hi, out + g.ow, T{0});
            if (g.stride == 1) {
              std::copy(src + (static_cast<std::ptrdiff_t>(lo) + shift), src + (static_cast<std::ptrdiff_t>(hi) + shift),
                        out + lo);
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) {
                out[ox] = src[static_cast<std::ptrdiff_t>(ox * g.stride) + shift];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, std::size_t n, T* gx) {
  const std::size_t p = g.positions();
  const std::size_t np = n * p;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        std::size_t lo, hi;
        valid_range(g, kx, lo, hi);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad_w);
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * np;
        for (std::size_t s = 0; s < n; ++s) {
          T* plane = gx + (s * g.c + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * g.w;
            const T* in = row + s * p + oy * g.ow;
            for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox * g.stride) + shift] += in[ox];
          }
        }
      }
    }
  }
}

// Samples per GEMM so that one column block stays around L2 size.
inline std::size_t conv_chunk(const ConvGeometry& g) {
  constexpr std::size_t kTargetFloats = std::size_t{1} << 17;
  const std::size_t per_sample = g.k() * g.positions();
  return std::clamp<std::size_t>(kTargetFloats / std::max<std::size_t>(per_sample, 1), 1, g.n);
}

template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[3];
  return buffers[slot];
}

template <typename T>
T* scratch_data(int slot, std::size_t size) {
  auto& b = scratch<T>(slot);
  if (b.size() < size) b.resize(size);
  return b.data();
}

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
  auto& buf = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              Conv2dOptions options) {
  const ConvGeometry g = conv_geometry(x.shape(), weight.shape(), options);
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != g.o)) {
    shape_error("conv2d(bias)", weight.shape(), bias->shape());
  }
  const std::size_t k = g.k();
  const std::size_t p = g.positions();
  const std::size_t in_plane = g.c * g.h * g.w;
  const std::size_t out_plane = g.o * p;
  const std::size_t chunk = conv_chunk(g);
  const ConstMatMap<T> wmat(weight.value().data(), g.o, k);

  Tensor<T> out(Shape{g.n, g.o, g.oh, g.ow});
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t cn = std::min(chunk, g.n - n0);
    T* cols = scratch_data<T>(0, k * cn * p);
    im2col(x.value().data() + n0 * in_plane, g, cn, cols);
    const ConstMatMap<T> cmat(cols, k, cn * p);
    if (cn == 1) {
      MatMap<T>(out.data() + n0 * out_plane, g.o, p).noalias() = wmat * cmat;
    } else {
      T* prod = scratch_data<T>(1, g.o * cn * p);
      MatMap<T>(prod, g.o, cn * p).noalias() = wmat * cmat;
      for (std::size_t s = 0; s < cn; ++s) {
        for (std::size_t o = 0; o < g.o; ++o) {
          std::copy_n(prod + o * cn * p + s * p, p, out.data() + (n0 + s) * out_plane + o * p);
        }
      }
    }
  }
  if (bias) {
    for (std::size_t s = 0; s < g.n; ++s) {
      for (std::size_t o = 0; o < g.o; ++o) {
        T* dst = out.data() + s * out_plane + o * p;
        const T b = bias->value()[o];
        for (std::size_t i = 0; i < p; ++i) dst[i] += b;
      }
    }
  }

  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result<T>(std::move(out), parents, "conv2d", [g, chunk, has_bias](Node<T>& self) {
    const std::size_t k = g.k();
    const std::size_t p = g.positions();
    const std::size_t in_plane = g.c * g.h * g.w;
    const std::size_t out_plane = g.o * p;
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    if (has_bias && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->grad_buffer();
      for (std::size_t s = 0; s < g.n; ++s) {
        for (std::size_t o = 0; o < g.o; ++o) {
          const T* src = self.grad.data() + s * out_plane + o * p;
          gb[o] += std::accumulate(src, src + p, T{0});
        }
      }
    }
    if (!wn.requires_grad && !xn.requires_grad) return;
    const ConstMatMap<T> wmat(wn.value.data(), g.o, k);
    // Stride 1 with same padding: dL/dx is itself a same-padded convolution
    // of dL/dy with the spatially flipped, channel-transposed kernel.
    const bool transposed_path = xn.requires_grad && g.stride == 1 && g.kh % 2 == 1 && g.kw % 2 == 1 &&
                                 g.pad_h == (g.kh - 1) / 2 && g.pad_w == (g.kw - 1) / 2;
    if (transposed_path) {
      const ConvGeometry gt{g.n, g.o, g.oh, g.ow, g.c, g.kh, g.kw, 1, g.pad_h, g.pad_w, g.h, g.w};
      const std::size_t kt = gt.k();
      std::vector<T> flipped(g.c * kt);
      const T* w = wn.value.data();
      for (std::size_t o = 0; o < g.o; ++o) {
        for (std::size_t c = 0; c < g.c; ++c) {
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              flipped[c * kt + (o * g.kh + ky) * g.kw + kx] =
                  w[((o * g.c + c) * g.kh + (g.kh - 1 - ky)) * g.kw + (g.kw - 1 - kx)];
            }
          }
        }
      }
      const ConstMatMap<T> fmat(flipped.data(), g.c, kt);
      const std::size_t tchunk = conv_chunk(gt);
      T* gx = xn.grad_buffer().data();
      for (std::size_t n0 = 0; n0 < g.n; n0 += tchunk) {
        const std::size_t cn = std::min(tchunk, g.n - n0);
        T* cols = scratch_data<T>(0, kt * cn * p);
        im2col(self.grad.data() + n0 * out_plane, gt, cn, cols);
        const ConstMatMap<T> cmat(cols, kt, cn * p);
        if (cn == 1) {
          MatMap<T>(gx + n0 * in_plane, g.c, p).noalias() += fmat * cmat;
        } else {
          T* prod = scratch_data<T>(1, g.c * cn * p);
          MatMap<T>(prod, g.c, cn * p).noalias() = fmat * cmat;
          for (std::size_t s = 0; s < cn; ++s) {
            for (std::size_t c = 0; c < g.c; ++c) {
              const T* src = prod + c * cn * p + s * p;
              T* dst = gx + (n0 + s) * in_plane + c * p;
              for (std::size_t i = 0; i < p; ++i) dst[i] += src[i];
            }
          }
        }
      }
    }
    if (!wn.requires_grad && transposed_path) return;
    for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
      const std::size_t cn = std::min(chunk, g.n - n0);
      const T* gy_ptr = self.grad.data() + n0 * out_plane;
      if (cn > 1) {
        T* gather = scratch_data<T>(1, g.o * cn * p);
        for (std::size_t s = 0; s < cn; ++s) {
          for (std::size_t o = 0; o < g.o; ++o) {
            std::copy_n(self.grad.data() + (n0 + s) * out_plane + o * p, p, gather + o * cn * p + s * p);
          }
        }
        gy_ptr = gather;
      }
      const ConstMatMap<T> gy(gy_ptr, g.o, cn * p);
      if (wn.requires_grad) {
        T* cols = scratch_data<T>(0, k * cn * p);
        im2col(xn.value.data() + n0 * in_plane, g, cn, cols);
        MatMap<T>(wn.grad_buffer().data(), g.o, k).noalias() += gy * ConstMatMap<T>(cols, k, cn * p).transpose();
      }
      if (xn.requires_grad && !transposed_path) {
        T* gcols = scratch_data<T>(2, k * cn * p);
        MatMap<T>(gcols, k, cn * p).noalias() = wmat.transpose() * gy;
        col2im_add(gcols, g, cn, xn.grad_buffer().data() + n0 * in_plane);
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto& in = x.value();
  // NaN passes through so the finiteness check sees it
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] < T{0} ? T{0} : in[i];
  return make_result<T>(std::move(out), {x}, "relu", [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    const T* v = xn.value.data();
    const T* g = self.grad.data();
    T* out = gx.data();
    for (std::size_t i = 0; i < gx.size(); ++i) out[i] += v[i] > T{0} ? g[i] : T{0};
  });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, std::size_t kernel, std::size_t stride) {
  const Shape& s = x.shape();
  if (s.size() != 4) shape_error("max_pool2d", s, Shape{kernel, kernel});
  if (kernel == 0 || stride == 0) fail(ErrorKind::kParameter, "max_pool2d: kernel and stride must be >= 1");
  if (s[2] < kernel || s[3] < kernel) shape_error("max_pool2d", s, Shape{kernel, kernel});
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor<T> out(Shape{n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* in = x.value().data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = in + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = (oy * stride + ky) * w + ox * stride + kx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = src[best];
        (*argmax)[o] = plane * h * w + best;
      }
    }
  }
  return make_result<T>(std::move(out), {x}, "max_pool2d", [argmax](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (std::size_t o = 0; o < argmax->size(); ++o) gx[(*argmax)[o]] += self.grad[o];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) shape_error("global_avg_pool", s, Shape{});
  const std::size_t nc = s[0] * s[1], hw = s[2] * s[3];
  Tensor<T> out(Shape{s[0], s[1]});
  const T* in = x.value().data();
  for (std::size_t i = 0; i < nc; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < hw; ++j) acc += in[i * hw + j];
    out[i] = acc / static_cast<T>(hw);
  }
  return make_result<T>(std::move(out), {x}, "global_avg_pool", [nc, hw](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < nc; ++i) {
      const T g = self.grad[i] / static_cast<T>(hw);
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += g;
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                  bool training) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using ArrMap = Eigen::Map<Arr>;
  using ConstArrMap = Eigen::Map<const Arr>;
  const Shape& s = x.shape();
  if (s.size() != 4 && s.size() != 2) shape_error("batch_norm", s, gamma.shape());
  const std::size_t n = s[0], c = s[1];
  const std::size_t spatial = s.size() == 4 ? s[2] * s[3] : 1;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} || stats.running_mean.shape() != Shape{c}) {
    shape_error("batch_norm", s, gamma.shape());
  }
  const std::size_t m = n * spatial;
  if (training && m < 2) fail(ErrorKind::kInvalidInput, "batch_norm: training needs >= 2 values per channel");
  const auto sp = static_cast<Eigen::Index>(spatial);
  const T* in = x.value().data();
  auto block = [&](const T* base, std::size_t b, std::size_t ch) {
    return ConstArrMap(base + (b * c + ch) * spatial, sp);
  };

  // Per-channel mean and 1/std used for normalisation; the backward pass
  // rebuilds x_hat from these.
  auto mean = std::make_shared<std::vector<T>>(c);
  auto inv_std = std::make_shared<std::vector<T>>(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      double sum = 0, sum_sq = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = in + (b * c + ch) * spatial;
        sum += static_cast<double>(lane_sum<T>(spatial, [p](std::size_t i) { return p[i]; }));
      }
      const double mu_d = sum / static_cast<double>(m);
      const T mu_t = static_cast<T>(mu_d);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = in + (b * c + ch) * spatial;
        sum_sq += static_cast<double>(lane_sum<T>(spatial, [p, mu_t](std::size_t i) {
          const T d = p[i] - mu_t;
          return d * d;
        }));
      }
      mu = static_cast<T>(mu_d);
      var = static_cast<T>(sum_sq / static_cast<double>(m));
      const T unbiased = static_cast<T>(sum_sq / static_cast<double>(m - 1));
      stats.running_mean[ch] = (T{1} - stats.momentum) * stats.running_mean[ch] + stats.momentum * mu;
      stats.running_var[ch] = (T{1} - stats.momentum) * stats.running_var[ch] + stats.momentum * unbiased;
    } else {
      mu = stats.running_mean[ch];
      var = stats.running_var[ch];
    }
    (*mean)[ch] = mu;
    (*inv_std)[ch] = T{1} / std::sqrt(var + stats.eps);
  }
  Tensor<T> out(s);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T scale = gamma.value()[ch] * (*inv_std)[ch];
      const T shift = beta.value()[ch] - (*mean)[ch] * scale;
      ArrMap(out.data() + (b * c + ch) * spatial, sp) = block(in, b, ch) * scale + shift;
    }
  }

  return make_result<T>(std::move(out), {x, gamma, beta}, "batch_norm",
                        [mean, inv_std, n, c, spatial, m, training](Node<T>& self) {
    const auto sp = static_cast<Eigen::Index>(spatial);
    Node<T>& xn = *self.parents[0];
    Node<T>& gn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    auto at = [&](const Tensor<T>& t, std::size_t b, std::size_t ch) {
      return ConstArrMap(t.data() + (b * c + ch) * spatial, sp);
    };
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T mu = (*mean)[ch], istd = (*inv_std)[ch];
      T sum_g{0}, sum_gx{0};
      for (std::size_t b = 0; b < n; ++b) {
        const T* gy = self.grad.data() + (b * c + ch) * spatial;
        const T* xv = xn.value.data() + (b * c + ch) * spatial;
        sum_g += lane_sum<T>(spatial, [gy](std::size_t i) { return gy[i]; });
        sum_gx += lane_sum<T>(spatial, [gy, xv, mu, istd](std::size_t i) { return gy[i] * ((xv[i] - mu) * istd); });
      }
      if (gn.requires_grad) gn.grad_buffer()[ch] += sum_gx;
      if (bn.requires_grad) bn.grad_buffer()[ch] += sum_g;
      if (!xn.requires_grad) continue;
      auto& gx = xn.grad_buffer();
      const T scale = gn.value[ch] * istd;
      const T inv_m = T{1} / static_cast<T>(m);
      for (std::size_t b = 0; b < n; ++b) {
        ArrMap dst(gx.data() + (b * c + ch) * spatial, sp);
        if (training) {
          dst += scale * (at(self.grad, b, ch) - inv_m * sum_g -
                          inv_m * sum_gx * ((at(xn.value, b, ch) - mu) * istd));
        } else {
          dst += scale * at(self.grad, b, ch);
        }
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) shape_error("linear", xs, ws);
  if (bias.shape() != Shape{ws[0]}) shape_error("linear(bias)", ws, bias.shape());
  const std::size_t n = xs[0], f = xs[1], m = ws[0];
  Tensor<T> out(Shape{n, m});
  MatMap<T> y(out.data(), n, m);
  y.noalias() = ConstMatMap<T>(x.value().data(), n, f) * ConstMatMap<T>(weight.value().data(), m, f).transpose();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias.value()[j];
  }
  return make_result<T>(std::move(out), {x, weight, bias}, "linear", [n, f, m](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    ConstMatMap<T> gy(self.grad.data(), n, m);
    if (xn.requires_grad) {
      MatMap<T>(xn.grad_buffer().data(), n, f).noalias() += gy * ConstMatMap<T>(wn.value.data(), m, f);
    }
    if (wn.requires_grad) {
      MatMap<T>(wn.grad_buffer().data(), m, f).noalias() += gy.transpose() * ConstMatMap<T>(xn.value.data(), n, f);
    }
    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gb[j] += self.grad[i * m + j];
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, "add", [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) accumulate(*p, self.grad);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  return make_result<T>(std::move(out), {x}, "scale", [factor](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> soften(const Var<T>& logits, T temperature) {
  if (!(temperature > T{0})) fail(ErrorKind::kParameter, "soften: temperature must be > 0");
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[1] < 2) shape_error("soften", s, Shape{0, 2});
  const std::size_t n = s[0], m = s[1];
  Tensor<T> out(s);
  const T* z = logits.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z + i * m;
    const T mx = *std::max_element(row, row + m);
    T sum{0};
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = std::exp((row[j] - mx) / temperature);
      sum += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= sum;
  }
  return make_result<T>(std::move(out), {logits}, "soften", [n, m, temperature](Node<T>& self) {
    Node<T>& zn = *self.parents[0];
    if (!zn.requires_grad) return;
    auto& gz = zn.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * self.value[i * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        gz[i * m + j] += self.value[i * m + j] * (self.grad[i * m + j] - dot) / temperature;
      }
    }
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  if (x.shape() != weights.shape()) shape_error("weighted_sum", x.shape(), weights.shape());
  T acc{0};
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
  return make_result<T>(Tensor<T>(Shape{1}, acc), {x}, "weighted_sum", [weights](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[0] * weights[i];
  });
}

namespace {

// True if any value has an all-ones exponent (Inf or NaN). Integer-only so
// the loop vectorises.
template <typename Bits, typename T>
bool any_non_finite(std::span<const T> values, Bits exponent_mask) {
  Bits found = 0;
  for (const T& v : values) {
    Bits b;
    std::memcpy(&b, &v, sizeof b);
    found |= static_cast<Bits>((b & exponent_mask) == exponent_mask);
  }
  return found != 0;
}

}  // namespace

void check_finite(std::span<const float> values, const char* op) {
  if (any_non_finite<std::uint32_t>(values, 0x7f800000u)) {
    fail(ErrorKind::kNumeric, std::string(op) + ": non-finite value in output");
  }
}

void check_finite(std::span<const double> values, const char* op) {
  if (any_non_finite<std::uint64_t>(values, 0x7ff0000000000000ull)) {
    fail(ErrorKind::kNumeric, std::string(op) + ": non-finite value in output");
  }
}

#define MRKD_INSTANTIATE_OPS(T)                                                                    \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&,           \
                            Conv2dOptions);                                                        \
  template Var<T> relu<T>(const Var<T>&);                                                          \
  template Var<T> max_pool2d<T>(const Var<T>&, std::size_t, std::size_t);                          \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                               \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&,   \
                                bool);                                                             \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale<T>(const Var<T>&, T);                                                      \
  template Var<T> soften<T>(const Var<T>&, T);                                                     \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);

MRKD_INSTANTIATE_OPS(float)
MRKD_INSTANTIATE_OPS(double)

}  // namespace mrkd::ad
