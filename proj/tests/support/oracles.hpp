#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Everything here is written from the textbook definitions with plain
// loops and long double accumulation; none of it shares code with the library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "mrkd/autodiff/graph.hpp"

namespace oracle {

inline constexpr long double kPi = std::numbers::pi_v<long double>;

/// One-sided DFT by direct summation over a table of the n roots of unity.
inline std::vector<std::complex<long double>> dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<long double> c(n), s(n);
  for (std::size_t j = 0; j < n; ++j) {
    c[j] = std::cos(2 * kPi * j / n);
    s[j] = std::sin(2 * kPi * j / n);
  }
  std::vector<std::complex<long double>> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    long double re = 0, im = 0;
    std::size_t idx = 0;  // (k * t) mod n
    for (std::size_t t = 0; t < n; ++t) {
      re += x[t] * c[idx];
      im -= x[t] * s[idx];
      idx += k;
      if (idx >= n) idx -= n;
    }
    out[k] = {re, im};
  }
  return out;
}

inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / n);
  return w;
}

/// Orthonormal DCT-II of x, first n_out coefficients.
inline std::vector<double> dct2(const std::vector<double>& x, std::size_t n_out) {
  const std::size_t n = x.size();
  std::vector<double> out(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    long double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * std::cos(kPi * k * (2 * i + 1) / (2.0L * n));
    const long double scale = k == 0 ? std::sqrt(1.0L / n) : std::sqrt(2.0L / n);
    out[k] = static_cast<double>(s * scale);
  }
  return out;
}

/// Regression delta over a frames x bins row-major array; frames outside the
/// sequence take the value of the nearest edge frame.
inline std::vector<double> delta(const std::vector<double>& c, std::size_t frames, std::size_t bins,
                                 std::size_t half) {
  auto at = [&](long t, std::size_t f) {
    const long clamped = std::clamp<long>(t, 0, static_cast<long>(frames) - 1);
    return c[static_cast<std::size_t>(clamped) * bins + f];
  };
  double denom = 0;
  for (std::size_t n = 1; n <= half; ++n) denom += static_cast<double>(n * n);
  denom *= 2;
  std::vector<double> out(c.size());
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < bins; ++f) {
      double num = 0;
      for (std::size_t n = 1; n <= half; ++n) {
        num += static_cast<double>(n) * (at(static_cast<long>(t + n), f) - at(static_cast<long>(t) - static_cast<long>(n), f));
      }
      out[t * bins + f] = num / denom;
    }
  }
  return out;
}

/// Cross-correlation with zero padding, N x C x H x W input, O x C x K x K kernel.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t h,
                                  std::size_t w, const std::vector<double>& k, std::size_t o, std::size_t kh,
                                  std::size_t kw, std::size_t stride, std::size_t pad_h, std::size_t pad_w,
                                  std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad_h - kh) / stride + 1;
  ow = (w + 2 * pad_w - kw) / stride + 1;
  std::vector<double> y(n * o * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          long double s = 0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad_h);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad_w);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(w)) continue;
                s += x[((b * c + ic) * h + r) * w + q] * k[((oc * c + ic) * kh + u) * kw + v];
              }
          y[((b * o + oc) * oh + i) * ow + j] = static_cast<double>(s);
        }
  return y;
}

inline std::vector<long double> softmax(const std::vector<double>& z, long double temperature) {
  long double m = *std::max_element(z.begin(), z.end());
  std::vector<long double> p(z.size());
  long double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp((z[i] - m) / temperature);
  for (auto& v : p) v /= s;
  return p;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

/// Random point on the probability simplex.
inline std::vector<double> random_simplex(std::size_t m, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(m);
  double s = 0;
  for (auto& v : p) s += v = e(rng) + 1e-9;
  for (auto& v : p) v /= s;
  return p;
}

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

/// Relative error between an analytic and a numeric derivative. The floor
/// keeps entries whose true value is ~0 from dividing by nothing.
inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

/// Five-point central differences (h = 1e-4, truncation O(h^4)) of a scalar
/// function of several tensors against reverse-mode gradients. The plain
/// two-point stencil is too coarse for batch norm over two nearly equal
/// values, where 1/std is large. `fn` must rebuild any state it mutates.
inline GradCheck check_gradients(
    const std::vector<mrkd::ad::Tensor<double>>& inputs,
    const std::function<mrkd::ad::Var<double>(const std::vector<mrkd::ad::Var<double>>&)>& fn,
    double h = 1e-4) {
  using mrkd::ad::Var;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  Var<double> y = fn(vars);
  mrkd::ad::backward(y);

  GradCheck result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& g = vars[i].grad();
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto eval_at = [&](double delta) {
        mrkd::ad::NoGradGuard guard;
        std::vector<Var<double>> shifted;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          auto t = inputs[k];
          if (k == i) t[j] += delta;
          shifted.emplace_back(std::move(t), false);
        }
        return fn(shifted).value()[0];
      };
      const double numeric = (8 * (eval_at(h) - eval_at(-h)) - (eval_at(2 * h) - eval_at(-2 * h))) / (12 * h);
      const double analytic = g.empty() ? 0.0 : g[j];
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic, numeric));
      ++result.checked;
    }
  }
  return result;
}

inline mrkd::ad::Tensor<double> random_tensor(mrkd::ad::Shape shape, std::mt19937_64& rng, double lo = -1,
                                              double hi = 1) {
  mrkd::ad::Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

/// Values whose magnitude stays at least `gap` away from zero, so that relu
/// kinks are never crossed by a finite-difference step.
inline mrkd::ad::Tensor<double> random_away_from_zero(mrkd::ad::Shape shape, std::mt19937_64& rng, double gap = 0.05) {
  mrkd::ad::Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.values()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

/// A permutation of evenly spaced values: every pair differs by at least
/// `spacing`, so max-pool winners never swap under a finite-difference step.
inline mrkd::ad::Tensor<double> random_distinct(mrkd::ad::Shape shape, std::mt19937_64& rng, double spacing = 0.01) {
  mrkd::ad::Tensor<double> t(std::move(shape));
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (static_cast<double>(i) - v.size() / 2.0) * spacing;
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

}  // namespace oracle
