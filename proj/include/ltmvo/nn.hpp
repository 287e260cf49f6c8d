#pragma once

// Layer vocabulary on top of the autodiff engine: convolution, linear heads,
// pooling, ConvLSTM gating, parameter registry, initialization and Adam.

#include <cstring>
#include <map>
#include <string>

#include "ltmvo/ad.hpp"
#include "ltmvo/common.hpp"
#include "ltmvo/rng.hpp"

namespace ltmvo::nn {

using ad::Shape;
using ad::Var;

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

/// Named learnable tensors with stable iteration order (construction order).
template <typename T>
class ParamSet {
 public:
  Var<T>& add(const std::string& name, Var<T> v) {
    if (index_.count(name)) ad::detail::require(false, "ParamSet: duplicate name " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(v));
    return params_.back().second;
  }

  Var<T>& at(const std::string& name) {
    auto it = index_.find(name);
    ad::detail::require(it != index_.end(), "ParamSet: unknown parameter " + name);
    return params_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [name, p] : params_) n += p.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

template <typename T>
Var<T> kaiming_uniform(Shape shape, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / std::max(1, fan_in));
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Var<T>::leaf(std::move(shape), std::move(v));
}

template <typename T>
Var<T> zeros_leaf(Shape shape) {
  return Var<T>::leaf(shape, std::vector<T>(ad::numel(shape), T(0)));
}

template <typename T>
Var<T> zeros_const(Shape shape) {
  return Var<T>::constant(shape, std::vector<T>(ad::numel(shape), T(0)));
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// x: (Cin, H, W), w: (Cout, Cin, kh, kw), b: (Cout).
/// out: (Cout, (H + 2p - kh)/s + 1, (W + 2p - kw)/s + 1), zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1,
              int pad = 0) {
  ad::detail::require(x.shape().size() == 3 && w.shape().size() == 4,
                      "conv2d: expected (C,H,W) input and (Co,Ci,kh,kw) weight, got " +
                          ad::shape_str(x.shape()) + " and " + ad::shape_str(w.shape()));
  const int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  ad::detail::require(w.shape()[1] == ci, "conv2d: channel mismatch, input " +
                                              ad::shape_str(x.shape()) + " weight " +
                                              ad::shape_str(w.shape()));
  ad::detail::require(b.size() == co, "conv2d: bias size mismatch");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  ad::detail::require(ho > 0 && wo > 0, "conv2d: output would be empty");

  auto n = ad::detail::make_node<T>({co, ho, wo}, {x.node(), w.node(), b.node()});
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  const T* bv = b.value().data();
  T* ov = n->value.data();

  parallel_for(static_cast<int64_t>(co) * ho, [&](int64_t job) {
    const int oc = static_cast<int>(job / ho);
    const int oy = static_cast<int>(job % ho);
    for (int ox = 0; ox < wo; ++ox) {
      T acc = bv[oc];
      for (int ic = 0; ic < ci; ++ic)
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= wd) continue;
            acc += xv[(ic * h + iy) * wd + ix] * wv[((oc * ci + ic) * kh + ky) * kw + kx];
          }
        }
      ov[(oc * ho + oy) * wo + ox] = acc;
    }
  });

  if (n->requires_grad) {
    auto xp = x.node();
    auto wp = w.node();
    auto bp = b.node();
    auto np = n.get();
    n->backprop = [xp, wp, bp, np, ci, h, wd, co, kh, kw, ho, wo, stride, pad] {
      const T* gy = np->grad.data();
      // dx: gather formulation so rows can be processed independently.
      if (xp->requires_grad) {
        T* gx = xp->grad.data();
        const T* wv = wp->value.data();
        parallel_for(static_cast<int64_t>(ci) * h, [&](int64_t job) {
          const int ic = static_cast<int>(job / h);
          const int iy = static_cast<int>(job % h);
          for (int ix = 0; ix < wd; ++ix) {
            T acc = T(0);
            for (int oc = 0; oc < co; ++oc)
              for (int ky = 0; ky < kh; ++ky) {
                const int num_y = iy + pad - ky;
                if (num_y < 0 || num_y % stride) continue;
                const int oy = num_y / stride;
                if (oy >= ho) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int num_x = ix + pad - kx;
                  if (num_x < 0 || num_x % stride) continue;
                  const int ox = num_x / stride;
                  if (ox >= wo) continue;
                  acc += gy[(oc * ho + oy) * wo + ox] *
                         wv[((oc * ci + ic) * kh + ky) * kw + kx];
                }
              }
            gx[(ic * h + iy) * wd + ix] += acc;
          }
        });
      }
      if (wp->requires_grad) {
        T* gw = wp->grad.data();
        const T* xv = xp->value.data();
        parallel_for(static_cast<int64_t>(co) * ci, [&](int64_t job) {
          const int oc = static_cast<int>(job / ci);
          const int ic = static_cast<int>(job % ci);
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              T acc = T(0);
              for (int oy = 0; oy < ho; ++oy) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < wo; ++ox) {
                  const int ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= wd) continue;
                  acc += gy[(oc * ho + oy) * wo + ox] * xv[(ic * h + iy) * wd + ix];
                }
              }
              gw[((oc * ci + ic) * kh + ky) * kw + kx] += acc;
            }
        });
      }
      if (bp->requires_grad) {
        for (int oc = 0; oc < co; ++oc) {
          T acc = T(0);
          for (int i = 0; i < ho * wo; ++i) acc += gy[oc * ho * wo + i];
          bp->grad[oc] += acc;
        }
      }
    };
  }
  return Var<T>(n);
}

/// x: (K), w: (M, K), b: (M) -> (M).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  ad::detail::require(x.shape().size() == 1 && w.shape().size() == 2 &&
                          w.shape()[1] == x.shape()[0] && b.size() == w.shape()[0],
                      "linear: shape mismatch " + ad::shape_str(x.shape()) + " vs " +
                          ad::shape_str(w.shape()));
  auto y = ad::matmul(w, ad::reshape(x, {x.shape()[0], 1}));
  return ad::add(ad::reshape(y, {w.shape()[0]}), b);
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

/// 2x2 average pooling with stride 2; partial windows at odd borders are
/// averaged over the pixels they cover.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  ad::detail::require(x.shape().size() == 3, "avg_pool2: (C,H,W) expected");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  auto n = ad::detail::make_node<T>({c, ho, wo}, {x.node()});
  for (int ic = 0; ic < c; ++ic)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T acc = T(0);
        int cnt = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = oy * 2 + dy, ix = ox * 2 + dx;
            if (iy < h && ix < w) {
              acc += x.value()[(ic * h + iy) * w + ix];
              ++cnt;
            }
          }
        n->value[(ic * ho + oy) * wo + ox] = acc / T(cnt);
      }
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np, c, h, w, ho, wo] {
      for (int ic = 0; ic < c; ++ic)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            int cnt = 0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                if (oy * 2 + dy < h && ox * 2 + dx < w) ++cnt;
            const T g = np->grad[(ic * ho + oy) * wo + ox] / T(cnt);
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int iy = oy * 2 + dy, ix = ox * 2 + dx;
                if (iy < h && ix < w) xp->grad[(ic * h + iy) * w + ix] += g;
              }
          }
    };
  }
  return Var<T>(n);
}

/// (C,H,W) -> (C); spatial average.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  ad::detail::require(x.shape().size() == 3, "global_avg_pool: (C,H,W) expected");
  const int c = x.shape()[0];
  const int hw = x.shape()[1] * x.shape()[2];
  auto n = ad::detail::make_node<T>({c}, {x.node()});
  for (int ic = 0; ic < c; ++ic) {
    T acc = T(0);
    for (int i = 0; i < hw; ++i) acc += x.value()[ic * hw + i];
    n->value[ic] = acc / T(hw);
  }
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np, c, hw] {
      for (int ic = 0; ic < c; ++ic) {
        const T g = np->grad[ic] / T(hw);
        for (int i = 0; i < hw; ++i) xp->grad[ic * hw + i] += g;
      }
    };
  }
  return Var<T>(n);
}

/// Nearest-neighbor 2x upsampling, optionally cropped to (th, tw) so odd
/// skip-connection sizes line up.
template <typename T>
Var<T> upsample2x(const Var<T>& x, int th = -1, int tw = -1) {
  ad::detail::require(x.shape().size() == 3, "upsample2x: (C,H,W) expected");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int ho = th < 0 ? 2 * h : th;
  const int wo = tw < 0 ? 2 * w : tw;
  ad::detail::require(ho <= 2 * h && wo <= 2 * w, "upsample2x: target too large");
  auto n = ad::detail::make_node<T>({c, ho, wo}, {x.node()});
  for (int ic = 0; ic < c; ++ic)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        n->value[(ic * ho + oy) * wo + ox] = x.value()[(ic * h + oy / 2) * w + ox / 2];
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np, c, h, w, ho, wo] {
      for (int ic = 0; ic < c; ++ic)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox)
            xp->grad[(ic * h + oy / 2) * w + ox / 2] += np->grad[(ic * ho + oy) * wo + ox];
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  return ad::concat0(parts);
}

// ---------------------------------------------------------------------------
// ConvLSTM
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLstmState {
  Var<T> hidden;  // (C, H, W)
  Var<T> cell;    // (C, H, W)
};

template <typename T>
ConvLstmState<T> conv_lstm_zero_state(int channels, int h, int w) {
  return {zeros_const<T>({channels, h, w}), zeros_const<T>({channels, h, w})};
}

/// One ConvLSTM step. Gates are a single 3x3 convolution over
/// concat(x, hidden) producing 4C channels split as input/forget/candidate/
/// output; the returned output tensor is the new hidden state.
template <typename T>
std::pair<Var<T>, ConvLstmState<T>> conv_lstm_step(const Var<T>& x,
                                                   const ConvLstmState<T>& state,
                                                   const Var<T>& gate_w,
                                                   const Var<T>& gate_b) {
  ad::detail::require(x.shape().size() == 3 && state.hidden.shape().size() == 3,
                      "conv_lstm_step: (C,H,W) tensors expected");
  ad::detail::require(x.shape()[1] == state.hidden.shape()[1] &&
                          x.shape()[2] == state.hidden.shape()[2],
                      "conv_lstm_step: input spatial size " + ad::shape_str(x.shape()) +
                          " does not match state " + ad::shape_str(state.hidden.shape()));
  const int hc = state.hidden.shape()[0];
  auto gates = conv2d(concat_channels<T>({x, state.hidden}), gate_w, gate_b, 1, 1);
  ad::detail::require(gates.shape()[0] == 4 * hc, "conv_lstm_step: gate weight channels");
  auto i = ad::sigmoid(ad::slice0(gates, 0, hc));
  auto f = ad::sigmoid(ad::slice0(gates, hc, hc));
  auto g = ad::tanh_op(ad::slice0(gates, 2 * hc, hc));
  auto o = ad::sigmoid(ad::slice0(gates, 3 * hc, hc));
  auto cell = ad::add(ad::mul(f, state.cell), ad::mul(i, g));
  auto hidden = ad::mul(o, ad::tanh_op(cell));
  return {hidden, ConvLstmState<T>{hidden, cell}};
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  int64_t step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update over the given parameters, reading each parameter's
/// accumulated gradient. Throws if any parameter has no gradient slot.
template <typename T>
void adam_step(std::vector<std::pair<std::string, Var<T>>>& params, AdamState<T>& state,
               double lr, const AdamConfig& cfg = {}) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second.size(), T(0));
      state.v[i].assign(params[i].second.size(), T(0));
    }
  }
  ad::detail::require(state.m.size() == params.size(), "adam_step: state size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].second;
    if (p.grad().size() != p.value().size())
      ad::detail::require(false, "adam_step: missing gradient for " + params[i].first);
    auto& val = p.mutable_value();
    const auto& g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < val.size(); ++j) {
      m[j] = static_cast<T>(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j]);
      v[j] = static_cast<T>(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j]);
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      val[j] -= static_cast<T>(lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

/// Rescales gradients so their global L2 norm is at most max_norm.
template <typename T>
double clip_grad_norm(std::vector<std::pair<std::string, Var<T>>>& params, double max_norm) {
  double sq = 0;
  for (auto& [name, p] : params)
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [name, p] : params)
      for (auto& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

}  // namespace ltmvo::nn
