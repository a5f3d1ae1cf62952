#include "sr3/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "sr3/errors.hpp"

namespace sr3::ops {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " + shape_str(x.shape()));
  }
}

// Accumulate `values` (already multiplied by the chain factor) into parent i.
template <typename T, typename F>
void accumulate(NodeT<T>& self, std::size_t parent, F&& contribution) {
  auto& p = *self.parents[parent];
  if (!p.requires_grad) return;
  auto& g = p.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution(i);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    accumulate(self, 0, [&](std::size_t i) { return self.grad[i]; });
    accumulate(self, 1, [&](std::size_t i) { return self.grad[i]; });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    accumulate(self, 0, [&](std::size_t i) { return self.grad[i]; });
    accumulate(self, 1, [&](std::size_t i) { return -self.grad[i]; });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    accumulate(self, 0, [&](std::size_t i) { return self.grad[i] * bv[i]; });
    accumulate(self, 1, [&](std::size_t i) { return self.grad[i] * av[i]; });
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [factor](NodeT<T>& self) {
    accumulate(self, 0, [&](std::size_t i) { return self.grad[i] * factor; });
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [](NodeT<T>& self) {
    const auto& av = self.parents[0]->data;
    accumulate(self, 0, [&](std::size_t i) { return T(2) * av[i] * self.grad[i]; });
  });
}

template <typename T>
Tensor<T> abs_pow(const Tensor<T>& a, T p) {
  if (!(p >= T(1))) throw ShapeError("abs_pow: exponent must be >= 1");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(std::abs(a[i]), p);
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [p](NodeT<T>& self) {
    const auto& av = self.parents[0]->data;
    accumulate(self, 0, [&](std::size_t i) {
      const T v = av[i];
      if (v == T(0)) return T(0);
      const T sign = v > T(0) ? T(1) : T(-1);
      return self.grad[i] * p * std::pow(std::abs(v), p - T(1)) * sign;
    });
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double total = 0.0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result({1}, {static_cast<T>(total)}, {a}, [](NodeT<T>& self) {
    const T g = self.grad[0];
    accumulate(self, 0, [&](std::size_t) { return g; });
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  double total = 0.0;
  for (T v : a.data()) total += v;
  const double count = static_cast<double>(a.numel());
  return Tensor<T>::make_result({1}, {static_cast<T>(total / count)}, {a},
                                [count](NodeT<T>& self) {
                                  const T g = static_cast<T>(self.grad[0] / count);
                                  accumulate(self, 0, [&](std::size_t) { return g; });
                                });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Buffer<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    out[i] = v / (T(1) + std::exp(-v));
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
    const auto& xv = self.parents[0]->data;
    accumulate(self, 0, [&](std::size_t i) {
      const T s = T(1) / (T(1) + std::exp(-xv[i]));
      return self.grad[i] * s * (T(1) + xv[i] * (T(1) - s));
    });
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ShapeError("dropout: p must satisfy 0 <= p < 1");
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<Buffer<T>>(x.numel());
  Buffer<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
    out[i] = x[i] * (*mask)[i];
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [mask](NodeT<T>& self) {
    accumulate(self, 0, [&](std::size_t i) { return self.grad[i] * (*mask)[i]; });
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, oh, ow;
  int stride, padding;
  std::size_t k() const { return c * kh * kw; }
  std::size_t p() const { return oh * ow; }
};

// Output columns ox whose input column ox*stride - padding + kj lies inside the image.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kj) {
  const long offset = static_cast<long>(kj) - g.padding;
  const long stride = g.stride;
  long lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  long hi = (static_cast<long>(g.w) - 1 - offset) / stride + 1;  // first ox past the right edge
  if (static_cast<long>(g.w) - 1 - offset < 0) hi = 0;
  hi = std::min(hi, static_cast<long>(g.ow));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((ch * g.kh + ki) * g.kw + kj) * plane;
        const T* src = image + ch * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(ki);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const auto [lo, hi] = valid_columns(g, kj);
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + g.ow, T(0));
          const T* line = src + iy * static_cast<long>(g.w) + static_cast<long>(kj) - g.padding;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = line[static_cast<long>(ox) * g.stride];
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((ch * g.kh + ki) * g.kw + kj) * plane;
        T* dst = image + ch * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(ki);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const auto [lo, hi] = valid_columns(g, kj);
          T* line = dst + iy * static_cast<long>(g.w) + static_cast<long>(kj) - g.padding;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = lo; ox < hi; ++ox) line[static_cast<long>(ox) * g.stride] += src[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding) {
  require_rank4(input, "conv2d");
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [F,C,kH,kW], got " + shape_str(kernel.shape()));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: need stride >= 1 and padding >= 0");
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: channel mismatch between input " + shape_str(input.shape()) +
                     " and kernel " + shape_str(kernel.shape()));
  }
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_str(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match kernel " +
                     shape_str(kernel.shape()));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                 kernel.dim(2), kernel.dim(3), 0, 0, stride, padding};
  const long span_h = static_cast<long>(g.h) + 2L * padding - static_cast<long>(g.kh);
  const long span_w = static_cast<long>(g.w) + 2L * padding - static_cast<long>(g.kw);
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeError("conv2d: non-integer output extent for input " + shape_str(input.shape()) +
                     " and kernel " + shape_str(kernel.shape()));
  }
  g.oh = static_cast<std::size_t>(span_h / stride) + 1;
  g.ow = static_cast<std::size_t>(span_w / stride) + 1;

  const std::size_t kdim = g.k(), plane = g.p();
  Buffer<T> out(g.n * g.f * plane);
  Buffer<T> cols(kdim * plane);
  CMapR<T> weights(kernel.data().data(), g.f, kdim);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data().data(), g.f);
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(input.data().data() + s * g.c * g.h * g.w, g, cols.data());
    MapR<T> dst(out.data() + s * g.f * plane, g.f, plane);
    dst.noalias() = weights * CMapR<T>(cols.data(), kdim, plane);
    dst.colwise() += b;
  }

  return Tensor<T>::make_result(
      {g.n, g.f, g.oh, g.ow}, std::move(out), {input, kernel, bias}, [g](NodeT<T>& self) {
        auto& in = *self.parents[0];
        auto& ker = *self.parents[1];
        auto& bia = *self.parents[2];
        const std::size_t kdim = g.k(), plane = g.p();
        Buffer<T> cols(kdim * plane);
        Buffer<T> dcols(kdim * plane);
        CMapR<T> weights(ker.data.data(), g.f, kdim);
        for (std::size_t s = 0; s < g.n; ++s) {
          CMapR<T> dout(self.grad.data() + s * g.f * plane, g.f, plane);
          if (bia.requires_grad) {
            auto& gb = bia.ensure_grad();
            for (std::size_t f = 0; f < g.f; ++f) gb[f] += dout.row(f).sum();
          }
          if (ker.requires_grad) {
            im2col(in.data.data() + s * g.c * g.h * g.w, g, cols.data());
            MapR<T> gk(ker.ensure_grad().data(), g.f, kdim);
            gk.noalias() += dout * CMapR<T>(cols.data(), kdim, plane).transpose();
          }
          if (in.requires_grad) {
            MapR<T>(dcols.data(), kdim, plane).noalias() = weights.transpose() * dout;
            col2im_add(dcols.data(), g, in.ensure_grad().data() + s * g.c * g.h * g.w);
          }
        }
      });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps) {
  require_rank4(x, "group_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || c % static_cast<std::size_t>(groups) != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (!(eps > 0.0)) throw ShapeError("group_norm: eps must be positive");
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw ShapeError("group_norm: gain/bias must be [" + std::to_string(c) + "], got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const std::size_t cpg = c / static_cast<std::size_t>(groups);
  const std::size_t count = cpg * hw;
  auto stats = std::make_shared<std::vector<double>>(2 * n * groups);  // mean, rstd
  Buffer<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t gi = 0; gi < static_cast<std::size_t>(groups); ++gi) {
      const std::size_t base = (s * c + gi * cpg) * hw;
      double total = 0.0;
      for (std::size_t i = 0; i < count; ++i) total += xv[base + i];
      const double mu = total / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        const double d = xv[base + i] - mu;
        sq += d * d;
      }
      const double rstd = 1.0 / std::sqrt(sq / static_cast<double>(count) + eps);
      (*stats)[2 * (s * groups + gi)] = mu;
      (*stats)[2 * (s * groups + gi) + 1] = rstd;
      for (std::size_t ci = 0; ci < cpg; ++ci) {
        const std::size_t ch = gi * cpg + ci;
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = base + ci * hw + i;
          out[idx] = static_cast<T>((xv[idx] - mu) * rstd) * gain[ch] + bias[ch];
        }
      }
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [n, c, hw, cpg, groups, stats](NodeT<T>& self) {
        auto& in = *self.parents[0];
        auto& gn = *self.parents[1];
        auto& bi = *self.parents[2];
        const std::size_t count = cpg * hw;
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t gi = 0; gi < static_cast<std::size_t>(groups); ++gi) {
            const std::size_t base = (s * c + gi * cpg) * hw;
            const double mu = (*stats)[2 * (s * groups + gi)];
            const double rstd = (*stats)[2 * (s * groups + gi) + 1];
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t ci = 0; ci < cpg; ++ci) {
              const std::size_t ch = gi * cpg + ci;
              double dgain = 0.0, dbias = 0.0;
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = base + ci * hw + i;
                const double xhat = (in.data[idx] - mu) * rstd;
                const double dy = self.grad[idx];
                dgain += dy * xhat;
                dbias += dy;
                const double dxhat = dy * gn.data[ch];
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xhat;
              }
              if (gn.requires_grad) gn.ensure_grad()[ch] += static_cast<T>(dgain);
              if (bi.requires_grad) bi.ensure_grad()[ch] += static_cast<T>(dbias);
            }
            if (!in.requires_grad) continue;
            mean_dxhat /= static_cast<double>(count);
            mean_dxhat_xhat /= static_cast<double>(count);
            auto& gx = in.ensure_grad();
            for (std::size_t ci = 0; ci < cpg; ++ci) {
              const std::size_t ch = gi * cpg + ci;
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = base + ci * hw + i;
                const double xhat = (in.data[idx] - mu) * rstd;
                const double dxhat = self.grad[idx] * static_cast<double>(gn.data[ch]);
                gx[idx] += static_cast<T>(rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat));
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk,
                         const Tensor<T>& wv, const Tensor<T>& wo) {
  require_rank4(x, "self_attention");
  const std::size_t n = x.dim(0), c = x.dim(1), len = x.dim(2) * x.dim(3);
  for (const auto* w : {&wq, &wk, &wv, &wo}) {
    if (w->shape() != Shape{c, c}) {
      throw ShapeError("self_attention: projection must be [" + std::to_string(c) + "," +
                       std::to_string(c) + "], got " + shape_str(w->shape()));
    }
  }
  struct Saved {
    std::vector<MatR<T>> q, k, v, probs, attended;
  };
  auto saved = std::make_shared<Saved>();
  const T inv_sqrt_c = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c)));
  CMapR<T> mq(wq.data().data(), c, c), mk(wk.data().data(), c, c), mv(wv.data().data(), c, c),
      mo(wo.data().data(), c, c);
  Buffer<T> out(x.numel());
  for (std::size_t s = 0; s < n; ++s) {
    CMapR<T> xs(x.data().data() + s * c * len, c, len);
    const MatR<T> tokens = xs.transpose();
    MatR<T> q = tokens * mq, k = tokens * mk, v = tokens * mv;
    MatR<T> scores(len, len);
    scores.noalias() = (q * inv_sqrt_c) * k.transpose();
    const Eigen::Matrix<T, Eigen::Dynamic, 1> peak = scores.rowwise().maxCoeff();
    scores.colwise() -= peak;
    scores = scores.array().exp().matrix();
    const Eigen::Matrix<T, Eigen::Dynamic, 1> inv_total = scores.rowwise().sum().cwiseInverse();
    scores = inv_total.asDiagonal() * scores;
    MatR<T> attended = scores * v;
    MapR<T>(out.data() + s * c * len, c, len) = (attended * mo).transpose();
    if (grad_enabled()) {
      saved->q.push_back(std::move(q));
      saved->k.push_back(std::move(k));
      saved->v.push_back(std::move(v));
      saved->probs.push_back(std::move(scores));
      saved->attended.push_back(std::move(attended));
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, wq, wk, wv, wo},
      [n, c, len, inv_sqrt_c, saved](NodeT<T>& self) {
        auto& xin = *self.parents[0];
        auto& pq = *self.parents[1];
        auto& pk = *self.parents[2];
        auto& pv = *self.parents[3];
        auto& po = *self.parents[4];
        CMapR<T> mq(pq.data.data(), c, c), mk(pk.data.data(), c, c), mv(pv.data.data(), c, c),
            mo(po.data.data(), c, c);
        for (std::size_t s = 0; s < n; ++s) {
          CMapR<T> dout(self.grad.data() + s * c * len, c, len);
          const MatR<T> d_o = dout.transpose();
          const auto& probs = saved->probs[s];
          const MatR<T> d_att = d_o * mo.transpose();
          MatR<T> d_scores(len, len);
          d_scores.noalias() = d_att * saved->v[s].transpose();
          MatR<T> d_v(len, c);
          d_v.noalias() = probs.transpose() * d_att;
          // softmax backward: p * (dp - rowsum(p * dp)), scaled by 1/sqrt(c)
          const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot =
              (probs.array() * d_scores.array()).rowwise().sum();
          d_scores.colwise() -= row_dot;
          d_scores = (probs.array() * d_scores.array() * inv_sqrt_c).matrix();
          MatR<T> d_q(len, c), d_k(len, c);
          d_q.noalias() = d_scores * saved->k[s];
          d_k.noalias() = d_scores.transpose() * saved->q[s];
          CMapR<T> xs(xin.data.data() + s * c * len, c, len);
          if (po.requires_grad) {
            MapR<T>(po.ensure_grad().data(), c, c).noalias() +=
                saved->attended[s].transpose() * d_o;
          }
          if (pq.requires_grad) MapR<T>(pq.ensure_grad().data(), c, c).noalias() += xs * d_q;
          if (pk.requires_grad) MapR<T>(pk.ensure_grad().data(), c, c).noalias() += xs * d_k;
          if (pv.requires_grad) MapR<T>(pv.ensure_grad().data(), c, c).noalias() += xs * d_v;
          if (xin.requires_grad) {
            MapR<T> gx(xin.ensure_grad().data() + s * c * len, c, len);
            gx.noalias() += (d_q * mq.transpose() + d_k * mk.transpose() + d_v * mv.transpose())
                                .transpose();
          }
        }
      });
}

template <typename T>
Tensor<T> resample2(const Tensor<T>& x, Resample direction) {
  require_rank4(x, "resample2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t planes = n * c;
  if (direction == Resample::Up) {
    const std::size_t oh = 2 * h, ow = 2 * w;
    Buffer<T> out(planes * oh * ow);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          out[(p * oh + y) * ow + xx] = x[(p * h + y / 2) * w + xx / 2];
        }
      }
    }
    return Tensor<T>::make_result({n, c, oh, ow}, std::move(out), {x},
                                  [planes, h, w](NodeT<T>& self) {
                                    auto& in = *self.parents[0];
                                    if (!in.requires_grad) return;
                                    auto& g = in.ensure_grad();
                                    const std::size_t oh = 2 * h, ow = 2 * w;
                                    for (std::size_t p = 0; p < planes; ++p)
                                      for (std::size_t y = 0; y < oh; ++y)
                                        for (std::size_t xx = 0; xx < ow; ++xx)
                                          g[(p * h + y / 2) * w + xx / 2] +=
                                              self.grad[(p * oh + y) * ow + xx];
                                  });
  }
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("resample2: downsampling needs even extents, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Buffer<T> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t top = (p * h + 2 * y) * w + 2 * xx;
        out[(p * oh + y) * ow + xx] =
            (x[top] + x[top + 1] + x[top + w] + x[top + w + 1]) * static_cast<T>(0.25);
      }
    }
  }
  return Tensor<T>::make_result({n, c, oh, ow}, std::move(out), {x},
                                [planes, h, w](NodeT<T>& self) {
                                  auto& in = *self.parents[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.ensure_grad();
                                  const std::size_t oh = h / 2, ow = w / 2;
                                  for (std::size_t p = 0; p < planes; ++p)
                                    for (std::size_t y = 0; y < h; ++y)
                                      for (std::size_t xx = 0; xx < w; ++xx)
                                        g[(p * h + y) * w + xx] +=
                                            self.grad[(p * oh + y / 2) * ow + xx / 2] *
                                            static_cast<T>(0.25);
                                });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Buffer<T> out(n * (ca + cb) * hw);
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(a.data().data() + s * ca * hw, ca * hw, out.data() + s * (ca + cb) * hw);
    std::copy_n(b.data().data() + s * cb * hw, cb * hw, out.data() + (s * (ca + cb) + ca) * hw);
  }
  return Tensor<T>::make_result(
      {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
      [n, ca, cb, hw](NodeT<T>& self) {
        for (std::size_t part = 0; part < 2; ++part) {
          auto& in = *self.parents[part];
          if (!in.requires_grad) continue;
          auto& g = in.ensure_grad();
          const std::size_t width = (part == 0 ? ca : cb) * hw;
          const std::size_t offset = part == 0 ? 0 : ca * hw;
          for (std::size_t s = 0; s < n; ++s) {
            const T* src = self.grad.data() + s * (ca + cb) * hw + offset;
            T* dst = g.data() + s * width;
            for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) ||
      b.dim(0) != w.dim(0)) {
    throw ShapeError("linear: incompatible shapes x" + shape_str(x.shape()) + " w" +
                     shape_str(w.shape()) + " b" + shape_str(b.shape()));
  }
  const std::size_t n = x.dim(0), in_dim = x.dim(1), out_dim = w.dim(0);
  Buffer<T> out(n * out_dim);
  MapR<T> dst(out.data(), n, out_dim);
  dst.noalias() = CMapR<T>(x.data().data(), n, in_dim) *
                  CMapR<T>(w.data().data(), out_dim, in_dim).transpose();
  dst.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), out_dim);
  return Tensor<T>::make_result(
      {n, out_dim}, std::move(out), {x, w, b}, [n, in_dim, out_dim](NodeT<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        CMapR<T> dout(self.grad.data(), n, out_dim);
        if (px.requires_grad) {
          MapR<T>(px.ensure_grad().data(), n, in_dim).noalias() +=
              dout * CMapR<T>(pw.data.data(), out_dim, in_dim);
        }
        if (pw.requires_grad) {
          MapR<T>(pw.ensure_grad().data(), out_dim, in_dim).noalias() +=
              dout.transpose() * CMapR<T>(px.data.data(), n, in_dim);
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t o = 0; o < out_dim; ++o) gb[o] += dout.col(o).sum();
        }
      });
}

template <typename T>
Tensor<T> film(const Tensor<T>& x, const Tensor<T>& mod) {
  require_rank4(x, "film");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (mod.shape() != Shape{n, 2 * c}) {
    throw ShapeError("film: modulation must be [" + std::to_string(n) + "," +
                     std::to_string(2 * c) + "], got " + shape_str(mod.shape()));
  }
  Buffer<T> out(x.numel());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T gain = T(1) + mod[s * 2 * c + ch];
      const T shift = mod[s * 2 * c + c + ch];
      const std::size_t base = (s * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = x[base + i] * gain + shift;
    }
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, mod}, [n, c, hw](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& pm = *self.parents[1];
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (s * c + ch) * hw;
        const T gain = T(1) + pm.data[s * 2 * c + ch];
        double dscale = 0.0, dshift = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          dscale += static_cast<double>(self.grad[base + i]) * px.data[base + i];
          dshift += self.grad[base + i];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          for (std::size_t i = 0; i < hw; ++i) g[base + i] += self.grad[base + i] * gain;
        }
        if (pm.requires_grad) {
          auto& g = pm.ensure_grad();
          g[s * 2 * c + ch] += static_cast<T>(dscale);
          g[s * 2 * c + c + ch] += static_cast<T>(dshift);
        }
      }
    }
  });
}

#define SR3_INSTANTIATE_OPS(T)                                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> square(const Tensor<T>&);                                                \
  template Tensor<T> abs_pow(const Tensor<T>&, T);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template Tensor<T> silu(const Tensor<T>&);                                                  \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);  \
  template Tensor<T> group_norm(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&,    \
                                double);                                                      \
  template Tensor<T> self_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                    const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> resample2(const Tensor<T>&, Resample);                                   \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> film(const Tensor<T>&, const Tensor<T>&);

SR3_INSTANTIATE_OPS(float)
SR3_INSTANTIATE_OPS(double)

#undef SR3_INSTANTIATE_OPS

}  // namespace sr3::ops
