#include "a2snas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace a2snas::ops {

namespace {

void require_rank5(const Shape& s, const char* what) {
  if (s.rank() != 5) throw ShapeError(std::string(what) + " must be rank 5 (N,C,D,H,W), got " + s.str());
}

// Geometry of one conv3d call. Work buffers hold one sample as (C, H, W, D):
// every kernel tap then touches a contiguous run along the depth axis, and taps
// that fall entirely into the zero padding are skipped.
struct ConvPlan {
  std::int64_t n, ci, co;
  std::int64_t d, h, w;
  std::int64_t kd, kh, kw;
  std::int64_t od, oh, ow;
  Dhw stride, dil, pad;

  std::int64_t in_plane() const { return d * h * w; }
  std::int64_t out_plane() const { return od * oh * ow; }
  std::int64_t taps() const { return kd * kh * kw; }

  // Output positions [lo, hi) whose input index o*s + k*dil - pad lies in [0, n).
  static std::pair<std::int64_t, std::int64_t> valid(std::int64_t k, std::int64_t n, std::int64_t out,
                                                     std::int64_t s, std::int64_t dl, std::int64_t pd) {
    const std::int64_t off = k * dl - pd;
    std::int64_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
    std::int64_t hi = n - 1 - off < 0 ? 0 : (n - 1 - off) / s + 1;
    lo = std::min(lo, out);
    hi = std::clamp(hi, lo, out);
    return {lo, hi};
  }
};

// (C, D, H, W) -> (C, H, W, D)
template <class S, class D>
void to_hwd(const S* src, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w, D* dst) {
  for (std::int64_t k = 0; k < c; ++k, src += d * h * w, dst += d * h * w)
    for (std::int64_t a = 0; a < d; ++a)
      for (std::int64_t i = 0; i < h * w; ++i) dst[i * d + a] = static_cast<D>(src[a * h * w + i]);
}

// (C, H, W, D) -> (C, D, H, W), added into dst when `accumulate`.
template <class S, class D>
void from_hwd(const S* src, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w, D* dst,
              bool accumulate) {
  for (std::int64_t k = 0; k < c; ++k, src += d * h * w, dst += d * h * w)
    for (std::int64_t a = 0; a < d; ++a)
      for (std::int64_t i = 0; i < h * w; ++i) {
        if (accumulate) {
          dst[a * h * w + i] += static_cast<D>(src[i * d + a]);
        } else {
          dst[a * h * w + i] = static_cast<D>(src[i * d + a]);
        }
      }
}

// Visits every (output row, input row, tap) triple that touches real input.
// fn(y, x, iy, ix, b, c) is called for each valid spatial tap.
template <class F>
void for_each_spatial_tap(const ConvPlan& p, F&& fn) {
  for (std::int64_t y = 0; y < p.oh; ++y)
    for (std::int64_t x = 0; x < p.ow; ++x)
      for (std::int64_t b = 0; b < p.kh; ++b) {
        const std::int64_t iy = y * p.stride.h + b * p.dil.h - p.pad.h;
        if (iy < 0 || iy >= p.h) continue;
        for (std::int64_t c = 0; c < p.kw; ++c) {
          const std::int64_t ix = x * p.stride.w + c * p.dil.w - p.pad.w;
          if (ix < 0 || ix >= p.w) continue;
          fn(y, x, iy, ix, b, c);
        }
      }
}

template <class T>
ConvPlan make_plan(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const Conv3dGeometry& g) {
  require_rank5(x.shape(), "conv3d input");
  require_rank5(w.shape(), "conv3d weight");
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv3d channel mismatch: input " + x.shape().str() + " vs weight " + w.shape().str());
  }
  if (b.numel() != w.dim(0)) {
    throw ShapeError("conv3d bias " + b.shape().str() + " does not match weight " + w.shape().str());
  }
  const auto positive = [](Dhw t) { return t.d >= 1 && t.h >= 1 && t.w >= 1; };
  if (!positive(g.stride) || !positive(g.dilation) || g.pad.d < 0 || g.pad.h < 0 || g.pad.w < 0) {
    throw ArgumentError("conv3d needs stride >= 1, dilation >= 1 and pad >= 0");
  }
  ConvPlan p{};
  p.n = x.dim(0);
  p.ci = x.dim(1);
  p.co = w.dim(0);
  p.d = x.dim(2);
  p.h = x.dim(3);
  p.w = x.dim(4);
  p.kd = w.dim(2);
  p.kh = w.dim(3);
  p.kw = w.dim(4);
  p.stride = g.stride;
  p.dil = g.dilation;
  p.pad = g.pad;
  p.od = conv_out_extent(p.d, p.kd, g.stride.d, g.dilation.d, g.pad.d);
  p.oh = conv_out_extent(p.h, p.kh, g.stride.h, g.dilation.h, g.pad.h);
  p.ow = conv_out_extent(p.w, p.kw, g.stride.w, g.dilation.w, g.pad.w);
  if (p.od < 1 || p.oh < 1 || p.ow < 1) {
    throw ShapeError("conv3d dilated kernel " + w.shape().str() + " does not fit padded input " + x.shape().str());
  }
  return p;
}

struct DepthTap {
  std::int64_t lo, hi, off;
};

std::vector<DepthTap> depth_taps(const ConvPlan& p) {
  std::vector<DepthTap> taps;
  for (std::int64_t a = 0; a < p.kd; ++a) {
    const auto [lo, hi] = ConvPlan::valid(a, p.d, p.od, p.stride.d, p.dil.d, p.pad.d);
    taps.push_back({lo, hi, a * p.dil.d - p.pad.d});
  }
  return taps;
}

std::int64_t pooled_extent(std::int64_t n, std::int64_t k, bool ceil_mode) {
  return ceil_mode ? (n + k - 1) / k : n / k;
}

}  // namespace

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t dilation,
                             std::int64_t pad) {
  const std::int64_t span = in + 2 * pad - dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

template <class T>
Tensor<T> conv3d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const Conv3dGeometry& geom) {
  const ConvPlan p = make_plan(x, w, b, geom);
  Tensor<T> out(Shape{p.n, p.co, p.od, p.oh, p.ow});
  auto& ov = out.mutable_values();
  const auto dt = depth_taps(p);
  const std::int64_t sd = p.stride.d, wstride = p.kh * p.kw;
  const std::vector<double> wd(w.values().begin(), w.values().end());
  std::vector<double> xt(static_cast<std::size_t>(p.ci * p.in_plane()));
  std::vector<double> acc(static_cast<std::size_t>(p.co * p.out_plane()));
  for (std::int64_t n = 0; n < p.n; ++n) {
    to_hwd(x.data() + n * p.ci * p.in_plane(), p.ci, p.d, p.h, p.w, xt.data());
    for (std::int64_t o = 0; o < p.co; ++o)
      std::fill_n(acc.begin() + o * p.out_plane(), p.out_plane(), static_cast<double>(b[o]));
    for_each_spatial_tap(p, [&](std::int64_t y, std::int64_t xx, std::int64_t iy, std::int64_t ix, std::int64_t bb,
                                std::int64_t cc) {
      for (std::int64_t o = 0; o < p.co; ++o) {
        double* dst = acc.data() + ((o * p.oh + y) * p.ow + xx) * p.od;
        for (std::int64_t c = 0; c < p.ci; ++c) {
          const double* src = xt.data() + ((c * p.h + iy) * p.w + ix) * p.d;
          const double* wk = wd.data() + (o * p.ci + c) * p.taps() + bb * p.kw + cc;
          for (std::int64_t a = 0; a < p.kd; ++a) {
            const double wv = wk[a * wstride];
            const DepthTap& t = dt[static_cast<std::size_t>(a)];
            if (sd == 1) {
              const double* s = src + t.off;
              for (std::int64_t z = t.lo; z < t.hi; ++z) dst[z] += wv * s[z];
            } else {
              for (std::int64_t z = t.lo; z < t.hi; ++z) dst[z] += wv * src[z * sd + t.off];
            }
          }
        }
      }
    });
    from_hwd(acc.data(), p.co, p.od, p.oh, p.ow, ov.data() + n * p.co * p.out_plane(), false);
  }
  if (!tape) return out;
  return tape->record(out, {x.node(), w.node(), b.node()}, [x, w, p, bnode = b.node()](Tape<T>& t, std::span<const T> g) {
    const bool need_x = t.requires_grad(x.node());
    const bool need_w = t.requires_grad(w.node());
    const auto dt = depth_taps(p);
    const std::int64_t sd = p.stride.d, wstride = p.kh * p.kw;
    const std::vector<double> wd(w.values().begin(), w.values().end());
    std::vector<double> xt(static_cast<std::size_t>(p.ci * p.in_plane()));
    std::vector<double> gxt(static_cast<std::size_t>(p.ci * p.in_plane()));
    std::vector<double> gt(static_cast<std::size_t>(p.co * p.out_plane()));
    std::vector<double> gw(static_cast<std::size_t>(w.numel()), 0.0);
    std::vector<double> gb(static_cast<std::size_t>(p.co), 0.0);
    for (std::int64_t n = 0; n < p.n; ++n) {
      const T* gn = g.data() + n * p.co * p.out_plane();
      for (std::int64_t o = 0; o < p.co; ++o) {
        double s = 0.0;
        for (std::int64_t i = 0; i < p.out_plane(); ++i) s += static_cast<double>(gn[o * p.out_plane() + i]);
        gb[static_cast<std::size_t>(o)] += s;
      }
      if (!need_x && !need_w) continue;
      to_hwd(gn, p.co, p.od, p.oh, p.ow, gt.data());
      if (need_w) to_hwd(x.data() + n * p.ci * p.in_plane(), p.ci, p.d, p.h, p.w, xt.data());
      if (need_x) std::fill(gxt.begin(), gxt.end(), 0.0);
      for_each_spatial_tap(p, [&](std::int64_t y, std::int64_t xx, std::int64_t iy, std::int64_t ix, std::int64_t bb,
                                  std::int64_t cc) {
        for (std::int64_t o = 0; o < p.co; ++o) {
          const double* go = gt.data() + ((o * p.oh + y) * p.ow + xx) * p.od;
          for (std::int64_t c = 0; c < p.ci; ++c) {
            const std::int64_t row = ((c * p.h + iy) * p.w + ix) * p.d;
            const std::int64_t widx = (o * p.ci + c) * p.taps() + bb * p.kw + cc;
            for (std::int64_t a = 0; a < p.kd; ++a) {
              const DepthTap& tap = dt[static_cast<std::size_t>(a)];
              if (need_w) {
                const double* src = xt.data() + row;
                double s = 0;
                for (std::int64_t z = tap.lo; z < tap.hi; ++z) s += go[z] * src[z * sd + tap.off];
                gw[static_cast<std::size_t>(widx + a * wstride)] += s;
              }
              if (need_x) {
                const double wv = wd[static_cast<std::size_t>(widx + a * wstride)];
                double* dst = gxt.data() + row;
                if (sd == 1) {
                  double* d1 = dst + tap.off;
                  for (std::int64_t z = tap.lo; z < tap.hi; ++z) d1[z] += wv * go[z];
                } else {
                  for (std::int64_t z = tap.lo; z < tap.hi; ++z) dst[z * sd + tap.off] += wv * go[z];
                }
              }
            }
          }
        }
      });
      if (need_x) from_hwd(gxt.data(), p.ci, p.d, p.h, p.w, t.grad(x.node()).data() + n * p.ci * p.in_plane(), true);
    }
    if (need_w) {
      auto& dst = t.grad(w.node());
      for (std::size_t i = 0; i < gw.size(); ++i) dst[i] += static_cast<T>(gw[i]);
    }
    if (t.requires_grad(bnode)) {
      auto& dst = t.grad(bnode);
      for (std::size_t i = 0; i < gb.size(); ++i) dst[i] += static_cast<T>(gb[i]);
    }
  });
}

template <class T>
Tensor<T> avg_pool3d(Tape<T>* tape, const Tensor<T>& x, Dhw kernel, Dhw stride, bool ceil_mode) {
  require_rank5(x.shape(), "avg_pool3d input");
  if (!(kernel == stride)) throw ArgumentError("avg_pool3d supports only non-overlapping windows (kernel == stride)");
  if (kernel.d < 1 || kernel.h < 1 || kernel.w < 1) throw ArgumentError("avg_pool3d window must be non-empty");
  const Shape& s = x.shape();
  const std::int64_t od = pooled_extent(s[2], kernel.d, ceil_mode);
  const std::int64_t oh = pooled_extent(s[3], kernel.h, ceil_mode);
  const std::int64_t ow = pooled_extent(s[4], kernel.w, ceil_mode);
  if (od < 1 || oh < 1 || ow < 1) throw ArgumentError("avg_pool3d window larger than input " + s.str());
  const Shape os{s[0], s[1], od, oh, ow};
  Tensor<T> out(os);
  auto& ov = out.mutable_values();
  const T* xv = x.data();
  std::int64_t k = 0;
  for (std::int64_t nc = 0; nc < s[0] * s[1]; ++nc) {
    const T* plane = xv + nc * s[2] * s[3] * s[4];
    for (std::int64_t a = 0; a < od; ++a) {
      const std::int64_t d0 = a * kernel.d, d1 = std::min(d0 + kernel.d, s[2]);
      for (std::int64_t b = 0; b < oh; ++b) {
        const std::int64_t h0 = b * kernel.h, h1 = std::min(h0 + kernel.h, s[3]);
        for (std::int64_t c = 0; c < ow; ++c) {
          const std::int64_t w0 = c * kernel.w, w1 = std::min(w0 + kernel.w, s[4]);
          double acc = 0.0;
          for (std::int64_t i = d0; i < d1; ++i)
            for (std::int64_t j = h0; j < h1; ++j)
              for (std::int64_t l = w0; l < w1; ++l) acc += static_cast<double>(plane[(i * s[3] + j) * s[4] + l]);
          ov[static_cast<std::size_t>(k++)] = static_cast<T>(acc / static_cast<double>((d1 - d0) * (h1 - h0) * (w1 - w0)));
        }
      }
    }
  }
  if (!tape) return out;
  return tape->record(out, {x.node()}, [s, os, kernel, xid = x.node()](Tape<T>& t, std::span<const T> g) {
    auto& gx = t.grad(xid);
    std::int64_t k = 0;
    for (std::int64_t nc = 0; nc < s[0] * s[1]; ++nc) {
      T* plane = gx.data() + nc * s[2] * s[3] * s[4];
      for (std::int64_t a = 0; a < os[2]; ++a) {
        const std::int64_t d0 = a * kernel.d, d1 = std::min(d0 + kernel.d, s[2]);
        for (std::int64_t b = 0; b < os[3]; ++b) {
          const std::int64_t h0 = b * kernel.h, h1 = std::min(h0 + kernel.h, s[3]);
          for (std::int64_t c = 0; c < os[4]; ++c) {
            const std::int64_t w0 = c * kernel.w, w1 = std::min(w0 + kernel.w, s[4]);
            const double share =
                static_cast<double>(g[static_cast<std::size_t>(k++)]) / static_cast<double>((d1 - d0) * (h1 - h0) * (w1 - w0));
            for (std::int64_t i = d0; i < d1; ++i)
              for (std::int64_t j = h0; j < h1; ++j)
                for (std::int64_t l = w0; l < w1; ++l) plane[(i * s[3] + j) * s[4] + l] += static_cast<T>(share);
          }
        }
      }
    }
  });
}

template <class T>
Tensor<T> upsample_nearest3d(Tape<T>* tape, const Tensor<T>& x, Dhw factors, Dhw target) {
  require_rank5(x.shape(), "upsample_nearest3d input");
  const Shape& s = x.shape();
  if (factors.d < 1 || factors.h < 1 || factors.w < 1) throw ArgumentError("upsample factors must be >= 1");
  const auto fits = [](std::int64_t in, std::int64_t f, std::int64_t tgt) { return tgt >= in && tgt <= in * f; };
  if (!fits(s[2], factors.d, target.d) || !fits(s[3], factors.h, target.h) || !fits(s[4], factors.w, target.w)) {
    throw ShapeError("upsample target (" + std::to_string(target.d) + "," + std::to_string(target.h) + "," +
                     std::to_string(target.w) + ") is outside the replicated extent of input " + s.str());
  }
  const Shape os{s[0], s[1], target.d, target.h, target.w};
  Tensor<T> out(os);
  auto& ov = out.mutable_values();
  const T* xv = x.data();
  std::int64_t k = 0;
  for (std::int64_t nc = 0; nc < s[0] * s[1]; ++nc) {
    const T* plane = xv + nc * s[2] * s[3] * s[4];
    for (std::int64_t a = 0; a < target.d; ++a)
      for (std::int64_t b = 0; b < target.h; ++b)
        for (std::int64_t c = 0; c < target.w; ++c) {
          ov[static_cast<std::size_t>(k++)] = plane[((a / factors.d) * s[3] + b / factors.h) * s[4] + c / factors.w];
        }
  }
  if (!tape) return out;
  return tape->record(out, {x.node()}, [s, target, factors, xid = x.node()](Tape<T>& t, std::span<const T> g) {
    auto& gx = t.grad(xid);
    const std::int64_t plane_in = s[2] * s[3] * s[4];
    std::vector<double> acc(static_cast<std::size_t>(plane_in));
    std::int64_t k = 0;
    for (std::int64_t nc = 0; nc < s[0] * s[1]; ++nc) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t a = 0; a < target.d; ++a)
        for (std::int64_t b = 0; b < target.h; ++b)
          for (std::int64_t c = 0; c < target.w; ++c) {
            acc[static_cast<std::size_t>(((a / factors.d) * s[3] + b / factors.h) * s[4] + c / factors.w)] +=
                static_cast<double>(g[static_cast<std::size_t>(k++)]);
          }
      T* plane = gx.data() + nc * plane_in;
      for (std::int64_t i = 0; i < plane_in; ++i) plane[i] += static_cast<T>(acc[static_cast<std::size_t>(i)]);
    }
  });
}

template <class T>
Tensor<T> batch_norm3d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       NormMode mode, const RunningStats<T>* running) {
  require_rank5(x.shape(), "batch_norm3d input");
  const Shape s = x.shape();
  const std::int64_t channels = s[1];
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("batch_norm3d parameters " + gamma.shape().str() + "/" + beta.shape().str() +
                     " do not match channels of " + s.str());
  }
  if (running && (static_cast<std::int64_t>(running->mean.size()) != channels ||
                  static_cast<std::int64_t>(running->var.size()) != channels)) {
    throw ShapeError("batch_norm3d running statistics do not match channels of " + s.str());
  }
  if (mode == NormMode::kRunningStats && !running) {
    throw ArgumentError("batch_norm3d running-stats mode needs running statistics");
  }
  const std::int64_t plane = s[2] * s[3] * s[4];
  const std::int64_t count = s[0] * plane;
  std::vector<double> mean(static_cast<std::size_t>(channels)), inv_std(static_cast<std::size_t>(channels));
  const T* xv = x.data();
  for (std::int64_t c = 0; c < channels; ++c) {
    double mu, var;
    if (mode == NormMode::kBatchStats) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < s[0]; ++n) {
        const T* p = xv + (n * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t n = 0; n < s[0]; ++n) {
        const T* p = xv + (n * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double dlt = static_cast<double>(p[i]) - mu;
          sq += dlt * dlt;
        }
      }
      var = sq / static_cast<double>(count);
      if (running) {
        const auto idx = static_cast<std::size_t>(c);
        const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
        running->mean[idx] = static_cast<T>((1.0 - kBatchNormMomentum) * static_cast<double>(running->mean[idx]) +
                                            kBatchNormMomentum * mu);
        running->var[idx] = static_cast<T>((1.0 - kBatchNormMomentum) * static_cast<double>(running->var[idx]) +
                                           kBatchNormMomentum * unbiased);
      }
    } else {
      mu = static_cast<double>(running->mean[static_cast<std::size_t>(c)]);
      var = static_cast<double>(running->var[static_cast<std::size_t>(c)]);
    }
    mean[static_cast<std::size_t>(c)] = mu;
    inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + kBatchNormEps);
  }
  Tensor<T> out(s);
  auto& ov = out.mutable_values();
  for (std::int64_t n = 0; n < s[0]; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const double g = static_cast<double>(gamma[c]) * inv_std[ci];
      const double sh = static_cast<double>(beta[c]);
      const std::int64_t base = (n * channels + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        ov[static_cast<std::size_t>(base + i)] = static_cast<T>(g * (static_cast<double>(xv[base + i]) - mean[ci]) + sh);
      }
    }
  if (!tape) return out;
  return tape->record(
      out, {x.node(), gamma.node(), beta.node()},
      [x, gamma, mode, mean, inv_std, gid = gamma.node(), bid = beta.node()](Tape<T>& t, std::span<const T> g) {
        const Shape& s = x.shape();
        const std::int64_t channels = s[1];
        const std::int64_t plane = s[2] * s[3] * s[4];
        const double m = static_cast<double>(s[0] * plane);
        const T* xv = x.data();
        std::vector<double> sum_g(static_cast<std::size_t>(channels), 0.0), sum_gx(static_cast<std::size_t>(channels), 0.0);
        for (std::int64_t n = 0; n < s[0]; ++n)
          for (std::int64_t c = 0; c < channels; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            const std::int64_t base = (n * channels + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double gv = static_cast<double>(g[static_cast<std::size_t>(base + i)]);
              const double xhat = (static_cast<double>(xv[base + i]) - mean[ci]) * inv_std[ci];
              sum_g[ci] += gv;
              sum_gx[ci] += gv * xhat;
            }
          }
        if (t.requires_grad(gid)) {
          auto& gg = t.grad(gid);
          for (std::int64_t c = 0; c < channels; ++c) gg[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx[static_cast<std::size_t>(c)]);
        }
        if (t.requires_grad(bid)) {
          auto& gb = t.grad(bid);
          for (std::int64_t c = 0; c < channels; ++c) gb[static_cast<std::size_t>(c)] += static_cast<T>(sum_g[static_cast<std::size_t>(c)]);
        }
        if (!t.requires_grad(x.node())) return;
        auto& gx = t.grad(x.node());
        for (std::int64_t n = 0; n < s[0]; ++n)
          for (std::int64_t c = 0; c < channels; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            const double scale_c = static_cast<double>(gamma[c]) * inv_std[ci];
            const std::int64_t base = (n * channels + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const auto idx = static_cast<std::size_t>(base + i);
              const double gv = static_cast<double>(g[idx]);
              double dx;
              if (mode == NormMode::kBatchStats) {
                const double xhat = (static_cast<double>(xv[base + i]) - mean[ci]) * inv_std[ci];
                dx = scale_c * (gv - sum_g[ci] / m - xhat * sum_gx[ci] / m);
              } else {
                dx = scale_c * gv;
              }
              gx[idx] += static_cast<T>(dx);
            }
          }
      });
}

template <class T>
Tensor<T> classifier_head(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank5(x.shape(), "classifier_head input");
  const Shape& s = x.shape();
  const std::int64_t n = s[0], channels = s[1], plane = s[2] * s[3] * s[4];
  if (w.shape().rank() != 2 || w.dim(1) != channels) {
    throw ShapeError("classifier_head weight " + w.shape().str() + " does not match input " + s.str());
  }
  const std::int64_t k = w.dim(0);
  if (b.numel() != k) throw ShapeError("classifier_head bias " + b.shape().str() + " does not match weight " + w.shape().str());
  std::vector<double> pooled(static_cast<std::size_t>(n * channels));
  for (std::int64_t i = 0; i < n * channels; ++i) {
    double acc = 0.0;
    const T* p = x.data() + i * plane;
    for (std::int64_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
    pooled[static_cast<std::size_t>(i)] = acc / static_cast<double>(plane);
  }
  Tensor<T> out(Shape{n, k});
  auto& ov = out.mutable_values();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t o = 0; o < k; ++o) {
      double acc = static_cast<double>(b[o]);
      for (std::int64_t c = 0; c < channels; ++c) {
        acc += static_cast<double>(w[o * channels + c]) * pooled[static_cast<std::size_t>(i * channels + c)];
      }
      ov[static_cast<std::size_t>(i * k + o)] = static_cast<T>(acc);
    }
  if (!tape) return out;
  return tape->record(out, {x.node(), w.node(), b.node()},
                      [s, w, pooled = std::move(pooled), xid = x.node(), bid = b.node()](Tape<T>& t, std::span<const T> g) {
                        const std::int64_t n = s[0], channels = s[1], plane = s[2] * s[3] * s[4], k = w.dim(0);
                        if (t.requires_grad(w.node())) {
                          auto& gw = t.grad(w.node());
                          for (std::int64_t o = 0; o < k; ++o)
                            for (std::int64_t c = 0; c < channels; ++c) {
                              double acc = 0.0;
                              for (std::int64_t i = 0; i < n; ++i) {
                                acc += static_cast<double>(g[static_cast<std::size_t>(i * k + o)]) *
                                       pooled[static_cast<std::size_t>(i * channels + c)];
                              }
                              gw[static_cast<std::size_t>(o * channels + c)] += static_cast<T>(acc);
                            }
                        }
                        if (t.requires_grad(bid)) {
                          auto& gb = t.grad(bid);
                          for (std::int64_t o = 0; o < k; ++o) {
                            double acc = 0.0;
                            for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(g[static_cast<std::size_t>(i * k + o)]);
                            gb[static_cast<std::size_t>(o)] += static_cast<T>(acc);
                          }
                        }
                        if (!t.requires_grad(xid)) return;
                        auto& gx = t.grad(xid);
                        for (std::int64_t i = 0; i < n; ++i)
                          for (std::int64_t c = 0; c < channels; ++c) {
                            double acc = 0.0;
                            for (std::int64_t o = 0; o < k; ++o) {
                              acc += static_cast<double>(g[static_cast<std::size_t>(i * k + o)]) * static_cast<double>(w[o * channels + c]);
                            }
                            const T share = static_cast<T>(acc / static_cast<double>(plane));
                            T* p = gx.data() + (i * channels + c) * plane;
                            for (std::int64_t j = 0; j < plane; ++j) p[j] += share;
                          }
                      });
}

template <class T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  std::vector<T> v(x.values().begin(), x.values().end());
  for (auto& e : v) e = e > T(0) ? e : T(0);
  Tensor<T> out(x.shape(), std::move(v));
  if (!tape) return out;
  return tape->record(out, {x.node()}, [x](Tape<T>& t, std::span<const T> g) {
    auto& gx = t.grad(x.node());
    const T* xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> softmax_smoothmax(Tape<T>* tape, const Tensor<T>& v) {
  const std::int64_t n = v.numel();
  if (v.shape().rank() != 1) throw ShapeError("softmax_smoothmax expects a vector, got " + v.shape().str());
  double mx = static_cast<double>(v[0]);
  for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(v[i]));
  std::vector<double> e(static_cast<std::size_t>(n));
  double z = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    e[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(v[i]) - mx);
    z += e[static_cast<std::size_t>(i)];
  }
  std::vector<double> probs(static_cast<std::size_t>(n));
  std::vector<T> pv(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = e[i] / z;
    pv[i] = static_cast<T>(probs[i]);
  }
  Tensor<T> p(v.shape(), std::move(pv));
  Tensor<T> lse(Shape{}, std::vector<T>{static_cast<T>(mx + std::log(z))});
  if (!tape) return {p, lse};
  const int vid = v.node();
  Tensor<T> p_tracked = tape->record(p, {vid}, [probs, vid](Tape<T>& t, std::span<const T> g) {
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) dot += static_cast<double>(g[i]) * probs[i];
    auto& gv = t.grad(vid);
    for (std::size_t i = 0; i < probs.size(); ++i) gv[i] += static_cast<T>(probs[i] * (static_cast<double>(g[i]) - dot));
  });
  Tensor<T> lse_tracked = tape->record(lse, {vid}, [probs, vid](Tape<T>& t, std::span<const T> g) {
    auto& gv = t.grad(vid);
    const double up = static_cast<double>(g[0]);
    for (std::size_t i = 0; i < probs.size(); ++i) gv[i] += static_cast<T>(up * probs[i]);
  });
  return {p_tracked, lse_tracked};
}

template <class T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.shape().rank() != 2) throw ShapeError("cross_entropy expects (N,K) logits, got " + logits.shape().str());
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw ArgumentError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " outside [0, " +
                          std::to_string(k) + ")");
    }
  }
  std::vector<double> probs(static_cast<std::size_t>(n * k));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * k;
    double mx = static_cast<double>(row[0]);
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double log_z = mx + std::log(z);
    for (std::int64_t j = 0; j < k; ++j) probs[static_cast<std::size_t>(i * k + j)] = std::exp(static_cast<double>(row[j]) - log_z);
    total += log_z - static_cast<double>(row[labels[static_cast<std::size_t>(i)]]);
  }
  Tensor<T> out(Shape{}, std::vector<T>{static_cast<T>(total / static_cast<double>(n))});
  if (!tape) return out;
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  return tape->record(out, {logits.node()},
                      [probs = std::move(probs), lab = std::move(lab), n, k, lid = logits.node()](Tape<T>& t, std::span<const T> g) {
                        auto& gl = t.grad(lid);
                        const double up = static_cast<double>(g[0]) / static_cast<double>(n);
                        for (std::int64_t i = 0; i < n; ++i)
                          for (std::int64_t j = 0; j < k; ++j) {
                            const double target = j == lab[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
                            gl[static_cast<std::size_t>(i * k + j)] +=
                                static_cast<T>(up * (probs[static_cast<std::size_t>(i * k + j)] - target));
                          }
                      });
}

template <class T>
Tensor<T> weighted_sum(Tape<T>* tape, std::span<const Tensor<T>> xs, const Tensor<T>& weights) {
  if (xs.empty()) throw ArgumentError("weighted_sum needs at least one term");
  if (weights.numel() != static_cast<std::int64_t>(xs.size())) {
    throw ShapeError("weighted_sum has " + std::to_string(xs.size()) + " terms but " + std::to_string(weights.numel()) +
                     " weights");
  }
  const Shape s = xs[0].shape();
  for (const auto& x : xs) {
    if (!(x.shape() == s)) throw ShapeError("weighted_sum terms differ in shape: " + s.str() + " vs " + x.shape().str());
  }
  const auto count = static_cast<std::size_t>(s.numel());
  std::vector<double> acc(count, 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double wk = static_cast<double>(weights[static_cast<std::int64_t>(k)]);
    const T* xv = xs[k].data();
    for (std::size_t i = 0; i < count; ++i) acc[i] += wk * static_cast<double>(xv[i]);
  }
  std::vector<T> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = static_cast<T>(acc[i]);
  Tensor<T> out(s, std::move(v));
  if (!tape) return out;
  std::vector<int> inputs;
  for (const auto& x : xs) inputs.push_back(x.node());
  inputs.push_back(weights.node());
  std::vector<Tensor<T>> terms(xs.begin(), xs.end());
  return tape->record(out, inputs, [terms = std::move(terms), weights](Tape<T>& t, std::span<const T> g) {
    const bool need_w = t.requires_grad(weights.node());
    std::vector<double> gw(terms.size(), 0.0);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const T* xv = terms[k].data();
      if (need_w) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * static_cast<double>(xv[i]);
        gw[k] = acc;
      }
      if (t.requires_grad(terms[k].node())) {
        auto& gx = t.grad(terms[k].node());
        const double wk = static_cast<double>(weights[static_cast<std::int64_t>(k)]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += static_cast<T>(wk * static_cast<double>(g[i]));
      }
    }
    if (need_w) {
      auto& dst = t.grad(weights.node());
      for (std::size_t k = 0; k < gw.size(); ++k) dst[k] += static_cast<T>(gw[k]);
    }
  });
}

template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  std::vector<T> v(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.values()[i];
  Tensor<T> out(a.shape(), std::move(v));
  if (!tape) return out;
  return tape->record(out, {a.node(), b.node()}, [aid = a.node(), bid = b.node()](Tape<T>& t, std::span<const T> g) {
    for (int id : {aid, bid}) {
      if (!t.requires_grad(id)) continue;
      auto& gx = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, double factor) {
  std::vector<T> v(a.values().begin(), a.values().end());
  for (auto& e : v) e = static_cast<T>(factor * static_cast<double>(e));
  Tensor<T> out(a.shape(), std::move(v));
  if (!tape) return out;
  return tape->record(out, {a.node()}, [factor, aid = a.node()](Tape<T>& t, std::span<const T> g) {
    auto& gx = t.grad(aid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += static_cast<T>(factor * static_cast<double>(g[i]));
  });
}

template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  double acc = 0.0;
  for (T e : x.values()) acc += static_cast<double>(e);
  Tensor<T> out(Shape{}, std::vector<T>{static_cast<T>(acc)});
  if (!tape) return out;
  return tape->record(out, {x.node()}, [xid = x.node()](Tape<T>& t, std::span<const T> g) {
    auto& gx = t.grad(xid);
    for (auto& e : gx) e += g[0];
  });
}

template <class T>
Tensor<T> dot_const(Tape<T>* tape, const Tensor<T>& x, std::span<const T> weights) {
  if (static_cast<std::int64_t>(weights.size()) != x.numel()) {
    throw ShapeError("dot_const weight count does not match " + x.shape().str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += static_cast<double>(x.values()[i]) * static_cast<double>(weights[i]);
  Tensor<T> out(Shape{}, std::vector<T>{static_cast<T>(acc)});
  if (!tape) return out;
  std::vector<T> wcopy(weights.begin(), weights.end());
  return tape->record(out, {x.node()}, [wcopy = std::move(wcopy), xid = x.node()](Tape<T>& t, std::span<const T> g) {
    auto& gx = t.grad(xid);
    for (std::size_t i = 0; i < wcopy.size(); ++i) gx[i] += g[0] * wcopy[i];
  });
}

#define A2SNAS_INSTANTIATE_OPS(T)                                                                                  \
  template Tensor<T> conv3d(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Conv3dGeometry&); \
  template Tensor<T> avg_pool3d(Tape<T>*, const Tensor<T>&, Dhw, Dhw, bool);                                        \
  template Tensor<T> upsample_nearest3d(Tape<T>*, const Tensor<T>&, Dhw, Dhw);                                      \
  template Tensor<T> batch_norm3d(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NormMode,         \
                                  const RunningStats<T>*);                                                          \
  template Tensor<T> classifier_head(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> relu(Tape<T>*, const Tensor<T>&);                                                              \
  template std::pair<Tensor<T>, Tensor<T>> softmax_smoothmax(Tape<T>*, const Tensor<T>&);                           \
  template Tensor<T> cross_entropy(Tape<T>*, const Tensor<T>&, std::span<const std::int32_t>);                      \
  template Tensor<T> weighted_sum(Tape<T>*, std::span<const Tensor<T>>, const Tensor<T>&);                          \
  template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> scale(Tape<T>*, const Tensor<T>&, double);                                                     \
  template Tensor<T> sum(Tape<T>*, const Tensor<T>&);                                                               \
  template Tensor<T> dot_const(Tape<T>*, const Tensor<T>&, std::span<const T>);

A2SNAS_INSTANTIATE_OPS(float)
A2SNAS_INSTANTIATE_OPS(double)

#undef A2SNAS_INSTANTIATE_OPS

}  // namespace a2snas::ops
