#include "scenegen/kernels.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "scenegen/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scenegen::kernels {
namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int thread_id() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

void check_conv(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  if (x.c() != g.in_channels) {
    throw DimensionError("conv2d: input has " + std::to_string(x.c()) +
                         " channels, expected " +
                         std::to_string(g.in_channels));
  }
  if (weight.shape() !=
      Shape{g.out_channels, g.in_channels, g.kernel, g.kernel}) {
    throw DimensionError("conv2d: weight shape " + weight.shape().str());
  }
}

// (C, H, W) -> (C*k*k, OH*OW)
void im2col(const real* src, int channels, int height, int width,
            const ConvGeometry& g, int oh, int ow, real* col) {
  const int k = g.kernel;
  for (int c = 0; c < channels; ++c) {
    const real* plane = src + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        real* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) *
                              oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * g.stride - g.pad + ky;
          real* out = row + static_cast<std::size_t>(y) * ow;
          if (iy < 0 || iy >= height) {
            std::fill(out, out + ow, real(0));
            continue;
          }
          const real* in = plane + static_cast<std::size_t>(iy) * width;
          if (g.stride == 1) {
            const int shift = kx - g.pad;
            const int x0 = std::max(0, -shift);
            const int x1 = std::min(ow, width - shift);
            std::fill(out, out + std::max(0, x0), real(0));
            if (x1 > x0) std::memcpy(out + x0, in + x0 + shift, (x1 - x0) * sizeof(real));
            std::fill(out + std::max(x0, x1), out + ow, real(0));
          } else {
            for (int x = 0; x < ow; ++x) {
              const int ix = x * g.stride - g.pad + kx;
              out[x] = (ix >= 0 && ix < width) ? in[ix] : real(0);
            }
          }
        }
      }
    }
  }
}

// Adds the columns back into (C, H, W).
void col2im(const real* col, int channels, int height, int width,
            const ConvGeometry& g, int oh, int ow, real* dst) {
  const int k = g.kernel;
  std::fill(dst, dst + static_cast<std::size_t>(channels) * height * width,
            real(0));
  for (int c = 0; c < channels; ++c) {
    real* plane = dst + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const real* row =
            col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * g.stride - g.pad + ky;
          if (iy < 0 || iy >= height) continue;
          real* out = plane + static_cast<std::size_t>(iy) * width;
          const real* in = row + static_cast<std::size_t>(y) * ow;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * g.stride - g.pad + kx;
            if (ix >= 0 && ix < width) out[ix] += in[x];
          }
        }
      }
    }
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void conv2d_forward(const Tensor& x, const Tensor& weight,
                    std::span<const real> bias, const ConvGeometry& g,
                    Tensor& y) {
  check_conv(x, weight, g);
  const int oh = g.out_size(x.h()), ow = g.out_size(x.w());
  if (!(y.shape() == Shape{x.n(), g.out_channels, oh, ow})) {
    y = Tensor(x.n(), g.out_channels, oh, ow);
  }
  const int kdim = g.in_channels * g.kernel * g.kernel;
  const int pixels = oh * ow;
  const bool pointwise = is_pointwise(g);
  CMapMat wmat(weight.data(), g.out_channels, kdim);
  const int batch = x.n();

#pragma omp parallel
  {
    std::vector<real> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * pixels);
#pragma omp for schedule(static)
    for (int i = 0; i < batch; ++i) {
      const real* colp = x.sample(i);
      if (!pointwise) {
        im2col(x.sample(i), x.c(), x.h(), x.w(), g, oh, ow, col.data());
        colp = col.data();
      }
      MapMat out(y.sample(i), g.out_channels, pixels);
      out.noalias() = wmat * CMapMat(colp, kdim, pixels);
      if (!bias.empty()) {
        for (int o = 0; o < g.out_channels; ++o) out.row(o).array() += bias[o];
      }
    }
  }
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& gy,
                     const ConvGeometry& g, Tensor* gx, Tensor* gweight,
                     std::vector<real>* gbias) {
  check_conv(x, weight, g);
  const int oh = g.out_size(x.h()), ow = g.out_size(x.w());
  if (!(gy.shape() == Shape{x.n(), g.out_channels, oh, ow})) {
    throw DimensionError("conv2d_backward: grad shape " + gy.shape().str());
  }
  const int kdim = g.in_channels * g.kernel * g.kernel;
  const int pixels = oh * ow;
  const bool pointwise = is_pointwise(g);
  CMapMat wmat(weight.data(), g.out_channels, kdim);
  if (gx && !(gx->shape() == x.shape())) *gx = Tensor(x.shape());
  const int batch = x.n();
  const int threads = max_threads();
  std::vector<std::vector<real>> tgw(gweight ? threads : 0);
  std::vector<std::vector<real>> tgb(gbias ? threads : 0);

#pragma omp parallel
  {
    const int tid = thread_id();
    std::vector<real> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * pixels);
    std::vector<real> gcol(pointwise ? 0 : static_cast<std::size_t>(kdim) * pixels);
    if (gweight) tgw[tid].assign(weight.size(), real(0));
    if (gbias) tgb[tid].assign(g.out_channels, real(0));
#pragma omp for schedule(static)
    for (int i = 0; i < batch; ++i) {
      CMapMat gout(gy.sample(i), g.out_channels, pixels);
      if (gweight) {
        const real* colp = x.sample(i);
        if (!pointwise) {
          im2col(x.sample(i), x.c(), x.h(), x.w(), g, oh, ow, col.data());
          colp = col.data();
        }
        MapMat gw(tgw[tid].data(), g.out_channels, kdim);
        gw.noalias() += gout * CMapMat(colp, kdim, pixels).transpose();
      }
      if (gbias) {
        for (int o = 0; o < g.out_channels; ++o) tgb[tid][o] += gout.row(o).sum();
      }
      if (gx) {
        if (pointwise) {
          MapMat(gx->sample(i), kdim, pixels).noalias() = wmat.transpose() * gout;
        } else {
          MapMat(gcol.data(), kdim, pixels).noalias() = wmat.transpose() * gout;
          col2im(gcol.data(), x.c(), x.h(), x.w(), g, oh, ow, gx->sample(i));
        }
      }
    }
  }
  for (int t = 0; t < threads; ++t) {
    if (gweight) {
      for (std::size_t j = 0; j < weight.size(); ++j) (*gweight)[j] += tgw[t][j];
    }
    if (gbias) {
      for (int o = 0; o < g.out_channels; ++o) (*gbias)[o] += tgb[t][o];
    }
  }
}

void linear_forward(const Tensor& x, const Tensor& weight,
                    std::span<const real> bias, Tensor& y) {
  const int in = weight.c(), out = weight.n();
  if (static_cast<int>(x.shape().sample()) != in) {
    throw DimensionError("linear: input " + x.shape().str() + " vs weight " +
                         weight.shape().str());
  }
  if (!(y.shape() == Shape{x.n(), out, 1, 1})) y = Tensor(x.n(), out);
  MapMat ym(y.data(), x.n(), out);
  ym.noalias() = CMapMat(x.data(), x.n(), in) * CMapMat(weight.data(), out, in).transpose();
  if (!bias.empty()) {
    for (int i = 0; i < x.n(); ++i) {
      for (int o = 0; o < out; ++o) ym(i, o) += bias[o];
    }
  }
}

void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& gy,
                     Tensor* gx, Tensor* gweight, std::vector<real>* gbias) {
  const int in = weight.c(), out = weight.n();
  CMapMat gym(gy.data(), x.n(), out);
  if (gweight) {
    MapMat(gweight->data(), out, in).noalias() +=
        gym.transpose() * CMapMat(x.data(), x.n(), in);
  }
  if (gbias) {
    for (int o = 0; o < out; ++o) (*gbias)[o] += gym.col(o).sum();
  }
  if (gx) {
    if (!(gx->shape() == x.shape())) *gx = Tensor(x.shape());
    MapMat(gx->data(), x.n(), in).noalias() = gym * CMapMat(weight.data(), out, in);
  }
}

void silu_forward(const Tensor& x, Tensor& y) {
  if (!(y.shape() == x.shape())) y = Tensor(x.shape());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  const real* in = x.data();
  real* out = y.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const real v = in[i];
    out[i] = v / (real(1) + std::exp(-v));
  }
}

void silu_backward(const Tensor& x, const Tensor& gy, Tensor& gx) {
  if (!(gx.shape() == x.shape())) gx = Tensor(x.shape());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  const real* in = x.data();
  const real* g = gy.data();
  real* out = gx.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const real s = real(1) / (real(1) + std::exp(-in[i]));
    out[i] = g[i] * s * (real(1) + in[i] * (real(1) - s));
  }
}

void group_norm_forward(const Tensor& x, int groups, std::span<const real> gamma,
                        std::span<const real> beta, real eps, Tensor& y,
                        std::vector<real>& mean, std::vector<real>& rstd) {
  if (groups <= 0 || x.c() % groups != 0) {
    throw DimensionError("group_norm: channels not divisible by groups");
  }
  if (!(y.shape() == x.shape())) y = Tensor(x.shape());
  const int per = x.c() / groups;
  const std::size_t count = static_cast<std::size_t>(per) * x.shape().plane();
  const int jobs = x.n() * groups;
  mean.assign(jobs, real(0));
  rstd.assign(jobs, real(0));
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int i = job / groups, grp = job % groups;
    const real* src = x.sample(i) + grp * count;
    real* dst = y.sample(i) + grp * count;
    double s = 0.0, s2 = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      s += src[j];
      s2 += static_cast<double>(src[j]) * src[j];
    }
    const double m = s / count;
    const double var = std::max(0.0, s2 / count - m * m);
    const real r = static_cast<real>(1.0 / std::sqrt(var + eps));
    mean[job] = static_cast<real>(m);
    rstd[job] = r;
    const std::size_t plane = x.shape().plane();
    for (int c = 0; c < per; ++c) {
      const int ch = grp * per + c;
      const real a = gamma[ch] * r;
      const real b = beta[ch] - static_cast<real>(m) * a;
      for (std::size_t p = 0; p < plane; ++p) {
        dst[c * plane + p] = src[c * plane + p] * a + b;
      }
    }
  }
}

void group_norm_backward(const Tensor& x, const Tensor& gy, int groups,
                         std::span<const real> gamma,
                         const std::vector<real>& mean,
                         const std::vector<real>& rstd, Tensor& gx,
                         std::vector<real>* ggamma, std::vector<real>* gbeta) {
  if (!(gx.shape() == x.shape())) gx = Tensor(x.shape());
  const int per = x.c() / groups;
  const std::size_t plane = x.shape().plane();
  const std::size_t count = static_cast<std::size_t>(per) * plane;
  const int jobs = x.n() * groups;
  // Per-job partial sums for gamma/beta keep the reduction order fixed.
  std::vector<real> pg(ggamma ? static_cast<std::size_t>(jobs) * per : 0);
  std::vector<real> pb(gbeta ? static_cast<std::size_t>(jobs) * per : 0);
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int i = job / groups, grp = job % groups;
    const real* src = x.sample(i) + grp * count;
    const real* g = gy.sample(i) + grp * count;
    real* dst = gx.sample(i) + grp * count;
    const real m = mean[job], r = rstd[job];
    double sum_g = 0.0, sum_gx = 0.0;
    for (int c = 0; c < per; ++c) {
      const real gm = gamma[grp * per + c];
      double cg = 0.0, cgx = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        const real xhat = (src[c * plane + p] - m) * r;
        const real gv = g[c * plane + p];
        cg += gv;
        cgx += static_cast<double>(gv) * xhat;
      }
      if (ggamma) pg[static_cast<std::size_t>(job) * per + c] = static_cast<real>(cgx);
      if (gbeta) pb[static_cast<std::size_t>(job) * per + c] = static_cast<real>(cg);
      sum_g += gm * cg;
      sum_gx += gm * cgx;
    }
    const real mg = static_cast<real>(sum_g / count);
    const real mgx = static_cast<real>(sum_gx / count);
    for (int c = 0; c < per; ++c) {
      const real gm = gamma[grp * per + c];
      for (std::size_t p = 0; p < plane; ++p) {
        const real xhat = (src[c * plane + p] - m) * r;
        dst[c * plane + p] = r * (g[c * plane + p] * gm - mg - xhat * mgx);
      }
    }
  }
  for (int job = 0; job < jobs; ++job) {
    const int grp = job % groups;
    for (int c = 0; c < per; ++c) {
      if (ggamma) (*ggamma)[grp * per + c] += pg[static_cast<std::size_t>(job) * per + c];
      if (gbeta) (*gbeta)[grp * per + c] += pb[static_cast<std::size_t>(job) * per + c];
    }
  }
}

void upsample_nearest2x_forward(const Tensor& x, Tensor& y) {
  const Shape s{x.n(), x.c(), x.h() * 2, x.w() * 2};
  if (!(y.shape() == s)) y = Tensor(s);
  const int planes = x.n() * x.c();
  const int h = x.h(), w = x.w();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const real* src = x.data() + static_cast<std::size_t>(p) * h * w;
    real* dst = y.data() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int yy = 0; yy < 2 * h; ++yy) {
      for (int xx = 0; xx < 2 * w; ++xx) {
        dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
      }
    }
  }
}

void upsample_nearest2x_backward(const Tensor& gy, Tensor& gx) {
  const Shape s{gy.n(), gy.c(), gy.h() / 2, gy.w() / 2};
  if (!(gx.shape() == s)) gx = Tensor(s);
  const int planes = s.n * s.c;
  const int h = s.h, w = s.w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const real* src = gy.data() + static_cast<std::size_t>(p) * 4 * h * w;
    real* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
    for (int yy = 0; yy < h; ++yy) {
      for (int xx = 0; xx < w; ++xx) {
        const real* r0 = src + (2 * yy) * 2 * w + 2 * xx;
        const real* r1 = r0 + 2 * w;
        dst[yy * w + xx] = r0[0] + r0[1] + r1[0] + r1[1];
      }
    }
  }
}

}  // namespace scenegen::kernels
