#include <cmath>

#include "scenegen/error.hpp"
#include "scenegen/kernels.hpp"

namespace scenegen::kernels::reference {

void conv2d_forward(const Tensor& x, const Tensor& weight,
                    std::span<const real> bias, const ConvGeometry& g,
                    Tensor& y) {
  if (x.c() != g.in_channels) throw DimensionError("conv2d: channel mismatch");
  const int oh = g.out_size(x.h()), ow = g.out_size(x.w());
  y = Tensor(x.n(), g.out_channels, oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int c = 0; c < g.in_channels; ++c)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = yy * g.stride - g.pad + ky;
                const int ix = xx * g.stride - g.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += static_cast<double>(weight.at(o, c, ky, kx)) *
                       x.at(n, c, iy, ix);
              }
          y.at(n, o, yy, xx) = static_cast<real>(acc);
        }
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& gy,
                     const ConvGeometry& g, Tensor* gx, Tensor* gweight,
                     std::vector<real>* gbias) {
  const int oh = g.out_size(x.h()), ow = g.out_size(x.w());
  if (gx) *gx = Tensor(x.shape());
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          const real go = gy.at(n, o, yy, xx);
          if (gbias) (*gbias)[o] += go;
          for (int c = 0; c < g.in_channels; ++c)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = yy * g.stride - g.pad + ky;
                const int ix = xx * g.stride - g.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                if (gweight) gweight->at(o, c, ky, kx) += go * x.at(n, c, iy, ix);
                if (gx) gx->at(n, c, iy, ix) += go * weight.at(o, c, ky, kx);
              }
        }
}

void silu_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] / (real(1) + std::exp(-x[i]));
  }
}

void silu_backward(const Tensor& x, const Tensor& gy, Tensor& gx) {
  gx = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const real s = real(1) / (real(1) + std::exp(-x[i]));
    gx[i] = gy[i] * (s + x[i] * s * (real(1) - s));
  }
}

void group_norm_forward(const Tensor& x, int groups, std::span<const real> gamma,
                        std::span<const real> beta, real eps, Tensor& y,
                        std::vector<real>& mean, std::vector<real>& rstd) {
  y = Tensor(x.shape());
  const int per = x.c() / groups;
  mean.assign(x.n() * groups, 0);
  rstd.assign(x.n() * groups, 0);
  for (int n = 0; n < x.n(); ++n)
    for (int grp = 0; grp < groups; ++grp) {
      double s = 0.0;
      const double count = static_cast<double>(per) * x.h() * x.w();
      for (int c = grp * per; c < (grp + 1) * per; ++c)
        for (int yy = 0; yy < x.h(); ++yy)
          for (int xx = 0; xx < x.w(); ++xx) s += x.at(n, c, yy, xx);
      const double m = s / count;
      double v = 0.0;
      for (int c = grp * per; c < (grp + 1) * per; ++c)
        for (int yy = 0; yy < x.h(); ++yy)
          for (int xx = 0; xx < x.w(); ++xx) {
            const double d = x.at(n, c, yy, xx) - m;
            v += d * d;
          }
      const double r = 1.0 / std::sqrt(v / count + eps);
      mean[n * groups + grp] = static_cast<real>(m);
      rstd[n * groups + grp] = static_cast<real>(r);
      for (int c = grp * per; c < (grp + 1) * per; ++c)
        for (int yy = 0; yy < x.h(); ++yy)
          for (int xx = 0; xx < x.w(); ++xx)
            y.at(n, c, yy, xx) = static_cast<real>(
                (x.at(n, c, yy, xx) - m) * r * gamma[c] + beta[c]);
    }
}

void group_norm_backward(const Tensor& x, const Tensor& gy, int groups,
                         std::span<const real> gamma,
                         const std::vector<real>& mean,
                         const std::vector<real>& rstd, Tensor& gx,
                         std::vector<real>* ggamma, std::vector<real>* gbeta) {
  gx = Tensor(x.shape());
  const int per = x.c() / groups;
  const double count = static_cast<double>(per) * x.h() * x.w();
  for (int n = 0; n < x.n(); ++n)
    for (int grp = 0; grp < groups; ++grp) {
      const double m = mean[n * groups + grp], r = rstd[n * groups + grp];
      double a = 0.0, b = 0.0;
      for (int c = grp * per; c < (grp + 1) * per; ++c)
        for (int yy = 0; yy < x.h(); ++yy)
          for (int xx = 0; xx < x.w(); ++xx) {
            const double xhat = (x.at(n, c, yy, xx) - m) * r;
            const double g = gy.at(n, c, yy, xx);
            a += g * gamma[c];
            b += g * gamma[c] * xhat;
            if (ggamma) (*ggamma)[c] += static_cast<real>(g * xhat);
            if (gbeta) (*gbeta)[c] += static_cast<real>(g);
          }
      for (int c = grp * per; c < (grp + 1) * per; ++c)
        for (int yy = 0; yy < x.h(); ++yy)
          for (int xx = 0; xx < x.w(); ++xx) {
            const double xhat = (x.at(n, c, yy, xx) - m) * r;
            gx.at(n, c, yy, xx) = static_cast<real>(
                r * (gy.at(n, c, yy, xx) * gamma[c] - a / count - xhat * b / count));
          }
    }
}

}  // namespace scenegen::kernels::reference
