#include <doctest.h>

#include "scenegen/kernels.hpp"
#include "scenegen/rng.hpp"

using namespace scenegen;
namespace k = scenegen::kernels;

namespace {

std::vector<real> random_vec(std::size_t n, Rng& rng) {
  Tensor t = randn(Shape{static_cast<int>(n), 1, 1, 1}, rng);
  return t.vec();
}

double max_diff(const std::vector<real>& a, const std::vector<real>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_CASE("parallel convolution matches the serial reference") {
  Rng rng = make_rng({1});
  for (const auto& g : {k::ConvGeometry{3, 5, 3, 1, 1}, k::ConvGeometry{4, 6, 3, 2, 1},
                        k::ConvGeometry{6, 2, 1, 1, 0}}) {
    const Tensor x = randn(Shape{3, g.in_channels, 9, 9}, rng);
    const Tensor w = randn(Shape{g.out_channels, g.in_channels, g.kernel, g.kernel}, rng);
    const std::vector<real> b = random_vec(g.out_channels, rng);
    Tensor y, y_ref;
    k::conv2d_forward(x, w, b, g, y);
    k::reference::conv2d_forward(x, w, b, g, y_ref);
    REQUIRE(y.shape() == y_ref.shape());
    CHECK(max_abs_diff(y, y_ref) <= 1e-4);

    const Tensor gy = randn(y.shape(), rng);
    Tensor gx, gx_ref;
    Tensor gw(w.shape()), gw_ref(w.shape());
    std::vector<real> gb(g.out_channels, 0), gb_ref(g.out_channels, 0);
    k::conv2d_backward(x, w, gy, g, &gx, &gw, &gb);
    k::reference::conv2d_backward(x, w, gy, g, &gx_ref, &gw_ref, &gb_ref);
    CHECK(max_abs_diff(gx, gx_ref) <= 1e-4);
    CHECK(max_abs_diff(gw, gw_ref) <= 1e-3);
    CHECK(max_diff(gb, gb_ref) <= 1e-3);
  }
}

TEST_CASE("parallel group norm and SiLU match the serial reference") {
  Rng rng = make_rng({2});
  const Tensor x = randn(Shape{2, 8, 5, 5}, rng);
  const std::vector<real> gamma = random_vec(8, rng);
  const std::vector<real> beta = random_vec(8, rng);
  Tensor y, y_ref;
  std::vector<real> mean, rstd, mean_ref, rstd_ref;
  k::group_norm_forward(x, 4, gamma, beta, real(1e-5), y, mean, rstd);
  k::reference::group_norm_forward(x, 4, gamma, beta, real(1e-5), y_ref, mean_ref, rstd_ref);
  CHECK(max_abs_diff(y, y_ref) <= 1e-5);

  const Tensor gy = randn(y.shape(), rng);
  Tensor gx, gx_ref;
  std::vector<real> gg(8, 0), gb(8, 0), gg_ref(8, 0), gb_ref(8, 0);
  k::group_norm_backward(x, gy, 4, gamma, mean, rstd, gx, &gg, &gb);
  k::reference::group_norm_backward(x, gy, 4, gamma, mean_ref, rstd_ref, gx_ref, &gg_ref, &gb_ref);
  CHECK(max_abs_diff(gx, gx_ref) <= 1e-4);
  CHECK(max_diff(gg, gg_ref) <= 1e-4);
  CHECK(max_diff(gb, gb_ref) <= 1e-4);

  Tensor s, s_ref, gs, gs_ref;
  k::silu_forward(x, s);
  k::reference::silu_forward(x, s_ref);
  CHECK(max_abs_diff(s, s_ref) == 0.0);
  k::silu_backward(x, gy, gs);
  k::reference::silu_backward(x, gy, gs_ref);
  CHECK(max_abs_diff(gs, gs_ref) <= 1e-6);
}

TEST_CASE("nearest upsampling backward is the adjoint of forward") {
  Rng rng = make_rng({3});
  const Tensor x = randn(Shape{2, 3, 4, 4}, rng);
  Tensor y;
  k::upsample_nearest2x_forward(x, y);
  REQUIRE(y.shape() == (Shape{2, 3, 8, 8}));
  const Tensor gy = randn(y.shape(), rng);
  Tensor gx;
  k::upsample_nearest2x_backward(gy, gx);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += double(y[i]) * gy[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += double(x[i]) * gx[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}
