// Throughput of the OpenMP kernels against their serial reference versions
// at the shapes of the desk model.

#include <benchmark/benchmark.h>

#include "scenegen/kernels.hpp"
#include "scenegen/rng.hpp"

using namespace scenegen;
namespace k = scenegen::kernels;

namespace {

struct ConvCase {
  Tensor x, w, gy;
  std::vector<real> b;
  k::ConvGeometry g;
};

ConvCase conv_case(const benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  Rng rng = make_rng({static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(s)});
  ConvCase cc;
  cc.g = k::ConvGeometry{c, c, 3, 1, 1};
  cc.x = randn(Shape{4, c, s, s}, rng);
  cc.w = randn(Shape{c, c, 3, 3}, rng);
  cc.gy = randn(Shape{4, c, s, s}, rng);
  cc.b.assign(c, real(0.1));
  return cc;
}

template <auto Forward>
void conv_forward(benchmark::State& state) {
  ConvCase cc = conv_case(state);
  Tensor y;
  for (auto _ : state) {
    Forward(cc.x, cc.w, cc.b, cc.g, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * cc.x.n());
}

template <auto Backward>
void conv_backward(benchmark::State& state) {
  ConvCase cc = conv_case(state);
  Tensor gx, gw(cc.w.shape());
  std::vector<real> gb(cc.b.size());
  for (auto _ : state) {
    Backward(cc.x, cc.w, cc.gy, cc.g, &gx, &gw, &gb);
    benchmark::DoNotOptimize(gx.data());
  }
  state.SetItemsProcessed(state.iterations() * cc.x.n());
}

template <auto Forward>
void group_norm(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  Rng rng = make_rng({9});
  const Tensor x = randn(Shape{4, c, s, s}, rng);
  const std::vector<real> gamma(c, real(1)), beta(c, real(0));
  Tensor y;
  std::vector<real> mean, rstd;
  for (auto _ : state) {
    Forward(x, 8, gamma, beta, real(1e-5), y, mean, rstd);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * x.n());
}

constexpr void (*kConvFwd)(const Tensor&, const Tensor&, std::span<const real>, const k::ConvGeometry&, Tensor&) =
    &k::conv2d_forward;
constexpr void (*kConvFwdRef)(const Tensor&, const Tensor&, std::span<const real>, const k::ConvGeometry&,
                              Tensor&) = &k::reference::conv2d_forward;
constexpr void (*kConvBwd)(const Tensor&, const Tensor&, const Tensor&, const k::ConvGeometry&, Tensor*, Tensor*,
                           std::vector<real>*) = &k::conv2d_backward;
constexpr void (*kConvBwdRef)(const Tensor&, const Tensor&, const Tensor&, const k::ConvGeometry&, Tensor*, Tensor*,
                              std::vector<real>*) = &k::reference::conv2d_backward;
constexpr void (*kGn)(const Tensor&, int, std::span<const real>, std::span<const real>, real, Tensor&,
                      std::vector<real>&, std::vector<real>&) = &k::group_norm_forward;
constexpr void (*kGnRef)(const Tensor&, int, std::span<const real>, std::span<const real>, real, Tensor&,
                         std::vector<real>&, std::vector<real>&) = &k::reference::group_norm_forward;

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({24, 64})->Args({48, 32})->Args({96, 16})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(conv_forward<kConvFwd>)->Name("conv2d_forward/openmp")->Apply(shapes);
BENCHMARK(conv_forward<kConvFwdRef>)->Name("conv2d_forward/reference")->Apply(shapes);
BENCHMARK(conv_backward<kConvBwd>)->Name("conv2d_backward/openmp")->Apply(shapes);
BENCHMARK(conv_backward<kConvBwdRef>)->Name("conv2d_backward/reference")->Apply(shapes);
BENCHMARK(group_norm<kGn>)->Name("group_norm_forward/openmp")->Apply(shapes);
BENCHMARK(group_norm<kGnRef>)->Name("group_norm_forward/reference")->Apply(shapes);

BENCHMARK_MAIN();
