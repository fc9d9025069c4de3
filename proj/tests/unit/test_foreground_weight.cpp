#include <doctest.h>

#include <cmath>
#include <random>

#include "scenegen/error.hpp"
#include "scenegen/foreground_weight.hpp"
#include "scenegen/rng.hpp"

using namespace scenegen;

namespace {

WeightScheduleConfig cfg100() {
  WeightScheduleConfig c;
  c.w_min = 1.0;
  c.w_max = 3.0;
  c.eta = 0.3;
  c.total_steps = 100;
  return c;
}

double plain_mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("weight schedule reference points") {
  const auto c = cfg100();
  CHECK(weight_at_step(0, c) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(weight_at_step(15, c) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(weight_at_step(30, c) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(weight_at_step(65, c) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(weight_at_step(100, c) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weight schedule is continuous, bounded and unimodal") {
  const auto c = cfg100();
  const double peak = c.eta * c.total_steps;
  CHECK(std::abs(weight_at_step(peak - 1e-9, c) - weight_at_step(peak + 1e-9, c)) <= 1e-9);
  double prev = weight_at_step(0, c);
  for (int i = 1; i <= 1000; ++i) {
    const double t = 0.1 * i;
    const double w = weight_at_step(t, c);
    CHECK(w >= c.w_min);
    CHECK(w <= c.w_max);
    if (t <= peak) CHECK(w >= prev);
    if (t > peak) CHECK(w <= prev);
    prev = w;
  }
}

TEST_CASE("degenerate schedule is constant") {
  WeightScheduleConfig c = cfg100();
  c.w_min = c.w_max = 1.7;
  for (int t = 0; t <= 100; ++t) CHECK(weight_at_step(t, c) == 1.7);
}

TEST_CASE("weight schedule validation") {
  WeightScheduleConfig c = cfg100();
  CHECK_THROWS_AS(weight_at_step(101, c), RangeError);
  CHECK_THROWS_AS(weight_at_step(-1, c), RangeError);
  c.w_max = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = cfg100();
  c.eta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = cfg100();
  c.total_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("weight matrix without boxes is all ones") {
  const WeightMatrix w = build_weight_matrix({{}, {}}, 30, cfg100(), 2, 5, 7);
  REQUIRE(w.values.shape() == (Shape{2, 1, 5, 7}));
  for (real v : w.values.vec()) CHECK(v == real(1));
}

TEST_CASE("full-image box at the peak is constant w_max") {
  const WeightMatrix w = build_weight_matrix({{BoundingBox{0, 0, 6, 4, 2}}}, 30, cfg100(), 1, 4, 6);
  for (real v : w.values.vec()) CHECK(v == doctest::Approx(3.0));
}

TEST_CASE("two disjoint boxes on a 4x4 grid") {
  // Step 15 gives w = 2. Boxes cover (0,0)-(2,2) and (3,2)-(4,4).
  const std::vector<BoundingBox> boxes{{0, 0, 2, 2, 2}, {3, 2, 4, 4, 3}};
  const WeightMatrix w = build_weight_matrix({boxes}, 15, cfg100(), 1, 4, 4);
  const double expect[4][4] = {{2, 2, 1, 1}, {2, 2, 1, 1}, {1, 1, 1, 2}, {1, 1, 1, 2}};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) CHECK(w.values.at(0, 0, y, x) == doctest::Approx(expect[y][x]).epsilon(1e-12));
  }
}

TEST_CASE("weight matrix rejects boxes outside the image") {
  CHECK_THROWS_AS(build_weight_matrix({{BoundingBox{0, 0, 5, 2, 2}}}, 0, cfg100(), 1, 4, 4), ValidationError);
  CHECK_THROWS_AS(build_weight_matrix({{}}, 0, cfg100(), 2, 4, 4), DimensionError);
  CHECK_THROWS_AS(validate_box(BoundingBox{3, 0, 3, 2, 0}, 4, 4), ValidationError);
}

TEST_CASE("downsampling the weight matrix") {
  WeightMatrix c{Tensor(1, 1, 8, 8, real(2))};
  for (auto [h, w] : {std::pair{4, 4}, std::pair{3, 5}, std::pair{1, 1}, std::pair{8, 8}}) {
    const WeightMatrix d = downsample_weight(c, h, w);
    REQUIRE(d.values.shape() == (Shape{1, 1, h, w}));
    for (real v : d.values.vec()) CHECK(v == doctest::Approx(2.0));
  }

  WeightMatrix q{Tensor(1, 1, 2, 2)};
  q.values[0] = 1;
  q.values[1] = 3;
  q.values[2] = 5;
  q.values[3] = 7;
  CHECK(downsample_weight(q, 1, 1).values[0] == doctest::Approx(4.0));

  Rng rng = make_rng({6});
  std::uniform_real_distribution<double> u(1.0, 3.0);
  WeightMatrix r{Tensor(2, 1, 16, 16)};
  for (auto& v : r.values.vec()) v = static_cast<real>(u(rng));
  const auto [lo, hi] = std::minmax_element(r.values.vec().begin(), r.values.vec().end());
  const WeightMatrix rd = downsample_weight(r, 5, 7);
  for (real v : rd.values.vec()) {
    CHECK(v >= *lo);
    CHECK(v <= *hi);
  }
  CHECK_THROWS(downsample_weight(r, 32, 32));
}

TEST_CASE("weighted loss identities") {
  Rng rng = make_rng({7});
  const Tensor a = randn(Shape{2, 3, 4, 4}, rng);
  const Tensor b = randn(Shape{2, 3, 4, 4}, rng);
  const double mse = plain_mse(a, b);
  const WeightMatrix ones{Tensor(2, 1, 4, 4, real(1))};
  const WeightMatrix twos{Tensor(2, 1, 4, 4, real(2))};
  CHECK(std::abs(weighted_diffusion_loss(a, b, ones) - mse) <= 1e-12 * mse);
  CHECK(weighted_diffusion_loss(a, b, twos) == doctest::Approx(2.0 * mse).epsilon(1e-12));

  const WeightMatrix empty_boxes = build_weight_matrix({{}, {}}, 0, cfg100(), 2, 4, 4);
  CHECK(weighted_diffusion_loss(a, b, empty_boxes) == weighted_diffusion_loss(a, b, ones));

  // Unit residuals, left column weighted 3: (3 + 3 + 1 + 1) / 4.
  Tensor t(1, 1, 2, 2, real(1)), p(1, 1, 2, 2, real(0));
  WeightMatrix w{Tensor(1, 1, 2, 2, real(1))};
  w.values.at(0, 0, 0, 0) = 3;
  w.values.at(0, 0, 1, 0) = 3;
  CHECK(weighted_diffusion_loss(t, p, w) == 2.0);
}

TEST_CASE("weighted loss gradient matches finite differences") {
  Rng rng = make_rng({8});
  const Tensor a = randn(Shape{1, 2, 3, 3}, rng);
  Tensor b = randn(Shape{1, 2, 3, 3}, rng);
  WeightMatrix w{Tensor(1, 1, 3, 3)};
  for (auto& v : w.values.vec()) v = real(1.5);
  w.values[4] = 3;
  const LossWithGrad lg = weighted_diffusion_loss_with_grad(a, b, w);
  CHECK(lg.loss == doctest::Approx(weighted_diffusion_loss(a, b, w)).epsilon(1e-12));
  // The loss is quadratic, so the central difference is exact up to rounding.
  const real h = real(1e-2);
  for (std::size_t i = 0; i < b.size(); ++i) {
    Tensor bp = b, bm = b;
    bp[i] += h;
    bm[i] -= h;
    const double fd = (weighted_diffusion_loss(a, bp, w) - weighted_diffusion_loss(a, bm, w)) / (2 * double(h));
    CHECK(double(lg.grad[i]) == doctest::Approx(fd).epsilon(2e-3));
  }
}

TEST_CASE("region squared error") {
  Tensor t(1, 2, 2, 2, real(1)), p(1, 2, 2, 2, real(0));
  Tensor mask(1, 1, 2, 2);
  mask.at(0, 0, 0, 1) = 1;
  const RegionError e = region_squared_error(t, p, mask);
  CHECK(e.sum == 2.0);
  CHECK(e.count == 2.0);
  CHECK(e.mean() == 1.0);
}
