#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "scenegen/error.hpp"
#include "scenegen/metrics.hpp"

using namespace scenegen;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

FeatureStats stats(VectorXd mean, MatrixXd cov) {
  FeatureStats s;
  s.mean = std::move(mean);
  s.covariance = std::move(cov);
  s.sample_count = 100;
  return s;
}

MatrixXd random_spd(int d, Rng& rng) {
  MatrixXd a(d, d);
  std::normal_distribution<double> n;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = n(rng);
  }
  return a * a.transpose() / d + 0.1 * MatrixXd::Identity(d, d);
}

Image constant_image(int w, int h, std::uint8_t v) {
  Image img(w, h, 3);
  std::fill(img.pixels.begin(), img.pixels.end(), v);
  return img;
}

}  // namespace

TEST_CASE("feature statistics") {
  MatrixXd same(2, 3);
  same << 1, 2, 3, 1, 2, 3;
  const FeatureStats z = feature_stats(same);
  CHECK(z.covariance.isZero(0.0));

  MatrixXd one(2, 1);
  one << 1, 3;
  const FeatureStats s = feature_stats(one);
  CHECK(s.mean(0) == 2.0);
  CHECK(s.covariance(0, 0) == 2.0);
  CHECK(s.sample_count == 2);
  CHECK_THROWS_AS(feature_stats(MatrixXd(1, 3)), ValidationError);

  Rng rng = make_rng({61});
  std::normal_distribution<double> n;
  MatrixXd g(500, 8);
  for (int i = 0; i < 500; ++i) {
    for (int j = 0; j < 8; ++j) g(i, j) = n(rng);
  }
  const FeatureStats gs = feature_stats(g);
  CHECK(gs.mean.cwiseAbs().maxCoeff() <= 0.2);
  for (int j = 0; j < 8; ++j) {
    CHECK(gs.covariance(j, j) >= 0.7);
    CHECK(gs.covariance(j, j) <= 1.3);
  }
  CHECK((gs.covariance - gs.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("merged accumulators do not depend on the split") {
  Rng rng = make_rng({62});
  std::normal_distribution<double> n;
  FeatureAccumulator whole(4), left(4), right(4);
  for (int i = 0; i < 30; ++i) {
    VectorXd row(4);
    for (int j = 0; j < 4; ++j) row(j) = n(rng);
    whole.add(row);
    (i < 11 ? left : right).add(row);
  }
  left.merge(right);
  const FeatureStats a = whole.finalize(), b = left.finalize();
  CHECK(a.mean == b.mean);
  CHECK(a.covariance == b.covariance);
  CHECK_THROWS_AS(whole.add(VectorXd::Zero(3)), DimensionError);
}

TEST_CASE("frechet distance closed forms") {
  Rng rng = make_rng({63});
  const MatrixXd c = random_spd(6, rng);
  const FeatureStats a = stats(VectorXd::LinSpaced(6, -1, 1), c);
  CHECK(frechet_distance(a, a) <= 1e-6);

  VectorXd m(3);
  m << 1.0, -2.0, 0.5;
  const FeatureStats i0 = stats(VectorXd::Zero(3), MatrixXd::Identity(3, 3));
  const FeatureStats im = stats(m, MatrixXd::Identity(3, 3));
  CHECK(std::abs(frechet_distance(i0, im) - m.squaredNorm()) <= 1e-8);

  const FeatureStats v4 = stats(VectorXd::Zero(1), MatrixXd::Constant(1, 1, 4.0));
  const FeatureStats v1 = stats(VectorXd::Zero(1), MatrixXd::Constant(1, 1, 1.0));
  CHECK(std::abs(frechet_distance(v4, v1) - 1.0) <= 1e-10);

  CHECK_THROWS_AS(frechet_distance(i0, v1), DimensionError);
  const FeatureStats indefinite = stats(VectorXd::Zero(1), MatrixXd::Constant(1, 1, -1.0));
  CHECK_THROWS_AS(frechet_distance(indefinite, v1), NumericalError);
}

TEST_CASE("frechet distance symmetry and quadratic scaling") {
  Rng rng = make_rng({64});
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 2 + trial;
    VectorXd ma(d), mb(d);
    for (int i = 0; i < d; ++i) {
      ma(i) = n(rng);
      mb(i) = n(rng);
    }
    const FeatureStats a = stats(ma, random_spd(d, rng));
    const FeatureStats b = stats(mb, random_spd(d, rng));
    const double ab = frechet_distance(a, b);
    CHECK(ab >= 0.0);
    CHECK(std::abs(ab - frechet_distance(b, a)) <= 1e-8);
    const double k = 2.5;
    const double scaled = frechet_distance(stats(k * ma, k * k * a.covariance), stats(k * mb, k * k * b.covariance));
    CHECK(std::abs(scaled - k * k * ab) <= 1e-6 * k * k * ab);
  }
}

TEST_CASE("psd square root") {
  Rng rng = make_rng({65});
  const MatrixXd c = random_spd(5, rng);
  const MatrixXd r = psd_sqrt(c);
  CHECK((r * r - c).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(psd_sqrt(MatrixXd::Zero(3, 3)).isZero(0.0));
}

TEST_CASE("pixel standard deviation") {
  CHECK(d_pix({constant_image(4, 4, 128), constant_image(4, 4, 128)}) == 0.0);
  CHECK(d_pix({constant_image(4, 4, 0), constant_image(4, 4, 255)}) == 127.5);
  CHECK_THROWS_AS(d_pix({}), ValidationError);

  Rng rng = make_rng({66});
  std::uniform_int_distribution<int> px(0, 255);
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) {
    Image img(7, 3, 3);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(px(rng));
    imgs.push_back(img);
  }
  const double base = d_pix(imgs);
  std::vector<Image> perm(imgs.rbegin(), imgs.rend());
  std::vector<Image> flipped;
  for (const auto& im : imgs) flipped.push_back(flip_image_horizontal(im));
  CHECK(std::abs(d_pix(perm) - base) <= 1e-12);
  CHECK(std::abs(d_pix(flipped) - base) <= 1e-12);
}

TEST_CASE("evaluation report round trip") {
  EvaluationReport r;
  r.fid = 12.5;
  r.d_pix_real = 40.25;
  r.d_pix_gen = 38.0;
  r.real_count = 200;
  r.gen_count = 199;
  r.feature_dim = 64;
  const EvaluationReport back = EvaluationReport::from_json(r.to_json());
  CHECK(back.fid == r.fid);
  CHECK(back.d_pix_real == r.d_pix_real);
  CHECK(back.d_pix_gen == r.d_pix_gen);
  CHECK(back.real_count == r.real_count);
  CHECK(back.gen_count == r.gen_count);
  CHECK(back.feature_dim == r.feature_dim);
  CHECK(r.table().find("fid") != std::string::npos);
  auto j = r.to_json();
  j["extra"] = 1;
  CHECK_THROWS_AS(EvaluationReport::from_json(j), ValidationError);
}

TEST_CASE("extractor features, evaluation and persistence") {
  test::TempDir dir("eval");
  const DatasetManifest m = generate_toy_scenes(24, 32, 4, dir / "real");
  const auto recs = load_records(m);
  ExtractorConfig ec;
  ec.image_size = 32;
  ec.width = 8;
  ec.feature_dim = 16;
  ec.num_targets = static_cast<int>(extractor_targets(recs[0].annotation, m.palette).size());
  CHECK(ec.num_targets == 3 + 5);
  FeatureExtractor fx(ec, 5);
  ExtractorTrainConfig etc;
  etc.steps = 60;
  etc.batch_size = 8;
  const ExtractorTrainResult tr = train_feature_extractor(fx, recs, m.palette, etc);
  CHECK(tr.final_loss < tr.first_loss);

  const EvaluationReport self = evaluate_run(dir / "real", dir / "real", fx);
  CHECK(self.fid <= 1e-6);
  CHECK(self.d_pix_real == self.d_pix_gen);
  CHECK(self.real_count == 24);
  CHECK(self.feature_dim == 16);

  fx.save(dir / "fx.ckpt");
  FeatureExtractor back = FeatureExtractor::load(dir / "fx.ckpt");
  std::vector<Image> imgs;
  for (const auto& r : recs) imgs.push_back(denormalize_image(r.image));
  const FeatureStats a = compute_feature_stats(imgs, fx), b = compute_feature_stats(imgs, back);
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(compute_feature_stats({imgs[0]}, fx), ValidationError);
  FeatureExtractor blank;
  CHECK_THROWS_AS(compute_feature_stats(imgs, blank), StateError);
  std::filesystem::create_directories(dir / "empty");
  CHECK_THROWS_AS(evaluate_run(dir / "real", dir / "empty", fx), ValidationError);
}

TEST_CASE("adherence of the real images to their own boxes") {
  test::TempDir dir("adh");
  const DatasetManifest m = generate_toy_scenes(30, 32, 6, dir.path());
  const auto recs = load_records(m);
  const auto centroids = class_color_centroids(recs, m.palette);
  REQUIRE(centroids.size() == m.palette.size());
  std::vector<Image> imgs;
  std::vector<SceneAnnotation> anns;
  for (const auto& r : recs) {
    imgs.push_back(denormalize_image(r.image));
    anns.push_back(r.annotation);
  }
  const AdherenceResult real = conditional_adherence(imgs, anns, centroids);
  CHECK(real.boxes > 0);
  CHECK(real.rate() >= 0.95);

  std::vector<Image> gray(imgs.size(), constant_image(32, 32, 134));
  CHECK(conditional_adherence(gray, anns, centroids).rate() <= 0.05);
}
