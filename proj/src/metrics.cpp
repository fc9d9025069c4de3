#include "scenegen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "scenegen/checkpoint.hpp"
#include "scenegen/error.hpp"
#include "scenegen/rng.hpp"
#include "scenegen/training.hpp"

namespace scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

void FeatureAccumulator::add(const Eigen::VectorXd& row) {
  if (dim_ == 0) dim_ = static_cast<int>(row.size());
  if (row.size() != dim_) throw DimensionError("feature row has the wrong dimension");
  rows_.push_back(row);
}

void FeatureAccumulator::merge(const FeatureAccumulator& other) {
  for (const auto& r : other.rows_) add(r);
}

FeatureStats FeatureAccumulator::finalize() const {
  if (rows_.size() < 2) {
    throw ValidationError("feature statistics need at least 2 samples, got " +
                          std::to_string(rows_.size()));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows_.size()), dim_);
  for (std::size_t i = 0; i < rows_.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows_[i].transpose();
  return feature_stats(m);
}

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) {
    throw ValidationError("feature statistics need at least 2 samples, got " +
                          std::to_string(features.rows()));
  }
  FeatureStats s;
  s.sample_count = features.rows();
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.covariance = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  return s;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) {
    throw NumericalError(std::string("eigendecomposition of ") + what + " did not converge");
  }
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  const double tol = -1e-6 * scale;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < tol) {
      std::ostringstream msg;
      msg << what << " is not positive semi-definite: eigenvalue " << ev[i]
          << " (largest " << ev.maxCoeff() << ", tolerance " << tol << ")";
      throw NumericalError(msg.str());
    }
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim()) {
    throw DimensionError("frechet_distance: dimensions " + std::to_string(a.dim()) + " and " +
                         std::to_string(b.dim()));
  }
  if (a.covariance.rows() != a.dim() || b.covariance.rows() != b.dim()) {
    throw DimensionError("frechet_distance: covariance does not match mean");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Eigen::MatrixXd sa = psd_sqrt(a.covariance, "covariance a");
  const Eigen::MatrixXd inner = sa * b.covariance * sa;
  const Eigen::MatrixXd root = psd_sqrt(inner, "covariance product");
  const double d = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * root.trace();
  return std::max(0.0, d);
}

double d_pix(const std::vector<Image>& images) {
  if (images.empty()) throw ValidationError("d_pix needs at least one image");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& img : images) {
    for (auto v : img.pixels) sum += v;
    count += img.pixels.size();
  }
  if (count == 0) throw ValidationError("d_pix: images are empty");
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const auto& img : images) {
    for (auto v : img.pixels) {
      const double d = v - mean;
      sq += d * d;
    }
  }
  return std::sqrt(sq / static_cast<double>(count));
}

void ExtractorConfig::validate() const {
  if (image_size < 8 || image_size % 8 != 0) throw ConfigError("extractor image_size must be a multiple of 8");
  if (width < 1 || feature_dim < 2) throw ConfigError("extractor width/feature_dim too small");
  if (num_targets < 1) throw ConfigError("extractor needs at least one target");
}

std::vector<double> extractor_targets(const SceneAnnotation& ann,
                                      const std::vector<PaletteEntry>& palette) {
  std::vector<double> out;
  for (const auto& p : palette) {
    if (!p.vehicle) continue;
    out.push_back(static_cast<double>(std::count_if(
        ann.boxes.begin(), ann.boxes.end(), [&](const BoundingBox& b) { return b.class_id == p.id; })));
  }
  std::vector<double> frac(palette.size(), 0.0);
  for (auto v : ann.mask) {
    if (v < frac.size()) frac[v] += 1.0;
  }
  for (auto& f : frac) out.push_back(4.0 * f / static_cast<double>(ann.mask.size()));
  return out;
}

FeatureExtractor::FeatureExtractor(const ExtractorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng({seed, 0x4645});
  const int w = cfg_.width;
  const int chans[5] = {3, w, 2 * w, 4 * w, 4 * w};
  for (int i = 0; i < 4; ++i) {
    const int stride = i == 0 ? 1 : 2;
    convs_.emplace_back("fx.conv" + std::to_string(i), chans[i], chans[i + 1], 3, stride, 1, rng);
    norms_.emplace_back("fx.norm" + std::to_string(i), std::min(8, chans[i + 1]), chans[i + 1]);
    acts_.emplace_back();
  }
  fc_ = nn::Linear("fx.fc", chans[4], cfg_.feature_dim, rng);
  head_ = nn::Linear("fx.head", cfg_.feature_dim, cfg_.num_targets, rng);
}

Tensor FeatureExtractor::features(const Tensor& images) {
  if (!ready()) throw StateError("feature extractor is not loaded");
  if (images.c() != 3 || images.h() != cfg_.image_size || images.w() != cfg_.image_size) {
    throw DimensionError("extractor expects (n, 3, " + std::to_string(cfg_.image_size) + ", " +
                         std::to_string(cfg_.image_size) + "), got " + images.shape().str());
  }
  Tensor h = images;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = acts_[i].forward(norms_[i].forward(convs_[i].forward(h)));
  }
  pooled_from_ = h.shape();
  Tensor pooled = nn::sum_spatial(h);
  pooled *= static_cast<real>(1.0 / static_cast<double>(h.shape().plane()));
  return fc_act_.forward(fc_.forward(pooled));
}

Tensor FeatureExtractor::forward(const Tensor& images) {
  return head_.forward(features(images));
}

void FeatureExtractor::backward(const Tensor& g_out) {
  Tensor g = fc_.backward(fc_act_.backward(head_.backward(g_out)));
  Tensor gh(pooled_from_);
  const std::size_t plane = pooled_from_.plane();
  const real inv = static_cast<real>(1.0 / static_cast<double>(plane));
  for (int n = 0; n < gh.n(); ++n) {
    for (int c = 0; c < gh.c(); ++c) {
      const real v = g[static_cast<std::size_t>(n) * gh.c() + c] * inv;
      real* dst = gh.sample(n) + c * plane;
      std::fill(dst, dst + plane, v);
    }
  }
  for (std::size_t i = convs_.size(); i-- > 0;) {
    gh = convs_[i].backward(norms_[i].backward(acts_[i].backward(gh)), i > 0);
  }
}

nn::ParamRefs FeatureExtractor::parameters() {
  nn::ParamRefs out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(out);
    norms_[i].collect(out);
  }
  fc_.collect(out);
  head_.collect(out);
  return out;
}

void FeatureExtractor::save(const fs::path& path) {
  Archive a;
  a.meta = {{"kind", "scenegen-extractor"},
            {"image_size", cfg_.image_size},
            {"width", cfg_.width},
            {"feature_dim", cfg_.feature_dim},
            {"num_targets", cfg_.num_targets}};
  for (auto* p : parameters()) a.tensors.push_back({p->name, p->value});
  save_archive(path, a);
}

FeatureExtractor FeatureExtractor::load(const fs::path& path) {
  const Archive a = load_archive(path);
  if (a.meta.value("kind", std::string()) != "scenegen-extractor") {
    throw ValidationError(path.string() + " is not a feature extractor checkpoint");
  }
  ExtractorConfig cfg;
  cfg.image_size = a.meta.at("image_size").get<int>();
  cfg.width = a.meta.at("width").get<int>();
  cfg.feature_dim = a.meta.at("feature_dim").get<int>();
  cfg.num_targets = a.meta.at("num_targets").get<int>();
  FeatureExtractor fx(cfg, 0);
  for (auto* p : fx.parameters()) {
    const Tensor& t = a.get(p->name);
    if (t.shape() != p->value.shape()) throw DimensionError("extractor tensor '" + p->name + "' has the wrong shape");
    p->value = t;
  }
  return fx;
}

ExtractorTrainResult train_feature_extractor(FeatureExtractor& fx, const std::vector<SceneRecord>& data,
                                             const std::vector<PaletteEntry>& palette,
                                             const ExtractorTrainConfig& cfg) {
  if (data.empty()) throw ValidationError("extractor training needs records");
  if (cfg.steps < 1 || cfg.batch_size < 1) throw ConfigError("extractor steps and batch size must be >= 1");
  const int targets = fx.config().num_targets;
  std::vector<std::vector<double>> y;
  for (const auto& r : data) {
    if (r.image.empty()) throw ValidationError("extractor record '" + r.id + "' has no image");
    y.push_back(extractor_targets(r.annotation, palette));
    if (static_cast<int>(y.back().size()) != targets) {
      throw DimensionError("palette gives " + std::to_string(y.back().size()) + " targets, extractor has " +
                           std::to_string(targets));
    }
  }
  const nn::ParamRefs params = fx.parameters();
  AdamW opt(0.9, 0.999, 1e-8, 1e-4);
  Rng rng = make_rng({cfg.seed, 0x4654});
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<double> losses;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor> imgs;
    Tensor target(cfg.batch_size, targets);
    for (int j = 0; j < cfg.batch_size; ++j) {
      const std::size_t idx = pick(rng);
      SceneRecord rec = data[idx];
      std::vector<double> t = y[idx];
      if (rng() & 1) {
        rec.image = flip_record(rec).image;  // flips leave every target unchanged
      }
      imgs.push_back(rec.image);
      for (int k = 0; k < targets; ++k) target[static_cast<std::size_t>(j) * targets + k] = static_cast<real>(t[k]);
    }
    nn::zero_grad(params);
    const Tensor pred = fx.forward(stack_batch(imgs));
    Tensor g(pred.shape());
    double loss = 0.0;
    const double n = static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = static_cast<double>(pred[i]) - target[i];
      loss += d * d / n;
      g[i] = static_cast<real>(2.0 * d / n);
    }
    fx.backward(g);
    const double lr = onecycle_lr(step, cfg.steps, cfg.lr * 0.1, cfg.lr, 0.1, 10.0);
    opt.step(params, lr);
    losses.push_back(loss);
  }
  const std::size_t tenth = std::max<std::size_t>(1, losses.size() / 10);
  ExtractorTrainResult r;
  for (std::size_t i = 0; i < tenth; ++i) {
    r.first_loss += losses[i] / tenth;
    r.final_loss += losses[losses.size() - 1 - i] / tenth;
  }
  return r;
}

FeatureStats compute_feature_stats(const std::vector<Image>& images, FeatureExtractor& fx) {
  if (images.size() < 2) {
    throw ValidationError("feature statistics need at least 2 images, got " + std::to_string(images.size()));
  }
  FeatureAccumulator acc;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t end = std::min(images.size(), start + kChunk);
    std::vector<Tensor> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(normalize_image(images[i]));
    const Tensor f = fx.features(stack_batch(batch));
    const int d = f.c();
    for (int n = 0; n < f.n(); ++n) {
      Eigen::VectorXd row(d);
      for (int k = 0; k < d; ++k) row[k] = f[static_cast<std::size_t>(n) * d + k];
      acc.add(row);
    }
  }
  return acc.finalize();
}

json EvaluationReport::to_json() const {
  return {{"fid", fid},
          {"d_pix_real", d_pix_real},
          {"d_pix_gen", d_pix_gen},
          {"real_count", real_count},
          {"gen_count", gen_count},
          {"feature_dim", feature_dim}};
}

EvaluationReport EvaluationReport::from_json(const json& j) {
  static const char* keys[] = {"fid", "d_pix_real", "d_pix_gen", "real_count", "gen_count", "feature_dim"};
  for (const char* k : keys) {
    if (!j.contains(k)) throw ValidationError(std::string("report is missing '") + k + "'");
  }
  if (j.size() != std::size(keys)) throw ValidationError("report has unexpected keys");
  EvaluationReport r;
  r.fid = j.at("fid").get<double>();
  r.d_pix_real = j.at("d_pix_real").get<double>();
  r.d_pix_gen = j.at("d_pix_gen").get<double>();
  r.real_count = j.at("real_count").get<long>();
  r.gen_count = j.at("gen_count").get<long>();
  r.feature_dim = j.at("feature_dim").get<int>();
  return r;
}

std::string EvaluationReport::table() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-12s %12s\n"
                "%-12s %12.4f\n"
                "%-12s %12.4f\n"
                "%-12s %12.4f\n"
                "%-12s %12ld\n"
                "%-12s %12ld\n"
                "%-12s %12d\n",
                "metric", "value", "fid", fid, "d_pix_real", d_pix_real, "d_pix_gen", d_pix_gen,
                "real_count", real_count, "gen_count", gen_count, "feature_dim", feature_dim);
  return buf;
}

std::vector<Image> load_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  fs::path src = dir;
  if (fs::exists(dir / "manifest.jsonl") && fs::is_directory(dir / "images")) src = dir / "images";
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(src)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no PNG images in " + src.string());
  std::vector<Image> out;
  for (const auto& f : files) {
    Image img = read_png(f);
    if (img.channels != 3) throw ValidationError(f.string() + " is not an RGB image");
    out.push_back(std::move(img));
  }
  return out;
}

EvaluationReport evaluate_images(const std::vector<Image>& real, const std::vector<Image>& gen,
                                 FeatureExtractor& fx) {
  if (real.empty() || gen.empty()) throw ValidationError("evaluation needs images on both sides");
  EvaluationReport r;
  const FeatureStats a = compute_feature_stats(real, fx);
  const FeatureStats b = compute_feature_stats(gen, fx);
  r.fid = frechet_distance(a, b);
  r.d_pix_real = d_pix(real);
  r.d_pix_gen = d_pix(gen);
  r.real_count = static_cast<long>(real.size());
  r.gen_count = static_cast<long>(gen.size());
  r.feature_dim = a.dim();
  return r;
}

EvaluationReport evaluate_run(const fs::path& real_dir, const fs::path& gen_dir, FeatureExtractor& fx) {
  return evaluate_images(load_image_dir(real_dir), load_image_dir(gen_dir), fx);
}

std::vector<std::array<double, 3>> class_color_centroids(const std::vector<SceneRecord>& records,
                                                       const std::vector<PaletteEntry>& palette) {
  const std::size_t k = palette.size();
  std::vector<std::array<double, 3>> sum(k, {0.0, 0.0, 0.0});
  std::vector<double> count(k, 0.0);
  for (const auto& r : records) {
    if (r.image.empty()) continue;
    const Image img = denormalize_image(r.image);
    const auto& ann = r.annotation;
    for (int y = 0; y < ann.height; ++y) {
      for (int x = 0; x < ann.width; ++x) {
        const auto cls = ann.class_at(y, x);
        if (cls >= k) continue;
        for (int c = 0; c < 3; ++c) sum[cls][c] += img.at(y, x, c);
        count[cls] += 1.0;
      }
    }
  }
  std::vector<std::array<double, 3>> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (int c = 0; c < 3; ++c) {
      out[i][c] = count[i] > 0 ? sum[i][c] / count[i] : static_cast<double>(palette[i].color[c]);
    }
  }
  return out;
}

AdherenceResult conditional_adherence(const std::vector<Image>& images,
                                      const std::vector<SceneAnnotation>& scenes,
                                      const std::vector<std::array<double, 3>>& centroids) {
  if (images.size() != scenes.size()) throw DimensionError("adherence: one annotation per image required");
  if (centroids.empty()) throw ValidationError("adherence: no centroids");
  AdherenceResult res;
  std::vector<long> votes(centroids.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    const SceneAnnotation& ann = scenes[i];
    if (img.width != ann.width || img.height != ann.height || img.channels != 3) {
      throw DimensionError("adherence: image and annotation sizes differ");
    }
    for (const auto& b : ann.boxes) {
      std::fill(votes.begin(), votes.end(), 0L);
      for (int y = b.y1; y < b.y2; ++y) {
        for (int x = b.x1; x < b.x2; ++x) {
          std::size_t best = 0;
          double best_d = 1e300;
          for (std::size_t k = 0; k < centroids.size(); ++k) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) {
              const double diff = img.at(y, x, c) - centroids[k][c];
              d += diff * diff;
            }
            if (d < best_d) {
              best_d = d;
              best = k;
            }
          }
          ++votes[best];
        }
      }
      const auto majority = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      ++res.boxes;
      if (majority == b.class_id) ++res.matched;
    }
  }
  return res;
}

}  // namespace scenegen
