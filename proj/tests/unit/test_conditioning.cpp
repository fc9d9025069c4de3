#include <doctest.h>

#include "helpers.hpp"
#include "scenegen/conditioning.hpp"
#include "scenegen/error.hpp"

using namespace scenegen;
using scenegen::test::make_annotation;

namespace {

TextEncoder small_encoder(int embed = 8, int layers = 3) {
  TextEncoderConfig c;
  c.embed_dim = embed;
  c.layers = layers;
  Rng rng = make_rng({21});
  return TextEncoder(c, rng);
}

}  // namespace

TEST_CASE("prompt enumerates classes with counts and thirds") {
  // Box centers at x-fractions 0.1, 0.5 and 0.9.
  const auto ann = make_annotation(100, 40, {{5, 5, 15, 15, 2}, {45, 5, 55, 15, 2}, {85, 20, 95, 30, 3}});
  CHECK(labels_to_prompt(ann) ==
        "a surface mining scene with two trucks (left, center) and one excavator (right)");
  CHECK(labels_to_prompt(ann) == labels_to_prompt(ann));
  CHECK(labels_to_prompt(make_annotation(64, 64, {})) == "a surface mining scene with no vehicles");
}

TEST_CASE("prompt distinguishes per-class counts") {
  const auto one = make_annotation(64, 64, {{0, 0, 8, 8, 2}});
  const auto two = make_annotation(64, 64, {{0, 0, 8, 8, 2}, {20, 20, 28, 28, 2}});
  const auto other = make_annotation(64, 64, {{0, 0, 8, 8, 4}});
  CHECK(labels_to_prompt(one) != labels_to_prompt(two));
  CHECK(labels_to_prompt(one) != labels_to_prompt(other));
}

TEST_CASE("prompt errors") {
  auto ann = make_annotation(32, 32, {});
  ann.boxes.push_back({0, 0, 4, 4, 9});
  CHECK_THROWS_AS(labels_to_prompt(ann), ValidationError);
  CHECK_THROWS_AS(labels_to_prompt(make_annotation(32, 32, {}), "v9"), ValidationError);
}

TEST_CASE("layered text embedding") {
  TextEncoder enc = small_encoder(128, 3);
  const Tensor e1 = encode_text_layered(enc, "a surface mining scene with two trucks (left, center)");
  const Tensor e2 = encode_text_layered(enc, "a surface mining scene with two trucks (left, center)");
  CHECK(e1.shape() == (Shape{1, 384, 1, 1}));
  CHECK(max_abs_diff(e1, e2) == 0.0);
  CHECK(e1.all_finite());
  const Tensor e3 = encode_text_layered(enc, "a surface mining scene with three trucks (left, center)");
  CHECK(max_abs_diff(e1, e3) > 0.0);
  CHECK_THROWS_AS(encode_text_layered(enc, "   "), ValidationError);
  CHECK_THROWS_AS(encode_text_layered(enc, ""), ValidationError);
}

TEST_CASE("tokenizer normalizes case and whitespace") {
  TextEncoder enc = small_encoder();
  CHECK(enc.tokenize("Two   TRUCKS") == enc.tokenize("two trucks"));
  CHECK(enc.tokenize("two trucks") != enc.tokenize("two loaders"));
}

TEST_CASE("rasterized conditions") {
  SUBCASE("uniform mask") {
    const Tensor r = rasterize_conditions(make_annotation(8, 8, {}), 4, 4);
    REQUIRE(r.shape() == (Shape{1, 6, 4, 4}));
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        CHECK(r.at(0, 0, y, x) == 1);
        for (int c = 1; c < 6; ++c) CHECK(r.at(0, c, y, x) == 0);
      }
    }
  }
  SUBCASE("full-image box") {
    const Tensor r = rasterize_conditions(make_annotation(8, 8, {{0, 0, 8, 8, 2}}), 5, 3);
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 3; ++x) CHECK(r.at(0, 5, y, x) == 1);
    }
  }
  SUBCASE("left and right halves downsampled") {
    auto ann = make_annotation(4, 4, {});
    for (int y = 0; y < 4; ++y) {
      for (int x = 2; x < 4; ++x) ann.mask[y * 4 + x] = 1;
    }
    const Tensor r = rasterize_conditions(ann, 2, 2);
    for (int y = 0; y < 2; ++y) {
      CHECK(r.at(0, 0, y, 0) == 1);
      CHECK(r.at(0, 0, y, 1) == 0);
      CHECK(r.at(0, 1, y, 0) == 0);
      CHECK(r.at(0, 1, y, 1) == 1);
    }
  }
  CHECK_THROWS_AS(rasterize_conditions(make_annotation(8, 8, {}), 0, 4), ValidationError);
}

TEST_CASE("one-hot exclusivity and flip commutation") {
  Rng rng = make_rng({22});
  std::uniform_int_distribution<int> cls(0, 4), pos(0, 27);
  for (int trial = 0; trial < 20; ++trial) {
    auto ann = make_annotation(32, 32, {});
    for (auto& v : ann.mask) v = static_cast<std::uint8_t>(cls(rng));
    for (int b = 0; b < 3; ++b) {
      const int x = pos(rng), y = pos(rng);
      ann.boxes.push_back({x, y, x + 4, y + 4, 2 + b});
    }
    for (auto [h, w] : {std::pair{32, 32}, std::pair{16, 16}, std::pair{8, 8}}) {
      const Tensor r = rasterize_conditions(ann, h, w);
      const Tensor rf = rasterize_conditions(flip_horizontal(ann), h, w);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          real sum = 0;
          for (int c = 0; c < 5; ++c) sum += r.at(0, c, y, x);
          CHECK(sum == 1);
          for (int c = 0; c < 6; ++c) CHECK(rf.at(0, c, y, x) == r.at(0, c, y, w - 1 - x));
        }
      }
    }
  }
}

TEST_CASE("assembled condition bundle") {
  TextEncoder enc = small_encoder();
  const auto ann = make_annotation(16, 16, {{2, 2, 6, 6, 3}});
  const ConditionBundle b1 = assemble_condition(ann, enc, kDefaultPromptTemplate, 8, 8);
  const ConditionBundle b2 = assemble_condition(ann, enc, kDefaultPromptTemplate, 8, 8);
  CHECK(b1.spatial.shape() == (Shape{1, 6, 8, 8}));
  CHECK(b1.text_embedding.size() == 24);
  CHECK(b1.prompt == labels_to_prompt(ann));
  CHECK(b1.height == 16);
  CHECK(b1.width == 16);
  CHECK(max_abs_diff(b1.spatial, b2.spatial) == 0.0);
  CHECK(max_abs_diff(b1.text_embedding, b2.text_embedding) == 0.0);
  auto bad = ann;
  bad.boxes.push_back({10, 10, 20, 12, 2});
  CHECK_THROWS_AS(assemble_condition(bad, enc, kDefaultPromptTemplate, 8, 8), ValidationError);

  const std::vector<ConditionBundle> bundles{b1, b2};
  const ConditionBatch batch = make_condition_batch(bundles, 32);
  CHECK(batch.spatial.shape() == (Shape{2, 6, 8, 8}));
  CHECK(batch.dims.at(0, 0, 0, 0) == doctest::Approx(0.5));
}
