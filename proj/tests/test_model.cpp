#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "agrimae/model.hpp"
#include "support/gradcheck.hpp"

using namespace agrimae;
using testsupport::gradcheck;
using testsupport::pinned_loss;
using testsupport::random_tensor;

namespace {

ModelConfig toy_swin() {
  ModelConfig c;
  c.image_size = 16;
  c.bands = 2;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.stages = 2;
  c.heads_per_stage = {2, 2};
  c.window = 2;
  c.variant = "swin-mae";
  return c;
}

ModelConfig toy_vit() {
  ModelConfig c = toy_swin();
  c.variant = "vit-mae";
  return c;
}

std::size_t layer_param_count(std::size_t d) { return 12 * d * d + 9 * d; }

std::size_t swin_param_count(const ModelConfig& c) {
  const std::size_t raw = c.patch_size * c.patch_size * c.bands;
  const std::size_t d = c.embed_dim;
  std::size_t total = raw * d + d;                     // embed
  total += d;                                          // mask token
  total += c.token_count() * d;                        // positional embedding
  for (std::size_t s = 0; s < c.stages; ++s) {
    const std::size_t dim = d << s;
    total += 2 * 2 * layer_param_count(dim);           // encoder + decoder block pair
  }
  for (std::size_t s = 0; s + 1 < c.stages; ++s) {
    const std::size_t dim = d << s;
    total += 8 * dim * dim;                            // merge [4dim x 2dim]
    total += 2 * (dim * 2) * (dim * 2);                // expand [2dim x 4dim]
  }
  total += 2 * d;                                      // final layer norm
  total += d * raw + raw;                              // projection
  return total;
}

std::size_t vit_param_count(const ModelConfig& c) {
  const std::size_t raw = c.patch_size * c.patch_size * c.bands;
  const std::size_t d = c.embed_dim;
  std::size_t total = raw * d + d;
  total += 2 * c.token_count() * d;  // encoder + decoder positional embeddings
  total += d;                        // mask token
  total += 2 * c.stages * layer_param_count(d);
  total += 2 * d;
  total += d * raw + raw;
  return total;
}

PatchMask checker_mask(std::size_t n) {
  PatchMask m(n, 0);
  for (std::size_t i = 0; i < n; i += 2) m[i] = 1;
  return m;
}

}  // namespace

TEST_CASE("model config validation", "[model]") {
  SECTION("desk default is valid") {
    ModelConfig c;
    REQUIRE_NOTHROW(c.validate());
    REQUIRE(c.grid_side() == 8);
  }
  SECTION("window 3 on an 8x8 grid is rejected") {
    ModelConfig c;
    c.window = 3;
    try {
      c.validate();
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      REQUIRE(std::string(e.what()).find("not divisible by window 3") != std::string::npos);
    }
  }
  SECTION("every violation is listed") {
    ModelConfig c;
    c.window = 3;
    c.mask_ratio = 1.5;
    c.variant = "tiny-mae";
    c.heads_per_stage = {3, 2, 4};
    try {
      c.validate();
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      REQUIRE(msg.find("mask_ratio") != std::string::npos);
      REQUIRE(msg.find("variant") != std::string::npos);
      REQUIRE(msg.find("window 3") != std::string::npos);
      REQUIRE(msg.find("heads_per_stage[0]") != std::string::npos);
    }
  }
  SECTION("kv round trip and unknown keys") {
    ModelConfig c = toy_swin();
    ModelConfig back = ModelConfig::from_kv(c.to_kv());
    REQUIRE(back.image_size == c.image_size);
    REQUIRE(back.heads_per_stage == c.heads_per_stage);
    REQUIRE(back.variant == c.variant);

    KeyValues kv = c.to_kv();
    kv["not_a_field"] = "1";
    REQUIRE_THROWS_AS(ModelConfig::from_kv(kv), ValidationError);
  }
}

TEST_CASE("build determinism and parameter count", "[model]") {
  SECTION("swin-mae") {
    SwinMAE a = build_swin_mae(toy_swin(), 42);
    SwinMAE b = build_swin_mae(toy_swin(), 42);
    SwinMAE c = build_swin_mae(toy_swin(), 43);
    REQUIRE(a.params.count() == b.params.count());
    bool any_diff_seed = false;
    for (std::size_t i = 0; i < a.params.count(); ++i) {
      REQUIRE(a.params.at(i).name == b.params.at(i).name);
      REQUIRE(a.params.at(i).value.data() == b.params.at(i).value.data());
      if (a.params.at(i).value.data() != c.params.at(i).value.data()) any_diff_seed = true;
    }
    REQUIRE(any_diff_seed);
    REQUIRE(a.params.scalar_count() == swin_param_count(toy_swin()));
    ModelConfig desk;
    REQUIRE(build_swin_mae(desk, 7).params.scalar_count() == swin_param_count(desk));
  }
  SECTION("vit-mae") {
    ViTMAE a = build_vit_mae(toy_vit(), 42);
    ViTMAE b = build_vit_mae(toy_vit(), 42);
    for (std::size_t i = 0; i < a.params.count(); ++i) {
      REQUIRE(a.params.at(i).value.data() == b.params.at(i).value.data());
    }
    REQUIRE(a.params.scalar_count() == vit_param_count(toy_vit()));
  }
}

TEST_CASE("forward output shape matches the input", "[model]") {
  Rng rng(60);
  Tensor img = random_tensor({16, 16, 2}, rng, 0.0, 1.0);
  PatchMask mask = checker_mask(16);
  SECTION("swin-mae") {
    SwinMAE m = build_swin_mae(toy_swin(), 1);
    Tensor out = forward(m, img, mask);
    REQUIRE(out.shape() == img.shape());
  }
  SECTION("vit-mae") {
    ViTMAE m = build_vit_mae(toy_vit(), 1);
    Tensor out = forward(m, img, mask);
    REQUIRE(out.shape() == img.shape());
  }
  SECTION("wrong image shape rejected") {
    SwinMAE m = build_swin_mae(toy_swin(), 1);
    REQUIRE_THROWS_AS(forward(m, random_tensor({16, 16, 3}, rng), mask), ShapeError);
    REQUIRE_THROWS_AS(forward(m, img, PatchMask(9, 0)), ShapeError);
  }
}

TEST_CASE("zero mask makes the swin reconstruction independent of the mask token", "[model]") {
  Rng rng(61);
  Tensor img = random_tensor({16, 16, 2}, rng, 0.0, 1.0);
  SwinMAE m = build_swin_mae(toy_swin(), 2);
  PatchMask zero(16, 0);
  Tensor base = forward(m, img, zero);
  for (double& v : m.mask_token.data()) v += 10.0;
  Tensor again = forward(m, img, zero);
  REQUIRE(base.data() == again.data());
  // and with a nonzero mask the token does matter
  PatchMask one = checker_mask(16);
  Tensor with_mask = forward(m, img, one);
  for (double& v : m.mask_token.data()) v -= 10.0;
  Tensor with_mask2 = forward(m, img, one);
  REQUIRE(with_mask.data() != with_mask2.data());
}

TEST_CASE("vit encoder is permutation consistent", "[model]") {
  Rng rng(62);
  ViTMAE m = build_vit_mae(toy_vit(), 3);
  Tensor x = random_tensor({6, 8}, rng);
  Tensor out = x;
  for (const auto& layer : m.encoder) out = global_attention_layer(out, layer);

  const std::vector<std::size_t> perm = {4, 0, 5, 2, 1, 3};
  Tensor xp = gather_rows(x, perm);
  Tensor outp = xp;
  for (const auto& layer : m.encoder) outp = global_attention_layer(outp, layer);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      REQUIRE_THAT(outp.at(i, j), Catch::Matchers::WithinAbs(out.at(perm[i], j), 1e-12));
    }
  }
}

TEST_CASE("vit rejects a fully masked image", "[model]") {
  Rng rng(63);
  ViTMAE m = build_vit_mae(toy_vit(), 4);
  Tensor img = random_tensor({16, 16, 2}, rng, 0.0, 1.0);
  REQUIRE_THROWS_AS(forward(m, img, PatchMask(16, 1)), ValidationError);
}

TEST_CASE("end-to-end gradcheck at toy config", "[model][slow]") {
  Rng rng(64);
  Tensor img = random_tensor({16, 16, 2}, rng, 0.0, 1.0);
  PatchMask mask = checker_mask(16);
  SECTION("swin-mae") {
    SwinMAE m = build_swin_mae(toy_swin(), 5);
    std::vector<Tensor> leaves;
    for (auto& p : m.params.all()) leaves.push_back(p.value);
    auto res = gradcheck([&] { return pinned_loss(forward(m, img, mask)); }, leaves, 1e-6, 3);
    INFO(res.worst);
    REQUIRE(res.max_rel_err < 1e-4);
  }
  SECTION("vit-mae") {
    ViTMAE m = build_vit_mae(toy_vit(), 6);
    std::vector<Tensor> leaves;
    for (auto& p : m.params.all()) leaves.push_back(p.value);
    auto res = gradcheck([&] { return pinned_loss(forward(m, img, mask)); }, leaves, 1e-6, 3);
    INFO(res.worst);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("variant dispatch through the model variant", "[model]") {
  Rng rng(65);
  Tensor img = random_tensor({16, 16, 2}, rng, 0.0, 1.0);
  Model m = build(toy_vit(), 9);
  REQUIRE(model_config(m).variant == "vit-mae");
  Tensor out = forward(m, img, checker_mask(16));
  REQUIRE(out.shape() == img.shape());
  REQUIRE(model_params(m).scalar_count() == vit_param_count(toy_vit()));
}
