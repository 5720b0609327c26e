#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "agrimae/anomaly.hpp"
#include "agrimae/blocks.hpp"
#include "agrimae/config.hpp"
#include "agrimae/errors.hpp"
#include "agrimae/masking.hpp"
#include "agrimae/optim.hpp"
#include "agrimae/rng.hpp"

namespace agrimae {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t bands = 4;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 16;
  std::size_t stages = 3;
  std::vector<std::size_t> heads_per_stage = {2, 2, 4};
  std::size_t window = 2;
  double mask_ratio = 0.75;
  std::string variant = "swin-mae";

  std::size_t grid_side() const { return patch_size == 0 ? 0 : image_size / patch_size; }
  std::size_t token_count() const { return grid_side() * grid_side(); }
  std::size_t patch_raw_dim() const { return patch_size * patch_size * bands; }
  bool is_swin() const { return variant == "swin-mae"; }

  // Collects every violated constraint before throwing.
  void validate() const {
    std::vector<std::string> bad;
    if (image_size == 0) bad.push_back("image_size must be positive");
    if (bands == 0) bad.push_back("bands must be positive");
    if (patch_size == 0) bad.push_back("patch_size must be positive");
    if (embed_dim == 0) bad.push_back("embed_dim must be positive");
    if (stages == 0) bad.push_back("stages must be >= 1");
    if (window == 0) bad.push_back("window must be >= 1");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
      bad.push_back("mask_ratio must be in [0,1), got " + std::to_string(mask_ratio));
    }
    if (variant != "swin-mae" && variant != "vit-mae") {
      bad.push_back("variant must be swin-mae or vit-mae, got '" + variant + "'");
    }
    if (patch_size != 0 && image_size % patch_size != 0) {
      bad.push_back("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                    std::to_string(patch_size));
    }
    if (heads_per_stage.size() != stages) {
      bad.push_back("heads_per_stage has " + std::to_string(heads_per_stage.size()) +
                    " entries, expected stages = " + std::to_string(stages));
    }
    // unknown variants still get the structural (windowed) checks so that a
    // bad variant string cannot hide grid violations
    const bool windowed = variant != "vit-mae";
    if (patch_size != 0 && image_size % patch_size == 0 && stages >= 1 && window >= 1) {
      std::size_t grid = grid_side();
      for (std::size_t s = 0; s < stages; ++s) {
        const std::size_t dim = windowed ? embed_dim << s : embed_dim;
        if (s < heads_per_stage.size()) {
          const std::size_t heads = heads_per_stage[s];
          if (heads == 0 || dim % heads != 0) {
            bad.push_back("heads_per_stage[" + std::to_string(s) + "] = " + std::to_string(heads) +
                          " does not divide stage dim " + std::to_string(dim));
          }
        }
        if (windowed) {
          if (grid == 0 || grid % window != 0) {
            bad.push_back("token grid " + std::to_string(grid) + " at stage " + std::to_string(s) +
                          " not divisible by window " + std::to_string(window));
          }
          if (s + 1 < stages) {
            if (grid % 2 != 0) {
              bad.push_back("token grid " + std::to_string(grid) + " at stage " +
                            std::to_string(s) + " must be even to merge");
              break;
            }
            grid /= 2;
          }
        }
      }
    }
    if (!bad.empty()) {
      std::string msg = "invalid model config:";
      for (const auto& b : bad) msg += "\n  - " + b;
      throw ValidationError(msg);
    }
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv["image_size"] = std::to_string(image_size);
    kv["bands"] = std::to_string(bands);
    kv["patch_size"] = std::to_string(patch_size);
    kv["embed_dim"] = std::to_string(embed_dim);
    kv["stages"] = std::to_string(stages);
    std::string heads;
    for (std::size_t h : heads_per_stage) heads += (heads.empty() ? "" : ",") + std::to_string(h);
    kv["heads_per_stage"] = heads;
    kv["window"] = std::to_string(window);
    kv["mask_ratio"] = std::to_string(mask_ratio);
    kv["variant"] = variant;
    return kv;
  }

  static ModelConfig from_reader(KvReader& reader) {
    ModelConfig c;
    c.image_size = reader.get_size("image_size", c.image_size);
    c.bands = reader.get_size("bands", c.bands);
    c.patch_size = reader.get_size("patch_size", c.patch_size);
    c.embed_dim = reader.get_size("embed_dim", c.embed_dim);
    c.stages = reader.get_size("stages", c.stages);
    c.heads_per_stage = reader.get_size_list("heads_per_stage", c.heads_per_stage);
    c.window = reader.get_size("window", c.window);
    c.mask_ratio = reader.get_double("mask_ratio", c.mask_ratio);
    c.variant = reader.get_string("variant", c.variant);
    return c;
  }

  static ModelConfig from_kv(const KeyValues& kv) {
    KvReader reader(kv);
    ModelConfig c = from_reader(reader);
    reader.finish("model config");
    c.validate();
    return c;
  }
};

struct SwinStage {
  LayerWeights wmsa;
  LayerWeights swmsa;
};

struct SwinMAE {
  ModelConfig config;
  ParamStore params;
  Tensor embed_w, embed_b;
  Tensor mask_token;
  Tensor pos;
  std::vector<SwinStage> encoder;
  std::vector<Tensor> merge_w;
  std::vector<SwinStage> decoder;
  std::vector<Tensor> expand_w;
  Tensor final_gain, final_bias;
  Tensor proj_w, proj_b;
};

struct ViTMAE {
  ModelConfig config;
  ParamStore params;
  Tensor embed_w, embed_b;
  Tensor enc_pos, dec_pos;
  Tensor mask_token;
  std::vector<LayerWeights> encoder;
  std::vector<LayerWeights> decoder;
  Tensor final_gain, final_bias;
  Tensor proj_w, proj_b;
};

using Model = std::variant<SwinMAE, ViTMAE>;

namespace detail {

constexpr double kInitStd = 0.02;

inline LayerWeights build_layer(ParamStore& store, const std::string& prefix, std::size_t dim,
                                std::size_t heads, Rng& rng) {
  LayerWeights lw;
  lw.norm1_gain = store.add(prefix + ".n1.g", init_ones({dim}));
  lw.norm1_bias = store.add(prefix + ".n1.b", init_zeros({dim}));
  lw.attn.query = store.add(prefix + ".attn.q", init_trunc_normal({dim, dim}, kInitStd, rng));
  lw.attn.key = store.add(prefix + ".attn.k", init_trunc_normal({dim, dim}, kInitStd, rng));
  lw.attn.value = store.add(prefix + ".attn.v", init_trunc_normal({dim, dim}, kInitStd, rng));
  lw.attn.output = store.add(prefix + ".attn.o", init_trunc_normal({dim, dim}, kInitStd, rng));
  lw.attn.head_count = heads;
  lw.norm2_gain = store.add(prefix + ".n2.g", init_ones({dim}));
  lw.norm2_bias = store.add(prefix + ".n2.b", init_zeros({dim}));
  lw.mlp_w1 = store.add(prefix + ".mlp.w1", init_trunc_normal({dim, 4 * dim}, kInitStd, rng));
  lw.mlp_b1 = store.add(prefix + ".mlp.b1", init_zeros({4 * dim}));
  lw.mlp_w2 = store.add(prefix + ".mlp.w2", init_trunc_normal({4 * dim, dim}, kInitStd, rng));
  lw.mlp_b2 = store.add(prefix + ".mlp.b2", init_zeros({dim}));
  return lw;
}

inline SwinStage build_stage(ParamStore& store, const std::string& prefix, std::size_t dim,
                             std::size_t heads, Rng& rng) {
  SwinStage st;
  st.wmsa = build_layer(store, prefix + ".w", dim, heads, rng);
  st.swmsa = build_layer(store, prefix + ".sw", dim, heads, rng);
  return st;
}

}  // namespace detail

inline SwinMAE build_swin_mae(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (!config.is_swin()) throw ValidationError("build_swin_mae: config variant is " + config.variant);
  Rng rng(mix_seed(seed ^ 0x5357494eull));
  SwinMAE m;
  m.config = config;
  const std::size_t d = config.embed_dim;
  const std::size_t raw = config.patch_raw_dim();
  using detail::kInitStd;
  m.embed_w = m.params.add("embed.w", init_trunc_normal({raw, d}, kInitStd, rng));
  m.embed_b = m.params.add("embed.b", init_zeros({d}));
  m.mask_token = m.params.add("mask_token", init_trunc_normal({d}, kInitStd, rng));
  m.pos = m.params.add("pos", init_trunc_normal({config.token_count(), d}, kInitStd, rng));
  for (std::size_t s = 0; s < config.stages; ++s) {
    const std::size_t dim = d << s;
    m.encoder.push_back(
        detail::build_stage(m.params, "enc" + std::to_string(s), dim, config.heads_per_stage[s], rng));
    if (s + 1 < config.stages) {
      m.merge_w.push_back(m.params.add("merge" + std::to_string(s),
                                       init_trunc_normal({4 * dim, 2 * dim}, kInitStd, rng)));
    }
  }
  for (std::size_t t = 0; t < config.stages; ++t) {
    const std::size_t s = config.stages - 1 - t;  // mirror encoder dims
    const std::size_t dim = d << s;
    m.decoder.push_back(
        detail::build_stage(m.params, "dec" + std::to_string(t), dim, config.heads_per_stage[s], rng));
    if (t + 1 < config.stages) {
      m.expand_w.push_back(m.params.add("expand" + std::to_string(t),
                                        init_trunc_normal({dim, 2 * dim}, kInitStd, rng)));
    }
  }
  m.final_gain = m.params.add("final.g", init_ones({d}));
  m.final_bias = m.params.add("final.b", init_zeros({d}));
  m.proj_w = m.params.add("proj.w", init_trunc_normal({d, raw}, kInitStd, rng));
  m.proj_b = m.params.add("proj.b", init_zeros({raw}));
  return m;
}

inline ViTMAE build_vit_mae(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.is_swin()) throw ValidationError("build_vit_mae: config variant is " + config.variant);
  Rng rng(mix_seed(seed ^ 0x564954ull));
  ViTMAE m;
  m.config = config;
  const std::size_t d = config.embed_dim;
  const std::size_t raw = config.patch_raw_dim();
  const std::size_t n = config.token_count();
  using detail::kInitStd;
  m.embed_w = m.params.add("embed.w", init_trunc_normal({raw, d}, kInitStd, rng));
  m.embed_b = m.params.add("embed.b", init_zeros({d}));
  m.enc_pos = m.params.add("pos.enc", init_trunc_normal({n, d}, kInitStd, rng));
  m.dec_pos = m.params.add("pos.dec", init_trunc_normal({n, d}, kInitStd, rng));
  m.mask_token = m.params.add("mask_token", init_trunc_normal({d}, kInitStd, rng));
  for (std::size_t s = 0; s < config.stages; ++s) {
    m.encoder.push_back(detail::build_layer(m.params, "enc" + std::to_string(s), d,
                                            config.heads_per_stage[s], rng));
  }
  for (std::size_t s = 0; s < config.stages; ++s) {
    m.decoder.push_back(detail::build_layer(m.params, "dec" + std::to_string(s), d,
                                            config.heads_per_stage[s], rng));
  }
  m.final_gain = m.params.add("final.g", init_ones({d}));
  m.final_bias = m.params.add("final.b", init_zeros({d}));
  m.proj_w = m.params.add("proj.w", init_trunc_normal({d, raw}, kInitStd, rng));
  m.proj_b = m.params.add("proj.b", init_zeros({raw}));
  return m;
}

inline Model build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.is_swin()) return build_swin_mae(config, seed);
  return build_vit_mae(config, seed);
}

namespace detail {

inline void check_forward_args(const ModelConfig& config, const Tensor& image,
                               const PatchMask& mask) {
  const Shape expect = {config.image_size, config.image_size, config.bands};
  if (image.shape() != expect) {
    throw ShapeError("forward: image " + shape_str(image.shape()) + " does not match config " +
                     shape_str(expect));
  }
  if (mask.size() != config.token_count()) {
    throw ShapeError("forward: mask length " + std::to_string(mask.size()) +
                     " != token count " + std::to_string(config.token_count()));
  }
}

}  // namespace detail

inline Tensor forward(const SwinMAE& m, const Tensor& image, const PatchMask& mask) {
  detail::check_forward_args(m.config, image, mask);
  const std::size_t window = m.config.window;
  const std::size_t shift = window / 2;
  PatchGrid g = patchify(image, m.config.patch_size);
  g.tokens = add_bias(matmul(g.tokens, m.embed_w), m.embed_b);
  g = apply_mask_tokens(g, mask, MaskToken{m.mask_token});
  g.tokens = add(g.tokens, m.pos);
  for (std::size_t s = 0; s < m.config.stages; ++s) {
    g = swin_layer(g, m.encoder[s].wmsa, window, 0);
    g = swin_layer(g, m.encoder[s].swmsa, window, shift);
    if (s + 1 < m.config.stages) g = patch_merge(g, m.merge_w[s]);
  }
  for (std::size_t t = 0; t < m.config.stages; ++t) {
    g = swin_layer(g, m.decoder[t].wmsa, window, 0);
    g = swin_layer(g, m.decoder[t].swmsa, window, shift);
    if (t + 1 < m.config.stages) g = patch_expand(g, m.expand_w[t]);
  }
  g.tokens = add_bias(matmul(layer_norm(g.tokens, m.final_gain, m.final_bias), m.proj_w), m.proj_b);
  return unpatchify(g, m.config.patch_size, m.config.bands);
}

inline Tensor forward(const ViTMAE& m, const Tensor& image, const PatchMask& mask) {
  detail::check_forward_args(m.config, image, mask);
  const std::size_t n = m.config.token_count();
  std::vector<std::size_t> visible, masked;
  for (std::size_t i = 0; i < n; ++i) (mask[i] ? masked : visible).push_back(i);
  if (visible.empty()) {
    throw ValidationError("forward: vit-mae requires at least one visible token");
  }
  PatchGrid g = patchify(image, m.config.patch_size);
  Tensor tokens = add(add_bias(matmul(g.tokens, m.embed_w), m.embed_b), m.enc_pos);
  Tensor x = gather_rows(tokens, visible);
  for (const auto& layer : m.encoder) x = global_attention_layer(x, layer);
  // decoder sees the full token count again: visible rows first, then the
  // shared mask token at every masked slot, unshuffled back to grid order
  if (!masked.empty()) {
    x = concat_rows({x, repeat_row(m.mask_token, masked.size())});
  }
  std::vector<std::size_t> slot(n);
  for (std::size_t i = 0; i < visible.size(); ++i) slot[visible[i]] = i;
  for (std::size_t i = 0; i < masked.size(); ++i) slot[masked[i]] = visible.size() + i;
  x = add(gather_rows(x, slot), m.dec_pos);
  for (const auto& layer : m.decoder) x = global_attention_layer(x, layer);
  g.tokens = add_bias(matmul(layer_norm(x, m.final_gain, m.final_bias), m.proj_w), m.proj_b);
  return unpatchify(g, m.config.patch_size, m.config.bands);
}

inline Tensor forward(const Model& model, const Tensor& image, const PatchMask& mask) {
  return std::visit([&](const auto& m) { return forward(m, image, mask); }, model);
}

inline ParamStore& model_params(Model& model) {
  return std::visit([](auto& m) -> ParamStore& { return m.params; }, model);
}

inline const ParamStore& model_params(const Model& model) {
  return std::visit([](const auto& m) -> const ParamStore& { return m.params; }, model);
}

inline const ModelConfig& model_config(const Model& model) {
  return std::visit([](const auto& m) -> const ModelConfig& { return m.config; }, model);
}

}  // namespace agrimae
