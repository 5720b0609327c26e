#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "agrimae/errors.hpp"
#include "agrimae/tensor.hpp"

namespace agrimae {

// Token grid produced by patchify and transformed by the vision blocks.
struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Tensor tokens;

  std::size_t token_count() const { return rows * cols; }
  std::size_t dim() const { return tokens.cols(); }
};

struct AttentionWeights {
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor output;
  std::size_t head_count = 1;
};

struct LayerWeights {
  Tensor norm1_gain;
  Tensor norm1_bias;
  AttentionWeights attn;
  Tensor norm2_gain;
  Tensor norm2_bias;
  Tensor mlp_w1;
  Tensor mlp_b1;
  Tensor mlp_w2;
  Tensor mlp_b2;
};

struct MaskToken {
  Tensor vector;
};

namespace detail {

inline void check_attention(const AttentionWeights& w, std::size_t dim) {
  if (w.head_count == 0 || dim % w.head_count != 0) {
    throw ShapeError("attention: head_count " + std::to_string(w.head_count) +
                     " must divide dim " + std::to_string(dim));
  }
  for (const Tensor* m : {&w.query, &w.key, &w.value, &w.output}) {
    if (m->shape() != Shape{dim, dim}) {
      throw ShapeError("attention: projection must be [" + std::to_string(dim) + "x" +
                       std::to_string(dim) + "], got " + shape_str(m->shape()));
    }
  }
}

// Pixel index permutation taking the row-major image to token-major patch order.
inline std::vector<std::size_t> patch_pixel_order(std::size_t h, std::size_t w, std::size_t patch) {
  std::vector<std::size_t> idx;
  idx.reserve(h * w);
  for (std::size_t ti = 0; ti < h / patch; ++ti) {
    for (std::size_t tj = 0; tj < w / patch; ++tj) {
      for (std::size_t a = 0; a < patch; ++a) {
        for (std::size_t b = 0; b < patch; ++b) {
          idx.push_back((ti * patch + a) * w + tj * patch + b);
        }
      }
    }
  }
  return idx;
}

inline std::vector<std::size_t> invert_permutation(const std::vector<std::size_t>& p) {
  std::vector<std::size_t> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
  return inv;
}

}  // namespace detail

inline PatchGrid patchify(const Tensor& image, std::size_t patch) {
  if (image.shape().size() != 3) {
    throw ShapeError("patchify: expected HxWxB image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.shape()[0];
  const std::size_t w = image.shape()[1];
  const std::size_t b = image.shape()[2];
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch " + std::to_string(patch));
  }
  Tensor pixels = reshape(image, {h * w, b});
  Tensor gathered = gather_rows(pixels, detail::patch_pixel_order(h, w, patch));
  PatchGrid grid;
  grid.rows = h / patch;
  grid.cols = w / patch;
  grid.tokens = reshape(gathered, {grid.rows * grid.cols, patch * patch * b});
  return grid;
}

inline Tensor unpatchify(const PatchGrid& grid, std::size_t patch, std::size_t bands) {
  const std::size_t h = grid.rows * patch;
  const std::size_t w = grid.cols * patch;
  if (grid.dim() != patch * patch * bands) {
    throw ShapeError("unpatchify: token dim " + std::to_string(grid.dim()) + " != patch*patch*bands " +
                     std::to_string(patch * patch * bands));
  }
  Tensor flat = reshape(grid.tokens, {h * w, bands});
  Tensor pixels = gather_rows(flat, detail::invert_permutation(detail::patch_pixel_order(h, w, patch)));
  return reshape(pixels, {h, w, bands});
}

// softmax(QK^T/sqrt(d))V per head over one token block, heads concatenated.
inline Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t head_count) {
  const std::size_t dim = q.cols();
  const std::size_t dh = dim / head_count;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(head_count);
  for (std::size_t h = 0; h < head_count; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
    heads.push_back(matmul(softmax_lastdim(scores), vh));
  }
  return head_count == 1 ? heads[0] : concat_cols(heads);
}

inline Tensor multihead_attention(const Tensor& tokens, const AttentionWeights& w) {
  detail::check_attention(w, tokens.cols());
  Tensor q = matmul(tokens, w.query);
  Tensor k = matmul(tokens, w.key);
  Tensor v = matmul(tokens, w.value);
  return matmul(attend(q, k, v, w.head_count), w.output);
}

// Token order that groups the (shift, shift)-cycled grid into window x window blocks.
inline std::vector<std::size_t> window_order(std::size_t rows, std::size_t cols, std::size_t window,
                                             std::size_t shift) {
  std::vector<std::size_t> idx;
  idx.reserve(rows * cols);
  for (std::size_t wi = 0; wi < rows / window; ++wi) {
    for (std::size_t wj = 0; wj < cols / window; ++wj) {
      for (std::size_t a = 0; a < window; ++a) {
        for (std::size_t b = 0; b < window; ++b) {
          const std::size_t r = (wi * window + a + shift) % rows;
          const std::size_t c = (wj * window + b + shift) % cols;
          idx.push_back(r * cols + c);
        }
      }
    }
  }
  return idx;
}

inline PatchGrid window_attention(const PatchGrid& grid, const AttentionWeights& w,
                                  std::size_t window, std::size_t shift) {
  detail::check_attention(w, grid.dim());
  if (window == 0 || grid.rows % window != 0 || grid.cols % window != 0) {
    throw ShapeError("window_attention: grid " + std::to_string(grid.rows) + "x" +
                     std::to_string(grid.cols) + " not divisible by window " + std::to_string(window));
  }
  if (shift >= window) {
    throw ShapeError("window_attention: shift " + std::to_string(shift) + " must be < window " +
                     std::to_string(window));
  }
  Tensor q = matmul(grid.tokens, w.query);
  Tensor k = matmul(grid.tokens, w.key);
  Tensor v = matmul(grid.tokens, w.value);

  const auto order = window_order(grid.rows, grid.cols, window, shift);
  const std::size_t win_tokens = window * window;
  std::vector<Tensor> blocks;
  blocks.reserve(order.size() / win_tokens);
  for (std::size_t start = 0; start < order.size(); start += win_tokens) {
    std::vector<std::size_t> rows_in(order.begin() + start, order.begin() + start + win_tokens);
    blocks.push_back(attend(gather_rows(q, rows_in), gather_rows(k, rows_in),
                            gather_rows(v, rows_in), w.head_count));
  }
  Tensor grouped = blocks.size() == 1 ? blocks[0] : concat_rows(blocks);
  Tensor restored = gather_rows(grouped, detail::invert_permutation(order));
  PatchGrid out = grid;
  out.tokens = matmul(restored, w.output);
  return out;
}

inline Tensor mlp_forward(const Tensor& x, const LayerWeights& lw) {
  Tensor hidden = gelu(add_bias(matmul(x, lw.mlp_w1), lw.mlp_b1));
  return add_bias(matmul(hidden, lw.mlp_w2), lw.mlp_b2);
}

// Pre-norm transformer layer: Z' = Attn(LN(Z)) + Z; out = MLP(LN(Z')) + Z'.
inline Tensor global_attention_layer(const Tensor& tokens, const LayerWeights& lw) {
  Tensor attended = multihead_attention(layer_norm(tokens, lw.norm1_gain, lw.norm1_bias), lw.attn);
  Tensor mid = add(attended, tokens);
  return add(mlp_forward(layer_norm(mid, lw.norm2_gain, lw.norm2_bias), lw), mid);
}

inline PatchGrid swin_layer(const PatchGrid& grid, const LayerWeights& lw, std::size_t window,
                            std::size_t shift) {
  PatchGrid normed = grid;
  normed.tokens = layer_norm(grid.tokens, lw.norm1_gain, lw.norm1_bias);
  Tensor attended = window_attention(normed, lw.attn, window, shift).tokens;
  Tensor mid = add(attended, grid.tokens);
  PatchGrid out = grid;
  out.tokens = add(mlp_forward(layer_norm(mid, lw.norm2_gain, lw.norm2_bias), lw), mid);
  return out;
}

// Child order for merge/expand: (2i,2j), (2i+1,2j), (2i,2j+1), (2i+1,2j+1).
inline std::vector<std::size_t> merge_child_order(std::size_t rows, std::size_t cols) {
  std::vector<std::size_t> idx;
  idx.reserve(rows * cols);
  for (std::size_t i = 0; i < rows / 2; ++i) {
    for (std::size_t j = 0; j < cols / 2; ++j) {
      idx.push_back((2 * i) * cols + 2 * j);
      idx.push_back((2 * i + 1) * cols + 2 * j);
      idx.push_back((2 * i) * cols + 2 * j + 1);
      idx.push_back((2 * i + 1) * cols + 2 * j + 1);
    }
  }
  return idx;
}

inline PatchGrid patch_merge(const PatchGrid& grid, const Tensor& w) {
  if (grid.rows % 2 != 0 || grid.cols % 2 != 0) {
    throw ShapeError("patch_merge: grid " + std::to_string(grid.rows) + "x" +
                     std::to_string(grid.cols) + " must be even");
  }
  const std::size_t dim = grid.dim();
  if (w.shape() != Shape{4 * dim, 2 * dim}) {
    throw ShapeError("patch_merge: weight must be [" + std::to_string(4 * dim) + "x" +
                     std::to_string(2 * dim) + "], got " + shape_str(w.shape()));
  }
  Tensor children = gather_rows(grid.tokens, merge_child_order(grid.rows, grid.cols));
  Tensor stacked = reshape(children, {grid.token_count() / 4, 4 * dim});
  PatchGrid out;
  out.rows = grid.rows / 2;
  out.cols = grid.cols / 2;
  out.tokens = matmul(stacked, w);
  return out;
}

inline PatchGrid patch_expand(const PatchGrid& grid, const Tensor& w) {
  const std::size_t dim = grid.dim();
  if (dim % 2 != 0) {
    throw ShapeError("patch_expand: dim " + std::to_string(dim) + " must be even");
  }
  if (w.shape() != Shape{dim, 2 * dim}) {
    throw ShapeError("patch_expand: weight must be [" + std::to_string(dim) + "x" +
                     std::to_string(2 * dim) + "], got " + shape_str(w.shape()));
  }
  Tensor projected = matmul(grid.tokens, w);
  Tensor children = reshape(projected, {grid.token_count() * 4, dim / 2});
  PatchGrid out;
  out.rows = grid.rows * 2;
  out.cols = grid.cols * 2;
  out.tokens = gather_rows(children, detail::invert_permutation(merge_child_order(out.rows, out.cols)));
  return out;
}

inline PatchGrid apply_mask_tokens(const PatchGrid& grid, const std::vector<std::uint8_t>& mask,
                                   const MaskToken& token) {
  const std::size_t n = grid.token_count();
  if (mask.size() != n) {
    throw ShapeError("apply_mask_tokens: mask length " + std::to_string(mask.size()) +
                     " != token count " + std::to_string(n));
  }
  if (token.vector.shape() != Shape{grid.dim()}) {
    throw ShapeError("apply_mask_tokens: token dim " + shape_str(token.vector.shape()) +
                     " != grid dim " + std::to_string(grid.dim()));
  }
  std::vector<double> keep(n), replace(n);
  for (std::size_t i = 0; i < n; ++i) {
    keep[i] = mask[i] ? 0.0 : 1.0;
    replace[i] = mask[i] ? 1.0 : 0.0;
  }
  PatchGrid out = grid;
  out.tokens = add(scale_rows(grid.tokens, keep),
                   scale_rows(repeat_row(token.vector, n), replace));
  return out;
}

}  // namespace agrimae
