#pragma once

#include <cstdint>
#include <vector>

#include "skiptrack/config.hpp"
#include "skiptrack/tensor.hpp"

namespace skiptrack {

inline constexpr float kLayerNormEps = 1e-5f;

// Token matrix emitted by layer `layer_index` (0 = patch embedding output).
struct LayerFeatures {
    std::size_t layer_index = 0;
    Tensor tokens;  // N x D
};

struct BlockWeights {
    Tensor ln1_gamma, ln1_beta;    // D
    Tensor qkv_weight, qkv_bias;   // D x 3D, 3D
    Tensor proj_weight, proj_bias; // D x D, D
    Tensor ln2_gamma, ln2_beta;    // D
    Tensor fc1_weight, fc1_bias;   // D x rD, rD
    Tensor fc2_weight, fc2_bias;   // rD x D, D
};

struct BackboneWeights {
    Tensor patch_weight;  // 3*patch^2 x D
    Tensor patch_bias;    // D
    Tensor pos_template;  // N_z x D
    Tensor pos_search;    // N_s x D
    std::vector<BlockWeights> blocks;

    void validate(const ModelConfig& cfg) const {
        const std::size_t d = cfg.embed_dim;
        const std::size_t pd = 3 * cfg.patch * cfg.patch;
        auto expect = [](const Tensor& t, std::vector<std::size_t> dims, const char* what) {
            if (t.dims() != dims) {
                throw ShapeError(std::string("backbone weights: unexpected shape for ") + what +
                                 ": " + t.shape_string());
            }
        };
        expect(patch_weight, {pd, d}, "patch/weight");
        expect(patch_bias, {d}, "patch/bias");
        expect(pos_template, {cfg.template_tokens(), d}, "pos/template");
        expect(pos_search, {cfg.search_tokens(), d}, "pos/search");
        if (blocks.size() != cfg.depth) {
            throw ShapeError("backbone weights: expected " + std::to_string(cfg.depth) +
                             " blocks, got " + std::to_string(blocks.size()));
        }
        for (const auto& b : blocks) {
            expect(b.ln1_gamma, {d}, "ln1/gamma");
            expect(b.ln1_beta, {d}, "ln1/beta");
            expect(b.qkv_weight, {d, 3 * d}, "qkv/weight");
            expect(b.qkv_bias, {3 * d}, "qkv/bias");
            expect(b.proj_weight, {d, d}, "proj/weight");
            expect(b.proj_bias, {d}, "proj/bias");
            expect(b.ln2_gamma, {d}, "ln2/gamma");
            expect(b.ln2_beta, {d}, "ln2/beta");
            expect(b.fc1_weight, {d, cfg.mlp_ratio * d}, "mlp/fc1/weight");
            expect(b.fc1_bias, {cfg.mlp_ratio * d}, "mlp/fc1/bias");
            expect(b.fc2_weight, {cfg.mlp_ratio * d, d}, "mlp/fc2/weight");
            expect(b.fc2_bias, {d}, "mlp/fc2/bias");
        }
    }
};

// Seeded uniform(-0.02, 0.02) matrices, zero biases, identity norms.
inline BackboneWeights init_backbone_weights(const ModelConfig& cfg, SplitMix64& rng) {
    const std::size_t d = cfg.embed_dim;
    const std::size_t pd = 3 * cfg.patch * cfg.patch;
    const float lo = -0.02f, hi = 0.02f;
    BackboneWeights w;
    w.patch_weight = Tensor::random_uniform({pd, d}, lo, hi, rng);
    w.patch_bias = Tensor::zeros({d});
    w.pos_template = Tensor::random_uniform({cfg.template_tokens(), d}, lo, hi, rng);
    w.pos_search = Tensor::random_uniform({cfg.search_tokens(), d}, lo, hi, rng);
    w.blocks.resize(cfg.depth);
    for (auto& b : w.blocks) {
        b.ln1_gamma = Tensor::ones({d});
        b.ln1_beta = Tensor::zeros({d});
        b.qkv_weight = Tensor::random_uniform({d, 3 * d}, lo, hi, rng);
        b.qkv_bias = Tensor::zeros({3 * d});
        b.proj_weight = Tensor::random_uniform({d, d}, lo, hi, rng);
        b.proj_bias = Tensor::zeros({d});
        b.ln2_gamma = Tensor::ones({d});
        b.ln2_beta = Tensor::zeros({d});
        b.fc1_weight = Tensor::random_uniform({d, cfg.mlp_ratio * d}, lo, hi, rng);
        b.fc1_bias = Tensor::zeros({cfg.mlp_ratio * d});
        b.fc2_weight = Tensor::random_uniform({cfg.mlp_ratio * d, d}, lo, hi, rng);
        b.fc2_bias = Tensor::zeros({d});
    }
    return w;
}

// Non-overlapping patches of a 3 x H x W image, flattened channel-major into
// rows of a (H/p * W/p) x 3p^2 matrix.
inline Tensor image_to_patch_rows(const Tensor& img, std::size_t patch) {
    if (img.ndim() != 3 || img.dim(0) != 3 || img.dim(1) % patch != 0 ||
        img.dim(2) % patch != 0) {
        throw ShapeError("image_to_patch_rows: bad image shape " + img.shape_string());
    }
    const std::size_t gh = img.dim(1) / patch, gw = img.dim(2) / patch;
    Tensor rows({gh * gw, 3 * patch * patch});
    for (std::size_t pi = 0; pi < gh; ++pi) {
        for (std::size_t pj = 0; pj < gw; ++pj) {
            float* dst = rows.data() + (pi * gw + pj) * rows.dim(1);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < patch; ++y)
                    for (std::size_t x = 0; x < patch; ++x)
                        *dst++ = img.at(c, pi * patch + y, pj * patch + x);
        }
    }
    return rows;
}

// Patch flattening + linear projection + positional embedding for one image.
inline Tensor embed_image_tokens(const Tensor& img, std::size_t patch, const Tensor& proj,
                                 const Tensor& bias, const Tensor& pos) {
    Tensor tokens = matmul(image_to_patch_rows(img, patch), proj);
    add_row_bias(tokens, bias);
    add_inplace(tokens, pos);
    return tokens;
}

// Joint embedding: template tokens first, then search tokens.
inline LayerFeatures patch_embed(const Tensor& template_img, const Tensor& search_img,
                                 const ModelConfig& cfg, const BackboneWeights& w) {
    if (template_img.ndim() != 3 || template_img.dim(0) != 3 ||
        template_img.dim(1) != cfg.template_side || template_img.dim(2) != cfg.template_side) {
        throw ShapeError("patch_embed: template image shape " + template_img.shape_string() +
                         " does not match config");
    }
    if (search_img.ndim() != 3 || search_img.dim(0) != 3 ||
        search_img.dim(1) != cfg.search_side || search_img.dim(2) != cfg.search_side) {
        throw ShapeError("patch_embed: search image shape " + search_img.shape_string() +
                         " does not match config");
    }
    Tensor tz = embed_image_tokens(template_img, cfg.patch, w.patch_weight, w.patch_bias,
                                   w.pos_template);
    Tensor ts = embed_image_tokens(search_img, cfg.patch, w.patch_weight, w.patch_bias,
                                   w.pos_search);
    return LayerFeatures{0, concat_rows(tz, ts)};
}

// Pre-norm block: x + MHSA(LN(x)), then + MLP(LN(.)) with GELU.
inline Tensor transformer_block(const Tensor& x, const BlockWeights& w, std::size_t heads) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("embed dim " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor normed = layer_norm(x, w.ln1_gamma, w.ln1_beta, kLayerNormEps);
    Tensor qkv = matmul(normed, w.qkv_weight);
    add_row_bias(qkv, w.qkv_bias);

    Tensor attn({n, d});
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor q = slice_cols(qkv, h * dh, (h + 1) * dh);
        Tensor k = slice_cols(qkv, d + h * dh, d + (h + 1) * dh);
        Tensor v = slice_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh);
        for (auto& qv : q.values()) qv *= scale;
        Tensor probs = rowwise_softmax(matmul_nt(q, k));
        Tensor out_h = matmul(probs, v);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(out_h.data() + i * dh, out_h.data() + (i + 1) * dh,
                      attn.data() + i * d + h * dh);
        }
    }
    Tensor proj = matmul(attn, w.proj_weight);
    add_row_bias(proj, w.proj_bias);
    Tensor x1 = add(x, proj);

    Tensor normed2 = layer_norm(x1, w.ln2_gamma, w.ln2_beta, kLayerNormEps);
    Tensor hidden = matmul(normed2, w.fc1_weight);
    add_row_bias(hidden, w.fc1_bias);
    for (auto& v : hidden.values()) v = gelu(v);
    Tensor mlp_out = matmul(hidden, w.fc2_weight);
    add_row_bias(mlp_out, w.fc2_bias);
    return add(x1, mlp_out);
}

struct ForwardStats {
    std::size_t blocks_executed = 0;
};

// Sequential pass through all L blocks; returns every intermediate X^1..X^L.
inline std::vector<LayerFeatures> forward_all(const LayerFeatures& x0, const ModelConfig& cfg,
                                              const BackboneWeights& w,
                                              ForwardStats* stats = nullptr) {
    if (x0.layer_index != 0) throw ArgumentError("forward_all expects embedding-level features");
    std::vector<LayerFeatures> out;
    out.reserve(cfg.depth);
    Tensor x = x0.tokens;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        x = transformer_block(x, w.blocks[i], cfg.heads);
        if (stats) ++stats->blocks_executed;
        out.push_back(LayerFeatures{i + 1, x});
    }
    return out;
}

// Blocks 1..l* run sequentially.
inline LayerFeatures forward_saturated(const LayerFeatures& x0, const ModelConfig& cfg,
                                       const BackboneWeights& w, ForwardStats* stats = nullptr) {
    if (x0.layer_index != 0) {
        throw ArgumentError("forward_saturated expects embedding-level features");
    }
    Tensor x = x0.tokens;
    for (std::size_t i = 0; i < cfg.saturated_layer; ++i) {
        x = transformer_block(x, w.blocks[i], cfg.heads);
        if (stats) ++stats->blocks_executed;
    }
    return LayerFeatures{cfg.saturated_layer, std::move(x)};
}

// Applies block l*+k directly to X^{l*}; blocks l*+1 .. l*+k-1 never run.
inline LayerFeatures apply_skip_block(const LayerFeatures& saturated, const ModelConfig& cfg,
                                      const BackboneWeights& w, std::size_t k,
                                      ForwardStats* stats = nullptr) {
    if (saturated.layer_index != cfg.saturated_layer) {
        throw ArgumentError("apply_skip_block expects saturated-layer features");
    }
    if (k < 1 || k > cfg.skip_choices()) {
        throw ArgumentError("skip index k=" + std::to_string(k) + " out of range 1.." +
                            std::to_string(cfg.skip_choices()));
    }
    const std::size_t block_index = cfg.saturated_layer + k;  // 1-based
    Tensor x = transformer_block(saturated.tokens, w.blocks[block_index - 1], cfg.heads);
    if (stats) ++stats->blocks_executed;
    return LayerFeatures{block_index, std::move(x)};
}

// Skip-composition forward: exactly l*+1 blocks execute for any k.
inline LayerFeatures forward_skip(const LayerFeatures& x0, const ModelConfig& cfg,
                                  const BackboneWeights& w, std::size_t k,
                                  ForwardStats* stats = nullptr) {
    LayerFeatures sat = forward_saturated(x0, cfg, w, stats);
    return apply_skip_block(sat, cfg, w, k, stats);
}

// --- analytic accounting -----------------------------------------------------

inline std::uint64_t param_count(const ModelConfig& cfg) {
    const std::uint64_t d = cfg.embed_dim;
    const std::uint64_t pd = 3ull * cfg.patch * cfg.patch;
    const std::uint64_t rd = cfg.mlp_ratio * d;
    std::uint64_t per_block = 2 * (2 * d)            // two layernorms
                              + (d * 3 * d + 3 * d)  // qkv
                              + (d * d + d)          // output projection
                              + (d * rd + rd)        // mlp fc1
                              + (rd * d + d);        // mlp fc2
    return pd * d + d                                          // patch projection
           + (cfg.template_tokens() + cfg.search_tokens()) * d // positional embeddings
           + cfg.depth * per_block;
}

// Multiply-accumulate counted as 2 FLOPs.
inline std::uint64_t per_block_flops(const ModelConfig& cfg) {
    const std::uint64_t n = cfg.total_tokens();
    const std::uint64_t d = cfg.embed_dim;
    return 8 * n * d * d + 4 * n * n * d + 4 * cfg.mlp_ratio * n * d * d;
}

inline std::uint64_t patch_embed_flops(const ModelConfig& cfg) {
    return 2ull * cfg.total_tokens() * 3 * cfg.patch * cfg.patch * cfg.embed_dim;
}

inline std::uint64_t selector_flops(const ModelConfig& cfg) {
    const std::uint64_t h = cfg.selector_hidden;
    return 2 * (h * cfg.embed_dim + h * h + cfg.skip_choices() * h);
}

enum class ForwardMode { full, skip };

inline std::uint64_t flop_estimate(const ModelConfig& cfg, ForwardMode mode) {
    if (mode == ForwardMode::full) {
        return patch_embed_flops(cfg) + cfg.depth * per_block_flops(cfg);
    }
    return patch_embed_flops(cfg) + (cfg.saturated_layer + 1) * per_block_flops(cfg) +
           selector_flops(cfg);
}

} // namespace skiptrack
