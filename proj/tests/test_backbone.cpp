#include "skiptrack/backbone.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace skiptrack;

namespace {

float max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_TRUE(a.same_shape(b));
    float mx = 0.0f;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
    }
    return mx;
}

ModelConfig tiny_config(std::size_t depth = 4, std::size_t l_star = 2, std::size_t dim = 8,
                        std::size_t heads = 2) {
    ModelConfig cfg;
    cfg.depth = depth;
    cfg.saturated_layer = l_star;
    cfg.embed_dim = dim;
    cfg.heads = heads;
    cfg.patch = 4;
    cfg.template_side = 8;
    cfg.search_side = 8;
    cfg.mlp_ratio = 2;
    cfg.ggca.groups = 2;
    cfg.validate();
    return cfg;
}

BlockWeights zero_branch_block(std::size_t d, std::size_t mlp_ratio) {
    BlockWeights b;
    b.ln1_gamma = Tensor::zeros({d});
    b.ln1_beta = Tensor::zeros({d});
    b.qkv_weight = Tensor::zeros({d, 3 * d});
    b.qkv_bias = Tensor::zeros({3 * d});
    b.proj_weight = Tensor::zeros({d, d});
    b.proj_bias = Tensor::zeros({d});
    b.ln2_gamma = Tensor::zeros({d});
    b.ln2_beta = Tensor::zeros({d});
    b.fc1_weight = Tensor::zeros({d, mlp_ratio * d});
    b.fc1_bias = Tensor::zeros({mlp_ratio * d});
    b.fc2_weight = Tensor::zeros({mlp_ratio * d, d});
    b.fc2_bias = Tensor::zeros({d});
    return b;
}

// Fully unrolled double-precision re-implementation of the pre-norm block,
// independent of the tensor ops used by the production path.
std::vector<double> block_oracle(const std::vector<double>& x, const BlockWeights& w,
                                 std::size_t n, std::size_t d, std::size_t heads) {
    const std::size_t dh = d / heads;
    auto ln = [&](const std::vector<double>& v, const Tensor& gamma, const Tensor& beta) {
        std::vector<double> out(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += v[i * d + j];
            mean /= d;
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                var += (v[i * d + j] - mean) * (v[i * d + j] - mean);
            }
            var /= d;
            for (std::size_t j = 0; j < d; ++j) {
                out[i * d + j] = (v[i * d + j] - mean) / std::sqrt(var + 1e-5) * gamma.at(j) +
                                 beta.at(j);
            }
        }
        return out;
    };
    auto normed = ln(x, w.ln1_gamma, w.ln1_beta);
    std::vector<double> qkv(n * 3 * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 3 * d; ++j) {
            double acc = w.qkv_bias.at(j);
            for (std::size_t k = 0; k < d; ++k) acc += normed[i * d + k] * w.qkv_weight.at(k, j);
            qkv[i * 3 * d + j] = acc;
        }
    std::vector<double> attn(n * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> scores(n);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < dh; ++k) {
                    acc += qkv[i * 3 * d + h * dh + k] * qkv[j * 3 * d + d + h * dh + k];
                }
                scores[j] = acc / std::sqrt(static_cast<double>(dh));
            }
            double mx = scores[0];
            for (double s : scores) mx = std::max(mx, s);
            double sum = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                sum += s;
            }
            for (auto& s : scores) s /= sum;
            for (std::size_t k = 0; k < dh; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += scores[j] * qkv[j * 3 * d + 2 * d + h * dh + k];
                }
                attn[i * d + h * dh + k] = acc;
            }
        }
    }
    std::vector<double> x1(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = w.proj_bias.at(j);
            for (std::size_t k = 0; k < d; ++k) acc += attn[i * d + k] * w.proj_weight.at(k, j);
            x1[i * d + j] = x[i * d + j] + acc;
        }
    auto normed2 = ln(x1, w.ln2_gamma, w.ln2_beta);
    const std::size_t rd = w.fc1_bias.dim(0);
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> hid(rd);
        for (std::size_t j = 0; j < rd; ++j) {
            double acc = w.fc1_bias.at(j);
            for (std::size_t k = 0; k < d; ++k) acc += normed2[i * d + k] * w.fc1_weight.at(k, j);
            hid[j] = 0.5 * acc * (1.0 + std::erf(acc / std::sqrt(2.0)));
        }
        for (std::size_t j = 0; j < d; ++j) {
            double acc = w.fc2_bias.at(j);
            for (std::size_t k = 0; k < rd; ++k) acc += hid[k] * w.fc2_weight.at(k, j);
            out[i * d + j] = x1[i * d + j] + acc;
        }
    }
    return out;
}

} // namespace

TEST(PatchEmbed, TokenCountsAtDefaultConfig) {
    ModelConfig cfg;  // template 128, search 256, patch 16
    EXPECT_EQ(cfg.template_tokens(), 64u);
    EXPECT_EQ(cfg.search_tokens(), 256u);
    EXPECT_EQ(cfg.total_tokens(), 320u);
    EXPECT_EQ(cfg.skip_choices(), 4u);
}

TEST(PatchEmbed, ZeroImagesZeroBiasGiveZeroTokens) {
    ModelConfig cfg = tiny_config();
    SplitMix64 rng(1);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    w.patch_bias = Tensor::zeros(w.patch_bias.dims());
    w.pos_template = Tensor::zeros(w.pos_template.dims());
    w.pos_search = Tensor::zeros(w.pos_search.dims());
    LayerFeatures x0 = patch_embed(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8}), cfg, w);
    EXPECT_EQ(x0.layer_index, 0u);
    for (float v : x0.tokens.values()) EXPECT_EQ(v, 0.0f);
}

TEST(PatchEmbed, SinglePatchMatchesScalarProjection) {
    ModelConfig cfg = tiny_config();
    cfg.template_side = cfg.patch;
    cfg.search_side = cfg.patch;
    cfg.validate();
    SplitMix64 rng(2);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor img = Tensor::random_uniform({3, cfg.patch, cfg.patch}, -1.0f, 1.0f, rng);
    LayerFeatures x0 = patch_embed(img, img, cfg, w);
    ASSERT_EQ(x0.tokens.dim(0), 2u);

    // Scalar dot-product oracle for the template token.
    for (std::size_t out = 0; out < cfg.embed_dim; ++out) {
        double acc = w.patch_bias.at(out) + w.pos_template.at(0, out);
        std::size_t idx = 0;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < cfg.patch; ++y)
                for (std::size_t x = 0; x < cfg.patch; ++x)
                    acc += static_cast<double>(img.at(c, y, x)) * w.patch_weight.at(idx++, out);
        EXPECT_NEAR(x0.tokens.at(0, out), static_cast<float>(acc), 1e-5f);
    }
}

TEST(PatchEmbed, RejectsMismatchedImages) {
    ModelConfig cfg = tiny_config();
    SplitMix64 rng(3);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    EXPECT_THROW(patch_embed(Tensor::zeros({3, 12, 12}), Tensor::zeros({3, 8, 8}), cfg, w),
                 ShapeError);
}

TEST(TransformerBlock, ZeroedBranchesActAsIdentity) {
    SplitMix64 rng(4);
    Tensor x = Tensor::random_uniform({5, 8}, -2.0f, 2.0f, rng);
    BlockWeights b = zero_branch_block(8, 2);
    Tensor out = transformer_block(x, b, 2);
    EXPECT_EQ(max_abs_diff(out, x), 0.0f);
}

TEST(TransformerBlock, MatchesUnrolledScalarOracle) {
    ModelConfig cfg = tiny_config(2, 1, 8, 2);
    SplitMix64 rng(5);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    // Larger-than-init weights to exercise the nonlinearities.
    for (auto* t : {&w.blocks[0].qkv_weight, &w.blocks[0].proj_weight, &w.blocks[0].fc1_weight,
                    &w.blocks[0].fc2_weight}) {
        *t = Tensor::random_uniform(t->dims(), -0.5f, 0.5f, rng);
    }
    w.blocks[0].qkv_bias = Tensor::random_uniform({24}, -0.2f, 0.2f, rng);
    w.blocks[0].proj_bias = Tensor::random_uniform({8}, -0.2f, 0.2f, rng);
    Tensor x = Tensor::random_uniform({4, 8}, -1.0f, 1.0f, rng);
    Tensor out = transformer_block(x, w.blocks[0], 2);

    std::vector<double> xd(x.values().begin(), x.values().end());
    auto expected = block_oracle(xd, w.blocks[0], 4, 8, 2);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        EXPECT_NEAR(out.data()[i], expected[i], 1e-4) << "at flat index " << i;
    }
}

TEST(TransformerBlock, PermutationEquivariantWithoutPositions) {
    ModelConfig cfg = tiny_config(2, 1, 8, 2);
    SplitMix64 rng(6);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor x = Tensor::random_uniform({6, 8}, -1.0f, 1.0f, rng);
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor xp({6, 8});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 8; ++j) xp.at(i, j) = x.at(perm[i], j);
    Tensor out = transformer_block(x, w.blocks[0], 2);
    Tensor outp = transformer_block(xp, w.blocks[0], 2);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            EXPECT_NEAR(outp.at(i, j), out.at(perm[i], j), 1e-6f);
}

TEST(ForwardAll, FirstElementIsOneBlock) {
    ModelConfig cfg = tiny_config(2, 1);
    SplitMix64 rng(7);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor x = Tensor::random_uniform({cfg.total_tokens(), cfg.embed_dim}, -1.0f, 1.0f, rng);
    auto all = forward_all(LayerFeatures{0, x}, cfg, w);
    ASSERT_EQ(all.size(), 2u);
    EXPECT_EQ(all[0].layer_index, 1u);
    EXPECT_EQ(max_abs_diff(all[0].tokens, transformer_block(x, w.blocks[0], cfg.heads)), 0.0f);
}

TEST(ForwardAll, IdentityBlocksPreserveInput) {
    ModelConfig cfg = tiny_config(3, 1);
    BackboneWeights w;
    SplitMix64 rng(8);
    w = init_backbone_weights(cfg, rng);
    for (auto& b : w.blocks) b = zero_branch_block(cfg.embed_dim, cfg.mlp_ratio);
    Tensor x = Tensor::random_uniform({6, cfg.embed_dim}, -1.0f, 1.0f, rng);
    auto all = forward_all(LayerFeatures{0, x}, cfg, w);
    for (const auto& f : all) EXPECT_EQ(max_abs_diff(f.tokens, x), 0.0f);
}

TEST(ForwardAll, PrefixPropertyAgainstManualComposition) {
    ModelConfig cfg = tiny_config(4, 2);
    SplitMix64 rng(9);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor x = Tensor::random_uniform({6, cfg.embed_dim}, -1.0f, 1.0f, rng);
    auto all = forward_all(LayerFeatures{0, x}, cfg, w);
    Tensor manual = x;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        manual = transformer_block(manual, w.blocks[i], cfg.heads);
        EXPECT_EQ(max_abs_diff(all[i].tokens, manual), 0.0f) << "layer " << i + 1;
        EXPECT_EQ(all[i].tokens.dim(0), x.dim(0));
        EXPECT_EQ(all[i].tokens.dim(1), x.dim(1));
    }
}

TEST(ForwardSkip, NoSkipWhenSaturatedLayerIsNextToLast) {
    ModelConfig cfg = tiny_config(4, 3);
    SplitMix64 rng(10);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor x = Tensor::random_uniform({6, cfg.embed_dim}, -1.0f, 1.0f, rng);
    LayerFeatures skip = forward_skip(LayerFeatures{0, x}, cfg, w, 1);
    auto all = forward_all(LayerFeatures{0, x}, cfg, w);
    EXPECT_EQ(skip.layer_index, 4u);
    EXPECT_EQ(max_abs_diff(skip.tokens, all.back().tokens), 0.0f);
}

TEST(ForwardSkip, ManualCompositionOracle) {
    ModelConfig cfg = tiny_config(4, 2);
    SplitMix64 rng(11);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor x = Tensor::random_uniform({6, cfg.embed_dim}, -1.0f, 1.0f, rng);
    LayerFeatures skip = forward_skip(LayerFeatures{0, x}, cfg, w, 2);
    // l*=2, k=2: block 4 applied to the output of blocks 1 and 2.
    Tensor manual = transformer_block(x, w.blocks[0], cfg.heads);
    manual = transformer_block(manual, w.blocks[1], cfg.heads);
    manual = transformer_block(manual, w.blocks[3], cfg.heads);
    EXPECT_EQ(skip.layer_index, 4u);
    EXPECT_EQ(max_abs_diff(skip.tokens, manual), 0.0f);
}

TEST(ForwardSkip, ExecutesSaturatedPlusOneBlocks) {
    ModelConfig cfg = tiny_config(5, 2);
    SplitMix64 rng(12);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor x = Tensor::random_uniform({6, cfg.embed_dim}, -1.0f, 1.0f, rng);
    for (std::size_t k = 1; k <= cfg.skip_choices(); ++k) {
        ForwardStats stats;
        forward_skip(LayerFeatures{0, x}, cfg, w, k, &stats);
        EXPECT_EQ(stats.blocks_executed, cfg.saturated_layer + 1);
    }
}

TEST(ForwardSkip, RejectsOutOfRangeK) {
    ModelConfig cfg = tiny_config(4, 2);
    SplitMix64 rng(13);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor x = Tensor::random_uniform({6, cfg.embed_dim}, -1.0f, 1.0f, rng);
    EXPECT_THROW(forward_skip(LayerFeatures{0, x}, cfg, w, 0), ArgumentError);
    EXPECT_THROW(forward_skip(LayerFeatures{0, x}, cfg, w, 3), ArgumentError);
}

TEST(ForwardSkip, DirectApplicationConsistency) {
    ModelConfig cfg = tiny_config(5, 3);
    SplitMix64 rng(14);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    Tensor x = Tensor::random_uniform({6, cfg.embed_dim}, -1.0f, 1.0f, rng);
    auto all = forward_all(LayerFeatures{0, x}, cfg, w);
    const Tensor& saturated = all[cfg.saturated_layer - 1].tokens;
    for (std::size_t k = 1; k <= cfg.skip_choices(); ++k) {
        LayerFeatures skip = forward_skip(LayerFeatures{0, x}, cfg, w, k);
        Tensor direct = transformer_block(saturated, w.blocks[cfg.saturated_layer + k - 1],
                                          cfg.heads);
        EXPECT_LT(max_abs_diff(skip.tokens, direct), 1e-6f);
    }
}

TEST(PatchEmbed, SwappingIdenticalInputsPermutesTokenBlocks) {
    ModelConfig cfg = tiny_config();
    cfg.template_side = 8;
    cfg.search_side = 8;
    cfg.validate();
    SplitMix64 rng(15);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    w.pos_template = Tensor::zeros(w.pos_template.dims());
    w.pos_search = Tensor::zeros(w.pos_search.dims());
    Tensor a = Tensor::random_uniform({3, 8, 8}, 0.0f, 1.0f, rng);
    Tensor b = Tensor::random_uniform({3, 8, 8}, 0.0f, 1.0f, rng);
    LayerFeatures ab = patch_embed(a, b, cfg, w);
    LayerFeatures ba = patch_embed(b, a, cfg, w);
    const std::size_t nz = cfg.template_tokens();
    const std::size_t n = cfg.total_tokens();
    EXPECT_EQ(max_abs_diff(slice_rows(ab.tokens, 0, nz), slice_rows(ba.tokens, nz, n)), 0.0f);
    EXPECT_EQ(max_abs_diff(slice_rows(ab.tokens, nz, n), slice_rows(ba.tokens, 0, nz)), 0.0f);
}

TEST(Accounting, BlockFlopRatioAtPaperConfig) {
    ModelConfig cfg;  // L=12, l*=8
    const double skip_blocks = static_cast<double>(cfg.saturated_layer + 1) *
                               static_cast<double>(per_block_flops(cfg));
    const double full_blocks = static_cast<double>(cfg.depth) *
                               static_cast<double>(per_block_flops(cfg));
    EXPECT_DOUBLE_EQ(skip_blocks / full_blocks, 0.75);
}

TEST(Accounting, DoublingDimQuadruplesSquareTerms) {
    ModelConfig cfg;
    ModelConfig big = cfg;
    big.embed_dim = 2 * cfg.embed_dim;
    // Isolate the D^2 terms: per-block flops minus the attention N^2 D part.
    const std::uint64_t n = cfg.total_tokens();
    const std::uint64_t small_sq = per_block_flops(cfg) - 4 * n * n * cfg.embed_dim;
    const std::uint64_t big_sq = per_block_flops(big) - 4 * n * n * big.embed_dim;
    EXPECT_EQ(big_sq, 4 * small_sq);
}

TEST(Accounting, RegressionPinnedCountsAtDefaults) {
    ModelConfig cfg;
    EXPECT_EQ(param_count(cfg), 5547456u);
    EXPECT_EQ(per_block_flops(cfg), 361758720u);
    EXPECT_EQ(flop_estimate(cfg, ForwardMode::full), 4435476480u);
    EXPECT_EQ(flop_estimate(cfg, ForwardMode::skip), 3350314240u);
    EXPECT_GT(flop_estimate(cfg, ForwardMode::full), flop_estimate(cfg, ForwardMode::skip));
}

TEST(Accounting, FullStrictlyAboveSkipWheneverBlocksAreSkipped) {
    for (std::size_t l_star = 1; l_star < 12; ++l_star) {
        ModelConfig cfg;
        cfg.saturated_layer = l_star;
        cfg.validate();
        if (l_star + 1 < cfg.depth) {
            EXPECT_GT(flop_estimate(cfg, ForwardMode::full), flop_estimate(cfg, ForwardMode::skip));
        }
    }
}

TEST(BackboneWeights, ValidateCatchesWrongShapes) {
    ModelConfig cfg = tiny_config();
    SplitMix64 rng(16);
    BackboneWeights w = init_backbone_weights(cfg, rng);
    w.validate(cfg);
    w.patch_bias = Tensor::zeros({cfg.embed_dim + 1});
    EXPECT_THROW(w.validate(cfg), ShapeError);
}
