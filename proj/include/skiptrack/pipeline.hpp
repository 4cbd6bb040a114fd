#pragma once

#include <array>
#include <cstdint>

#include "skiptrack/backbone.hpp"
#include "skiptrack/config.hpp"
#include "skiptrack/ggca.hpp"
#include "skiptrack/selector.hpp"
#include "skiptrack/tensor.hpp"

namespace skiptrack {

enum class WindowKind { hann, hamming };

// Interleaved RGB8 frame, not owned.
struct FrameView {
    std::size_t width = 0, height = 0;
    const std::uint8_t* rgb = nullptr;
};

struct Normalization {
    bool enabled = true;
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

struct BoundingBox {
    float cx = 0.0f, cy = 0.0f;  // frame coordinates, pixels
    float w = 0.0f, h = 0.0f;
};

// Square crop geometry, for mapping search coordinates back to the frame.
struct CropParams {
    float center_x = 0.0f, center_y = 0.0f;
    float side = 0.0f;          // frame pixels
    std::size_t out_side = 0;   // resampled pixels
};

namespace detail {

inline std::array<float, 3> frame_channel_means(const FrameView& frame) {
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    const std::size_t n = frame.width * frame.height;
    for (std::size_t p = 0; p < n; ++p) {
        acc[0] += frame.rgb[3 * p];
        acc[1] += frame.rgb[3 * p + 1];
        acc[2] += frame.rgb[3 * p + 2];
    }
    std::array<float, 3> mean;
    for (int c = 0; c < 3; ++c) mean[c] = n ? static_cast<float>(acc[c] / n) : 0.0f;
    return mean;
}

} // namespace detail

// Axis-aligned square crop with bilinear resampling. Out-of-frame taps read
// the frame's per-channel mean. Byte values pass through unscaled when
// normalization is disabled; otherwise scaled to [0,1] and standardized.
inline Tensor crop_resize(const FrameView& frame, float center_x, float center_y, float side,
                          std::size_t out_side, const Normalization& norm = Normalization{}) {
    if (!(side > 0.0f) || out_side == 0) {
        throw ArgumentError("crop_resize: crop side and output side must be positive");
    }
    if (frame.width == 0 || frame.height == 0 || frame.rgb == nullptr) {
        throw ArgumentError("crop_resize: empty frame");
    }
    const std::array<float, 3> fill = detail::frame_channel_means(frame);
    const float scale = side / static_cast<float>(out_side);
    const float x0 = center_x - side * 0.5f;
    const float y0 = center_y - side * 0.5f;

    auto tap = [&](long yi, long xi, int c) -> float {
        if (yi < 0 || xi < 0 || yi >= static_cast<long>(frame.height) ||
            xi >= static_cast<long>(frame.width)) {
            return fill[c];
        }
        return static_cast<float>(frame.rgb[3 * (yi * frame.width + xi) + c]);
    };

    Tensor out({3, out_side, out_side});
    for (std::size_t oy = 0; oy < out_side; ++oy) {
        const float sy = y0 + (static_cast<float>(oy) + 0.5f) * scale - 0.5f;
        const auto yb = static_cast<long>(std::floor(sy));
        const float fy = sy - static_cast<float>(yb);
        for (std::size_t ox = 0; ox < out_side; ++ox) {
            const float sx = x0 + (static_cast<float>(ox) + 0.5f) * scale - 0.5f;
            const auto xb = static_cast<long>(std::floor(sx));
            const float fx = sx - static_cast<float>(xb);
            for (int c = 0; c < 3; ++c) {
                const float top = tap(yb, xb, c) * (1.0f - fx) + tap(yb, xb + 1, c) * fx;
                const float bot = tap(yb + 1, xb, c) * (1.0f - fx) + tap(yb + 1, xb + 1, c) * fx;
                float v = top * (1.0f - fy) + bot * fy;
                if (norm.enabled) {
                    v = (v / 255.0f - norm.mean[c]) / norm.std[c];
                }
                out.at(c, oy, ox) = v;
            }
        }
    }
    return out;
}

// --- prediction head ----------------------------------------------------------

// Two 3x3 convolutions with a ReLU between, per branch.
struct HeadBranchWeights {
    Tensor conv1_weight, conv1_bias;  // hc x C x 3 x 3, hc
    Tensor conv2_weight, conv2_bias;  // out x hc x 3 x 3, out
};

struct HeadWeights {
    HeadBranchWeights score;   // out = 1
    HeadBranchWeights offset;  // out = 2
    HeadBranchWeights size;    // out = 2
};

inline HeadBranchWeights init_head_branch(std::size_t in_channels, std::size_t mid_channels,
                                          std::size_t out_channels, SplitMix64& rng) {
    HeadBranchWeights b;
    b.conv1_weight = Tensor::random_uniform({mid_channels, in_channels, 3, 3}, -0.02f, 0.02f, rng);
    b.conv1_bias = Tensor::zeros({mid_channels});
    b.conv2_weight = Tensor::random_uniform({out_channels, mid_channels, 3, 3}, -0.02f, 0.02f, rng);
    b.conv2_bias = Tensor::zeros({out_channels});
    return b;
}

inline HeadWeights init_head_weights(const ModelConfig& cfg, SplitMix64& rng) {
    HeadWeights w;
    w.score = init_head_branch(cfg.embed_dim, cfg.head_channels, 1, rng);
    w.offset = init_head_branch(cfg.embed_dim, cfg.head_channels, 2, rng);
    w.size = init_head_branch(cfg.embed_dim, cfg.head_channels, 2, rng);
    return w;
}

// 3x3 convolution, stride 1, zero padding.
inline Tensor conv3x3(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.ndim() != 3 || weight.ndim() != 4 || weight.dim(1) != input.dim(0) ||
        weight.dim(2) != 3 || weight.dim(3) != 3) {
        throw ShapeError("conv3x3 shape mismatch: " + input.shape_string() + " vs " +
                         weight.shape_string());
    }
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = weight.dim(0);
    Tensor out({cout, h, w});
    for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                float acc = bias.data()[co];
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    for (int ky = -1; ky <= 1; ++ky) {
                        const long yy = static_cast<long>(y) + ky;
                        if (yy < 0 || yy >= static_cast<long>(h)) continue;
                        for (int kx = -1; kx <= 1; ++kx) {
                            const long xx = static_cast<long>(x) + kx;
                            if (xx < 0 || xx >= static_cast<long>(w)) continue;
                            acc += weight.at(co, ci, static_cast<std::size_t>(ky + 1),
                                             static_cast<std::size_t>(kx + 1)) *
                                   input.at(ci, static_cast<std::size_t>(yy),
                                            static_cast<std::size_t>(xx));
                        }
                    }
                }
                out.at(co, y, x) = acc;
            }
        }
    }
    return out;
}

struct HeadOutput {
    Tensor score;   // H x W, unbounded
    Tensor offset;  // 2 x H x W, in (-0.5, 0.5); [0] = x, [1] = y
    Tensor size;    // 2 x H x W, in (0, 1); [0] = w, [1] = h
};

inline HeadOutput head_forward(const Tensor& map, const HeadWeights& w) {
    auto branch = [&map](const HeadBranchWeights& bw) {
        Tensor mid = conv3x3(map, bw.conv1_weight, bw.conv1_bias);
        for (auto& v : mid.values()) v = v > 0.0f ? v : 0.0f;
        return conv3x3(mid, bw.conv2_weight, bw.conv2_bias);
    };
    HeadOutput out;
    Tensor score = branch(w.score);
    out.score = score.reshape({score.dim(1), score.dim(2)});
    out.offset = branch(w.offset);
    for (auto& v : out.offset.values()) v = 0.5f * std::tanh(v);
    out.size = branch(w.size);
    for (auto& v : out.size.values()) v = sigmoid(v);
    return out;
}

// --- score-map penalty and box decoding ----------------------------------------

// Multiplies the score map by a centered window. Scores are first shifted up
// by max(0, -min) so the window scales magnitudes instead of flipping signs;
// already-non-negative maps pass through unshifted.
inline Tensor window_penalty(const Tensor& score, WindowKind kind) {
    if (score.ndim() != 2) {
        throw ShapeError("window_penalty expects H x W scores, got " + score.shape_string());
    }
    float mn = score.data()[0];
    for (float v : score.values()) mn = std::min(mn, v);
    const float shift = mn < 0.0f ? -mn : 0.0f;
    const Tensor win = kind == WindowKind::hann ? hann_window_2d(score.dim(0), score.dim(1))
                                                : hamming_window_2d(score.dim(0), score.dim(1));
    Tensor out = score;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out.data()[i] = (out.data()[i] + shift) * win.data()[i];
    }
    return out;
}

inline Tensor hanning_penalty(const Tensor& score) {
    return window_penalty(score, WindowKind::hann);
}

// Row-major first occurrence on ties.
inline std::pair<std::size_t, std::size_t> argmax_cell(const Tensor& score) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < score.numel(); ++i) {
        if (score.data()[i] > score.data()[best]) best = i;
    }
    return {best / score.dim(1), best % score.dim(1)};
}

inline BoundingBox decode_box(const Tensor& score, const Tensor& offset, const Tensor& size,
                              const CropParams& crop, std::size_t frame_width,
                              std::size_t frame_height) {
    if (score.ndim() != 2) {
        throw ShapeError("decode_box expects H x W scores, got " + score.shape_string());
    }
    const std::size_t h = score.dim(0), w = score.dim(1);
    if (offset.dims() != std::vector<std::size_t>{2, h, w} ||
        size.dims() != std::vector<std::size_t>{2, h, w}) {
        throw ShapeError("decode_box: offset/size maps do not match score map");
    }
    if (!(crop.side > 0.0f) || crop.out_side == 0) {
        throw ArgumentError("decode_box: invalid crop parameters");
    }
    const auto [bi, bj] = argmax_cell(score);
    const auto search_side = static_cast<float>(crop.out_side);
    const float sx =
        (static_cast<float>(bj) + 0.5f + offset.at(0, bi, bj)) / static_cast<float>(w) * search_side;
    const float sy =
        (static_cast<float>(bi) + 0.5f + offset.at(1, bi, bj)) / static_cast<float>(h) * search_side;
    const float sw = size.at(0, bi, bj) * search_side;
    const float sh = size.at(1, bi, bj) * search_side;

    const float to_frame = crop.side / search_side;
    BoundingBox box;
    box.cx = crop.center_x - crop.side * 0.5f + sx * to_frame;
    box.cy = crop.center_y - crop.side * 0.5f + sy * to_frame;
    box.w = sw * to_frame;
    box.h = sh * to_frame;

    const auto fw = static_cast<float>(frame_width);
    const auto fh = static_cast<float>(frame_height);
    box.cx = std::clamp(box.cx, 0.0f, fw);
    box.cy = std::clamp(box.cy, 0.0f, fh);
    box.w = std::clamp(box.w, 1.0f, fw);
    box.h = std::clamp(box.h, 1.0f, fh);
    return box;
}

// --- end-to-end single-frame tracking ------------------------------------------

struct TrackerConfig {
    float template_factor = 2.0f;
    float search_factor = 4.0f;
    Normalization norm;
    WindowKind window = WindowKind::hann;
};

struct TrackState {
    BoundingBox box;
    Tensor template_tokens;  // cached at init, never mutated afterwards
    CropParams last_crop;
    bool initialized = false;
};

struct TrackStepInfo {
    std::size_t chosen_k = 0;
    float score_max = 0.0f;
    std::size_t blocks_executed = 0;
    std::vector<float> probabilities;
};

namespace detail {

inline float crop_side_for(const BoundingBox& box, float factor) {
    const float base = std::sqrt(std::max(box.w * box.h, 1.0f));
    return std::max(base * factor, 2.0f);
}

} // namespace detail

inline TrackState track_init(const FrameView& frame, const BoundingBox& init_box,
                             const ModelConfig& cfg, const TrackerConfig& tcfg,
                             const BackboneWeights& backbone) {
    const float side = detail::crop_side_for(init_box, tcfg.template_factor);
    Tensor template_img =
        crop_resize(frame, init_box.cx, init_box.cy, side, cfg.template_side, tcfg.norm);
    TrackState state;
    state.box = init_box;
    state.template_tokens = embed_image_tokens(template_img, cfg.patch, backbone.patch_weight,
                                               backbone.patch_bias, backbone.pos_template);
    state.initialized = true;
    return state;
}

// One tracking step: crop, embed, saturated blocks, layer selection, selected
// block, GGCA on search tokens, head, window penalty, decode.
inline std::pair<TrackState, BoundingBox> track_step(
    const TrackState& state, const FrameView& frame, const ModelConfig& cfg,
    const TrackerConfig& tcfg, const BackboneWeights& backbone, const SelectorMlp& selector,
    const GgcaConfig& ggca_cfg, const GgcaWeights& ggca, const HeadWeights& head,
    TrackStepInfo* info = nullptr) {
    if (!state.initialized) throw ArgumentError("track_step: state not initialized");

    const float side = detail::crop_side_for(state.box, tcfg.search_factor);
    Tensor search_img =
        crop_resize(frame, state.box.cx, state.box.cy, side, cfg.search_side, tcfg.norm);
    Tensor search_tokens = embed_image_tokens(search_img, cfg.patch, backbone.patch_weight,
                                              backbone.patch_bias, backbone.pos_search);
    LayerFeatures x0{0, concat_rows(state.template_tokens, search_tokens)};

    ForwardStats stats;
    LayerFeatures sat = forward_saturated(x0, cfg, backbone, &stats);
    Tensor z = slice_rows(sat.tokens, 0, 1).reshape({cfg.embed_dim});
    SelectionDecision decision = select_layer(z, selector);
    LayerFeatures final = apply_skip_block(sat, cfg, backbone, decision.chosen_k, &stats);

    Tensor search_out = slice_rows(final.tokens, cfg.template_tokens(), cfg.total_tokens());
    Tensor enhanced = ggca_forward(tokens_to_map(search_out), ggca_cfg, ggca);
    HeadOutput out = head_forward(enhanced, head);
    Tensor penalized = window_penalty(out.score, tcfg.window);

    CropParams crop{state.box.cx, state.box.cy, side, cfg.search_side};
    BoundingBox box = decode_box(penalized, out.offset, out.size, crop, frame.width, frame.height);

    if (info) {
        info->chosen_k = decision.chosen_k;
        const auto [bi, bj] = argmax_cell(penalized);
        info->score_max = penalized.at(bi, bj);
        info->blocks_executed = stats.blocks_executed;
        info->probabilities = decision.probabilities;
    }
    TrackState next = state;
    next.box = box;
    next.last_crop = crop;
    return {std::move(next), box};
}

} // namespace skiptrack
