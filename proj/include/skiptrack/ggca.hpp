#pragma once

#include <cstddef>

#include "skiptrack/config.hpp"
#include "skiptrack/tensor.hpp"

namespace skiptrack {

// One parameter set, shared across all groups and all pooled branches.
struct GgcaWeights {
    static constexpr float kBnEps = 1e-5f;

    Tensor reduce_weight;  // c_mid x c_g
    Tensor reduce_bias;    // c_mid
    Tensor bn_gamma, bn_beta, bn_mean, bn_var;  // c_mid each
    Tensor expand_weight;  // c_g x c_mid
    Tensor expand_bias;    // c_g

    void validate(std::size_t channels, const GgcaConfig& cfg) const {
        const std::size_t cg = cfg.group_channels(channels);
        const std::size_t cm = cfg.mid_channels(channels);
        auto expect = [](const Tensor& t, std::vector<std::size_t> dims, const char* what) {
            if (t.dims() != dims) {
                throw ShapeError(std::string("ggca weights: unexpected shape for ") + what +
                                 ": " + t.shape_string());
            }
        };
        expect(reduce_weight, {cm, cg}, "reduce/weight");
        expect(reduce_bias, {cm}, "reduce/bias");
        expect(bn_gamma, {cm}, "bn/gamma");
        expect(bn_beta, {cm}, "bn/beta");
        expect(bn_mean, {cm}, "bn/mean");
        expect(bn_var, {cm}, "bn/var");
        expect(expand_weight, {cg, cm}, "expand/weight");
        expect(expand_bias, {cg}, "expand/bias");
        for (float v : bn_var.values()) {
            if (v < 0.0f) throw ShapeError("ggca weights: negative running variance");
        }
    }
};

// Projections seeded uniform(-0.02, 0.02); BN starts as identity (mean 0,
// var 1, gamma 1, beta 0) and is never trained here.
inline GgcaWeights init_ggca_weights(std::size_t channels, const GgcaConfig& cfg,
                                     SplitMix64& rng) {
    const std::size_t cg = cfg.group_channels(channels);
    const std::size_t cm = cfg.mid_channels(channels);
    GgcaWeights w;
    w.reduce_weight = Tensor::random_uniform({cm, cg}, -0.02f, 0.02f, rng);
    w.reduce_bias = Tensor::zeros({cm});
    w.bn_gamma = Tensor::ones({cm});
    w.bn_beta = Tensor::zeros({cm});
    w.bn_mean = Tensor::zeros({cm});
    w.bn_var = Tensor::ones({cm});
    w.expand_weight = Tensor::random_uniform({cg, cm}, -0.02f, 0.02f, rng);
    w.expand_bias = Tensor::zeros({cg});
    return w;
}

// Search tokens (N_s x D) to a D x H x W map; token i*W+j sits at (i, j).
inline Tensor tokens_to_map(const Tensor& search_tokens) {
    if (search_tokens.ndim() != 2) {
        throw ShapeError("tokens_to_map expects a matrix, got " + search_tokens.shape_string());
    }
    const std::size_t n = search_tokens.dim(0), d = search_tokens.dim(1);
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) {
        throw ShapeError("tokens_to_map: token count " + std::to_string(n) +
                         " is not a perfect square");
    }
    Tensor map({d, side, side});
    for (std::size_t i = 0; i < side; ++i)
        for (std::size_t j = 0; j < side; ++j)
            for (std::size_t c = 0; c < d; ++c)
                map.at(c, i, j) = search_tokens.at(i * side + j, c);
    return map;
}

inline Tensor map_to_tokens(const Tensor& map) {
    if (map.ndim() != 3) {
        throw ShapeError("map_to_tokens expects C x H x W, got " + map.shape_string());
    }
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    Tensor tokens({h * w, c});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t ch = 0; ch < c; ++ch)
                tokens.at(i * w + j, ch) = map.at(ch, i, j);
    return tokens;
}

// Per-group directional pooling. h-branch pools over W, w-branch over H.
struct DualPooled {
    Tensor h_avg, h_max;  // G x c_g x H
    Tensor w_avg, w_max;  // G x c_g x W
};

inline DualPooled grouped_dual_pool(const Tensor& map, std::size_t groups) {
    if (map.ndim() != 3) {
        throw ShapeError("grouped_dual_pool expects C x H x W, got " + map.shape_string());
    }
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    if (groups == 0 || c % groups != 0) {
        throw ConfigError("channel count " + std::to_string(c) + " not divisible by group count " +
                          std::to_string(groups));
    }
    const std::size_t cg = c / groups;
    DualPooled out{Tensor({groups, cg, h}), Tensor({groups, cg, h}),
                   Tensor({groups, cg, w}), Tensor({groups, cg, w})};
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t cc = 0; cc < cg; ++cc) {
            const std::size_t ch = g * cg + cc;
            for (std::size_t i = 0; i < h; ++i) {
                float sum = 0.0f, mx = map.at(ch, i, 0);
                for (std::size_t j = 0; j < w; ++j) {
                    const float v = map.at(ch, i, j);
                    sum += v;
                    mx = std::max(mx, v);
                }
                out.h_avg.at(g, cc, i) = sum / static_cast<float>(w);
                out.h_max.at(g, cc, i) = mx;
            }
            for (std::size_t j = 0; j < w; ++j) {
                float sum = 0.0f, mx = map.at(ch, 0, j);
                for (std::size_t i = 0; i < h; ++i) {
                    const float v = map.at(ch, i, j);
                    sum += v;
                    mx = std::max(mx, v);
                }
                out.w_avg.at(g, cc, j) = sum / static_cast<float>(h);
                out.w_max.at(g, cc, j) = mx;
            }
        }
    }
    return out;
}

// Shared bottleneck: expand(relu(bn(reduce(p)))) applied per group and
// position; BN uses running statistics (inference form).
inline Tensor shared_transform(const Tensor& pooled, const GgcaWeights& w) {
    if (pooled.ndim() != 3) {
        throw ShapeError("shared_transform expects G x c_g x Len, got " + pooled.shape_string());
    }
    const std::size_t groups = pooled.dim(0), cg = pooled.dim(1), len = pooled.dim(2);
    if (w.reduce_weight.ndim() != 2 || w.reduce_weight.dim(1) != cg) {
        throw ShapeError("shared_transform: weights expect c_g=" +
                         std::to_string(w.reduce_weight.dim(1)) + ", input has " +
                         std::to_string(cg));
    }
    const std::size_t cm = w.reduce_weight.dim(0);
    Tensor out({groups, cg, len});
    std::vector<float> mid(cm);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t m = 0; m < cm; ++m) {
                float acc = w.reduce_bias.data()[m];
                const float* wrow = w.reduce_weight.data() + m * cg;
                for (std::size_t c = 0; c < cg; ++c) acc += wrow[c] * pooled.at(g, c, t);
                const float centered = acc - w.bn_mean.data()[m];
                const float scaled =
                    centered / std::sqrt(w.bn_var.data()[m] + GgcaWeights::kBnEps);
                const float bn = scaled * w.bn_gamma.data()[m] + w.bn_beta.data()[m];
                mid[m] = bn > 0.0f ? bn : 0.0f;
            }
            for (std::size_t c = 0; c < cg; ++c) {
                float acc = w.expand_bias.data()[c];
                const float* wrow = w.expand_weight.data() + c * cm;
                for (std::size_t m = 0; m < cm; ++m) acc += wrow[m] * mid[m];
                out.at(g, c, t) = acc;
            }
        }
    }
    return out;
}

// A = sigmoid(Y_avg + Y_max), elementwise. Pass zeros for an absent branch.
inline Tensor attention_weights(const Tensor& y_avg, const Tensor& y_max) {
    if (!y_avg.same_shape(y_max)) {
        throw ShapeError("attention_weights shape mismatch: " + y_avg.shape_string() + " vs " +
                         y_max.shape_string());
    }
    Tensor out = y_avg;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out.data()[i] = sigmoid(out.data()[i] + y_max.data()[i]);
    }
    return out;
}

namespace detail {

// Transformed directional descriptors for the configured pooling mode; the
// absent branch contributes zero.
inline void ggca_branches(const DualPooled& pooled, const GgcaConfig& cfg, const GgcaWeights& w,
                          Tensor& a_h, Tensor& a_w) {
    const bool use_avg = cfg.pooling != PoolingMode::max;
    const bool use_max = cfg.pooling != PoolingMode::avg;
    Tensor yh_avg = use_avg ? shared_transform(pooled.h_avg, w) : Tensor::zeros(pooled.h_avg.dims());
    Tensor yh_max = use_max ? shared_transform(pooled.h_max, w) : Tensor::zeros(pooled.h_max.dims());
    Tensor yw_avg = use_avg ? shared_transform(pooled.w_avg, w) : Tensor::zeros(pooled.w_avg.dims());
    Tensor yw_max = use_max ? shared_transform(pooled.w_max, w) : Tensor::zeros(pooled.w_max.dims());
    a_h = attention_weights(yh_avg, yh_max);
    a_w = attention_weights(yw_avg, yw_max);
}

} // namespace detail

// Full pipeline of Global-Grouped Coordinate Attention: grouped dual pooling,
// shared bottleneck transform, sigmoid gates, broadcast recalibration.
inline Tensor ggca_forward(const Tensor& map, const GgcaConfig& cfg, const GgcaWeights& w) {
    DualPooled pooled = grouped_dual_pool(map, cfg.groups);
    Tensor a_h, a_w;  // G x c_g x H, G x c_g x W
    detail::ggca_branches(pooled, cfg, w, a_h, a_w);

    const std::size_t c = map.dim(0), h = map.dim(1), ww = map.dim(2);
    const std::size_t cg = c / cfg.groups;
    Tensor out({c, h, ww});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t g = ch / cg, cc = ch % cg;
        for (std::size_t i = 0; i < h; ++i) {
            const float gate_h = a_h.at(g, cc, i);
            for (std::size_t j = 0; j < ww; ++j) {
                out.at(ch, i, j) = map.at(ch, i, j) * gate_h * a_w.at(g, cc, j);
            }
        }
    }
    return out;
}

inline std::uint64_t ggca_param_count(std::size_t channels, const GgcaConfig& cfg) {
    const std::uint64_t cg = cfg.group_channels(channels);
    const std::uint64_t cm = cfg.mid_channels(channels);
    return 2 * cg * cm + cg + cm + 4 * cm;
}

} // namespace skiptrack
