#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "skiptrack/errors.hpp"

namespace skiptrack {

enum class PoolingMode { avg, max, avg_max };

inline std::string to_string(PoolingMode mode) {
    switch (mode) {
        case PoolingMode::avg: return "avg";
        case PoolingMode::max: return "max";
        default: return "avg_max";
    }
}

inline PoolingMode pooling_mode_from_string(const std::string& s) {
    if (s == "avg") return PoolingMode::avg;
    if (s == "max") return PoolingMode::max;
    if (s == "avg_max") return PoolingMode::avg_max;
    throw ArgumentError("unknown pooling mode: " + s);
}

struct GgcaConfig {
    std::size_t groups = 4;
    std::size_t reduction = 8;
    PoolingMode pooling = PoolingMode::avg_max;
    std::size_t min_mid_channels = 4;

    std::size_t group_channels(std::size_t total_channels) const {
        if (groups == 0 || total_channels % groups != 0) {
            throw ConfigError("channel count " + std::to_string(total_channels) +
                              " not divisible by group count " + std::to_string(groups));
        }
        return total_channels / groups;
    }

    std::size_t mid_channels(std::size_t total_channels) const {
        if (reduction == 0) throw ConfigError("ggca reduction must be positive");
        const std::size_t cg = group_channels(total_channels);
        const std::size_t reduced = cg / reduction;
        const std::size_t mid = reduced > min_mid_channels ? reduced : min_mid_channels;
        return mid > 0 ? mid : 1;
    }
};

// Architecture hyperparameters. Defaults follow a DeiT-tiny-shaped backbone:
// 12 blocks, saturated layer 8, 192-dim embeddings, 3 heads, 16px patches.
struct ModelConfig {
    std::size_t depth = 12;           // L
    std::size_t saturated_layer = 8;  // l*, 1-based
    std::size_t embed_dim = 192;      // D
    std::size_t heads = 3;
    std::size_t patch = 16;
    std::size_t template_side = 128;
    std::size_t search_side = 256;
    std::size_t mlp_ratio = 4;
    std::size_t head_channels = 64;
    std::size_t selector_hidden = 160;
    GgcaConfig ggca;

    std::size_t template_tokens() const {
        const std::size_t s = template_side / patch;
        return s * s;
    }
    std::size_t search_tokens() const {
        const std::size_t s = search_side / patch;
        return s * s;
    }
    std::size_t total_tokens() const { return template_tokens() + search_tokens(); }
    std::size_t search_map_side() const { return search_side / patch; }
    std::size_t skip_choices() const { return depth - saturated_layer; }  // K

    void validate() const {
        if (depth < 2) throw ConfigError("depth must be >= 2");
        if (saturated_layer < 1 || saturated_layer >= depth) {
            throw ConfigError("saturated_layer must satisfy 1 <= l* < depth");
        }
        if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
            throw ConfigError("embed_dim must be positive and divisible by heads");
        }
        if (patch == 0 || template_side % patch != 0 || search_side % patch != 0) {
            throw ConfigError("template/search sides must be divisible by patch size");
        }
        if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
        if (head_channels == 0) throw ConfigError("head_channels must be positive");
        if (selector_hidden == 0) throw ConfigError("selector_hidden must be positive");
        // GGCA operates on the search feature map with C = embed_dim channels.
        ggca.mid_channels(embed_dim);
    }
};

// Stable 64-bit fingerprint over every architecture-relevant field.
inline std::uint64_t config_fingerprint(const ModelConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    };
    mix(cfg.depth);
    mix(cfg.saturated_layer);
    mix(cfg.embed_dim);
    mix(cfg.heads);
    mix(cfg.patch);
    mix(cfg.template_side);
    mix(cfg.search_side);
    mix(cfg.mlp_ratio);
    mix(cfg.head_channels);
    mix(cfg.selector_hidden);
    mix(cfg.ggca.groups);
    mix(cfg.ggca.reduction);
    mix(static_cast<std::uint64_t>(cfg.ggca.pooling));
    mix(cfg.ggca.min_mid_channels);
    return h;
}

} // namespace skiptrack
