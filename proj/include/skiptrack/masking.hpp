#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "skiptrack/config.hpp"
#include "skiptrack/rng.hpp"
#include "skiptrack/tensor.hpp"

namespace skiptrack {

enum class MaskMode { uniform, cox };

inline std::string to_string(MaskMode mode) {
    return mode == MaskMode::uniform ? "uniform" : "cox";
}

inline MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "uniform") return MaskMode::uniform;
    if (s == "cox") return MaskMode::cox;
    throw ArgumentError("unknown mask mode: " + s);
}

struct MaskConfig {
    std::size_t block_side = 16;  // b, pixels
    float mask_ratio = 0.25f;     // rho
    MaskMode mode = MaskMode::uniform;
    float cox_bandwidth_frac = 0.25f;
    std::uint64_t seed = 0;
    std::size_t grid_h = 8, grid_w = 8;

    std::size_t grid_cells() const { return grid_h * grid_w; }

    void validate() const {
        if (block_side == 0 || grid_h == 0 || grid_w == 0) {
            throw ConfigError("mask grid and block side must be positive");
        }
        if (!(mask_ratio >= 0.0f && mask_ratio <= 1.0f)) {
            throw ConfigError("mask ratio must lie in [0, 1]");
        }
        if (!(cox_bandwidth_frac > 0.0f)) {
            throw ConfigError("cox bandwidth fraction must be positive");
        }
    }
};

inline MaskConfig make_mask_config(std::size_t template_side, std::size_t block_side,
                                   float mask_ratio, MaskMode mode, std::uint64_t seed) {
    if (block_side == 0 || template_side % block_side != 0) {
        throw ConfigError("template side " + std::to_string(template_side) +
                          " not divisible by block side " + std::to_string(block_side));
    }
    MaskConfig cfg;
    cfg.block_side = block_side;
    cfg.mask_ratio = mask_ratio;
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.grid_h = template_side / block_side;
    cfg.grid_w = template_side / block_side;
    cfg.validate();
    return cfg;
}

// Binary block grid over the template region; 1 = masked.
struct MaskPattern {
    std::size_t grid_h = 0, grid_w = 0;
    std::vector<std::uint8_t> grid;
    MaskMode mode = MaskMode::uniform;
    std::uint64_t seed = 0;
    std::size_t realized_masked_count = 0;
    bool saturated = false;

    bool masked(std::size_t i, std::size_t j) const { return grid[i * grid_w + j] != 0; }
};

// Nearest integer, half away from zero.
inline std::size_t uniform_keep_count(float mask_ratio, std::size_t cells) {
    const double kept = (1.0 - static_cast<double>(mask_ratio)) * static_cast<double>(cells);
    const auto k = static_cast<long long>(std::llround(kept));
    return static_cast<std::size_t>(std::clamp<long long>(k, 0, static_cast<long long>(cells)));
}

// MAE-style masking: i.i.d. uniforms, keep the TopK, mask the rest. The
// masked count is the same for every seed.
inline MaskPattern uniform_mask(const MaskConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t cells = cfg.grid_cells();
    SplitMix64 rng(seed);
    std::vector<double> m(cells);
    for (auto& v : m) v = rng.next_double();

    std::vector<std::size_t> idx(cells);
    for (std::size_t i = 0; i < cells; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&m](std::size_t a, std::size_t b) {
        return m[a] != m[b] ? m[a] > m[b] : a < b;
    });

    const std::size_t keep = uniform_keep_count(cfg.mask_ratio, cells);
    MaskPattern p;
    p.grid_h = cfg.grid_h;
    p.grid_w = cfg.grid_w;
    p.mode = MaskMode::uniform;
    p.seed = seed;
    p.grid.assign(cells, 1);
    for (std::size_t i = 0; i < keep; ++i) p.grid[idx[i]] = 0;
    p.realized_masked_count = cells - keep;
    return p;
}

inline MaskPattern uniform_mask(const MaskConfig& cfg) { return uniform_mask(cfg, cfg.seed); }

// Bell-shaped intensity over the block grid, normalized so the expected
// number of occupied (masked) cells matches the uniform mode's count.
struct IntensityField {
    std::size_t grid_h = 0, grid_w = 0;
    std::vector<double> lambda;
    double expected_masked = 0.0;
    bool saturated = false;

    double at(std::size_t i, std::size_t j) const { return lambda[i * grid_w + j]; }
    double max_lambda() const {
        double mx = 0.0;
        for (double v : lambda) mx = std::max(mx, v);
        return mx;
    }
};

inline IntensityField cox_intensity(std::size_t grid_h, std::size_t grid_w, float mask_ratio,
                                    float bandwidth_frac) {
    if (grid_h == 0 || grid_w == 0) throw ConfigError("cox_intensity: empty grid");
    if (!(mask_ratio >= 0.0f && mask_ratio <= 1.0f)) {
        throw ConfigError("cox_intensity: mask ratio must lie in [0, 1]");
    }
    if (!(bandwidth_frac > 0.0f)) throw ConfigError("cox_intensity: bandwidth must be positive");

    const std::size_t cells = grid_h * grid_w;
    IntensityField field;
    field.grid_h = grid_h;
    field.grid_w = grid_w;
    field.lambda.assign(cells, 0.0);
    if (mask_ratio == 0.0f) return field;

    if (mask_ratio >= 1.0f) {
        // Sigma(1 - exp(-lambda)) < cells for any finite lambda; saturate.
        field.lambda.assign(cells, 50.0);
        field.saturated = true;
        field.expected_masked = 0.0;
        for (double v : field.lambda) field.expected_masked += 1.0 - std::exp(-v);
        return field;
    }

    const double sigma = static_cast<double>(bandwidth_frac) *
                         static_cast<double>(std::min(grid_h, grid_w));
    const double ci = (static_cast<double>(grid_h) - 1.0) / 2.0;
    const double cj = (static_cast<double>(grid_w) - 1.0) / 2.0;
    std::vector<double> shape(cells);
    for (std::size_t i = 0; i < grid_h; ++i) {
        for (std::size_t j = 0; j < grid_w; ++j) {
            const double di = static_cast<double>(i) - ci;
            const double dj = static_cast<double>(j) - cj;
            shape[i * grid_w + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
        }
    }

    const double target = static_cast<double>(mask_ratio) * static_cast<double>(cells);
    auto expected = [&shape](double alpha) {
        double acc = 0.0;
        for (double s : shape) acc += 1.0 - std::exp(-alpha * s);
        return acc;
    };
    // Monotone bisection on Sigma(1 - exp(-alpha s)) = rho * cells.
    double lo = 0.0, hi = 1.0;
    while (expected(hi) < target) hi *= 2.0;
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (expected(mid) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (std::abs(expected(0.5 * (lo + hi)) - target) <= 1e-9) break;
    }
    const double alpha = 0.5 * (lo + hi);
    for (std::size_t i = 0; i < cells; ++i) field.lambda[i] = alpha * shape[i];
    field.expected_masked = expected(alpha);
    return field;
}

// Poisson count via summed exponential arrivals; robust for large means.
inline std::size_t poisson_count(SplitMix64& rng, double mean) {
    if (mean <= 0.0) return 0;
    std::size_t n = 0;
    double acc = 0.0;
    while (true) {
        acc += -std::log(1.0 - rng.next_double());
        if (acc > mean) break;
        ++n;
    }
    return n;
}

// Spatial Cox masking via the thinning algorithm: simulate a homogeneous
// Poisson process at rate max(lambda) over the grid rectangle, accept each
// point with probability lambda(cell)/max(lambda), mask occupied cells.
inline MaskPattern cox_mask(const MaskConfig& cfg, std::uint64_t seed,
                            const IntensityField& field) {
    cfg.validate();
    if (field.grid_h != cfg.grid_h || field.grid_w != cfg.grid_w) {
        throw ShapeError("cox_mask: intensity field grid does not match config");
    }
    MaskPattern p;
    p.grid_h = cfg.grid_h;
    p.grid_w = cfg.grid_w;
    p.mode = MaskMode::cox;
    p.seed = seed;
    p.saturated = field.saturated;
    p.grid.assign(cfg.grid_cells(), 0);

    const double lambda_max = field.max_lambda();
    SplitMix64 rng(seed);
    if (lambda_max > 0.0) {
        const double area = static_cast<double>(cfg.grid_cells());
        const std::size_t points = poisson_count(rng, lambda_max * area);
        for (std::size_t n = 0; n < points; ++n) {
            const double y = rng.next_double() * static_cast<double>(cfg.grid_h);
            const double x = rng.next_double() * static_cast<double>(cfg.grid_w);
            auto i = static_cast<std::size_t>(y);
            auto j = static_cast<std::size_t>(x);
            i = std::min(i, cfg.grid_h - 1);
            j = std::min(j, cfg.grid_w - 1);
            const double accept = field.at(i, j) / lambda_max;
            if (rng.next_double() < accept) p.grid[i * cfg.grid_w + j] = 1;
        }
    }
    for (auto v : p.grid) p.realized_masked_count += v;
    return p;
}

inline MaskPattern cox_mask(const MaskConfig& cfg, std::uint64_t seed) {
    return cox_mask(cfg, seed,
                    cox_intensity(cfg.grid_h, cfg.grid_w, cfg.mask_ratio, cfg.cox_bandwidth_frac));
}

inline MaskPattern cox_mask(const MaskConfig& cfg) { return cox_mask(cfg, cfg.seed); }

inline MaskPattern make_mask(const MaskConfig& cfg, std::uint64_t seed) {
    return cfg.mode == MaskMode::uniform ? uniform_mask(cfg, seed) : cox_mask(cfg, seed);
}

// Zeroes masked b x b blocks in all channels; kept blocks are bit-identical.
inline Tensor apply_mask(const Tensor& image, const MaskPattern& pattern, std::size_t block_side) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw ShapeError("apply_mask expects a 3 x H x W image, got " + image.shape_string());
    }
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (block_side == 0 || h % block_side != 0 || w % block_side != 0 ||
        h / block_side != pattern.grid_h || w / block_side != pattern.grid_w) {
        throw ShapeError("apply_mask: pattern grid does not match image/block geometry");
    }
    Tensor out = image;
    for (std::size_t i = 0; i < pattern.grid_h; ++i) {
        for (std::size_t j = 0; j < pattern.grid_w; ++j) {
            if (!pattern.masked(i, j)) continue;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < block_side; ++y)
                    for (std::size_t x = 0; x < block_side; ++x)
                        out.at(c, i * block_side + y, j * block_side + x) = 0.0f;
        }
    }
    return out;
}

// MSE between final-layer template-token features of the unmasked and masked
// templates.
inline float orr_loss(const Tensor& tokens_unmasked, const Tensor& tokens_masked) {
    if (!tokens_unmasked.same_shape(tokens_masked)) {
        throw ShapeError("orr_loss shape mismatch: " + tokens_unmasked.shape_string() + " vs " +
                         tokens_masked.shape_string());
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < tokens_unmasked.numel(); ++i) {
        const double d = static_cast<double>(tokens_unmasked.data()[i]) - tokens_masked.data()[i];
        acc += d * d;
    }
    return static_cast<float>(acc / static_cast<double>(tokens_unmasked.numel()));
}

// Monte-Carlo summary over trials with the derived seed sequence
// cfg.seed, cfg.seed+1, ...
struct MaskStatistics {
    std::size_t trials = 0;
    double mean_masked = 0.0;
    double std_masked = 0.0;
    std::vector<double> per_cell_frequency;  // grid_h x grid_w, row-major
    std::size_t grid_h = 0, grid_w = 0;
};

inline MaskStatistics mask_statistics(const MaskConfig& cfg, std::size_t trials) {
    if (trials < 1) throw ArgumentError("mask_statistics: trials must be >= 1");
    cfg.validate();
    const std::size_t cells = cfg.grid_cells();
    IntensityField field;
    if (cfg.mode == MaskMode::cox) {
        field = cox_intensity(cfg.grid_h, cfg.grid_w, cfg.mask_ratio, cfg.cox_bandwidth_frac);
    }
    std::vector<std::uint64_t> cell_counts(cells, 0);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t seed = cfg.seed + t;
        MaskPattern p = cfg.mode == MaskMode::uniform ? uniform_mask(cfg, seed)
                                                      : cox_mask(cfg, seed, field);
        const auto count = static_cast<double>(p.realized_masked_count);
        sum += count;
        sum_sq += count * count;
        for (std::size_t i = 0; i < cells; ++i) cell_counts[i] += p.grid[i];
    }
    MaskStatistics stats;
    stats.trials = trials;
    stats.grid_h = cfg.grid_h;
    stats.grid_w = cfg.grid_w;
    stats.mean_masked = sum / static_cast<double>(trials);
    const double var = std::max(0.0, sum_sq / static_cast<double>(trials) -
                                         stats.mean_masked * stats.mean_masked);
    stats.std_masked = std::sqrt(var);
    stats.per_cell_frequency.resize(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        stats.per_cell_frequency[i] = static_cast<double>(cell_counts[i]) /
                                      static_cast<double>(trials);
    }
    return stats;
}

} // namespace skiptrack
