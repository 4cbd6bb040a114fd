#include "skiptrack/masking.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace skiptrack;

namespace {

MaskConfig grid_config(std::size_t h, std::size_t w, float ratio, MaskMode mode,
                       std::uint64_t seed = 0) {
    MaskConfig cfg;
    cfg.grid_h = h;
    cfg.grid_w = w;
    cfg.mask_ratio = ratio;
    cfg.mode = mode;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST(SplitMix64Stream, MatchesReferenceVector) {
    SplitMix64 rng(0);
    EXPECT_EQ(rng.next_u64(), 0xe220a8397b1dcdafull);
    EXPECT_EQ(rng.next_u64(), 0x6e789e6aa1b965f4ull);
    EXPECT_EQ(rng.next_u64(), 0x06c45d188009454full);
}

TEST(UniformMask, ZeroRatioMasksNothing) {
    MaskPattern p = uniform_mask(grid_config(8, 8, 0.0f, MaskMode::uniform), 3);
    EXPECT_EQ(p.realized_masked_count, 0u);
    for (auto v : p.grid) EXPECT_EQ(v, 0);
}

TEST(UniformMask, FullRatioMasksEverything) {
    MaskPattern p = uniform_mask(grid_config(8, 8, 1.0f, MaskMode::uniform), 3);
    EXPECT_EQ(p.realized_masked_count, 64u);
    for (auto v : p.grid) EXPECT_EQ(v, 1);
}

TEST(UniformMask, ExactCountForEverySeed) {
    const MaskConfig cfg = grid_config(8, 8, 0.25f, MaskMode::uniform);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        MaskPattern p = uniform_mask(cfg, seed);
        EXPECT_EQ(p.realized_masked_count, 16u) << "seed " << seed;
        std::size_t ones = 0;
        for (auto v : p.grid) ones += v;
        EXPECT_EQ(ones, p.realized_masked_count);
    }
}

TEST(UniformMask, RoundingRule) {
    // 3x3 grid, rho=0.5: keep round(4.5) = 5 (half away from zero), mask 4.
    MaskPattern p = uniform_mask(grid_config(3, 3, 0.5f, MaskMode::uniform), 1);
    EXPECT_EQ(p.realized_masked_count, 4u);
}

TEST(UniformMask, BitExactAcrossRuns) {
    const MaskConfig cfg = grid_config(8, 8, 0.4f, MaskMode::uniform);
    MaskPattern a = uniform_mask(cfg, 77);
    MaskPattern b = uniform_mask(cfg, 77);
    EXPECT_EQ(a.grid, b.grid);
    MaskPattern c = uniform_mask(cfg, 78);
    EXPECT_NE(a.grid, c.grid);
}

TEST(CoxIntensity, ZeroRatioGivesZeroField) {
    IntensityField f = cox_intensity(8, 8, 0.0f, 0.25f);
    for (double v : f.lambda) EXPECT_EQ(v, 0.0);
    EXPECT_FALSE(f.saturated);
}

TEST(CoxIntensity, CenterDominatesCorners) {
    IntensityField f = cox_intensity(8, 8, 0.25f, 0.25f);
    // Grid center sits between cells; every central cell beats every corner.
    const double center = f.at(3, 3);
    for (auto [i, j] : {std::pair<std::size_t, std::size_t>{0, 0}, {0, 7}, {7, 0}, {7, 7}}) {
        EXPECT_GT(center, f.at(i, j));
    }
}

TEST(CoxIntensity, NormalizationHitsTheTarget) {
    IntensityField f = cox_intensity(8, 8, 0.25f, 0.25f);
    double total = 0.0;
    for (double v : f.lambda) {
        EXPECT_GE(v, 0.0);
        total += 1.0 - std::exp(-v);
    }
    EXPECT_NEAR(total, 16.0, 1e-6);
    EXPECT_NEAR(f.expected_masked, 16.0, 1e-6);
}

TEST(CoxIntensity, SaturatesAtFullRatio) {
    IntensityField f = cox_intensity(4, 4, 1.0f, 0.25f);
    EXPECT_TRUE(f.saturated);
    for (double v : f.lambda) EXPECT_EQ(v, 50.0);
}

TEST(CoxMask, ZeroRatioAlwaysEmpty) {
    const MaskConfig cfg = grid_config(8, 8, 0.0f, MaskMode::cox);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        EXPECT_EQ(cox_mask(cfg, seed).realized_masked_count, 0u);
    }
}

TEST(CoxMask, MonteCarloMeanNearTarget) {
    const MaskConfig cfg = grid_config(8, 8, 0.25f, MaskMode::cox);
    const IntensityField field = cox_intensity(8, 8, 0.25f, 0.25f);
    double sum = 0.0;
    const std::size_t trials = 2000;
    for (std::size_t t = 0; t < trials; ++t) {
        sum += static_cast<double>(cox_mask(cfg, t, field).realized_masked_count);
    }
    const double mean = sum / trials;
    EXPECT_GT(mean, 15.0);
    EXPECT_LT(mean, 17.0);
}

TEST(CoxMask, CenterMaskedMoreOftenThanCorners) {
    const MaskConfig cfg = grid_config(8, 8, 0.25f, MaskMode::cox);
    const IntensityField field = cox_intensity(8, 8, 0.25f, 0.25f);
    std::size_t center = 0;
    std::size_t corners[4] = {0, 0, 0, 0};
    const std::size_t trials = 2000;
    for (std::size_t t = 0; t < trials; ++t) {
        MaskPattern p = cox_mask(cfg, t, field);
        center += p.masked(3, 3);
        corners[0] += p.masked(0, 0);
        corners[1] += p.masked(0, 7);
        corners[2] += p.masked(7, 0);
        corners[3] += p.masked(7, 7);
    }
    for (std::size_t c : corners) EXPECT_GT(center, c);
}

TEST(CoxMask, DeterministicPerSeed) {
    const MaskConfig cfg = grid_config(8, 8, 0.5f, MaskMode::cox);
    MaskPattern a = cox_mask(cfg, 9);
    MaskPattern b = cox_mask(cfg, 9);
    EXPECT_EQ(a.grid, b.grid);
    EXPECT_EQ(a.realized_masked_count, b.realized_masked_count);
}

TEST(ApplyMask, EmptyPatternIsIdentity) {
    SplitMix64 rng(1);
    Tensor img = Tensor::random_uniform({3, 32, 32}, 0.0f, 1.0f, rng);
    MaskPattern p = uniform_mask(grid_config(2, 2, 0.0f, MaskMode::uniform), 0);
    Tensor out = apply_mask(img, p, 16);
    for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(out.data()[i], img.data()[i]);
}

TEST(ApplyMask, FullPatternAnnihilates) {
    SplitMix64 rng(2);
    Tensor img = Tensor::random_uniform({3, 32, 32}, 0.5f, 1.0f, rng);
    MaskPattern p = uniform_mask(grid_config(2, 2, 1.0f, MaskMode::uniform), 0);
    Tensor out = apply_mask(img, p, 16);
    for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(ApplyMask, SingleBlockZeroesExactlyOneBlock) {
    SplitMix64 rng(3);
    Tensor img = Tensor::random_uniform({3, 32, 32}, 0.5f, 1.0f, rng);
    MaskPattern p;
    p.grid_h = 2;
    p.grid_w = 2;
    p.grid = {1, 0, 0, 0};
    p.realized_masked_count = 1;
    Tensor out = apply_mask(img, p, 16);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) {
        if (out.data()[i] != img.data()[i]) {
            ++changed;
            EXPECT_EQ(out.data()[i], 0.0f);
        }
    }
    EXPECT_EQ(changed, 3u * 16 * 16);
}

TEST(ApplyMask, Idempotent) {
    SplitMix64 rng(4);
    Tensor img = Tensor::random_uniform({3, 32, 32}, 0.0f, 1.0f, rng);
    MaskPattern p = uniform_mask(grid_config(2, 2, 0.5f, MaskMode::uniform), 5);
    Tensor once = apply_mask(img, p, 16);
    Tensor twice = apply_mask(once, p, 16);
    for (std::size_t i = 0; i < once.numel(); ++i) EXPECT_EQ(twice.data()[i], once.data()[i]);
}

TEST(ApplyMask, GridMismatchThrows) {
    Tensor img({3, 32, 32});
    MaskPattern p;
    p.grid_h = 3;
    p.grid_w = 2;
    p.grid = {0, 0, 0, 0, 0, 0};
    EXPECT_THROW(apply_mask(img, p, 16), ShapeError);
}

TEST(OrrLoss, IdenticalInputsGiveZeroAndSymmetry) {
    SplitMix64 rng(5);
    Tensor t = Tensor::random_uniform({8, 4}, -1.0f, 1.0f, rng);
    EXPECT_EQ(orr_loss(t, t), 0.0f);
    Tensor u = Tensor::random_uniform({8, 4}, -1.0f, 1.0f, rng);
    EXPECT_FLOAT_EQ(orr_loss(t, u), orr_loss(u, t));
}

TEST(OrrLoss, AnalyticValue) {
    Tensor a({1, 2}, {1, 1});
    Tensor b({1, 2}, {0, 0});
    EXPECT_FLOAT_EQ(orr_loss(a, b), 1.0f);
}

TEST(OrrLoss, MatchesScalarLoop) {
    SplitMix64 rng(6);
    Tensor a = Tensor::random_uniform({5, 7}, -2.0f, 2.0f, rng);
    Tensor b = Tensor::random_uniform({5, 7}, -2.0f, 2.0f, rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    EXPECT_NEAR(orr_loss(a, b), acc / a.numel(), 1e-6);
}

TEST(OrrLoss, ShapeMismatchThrows) {
    EXPECT_THROW(orr_loss(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
}

TEST(MaskStatistics, UniformCountIsDeterministic) {
    MaskStatistics s = mask_statistics(grid_config(8, 8, 0.25f, MaskMode::uniform, 11), 500);
    EXPECT_EQ(s.std_masked, 0.0);
    EXPECT_EQ(s.mean_masked, 16.0);
}

TEST(MaskStatistics, FrequencyAccountingIdentity) {
    MaskStatistics s = mask_statistics(grid_config(8, 8, 0.25f, MaskMode::cox, 12), 500);
    double freq_sum = 0.0;
    for (double f : s.per_cell_frequency) freq_sum += f;
    EXPECT_NEAR(freq_sum, s.mean_masked, 1e-9);
}

TEST(MaskStatistics, RejectsZeroTrials) {
    EXPECT_THROW(mask_statistics(grid_config(4, 4, 0.5f, MaskMode::uniform), 0), ArgumentError);
}

TEST(MaskConfig, TemplateFactoryValidatesDivisibility) {
    MaskConfig cfg = make_mask_config(128, 16, 0.25f, MaskMode::uniform, 0);
    EXPECT_EQ(cfg.grid_h, 8u);
    EXPECT_EQ(cfg.grid_w, 8u);
    EXPECT_THROW(make_mask_config(100, 16, 0.25f, MaskMode::uniform, 0), ConfigError);
    EXPECT_THROW(make_mask_config(128, 16, 1.5f, MaskMode::uniform, 0), ConfigError);
}
