#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "skiptrack/model_weights.hpp"

namespace skiptrack {

inline std::string to_string(ForwardMode mode) {
    return mode == ForwardMode::full ? "full" : "skip";
}

inline ForwardMode forward_mode_from_string(const std::string& s) {
    if (s == "full") return ForwardMode::full;
    if (s == "skip") return ForwardMode::skip;
    throw ArgumentError("unknown forward mode: " + s);
}

struct BenchReport {
    ForwardMode mode = ForwardMode::full;
    std::size_t iterations = 0;
    std::size_t warmup = 0;
    std::size_t threads = 1;
    double mean_us = 0.0;
    double median_us = 0.0;
    double p95_us = 0.0;
    std::uint64_t flops = 0;
    double throughput_per_s = 0.0;  // forwards per second, 1e6 / mean_us
    std::string config_fingerprint;
};

namespace detail {

inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double x = p * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(x);
    const std::size_t j = std::min(i + 1, v.size() - 1);
    const double frac = x - static_cast<double>(i);
    return v[i] * (1.0 - frac) + v[j] * frac;
}

inline Tensor random_image(std::size_t side, SplitMix64& rng) {
    return Tensor::random_uniform({3, side, side}, 0.0f, 1.0f, rng);
}

} // namespace detail

// One measured forward: patch embedding, the executed blocks, and (in skip
// mode) the selector routing on the first template token.
inline LayerFeatures bench_single_forward(const LayerFeatures& x0, const ModelConfig& cfg,
                                          const ModelWeights& w, ForwardMode mode) {
    if (mode == ForwardMode::full) {
        auto all = forward_all(x0, cfg, w.backbone);
        return std::move(all.back());
    }
    LayerFeatures sat = forward_saturated(x0, cfg, w.backbone);
    Tensor z = slice_rows(sat.tokens, 0, 1).reshape({cfg.embed_dim});
    const SelectionDecision decision = select_layer(z, w.selector);
    return apply_skip_block(sat, cfg, w.backbone, decision.chosen_k);
}

// Wall-time benchmark over a fixed random input derived from the seed.
// Warmup iterations run first and are excluded from the statistics.
inline BenchReport bench_forward(const ModelConfig& cfg, const ModelWeights& w, ForwardMode mode,
                                 std::size_t iters, std::size_t warmup, std::uint64_t seed,
                                 std::size_t threads = 1) {
    if (iters < 1) throw ArgumentError("bench_forward: iters must be >= 1");
    cfg.validate();
    SplitMix64 rng(seed);
    const Tensor template_img = detail::random_image(cfg.template_side, rng);
    const Tensor search_img = detail::random_image(cfg.search_side, rng);
    const LayerFeatures x0 = patch_embed(template_img, search_img, cfg, w.backbone);

    using clock = std::chrono::steady_clock;
    std::vector<double> samples_us;
    samples_us.reserve(iters);

    if (threads <= 1) {
        for (std::size_t i = 0; i < warmup; ++i) {
            volatile float sink = bench_single_forward(x0, cfg, w, mode).tokens.data()[0];
            (void)sink;
        }
        for (std::size_t i = 0; i < iters; ++i) {
            const auto t0 = clock::now();
            LayerFeatures out = bench_single_forward(x0, cfg, w, mode);
            const auto t1 = clock::now();
            volatile float sink = out.tokens.data()[0];
            (void)sink;
            samples_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        }
    } else {
        // Concurrent independent forwards on shared immutable weights; each
        // thread times its own iterations.
        std::vector<std::vector<double>> per_thread(threads);
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = 0; i < warmup; ++i) {
                    volatile float sink = bench_single_forward(x0, cfg, w, mode).tokens.data()[0];
                    (void)sink;
                }
                for (std::size_t i = 0; i < iters; ++i) {
                    const auto t0 = clock::now();
                    LayerFeatures out = bench_single_forward(x0, cfg, w, mode);
                    const auto t1 = clock::now();
                    volatile float sink = out.tokens.data()[0];
                    (void)sink;
                    per_thread[t].push_back(
                        std::chrono::duration<double, std::micro>(t1 - t0).count());
                }
            });
        }
        for (auto& th : pool) th.join();
        for (const auto& v : per_thread) samples_us.insert(samples_us.end(), v.begin(), v.end());
    }

    BenchReport report;
    report.mode = mode;
    report.iterations = iters;
    report.warmup = warmup;
    report.threads = threads <= 1 ? 1 : threads;
    double sum = 0.0;
    for (double s : samples_us) sum += s;
    report.mean_us = sum / static_cast<double>(samples_us.size());
    report.median_us = detail::percentile(samples_us, 0.5);
    report.p95_us = detail::percentile(samples_us, 0.95);
    report.flops = flop_estimate(cfg, mode);
    report.throughput_per_s = 1e6 / report.mean_us;
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx",
                  static_cast<unsigned long long>(config_fingerprint(cfg)));
    report.config_fingerprint = buf;
    return report;
}

} // namespace skiptrack
