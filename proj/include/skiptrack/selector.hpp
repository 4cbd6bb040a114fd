#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "skiptrack/backbone.hpp"
#include "skiptrack/config.hpp"
#include "skiptrack/tensor.hpp"

namespace skiptrack {

enum class CosineMode { flattened, per_token_mean };
enum class LabelMode { direct, sequential };

inline std::string to_string(LabelMode mode) {
    return mode == LabelMode::direct ? "direct" : "sequential";
}

// Cosine similarity of two token matrices. Flattened mode treats both as
// length N*D vectors; per_token_mean averages the per-row cosines.
inline float layer_cosine(const LayerFeatures& a, const LayerFeatures& b,
                          CosineMode mode = CosineMode::flattened) {
    if (!a.tokens.same_shape(b.tokens)) {
        throw ShapeError("layer_cosine shape mismatch: " + a.tokens.shape_string() + " vs " +
                         b.tokens.shape_string());
    }
    auto cosine = [](const float* x, const float* y, std::size_t n) {
        double dot = 0.0, nx = 0.0, ny = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dot += static_cast<double>(x[i]) * y[i];
            nx += static_cast<double>(x[i]) * x[i];
            ny += static_cast<double>(y[i]) * y[i];
        }
        if (nx == 0.0 || ny == 0.0) {
            throw ArgumentError("layer_cosine: zero-norm input");
        }
        double c = dot / (std::sqrt(nx) * std::sqrt(ny));
        return std::clamp(c, -1.0, 1.0);
    };
    if (mode == CosineMode::flattened) {
        return static_cast<float>(
            cosine(a.tokens.data(), b.tokens.data(), a.tokens.numel()));
    }
    const std::size_t rows = a.tokens.dim(0), cols = a.tokens.dim(1);
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        acc += cosine(a.tokens.data() + i * cols, b.tokens.data() + i * cols, cols);
    }
    return static_cast<float>(acc / static_cast<double>(rows));
}

// One-hot target over the K candidate layers; ties resolve to the smallest k.
struct LabelVector {
    std::vector<float> y;
    bool tie_broken = false;

    std::size_t hot_index() const {  // 1-based k
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y[i] == 1.0f) return i + 1;
        }
        throw ArgumentError("label vector has no hot entry");
    }
};

// y^k = 1 for the candidate X^{l*+k} most cosine-similar to X^{l*}. The list
// must cover layers l*..L regardless of how the candidates were produced
// (sequential pass or direct application).
inline LabelVector similarity_labels(const std::vector<LayerFeatures>& features,
                                     std::size_t l_star,
                                     CosineMode mode = CosineMode::flattened) {
    const LayerFeatures* reference = nullptr;
    std::size_t max_index = l_star;
    for (const auto& f : features) {
        if (f.layer_index == l_star) reference = &f;
        max_index = std::max(max_index, f.layer_index);
    }
    if (!reference) throw ArgumentError("similarity_labels: missing saturated-layer features");
    if (max_index <= l_star) throw ArgumentError("similarity_labels: no candidate layers");
    const std::size_t k_count = max_index - l_star;

    std::vector<const LayerFeatures*> candidates(k_count, nullptr);
    for (const auto& f : features) {
        if (f.layer_index > l_star) candidates[f.layer_index - l_star - 1] = &f;
    }
    for (std::size_t k = 0; k < k_count; ++k) {
        if (!candidates[k]) {
            throw ArgumentError("similarity_labels: missing features for layer " +
                                std::to_string(l_star + k + 1));
        }
    }

    LabelVector label;
    label.y.assign(k_count, 0.0f);
    std::vector<float> cosines(k_count);
    std::size_t best = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
        cosines[k] = layer_cosine(*reference, *candidates[k], mode);
        if (cosines[k] > cosines[best]) best = k;
    }
    for (std::size_t k = 0; k < k_count; ++k) {
        if (k != best && cosines[k] == cosines[best]) label.tie_broken = true;
    }
    label.y[best] = 1.0f;
    return label;
}

// Candidate features for label generation. Direct mode applies each of the K
// remaining blocks to X^{l*} (the inference-time composition); sequential mode
// takes them from the full pass.
inline std::vector<LayerFeatures> collect_label_features(const LayerFeatures& x0,
                                                         const ModelConfig& cfg,
                                                         const BackboneWeights& w,
                                                         LabelMode mode) {
    std::vector<LayerFeatures> out;
    if (mode == LabelMode::sequential) {
        auto all = forward_all(x0, cfg, w);
        for (auto& f : all) {
            if (f.layer_index >= cfg.saturated_layer) out.push_back(std::move(f));
        }
        return out;
    }
    LayerFeatures sat = forward_saturated(x0, cfg, w);
    for (std::size_t k = 1; k <= cfg.skip_choices(); ++k) {
        out.push_back(apply_skip_block(sat, cfg, w, k));
    }
    out.push_back(std::move(sat));
    return out;
}

// --- the 3-layer selection MLP ----------------------------------------------

namespace mlp {

// Scalar-typed parameter block. float is the deployment path; double is the
// shadow used by the finite-difference gradient check.
template <typename T>
struct Params {
    std::size_t in = 0, hidden = 0, out = 0;
    std::vector<T> w1, b1;  // hidden x in
    std::vector<T> w2, b2;  // hidden x hidden
    std::vector<T> w3, b3;  // out x hidden

    static Params sized(std::size_t in, std::size_t hidden, std::size_t out) {
        Params p;
        p.in = in;
        p.hidden = hidden;
        p.out = out;
        p.w1.assign(hidden * in, T(0));
        p.b1.assign(hidden, T(0));
        p.w2.assign(hidden * hidden, T(0));
        p.b2.assign(hidden, T(0));
        p.w3.assign(out * hidden, T(0));
        p.b3.assign(out, T(0));
        return p;
    }

    template <typename U>
    Params<U> cast() const {
        Params<U> p;
        p.in = in;
        p.hidden = hidden;
        p.out = out;
        auto conv = [](const std::vector<T>& src, std::vector<U>& dst) {
            dst.resize(src.size());
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
        };
        conv(w1, p.w1);
        conv(b1, p.b1);
        conv(w2, p.w2);
        conv(b2, p.b2);
        conv(w3, p.w3);
        conv(b3, p.b3);
        return p;
    }
};

template <typename T>
struct Activations {
    std::vector<T> h1_pre, h2_pre;  // pre-ReLU
    std::vector<T> h1, h2;          // post-ReLU
    std::vector<T> logits;          // pre-sigmoid
    std::vector<T> probs;           // sigmoid outputs
};

template <typename T>
inline void dense(const std::vector<T>& w, const std::vector<T>& b, const T* x,
                  std::size_t in, std::size_t out, std::vector<T>& y) {
    y.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
        T acc = b[o];
        const T* row = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

template <typename T>
inline Activations<T> forward(const Params<T>& p, const T* z) {
    Activations<T> act;
    dense(p.w1, p.b1, z, p.in, p.hidden, act.h1_pre);
    act.h1 = act.h1_pre;
    for (auto& v : act.h1) v = v > T(0) ? v : T(0);
    dense(p.w2, p.b2, act.h1.data(), p.hidden, p.hidden, act.h2_pre);
    act.h2 = act.h2_pre;
    for (auto& v : act.h2) v = v > T(0) ? v : T(0);
    dense(p.w3, p.b3, act.h2.data(), p.hidden, p.out, act.logits);
    act.probs.resize(p.out);
    for (std::size_t k = 0; k < p.out; ++k) {
        act.probs[k] = T(1) / (T(1) + std::exp(-act.logits[k]));
    }
    return act;
}

// (1/K) sum_k |yhat_k - y_k|
template <typename T>
inline T l1_loss(const std::vector<T>& probs, const std::vector<T>& target) {
    if (probs.size() != target.size()) {
        throw ArgumentError("similarity loss: length mismatch");
    }
    T acc = T(0);
    for (std::size_t k = 0; k < probs.size(); ++k) acc += std::abs(probs[k] - target[k]);
    return acc / static_cast<T>(probs.size());
}

template <typename T>
inline T loss(const Params<T>& p, const T* z, const std::vector<T>& target) {
    return l1_loss(forward(p, z).probs, target);
}

// Hand-derived backprop of the L1 similarity loss. d|u|/du = sign(u) with
// subgradient 0 at u = 0; ReLU derivative 0 at 0.
template <typename T>
inline Params<T> gradients(const Params<T>& p, const T* z, const std::vector<T>& target,
                           const Activations<T>& act) {
    Params<T> g = Params<T>::sized(p.in, p.hidden, p.out);
    const T inv_k = T(1) / static_cast<T>(p.out);
    std::vector<T> du(p.out);
    for (std::size_t k = 0; k < p.out; ++k) {
        const T diff = act.probs[k] - target[k];
        const T sign = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        du[k] = inv_k * sign * act.probs[k] * (T(1) - act.probs[k]);
    }
    std::vector<T> dh2(p.hidden, T(0));
    for (std::size_t k = 0; k < p.out; ++k) {
        g.b3[k] = du[k];
        T* wrow = g.w3.data() + k * p.hidden;
        const T* prow = p.w3.data() + k * p.hidden;
        for (std::size_t j = 0; j < p.hidden; ++j) {
            wrow[j] = du[k] * act.h2[j];
            dh2[j] += prow[j] * du[k];
        }
    }
    std::vector<T> dh1(p.hidden, T(0));
    for (std::size_t j = 0; j < p.hidden; ++j) {
        const T delta = act.h2[j] > T(0) ? dh2[j] : T(0);
        g.b2[j] = delta;
        T* wrow = g.w2.data() + j * p.hidden;
        const T* prow = p.w2.data() + j * p.hidden;
        for (std::size_t i = 0; i < p.hidden; ++i) {
            wrow[i] = delta * act.h1[i];
            dh1[i] += prow[i] * delta;
        }
    }
    for (std::size_t j = 0; j < p.hidden; ++j) {
        const T delta = act.h1[j] > T(0) ? dh1[j] : T(0);
        g.b1[j] = delta;
        T* wrow = g.w1.data() + j * p.in;
        for (std::size_t i = 0; i < p.in; ++i) wrow[i] = delta * z[i];
    }
    return g;
}

template <typename T>
inline Params<T> gradients(const Params<T>& p, const T* z, const std::vector<T>& target) {
    return gradients(p, z, target, forward(p, z));
}

} // namespace mlp

// 3-layer MLP: sigmoid(W3 relu(W2 relu(W1 z + b1) + b2) + b3). Hidden width
// is 160 at the default configuration.
struct SelectorMlp {
    Tensor w1, b1;  // hidden x D, hidden
    Tensor w2, b2;  // hidden x hidden
    Tensor w3, b3;  // K x hidden, K

    std::size_t input_dim() const { return w1.dim(1); }
    std::size_t hidden_dim() const { return w1.dim(0); }
    std::size_t choices() const { return w3.dim(0); }

    mlp::Params<float> params() const {
        mlp::Params<float> p;
        p.in = input_dim();
        p.hidden = hidden_dim();
        p.out = choices();
        p.w1 = w1.values();
        p.b1 = b1.values();
        p.w2 = w2.values();
        p.b2 = b2.values();
        p.w3 = w3.values();
        p.b3 = b3.values();
        return p;
    }

    static SelectorMlp from_params(const mlp::Params<float>& p) {
        SelectorMlp m;
        m.w1 = Tensor({p.hidden, p.in}, p.w1);
        m.b1 = Tensor({p.hidden}, p.b1);
        m.w2 = Tensor({p.hidden, p.hidden}, p.w2);
        m.b2 = Tensor({p.hidden}, p.b2);
        m.w3 = Tensor({p.out, p.hidden}, p.w3);
        m.b3 = Tensor({p.out}, p.b3);
        return m;
    }
};

// He-style uniform fan-in init; the selector is the one component that gets
// trained, so it needs signal-preserving scales rather than the backbone's
// near-zero reproducibility init.
inline SelectorMlp init_selector_mlp(std::size_t input_dim, std::size_t choices,
                                     SplitMix64& rng, std::size_t hidden = 160) {
    auto limit = [](std::size_t fan_in) {
        return std::sqrt(6.0f / static_cast<float>(fan_in));
    };
    SelectorMlp m;
    m.w1 = Tensor::random_uniform({hidden, input_dim}, -limit(input_dim), limit(input_dim), rng);
    m.b1 = Tensor::zeros({hidden});
    m.w2 = Tensor::random_uniform({hidden, hidden}, -limit(hidden), limit(hidden), rng);
    m.b2 = Tensor::zeros({hidden});
    m.w3 = Tensor::random_uniform({choices, hidden}, -limit(hidden), limit(hidden), rng);
    m.b3 = Tensor::zeros({choices});
    return m;
}

struct SelectionDecision {
    std::vector<float> probabilities;  // K values in (0,1)
    std::size_t chosen_k = 1;          // 1-based
    bool tie_broken = false;
};

inline SelectionDecision select_layer(const Tensor& z, const SelectorMlp& m) {
    if (z.ndim() != 1 || z.dim(0) != m.input_dim()) {
        throw ShapeError("select_layer: input " + z.shape_string() + " does not match MLP width " +
                         std::to_string(m.input_dim()));
    }
    auto act = mlp::forward(m.params(), z.data());
    SelectionDecision d;
    d.probabilities = act.probs;
    // Argmax over the logits: identical ordering (sigmoid is strictly
    // increasing) but immune to f32 sigmoid saturation collapsing ties.
    std::size_t best = 0;
    for (std::size_t k = 1; k < act.logits.size(); ++k) {
        if (act.logits[k] > act.logits[best]) best = k;
    }
    for (std::size_t k = 0; k < act.logits.size(); ++k) {
        if (k != best && act.logits[k] == act.logits[best]) d.tie_broken = true;
    }
    d.chosen_k = best + 1;
    return d;
}

inline float sim_loss(const std::vector<float>& probs, const LabelVector& label) {
    return mlp::l1_loss(probs, label.y);
}

// Gradient set for every MLP parameter, same shapes as the parameters.
struct SelectorGradients {
    Tensor w1, b1, w2, b2, w3, b3;
};

inline SelectorGradients mlp_gradients(const Tensor& z, const SelectorMlp& m,
                                       const LabelVector& label) {
    if (label.y.size() != m.choices()) {
        throw ArgumentError("mlp_gradients: label length does not match MLP output width");
    }
    auto g = mlp::gradients(m.params(), z.data(), label.y);
    SelectorGradients out;
    out.w1 = Tensor({g.hidden, g.in}, g.w1);
    out.b1 = Tensor({g.hidden}, g.b1);
    out.w2 = Tensor({g.hidden, g.hidden}, g.w2);
    out.b2 = Tensor({g.hidden}, g.b2);
    out.w3 = Tensor({g.out, g.hidden}, g.w3);
    out.b3 = Tensor({g.out}, g.b3);
    return out;
}

// --- gradient verification ------------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t points = 0;
    std::size_t parameters_checked = 0;
};

// Central finite differences against the hand-derived gradients, both on the
// double-precision shadow path. Points are resampled until every ReLU
// pre-activation and every sigmoid output sits away from its kink, where the
// loss is differentiable and the comparison is meaningful.
inline GradCheckResult selector_gradient_check(std::uint64_t seed, std::size_t points = 100) {
    SplitMix64 rng(seed);
    const double h = 1e-3;
    const double kink_margin = 0.05;
    GradCheckResult result;
    result.points = points;

    for (std::size_t pt = 0; pt < points; ++pt) {
        const std::size_t in = 4 + rng.next_below(13);      // 4..16
        const std::size_t hidden = 8 + rng.next_below(17);  // 8..24
        const std::size_t out = 2 + rng.next_below(5);      // 2..6

        mlp::Params<double> p;
        std::vector<double> z(in);
        std::vector<double> target(out, 0.0);
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            p = mlp::Params<double>::sized(in, hidden, out);
            auto fill = [&rng](std::vector<double>& v, double lo, double hi) {
                for (auto& x : v) x = lo + (hi - lo) * rng.next_double();
            };
            fill(p.w1, -0.5, 0.5);
            fill(p.b1, -0.5, 0.5);
            fill(p.w2, -0.5, 0.5);
            fill(p.b2, -0.5, 0.5);
            fill(p.w3, -0.5, 0.5);
            fill(p.b3, -0.5, 0.5);
            for (auto& x : z) x = -1.0 + 2.0 * rng.next_double();
            std::fill(target.begin(), target.end(), 0.0);
            target[rng.next_below(out)] = 1.0;

            const auto act = mlp::forward(p, z.data());
            ok = true;
            for (double v : act.h1_pre) ok = ok && std::abs(v) > kink_margin;
            for (double v : act.h2_pre) ok = ok && std::abs(v) > kink_margin;
            for (double v : act.probs) ok = ok && v > kink_margin && v < 1.0 - kink_margin;
        }

        const auto grads = mlp::gradients(p, z.data(), target);
        auto check_array = [&](std::vector<double>& params, const std::vector<double>& analytic) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double saved = params[i];
                params[i] = saved + h;
                const double up = mlp::loss(p, z.data(), target);
                params[i] = saved - h;
                const double down = mlp::loss(p, z.data(), target);
                params[i] = saved;
                const double fd = (up - down) / (2.0 * h);
                const double denom = std::max(std::abs(analytic[i]) + std::abs(fd), 1e-3);
                result.max_rel_error =
                    std::max(result.max_rel_error, std::abs(analytic[i] - fd) / denom);
                ++result.parameters_checked;
            }
        };
        check_array(p.w1, grads.w1);
        check_array(p.b1, grads.b1);
        check_array(p.w2, grads.w2);
        check_array(p.b2, grads.b2);
        check_array(p.w3, grads.w3);
        check_array(p.b3, grads.b3);
    }
    return result;
}

// --- selector training --------------------------------------------------------

struct SelectionSample {
    Tensor z;  // D
    LabelVector y;
};

struct TrainHyper {
    float lr = 1e-3f;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    std::size_t batch_size = 0;  // 0 = full batch
    float lr_decay = 1.0f;       // multiplicative per epoch
};

struct TrainResult {
    SelectorMlp mlp;
    std::vector<float> loss_curve;  // mean dataset loss after each epoch
};

// Plain (mini)batch gradient descent on the mean similarity loss.
// Deterministic given hyper.seed.
inline TrainResult train_selector(const std::vector<SelectionSample>& data, SelectorMlp mlp,
                                  const TrainHyper& hyper) {
    if (data.empty()) throw ArgumentError("train_selector: empty dataset");
    for (const auto& s : data) {
        if (s.z.ndim() != 1 || s.z.dim(0) != mlp.input_dim() || s.y.y.size() != mlp.choices()) {
            throw ArgumentError("train_selector: sample does not match MLP dimensions");
        }
    }
    auto p = mlp.params();
    const std::size_t batch = hyper.batch_size == 0 ? data.size() : hyper.batch_size;
    SplitMix64 rng(hyper.seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto axpy = [](std::vector<float>& dst, const std::vector<float>& src, float a) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
    };

    TrainResult result;
    result.loss_curve.reserve(hyper.epochs);
    float lr = hyper.lr;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        // Fisher-Yates with the deterministic stream.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(start + batch, order.size());
            auto g = mlp::Params<float>::sized(p.in, p.hidden, p.out);
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = data[order[i]];
                auto gi = mlp::gradients(p, s.z.data(), s.y.y);
                axpy(g.w1, gi.w1, 1.0f);
                axpy(g.b1, gi.b1, 1.0f);
                axpy(g.w2, gi.w2, 1.0f);
                axpy(g.b2, gi.b2, 1.0f);
                axpy(g.w3, gi.w3, 1.0f);
                axpy(g.b3, gi.b3, 1.0f);
            }
            const float step = -lr / static_cast<float>(end - start);
            axpy(p.w1, g.w1, step);
            axpy(p.b1, g.b1, step);
            axpy(p.w2, g.w2, step);
            axpy(p.b2, g.b2, step);
            axpy(p.w3, g.w3, step);
            axpy(p.b3, g.b3, step);
        }
        lr *= hyper.lr_decay;
        double mean_loss = 0.0;
        for (const auto& s : data) mean_loss += mlp::loss(p, s.z.data(), s.y.y);
        result.loss_curve.push_back(static_cast<float>(mean_loss / data.size()));
    }
    result.mlp = SelectorMlp::from_params(p);
    return result;
}

} // namespace skiptrack
