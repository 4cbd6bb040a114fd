#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "skiptrack/backbone.hpp"
#include "skiptrack/config.hpp"
#include "skiptrack/ggca.hpp"
#include "skiptrack/pipeline.hpp"
#include "skiptrack/selector.hpp"
#include "skiptrack/weights_io.hpp"

namespace skiptrack {

// Everything a single-frame inference needs.
struct ModelWeights {
    BackboneWeights backbone;
    GgcaWeights ggca;
    SelectorMlp selector;
    HeadWeights head;
};

inline ModelWeights init_model_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SplitMix64 rng(seed);
    ModelWeights w;
    w.backbone = init_backbone_weights(cfg, rng);
    w.ggca = init_ggca_weights(cfg.embed_dim, cfg.ggca, rng);
    w.selector = init_selector_mlp(cfg.embed_dim, cfg.skip_choices(), rng, cfg.selector_hidden);
    w.head = init_head_weights(cfg, rng);
    return w;
}

namespace detail {

inline std::string block_prefix(std::size_t block_index) {  // 1-based
    char buf[24];
    std::snprintf(buf, sizeof(buf), "block%02zu", block_index);
    return buf;
}

} // namespace detail

// Every tensor name the backbone, GGCA, selector, and head require.
inline std::vector<std::string> required_tensor_names(const ModelConfig& cfg) {
    std::vector<std::string> names{"patch/weight", "patch/bias", "pos/template", "pos/search"};
    for (std::size_t b = 1; b <= cfg.depth; ++b) {
        const std::string p = detail::block_prefix(b);
        for (const char* s : {"/ln1/gamma", "/ln1/beta", "/qkv/weight", "/qkv/bias",
                              "/proj/weight", "/proj/bias", "/ln2/gamma", "/ln2/beta",
                              "/mlp/fc1/weight", "/mlp/fc1/bias", "/mlp/fc2/weight",
                              "/mlp/fc2/bias"}) {
            names.push_back(p + s);
        }
    }
    for (const char* s : {"ggca/reduce/weight", "ggca/reduce/bias", "ggca/bn/gamma",
                          "ggca/bn/beta", "ggca/bn/mean", "ggca/bn/var", "ggca/expand/weight",
                          "ggca/expand/bias"}) {
        names.emplace_back(s);
    }
    for (const char* s : {"selector/fc1/weight", "selector/fc1/bias", "selector/fc2/weight",
                          "selector/fc2/bias", "selector/fc3/weight", "selector/fc3/bias"}) {
        names.emplace_back(s);
    }
    for (const char* branch : {"score", "offset", "size"}) {
        for (const char* s : {"/conv1/weight", "/conv1/bias", "/conv2/weight", "/conv2/bias"}) {
            names.push_back(std::string("head/") + branch + s);
        }
    }
    return names;
}

inline NamedTensors to_named_tensors(const ModelConfig& cfg, const ModelWeights& w) {
    NamedTensors out;
    out.emplace_back("patch/weight", w.backbone.patch_weight);
    out.emplace_back("patch/bias", w.backbone.patch_bias);
    out.emplace_back("pos/template", w.backbone.pos_template);
    out.emplace_back("pos/search", w.backbone.pos_search);
    for (std::size_t b = 1; b <= cfg.depth; ++b) {
        const std::string p = detail::block_prefix(b);
        const BlockWeights& bw = w.backbone.blocks[b - 1];
        out.emplace_back(p + "/ln1/gamma", bw.ln1_gamma);
        out.emplace_back(p + "/ln1/beta", bw.ln1_beta);
        out.emplace_back(p + "/qkv/weight", bw.qkv_weight);
        out.emplace_back(p + "/qkv/bias", bw.qkv_bias);
        out.emplace_back(p + "/proj/weight", bw.proj_weight);
        out.emplace_back(p + "/proj/bias", bw.proj_bias);
        out.emplace_back(p + "/ln2/gamma", bw.ln2_gamma);
        out.emplace_back(p + "/ln2/beta", bw.ln2_beta);
        out.emplace_back(p + "/mlp/fc1/weight", bw.fc1_weight);
        out.emplace_back(p + "/mlp/fc1/bias", bw.fc1_bias);
        out.emplace_back(p + "/mlp/fc2/weight", bw.fc2_weight);
        out.emplace_back(p + "/mlp/fc2/bias", bw.fc2_bias);
    }
    out.emplace_back("ggca/reduce/weight", w.ggca.reduce_weight);
    out.emplace_back("ggca/reduce/bias", w.ggca.reduce_bias);
    out.emplace_back("ggca/bn/gamma", w.ggca.bn_gamma);
    out.emplace_back("ggca/bn/beta", w.ggca.bn_beta);
    out.emplace_back("ggca/bn/mean", w.ggca.bn_mean);
    out.emplace_back("ggca/bn/var", w.ggca.bn_var);
    out.emplace_back("ggca/expand/weight", w.ggca.expand_weight);
    out.emplace_back("ggca/expand/bias", w.ggca.expand_bias);
    out.emplace_back("selector/fc1/weight", w.selector.w1);
    out.emplace_back("selector/fc1/bias", w.selector.b1);
    out.emplace_back("selector/fc2/weight", w.selector.w2);
    out.emplace_back("selector/fc2/bias", w.selector.b2);
    out.emplace_back("selector/fc3/weight", w.selector.w3);
    out.emplace_back("selector/fc3/bias", w.selector.b3);
    auto push_branch = [&out](const std::string& name, const HeadBranchWeights& b) {
        out.emplace_back("head/" + name + "/conv1/weight", b.conv1_weight);
        out.emplace_back("head/" + name + "/conv1/bias", b.conv1_bias);
        out.emplace_back("head/" + name + "/conv2/weight", b.conv2_weight);
        out.emplace_back("head/" + name + "/conv2/bias", b.conv2_bias);
    };
    push_branch("score", w.head.score);
    push_branch("offset", w.head.offset);
    push_branch("size", w.head.size);
    return out;
}

inline ModelWeights model_weights_from_named(const ModelConfig& cfg, const NamedTensors& named) {
    auto get = [&named](const std::string& name) -> const Tensor& {
        const Tensor* t = find_tensor(named, name);
        if (!t) throw ParseError("weight set is missing tensor '" + name + "'");
        return *t;
    };
    ModelWeights w;
    w.backbone.patch_weight = get("patch/weight");
    w.backbone.patch_bias = get("patch/bias");
    w.backbone.pos_template = get("pos/template");
    w.backbone.pos_search = get("pos/search");
    w.backbone.blocks.resize(cfg.depth);
    for (std::size_t b = 1; b <= cfg.depth; ++b) {
        const std::string p = detail::block_prefix(b);
        BlockWeights& bw = w.backbone.blocks[b - 1];
        bw.ln1_gamma = get(p + "/ln1/gamma");
        bw.ln1_beta = get(p + "/ln1/beta");
        bw.qkv_weight = get(p + "/qkv/weight");
        bw.qkv_bias = get(p + "/qkv/bias");
        bw.proj_weight = get(p + "/proj/weight");
        bw.proj_bias = get(p + "/proj/bias");
        bw.ln2_gamma = get(p + "/ln2/gamma");
        bw.ln2_beta = get(p + "/ln2/beta");
        bw.fc1_weight = get(p + "/mlp/fc1/weight");
        bw.fc1_bias = get(p + "/mlp/fc1/bias");
        bw.fc2_weight = get(p + "/mlp/fc2/weight");
        bw.fc2_bias = get(p + "/mlp/fc2/bias");
    }
    w.ggca.reduce_weight = get("ggca/reduce/weight");
    w.ggca.reduce_bias = get("ggca/reduce/bias");
    w.ggca.bn_gamma = get("ggca/bn/gamma");
    w.ggca.bn_beta = get("ggca/bn/beta");
    w.ggca.bn_mean = get("ggca/bn/mean");
    w.ggca.bn_var = get("ggca/bn/var");
    w.ggca.expand_weight = get("ggca/expand/weight");
    w.ggca.expand_bias = get("ggca/expand/bias");
    w.selector.w1 = get("selector/fc1/weight");
    w.selector.b1 = get("selector/fc1/bias");
    w.selector.w2 = get("selector/fc2/weight");
    w.selector.b2 = get("selector/fc2/bias");
    w.selector.w3 = get("selector/fc3/weight");
    w.selector.b3 = get("selector/fc3/bias");
    auto pull_branch = [&get](const std::string& name, HeadBranchWeights& b) {
        b.conv1_weight = get("head/" + name + "/conv1/weight");
        b.conv1_bias = get("head/" + name + "/conv1/bias");
        b.conv2_weight = get("head/" + name + "/conv2/weight");
        b.conv2_bias = get("head/" + name + "/conv2/bias");
    };
    pull_branch("score", w.head.score);
    pull_branch("offset", w.head.offset);
    pull_branch("size", w.head.size);

    try {
        w.backbone.validate(cfg);
        w.ggca.validate(cfg.embed_dim, cfg.ggca);
    } catch (const ShapeError& e) {
        throw ParseError(std::string("weight set does not match config: ") + e.what());
    }
    if (w.selector.input_dim() != cfg.embed_dim || w.selector.choices() != cfg.skip_choices()) {
        throw ParseError("weight set does not match config: selector dimensions");
    }
    return w;
}

// --- selector training dataset -------------------------------------------------

// Same container as the weight file; entries "z/<i>" and "y/<i>".
inline void save_selection_dataset(const std::string& path,
                                   const std::vector<SelectionSample>& samples) {
    NamedTensors named;
    named.reserve(samples.size() * 2);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        named.emplace_back("z/" + std::to_string(i), samples[i].z);
        named.emplace_back("y/" + std::to_string(i), Tensor({samples[i].y.y.size()}, samples[i].y.y));
    }
    save_weights(path, named);
}

inline std::vector<SelectionSample> load_selection_dataset(const std::string& path) {
    const NamedTensors named = load_weights(path);
    if (named.size() % 2 != 0) throw ParseError("selection dataset: odd entry count");
    const std::size_t n = named.size() / 2;
    std::vector<SelectionSample> samples(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor* z = find_tensor(named, "z/" + std::to_string(i));
        const Tensor* y = find_tensor(named, "y/" + std::to_string(i));
        if (!z || !y) {
            throw ParseError("selection dataset: missing z/y pair at index " + std::to_string(i));
        }
        if (z->ndim() != 1 || y->ndim() != 1) {
            throw ParseError("selection dataset: z/y entries must be vectors");
        }
        samples[i].z = *z;
        samples[i].y.y = y->values();
        std::size_t hot = 0;
        for (float v : samples[i].y.y) {
            if (v == 1.0f) {
                ++hot;
            } else if (v != 0.0f) {
                throw ParseError("selection dataset: labels must be one-hot");
            }
        }
        if (hot != 1) throw ParseError("selection dataset: labels must have exactly one hot entry");
    }
    return samples;
}

} // namespace skiptrack
