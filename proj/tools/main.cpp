// Command-line front end: weight initialization/inspection, forward runs,
// benchmarking, tracking over frame manifests, mask simulation, selector
// training, and the gradient check.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "skiptrack/bench.hpp"
#include "skiptrack/image_io.hpp"
#include "skiptrack/masking.hpp"
#include "skiptrack/model_weights.hpp"
#include "skiptrack/pipeline.hpp"

using json = nlohmann::json;
using namespace skiptrack;

namespace {

ModelConfig load_model_config(const std::string& path) {
    ModelConfig cfg;
    if (path.empty()) {
        cfg.validate();
        return cfg;
    }
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ParseError("config '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ParseError("config '" + path + "': expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "depth") cfg.depth = value.get<std::size_t>();
        else if (key == "saturated_layer") cfg.saturated_layer = value.get<std::size_t>();
        else if (key == "embed_dim") cfg.embed_dim = value.get<std::size_t>();
        else if (key == "heads") cfg.heads = value.get<std::size_t>();
        else if (key == "patch") cfg.patch = value.get<std::size_t>();
        else if (key == "template_side") cfg.template_side = value.get<std::size_t>();
        else if (key == "search_side") cfg.search_side = value.get<std::size_t>();
        else if (key == "mlp_ratio") cfg.mlp_ratio = value.get<std::size_t>();
        else if (key == "head_channels") cfg.head_channels = value.get<std::size_t>();
        else if (key == "selector_hidden") cfg.selector_hidden = value.get<std::size_t>();
        else if (key == "ggca") {
            if (!value.is_object()) throw ParseError("config: ggca must be an object");
            for (const auto& [gk, gv] : value.items()) {
                if (gk == "groups") cfg.ggca.groups = gv.get<std::size_t>();
                else if (gk == "reduction") cfg.ggca.reduction = gv.get<std::size_t>();
                else if (gk == "pooling") cfg.ggca.pooling = pooling_mode_from_string(gv.get<std::string>());
                else if (gk == "min_mid_channels") cfg.ggca.min_mid_channels = gv.get<std::size_t>();
                else throw ParseError("config: unknown ggca key '" + gk + "'");
            }
        } else {
            throw ParseError("config: unknown key '" + key + "'");
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ParseError(std::string("config '") + path + "': " + e.what());
    }
    return cfg;
}

ModelWeights load_model(const ModelConfig& cfg, const std::string& path) {
    return model_weights_from_named(cfg, load_weights(path));
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& spec) {
    const auto sep = spec.find('x');
    if (sep == std::string::npos) throw ArgumentError("grid must look like HxW, got '" + spec + "'");
    try {
        const std::size_t h = std::stoull(spec.substr(0, sep));
        const std::size_t w = std::stoull(spec.substr(sep + 1));
        if (h == 0 || w == 0) throw ArgumentError("grid sides must be positive");
        return {h, w};
    } catch (const std::logic_error&) {
        throw ArgumentError("grid must look like HxW, got '" + spec + "'");
    }
}

json bench_report_json(const BenchReport& r) {
    return json{{"mode", to_string(r.mode)},
                {"iterations", r.iterations},
                {"warmup", r.warmup},
                {"threads", r.threads},
                {"mean_us", r.mean_us},
                {"median_us", r.median_us},
                {"p95_us", r.p95_us},
                {"flops", r.flops},
                {"throughput_per_s", r.throughput_per_s},
                {"config_fingerprint", r.config_fingerprint}};
}

int cmd_init_weights(std::uint64_t seed, const std::string& config_path,
                     const std::string& out_path) {
    const ModelConfig cfg = load_model_config(config_path);
    const ModelWeights w = init_model_weights(cfg, seed);
    save_weights(out_path, to_named_tensors(cfg, w));
    std::cout << "wrote " << required_tensor_names(cfg).size() << " tensors to " << out_path
              << "\n";
    return 0;
}

int cmd_inspect_weights(const std::string& path) {
    const NamedTensors named = load_weights(path);
    std::uint64_t total = 0;
    for (const auto& [name, t] : named) {
        std::cout << name << " shape=" << t.shape_string() << " count=" << t.numel() << "\n";
        total += t.numel();
    }
    std::cout << "entries: " << named.size() << "\n";
    std::cout << "total values: " << total << "\n";
    return 0;
}

int cmd_forward(const std::string& weights_path, const std::string& config_path,
                const std::string& mode_str, const std::string& input_path, std::uint64_t seed) {
    const ModelConfig cfg = load_model_config(config_path);
    const ModelWeights w = load_model(cfg, weights_path);
    const ForwardMode mode = forward_mode_from_string(mode_str);

    Tensor template_img, search_img;
    if (!input_path.empty()) {
        const NamedTensors inputs = load_weights(input_path);
        const Tensor* z = find_tensor(inputs, "Z");
        const Tensor* s = find_tensor(inputs, "S");
        if (!z || !s) throw ParseError("input container must hold tensors 'Z' and 'S'");
        template_img = *z;
        search_img = *s;
    } else {
        SplitMix64 rng(seed);
        template_img = Tensor::random_uniform({3, cfg.template_side, cfg.template_side}, 0.0f,
                                              1.0f, rng);
        search_img = Tensor::random_uniform({3, cfg.search_side, cfg.search_side}, 0.0f, 1.0f,
                                            rng);
    }

    const LayerFeatures x0 = patch_embed(template_img, search_img, cfg, w.backbone);
    ForwardStats stats;
    LayerFeatures out;
    std::size_t chosen_k = 0;
    if (mode == ForwardMode::full) {
        auto all = forward_all(x0, cfg, w.backbone, &stats);
        out = std::move(all.back());
    } else {
        LayerFeatures sat = forward_saturated(x0, cfg, w.backbone, &stats);
        Tensor z = slice_rows(sat.tokens, 0, 1).reshape({cfg.embed_dim});
        const SelectionDecision d = select_layer(z, w.selector);
        chosen_k = d.chosen_k;
        out = apply_skip_block(sat, cfg, w.backbone, d.chosen_k, &stats);
    }
    double l2 = 0.0;
    for (float v : out.tokens.values()) l2 += static_cast<double>(v) * v;
    json j{{"mode", mode_str},
           {"layer_index", out.layer_index},
           {"blocks_executed", stats.blocks_executed},
           {"chosen_k", chosen_k},
           {"tokens", out.tokens.dim(0)},
           {"dim", out.tokens.dim(1)},
           {"output_l2", std::sqrt(l2)}};
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_bench(const std::string& weights_path, const std::string& config_path,
              const std::string& mode_str, std::size_t iters, std::size_t warmup,
              std::uint64_t seed, std::size_t threads, bool as_json) {
    const ModelConfig cfg = load_model_config(config_path);
    const ModelWeights w = load_model(cfg, weights_path);
    const BenchReport r =
        bench_forward(cfg, w, forward_mode_from_string(mode_str), iters, warmup, seed, threads);
    if (as_json) {
        std::cout << bench_report_json(r).dump() << "\n";
    } else {
        std::cout << "mode " << to_string(r.mode) << ": mean " << r.mean_us / 1000.0
                  << " ms, median " << r.median_us / 1000.0 << " ms, p95 " << r.p95_us / 1000.0
                  << " ms, " << r.throughput_per_s << " forwards/s, " << r.flops << " flops\n";
    }
    return 0;
}

int cmd_track(const std::string& weights_path, const std::string& config_path,
              const std::string& manifest_path, const std::string& out_path) {
    const ModelConfig cfg = load_model_config(config_path);
    const ModelWeights w = load_model(cfg, weights_path);

    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open manifest '" + manifest_path + "'");
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw ParseError("manifest '" + manifest_path + "': " + e.what());
    }
    for (const char* key : {"width", "height", "init", "frames"}) {
        if (!manifest.contains(key)) {
            throw ParseError("manifest: missing key '" + std::string(key) + "'");
        }
    }
    const auto width = manifest["width"].get<std::size_t>();
    const auto height = manifest["height"].get<std::size_t>();
    BoundingBox box{manifest["init"].at("cx").get<float>(), manifest["init"].at("cy").get<float>(),
                    manifest["init"].at("w").get<float>(), manifest["init"].at("h").get<float>()};
    const auto frame_paths = manifest["frames"].get<std::vector<std::string>>();
    if (frame_paths.empty()) throw ParseError("manifest: empty frame list");

    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    auto load_frame = [&](const std::string& rel) {
        const std::filesystem::path p =
            rel.empty() || rel.front() == '/' ? std::filesystem::path(rel) : base / rel;
        Image img = p.extension() == ".ppm" ? read_ppm(p.string())
                                            : read_raw_rgb8(p.string(), width, height);
        if (img.width != width || img.height != height) {
            throw ParseError("frame '" + rel + "': dimensions do not match manifest");
        }
        return img;
    };

    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + out_path + "' for writing");

    const TrackerConfig tcfg;
    Image first = load_frame(frame_paths[0]);
    TrackState state = track_init(FrameView{width, height, first.rgb.data()}, box, cfg, tcfg,
                                  w.backbone);
    out << json{{"frame", 0},         {"cx", box.cx}, {"cy", box.cy},
                {"w", box.w},         {"h", box.h},   {"chosen_k", 0},
                {"score_max", 0.0}}
               .dump()
        << "\n";
    for (std::size_t i = 1; i < frame_paths.size(); ++i) {
        Image frame = load_frame(frame_paths[i]);
        TrackStepInfo info;
        auto [next, result] = track_step(state, FrameView{width, height, frame.rgb.data()}, cfg,
                                         tcfg, w.backbone, w.selector, cfg.ggca, w.ggca, w.head,
                                         &info);
        state = std::move(next);
        out << json{{"frame", i},
                    {"cx", result.cx},
                    {"cy", result.cy},
                    {"w", result.w},
                    {"h", result.h},
                    {"chosen_k", info.chosen_k},
                    {"score_max", info.score_max}}
                   .dump()
            << "\n";
    }
    if (!out) throw IoError("write failed for '" + out_path + "'");
    return 0;
}

int cmd_mask_sim(const std::string& mode_str, const std::string& grid_spec, float ratio,
                 std::size_t trials, std::uint64_t seed, std::size_t block_side, float bandwidth,
                 const std::string& csv_path, const std::string& pgm_path) {
    const auto [gh, gw] = parse_grid(grid_spec);
    MaskConfig cfg;
    cfg.mode = mask_mode_from_string(mode_str);
    cfg.grid_h = gh;
    cfg.grid_w = gw;
    cfg.mask_ratio = ratio;
    cfg.seed = seed;
    cfg.block_side = block_side;
    cfg.cox_bandwidth_frac = bandwidth;
    cfg.validate();

    const MaskStatistics stats = mask_statistics(cfg, trials);
    double expected = 0.0;
    if (cfg.mode == MaskMode::uniform) {
        expected = static_cast<double>(cfg.grid_cells() -
                                       uniform_keep_count(cfg.mask_ratio, cfg.grid_cells()));
    } else {
        expected = cox_intensity(gh, gw, ratio, bandwidth).expected_masked;
    }
    json j{{"mode", mode_str},
           {"grid_h", gh},
           {"grid_w", gw},
           {"ratio", ratio},
           {"trials", trials},
           {"seed", seed},
           {"mean_masked", stats.mean_masked},
           {"std_masked", stats.std_masked},
           {"expected_masked", expected}};
    std::cout << j.dump() << "\n";

    if (!csv_path.empty()) {
        write_csv_grid(csv_path, gh, gw, stats.per_cell_frequency);
    }
    if (!pgm_path.empty()) {
        write_mask_pgm(pgm_path, make_mask(cfg, seed));
    }
    return 0;
}

int cmd_select_train(const std::string& dataset_path, const std::string& out_path, float lr,
                     std::size_t epochs, std::uint64_t seed, std::size_t batch) {
    const auto samples = load_selection_dataset(dataset_path);
    if (samples.empty()) throw ParseError("selection dataset is empty");
    const std::size_t dim = samples[0].z.dim(0);
    const std::size_t choices = samples[0].y.y.size();
    SplitMix64 rng(seed);
    SelectorMlp mlp = init_selector_mlp(dim, choices, rng);
    TrainHyper hyper{lr, epochs, seed, batch};
    TrainResult result = train_selector(samples, std::move(mlp), hyper);

    NamedTensors named{{"selector/fc1/weight", result.mlp.w1}, {"selector/fc1/bias", result.mlp.b1},
                       {"selector/fc2/weight", result.mlp.w2}, {"selector/fc2/bias", result.mlp.b2},
                       {"selector/fc3/weight", result.mlp.w3}, {"selector/fc3/bias", result.mlp.b3}};
    save_weights(out_path, named);

    json j{{"samples", samples.size()},
           {"input_dim", dim},
           {"choices", choices},
           {"epochs", epochs},
           {"lr", lr},
           {"final_loss", result.loss_curve.empty() ? 0.0f : result.loss_curve.back()},
           {"loss_curve", result.loss_curve}};
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t points) {
    const GradCheckResult r = selector_gradient_check(seed, points);
    std::cout << "max relative error " << r.max_rel_error << " over " << r.parameters_checked
              << " parameters at " << r.points << " points\n";
    return r.max_rel_error < 1e-4 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic layer-skipping tracking engine"};
    app.require_subcommand(1);

    auto* init = app.add_subcommand("init-weights", "write a seeded random weight file");
    std::uint64_t init_seed = 0;
    std::string init_config, init_out;
    init->add_option("--seed", init_seed, "rng seed");
    init->add_option("--config", init_config, "model config json");
    init->add_option("--out", init_out, "output weight file")->required();

    auto* inspect = app.add_subcommand("inspect-weights", "list the tensors in a weight file");
    std::string inspect_path;
    inspect->add_option("--path", inspect_path, "weight file")->required();

    auto* fwd = app.add_subcommand("forward", "run one backbone forward");
    std::string fwd_weights, fwd_config, fwd_mode = "skip", fwd_input;
    std::uint64_t fwd_seed = 0;
    fwd->add_option("--weights", fwd_weights, "weight file")->required();
    fwd->add_option("--config", fwd_config, "model config json");
    fwd->add_option("--mode", fwd_mode, "full|skip");
    fwd->add_option("--input", fwd_input, "container with tensors Z and S");
    fwd->add_option("--seed", fwd_seed, "seed for the generated input");

    auto* bench = app.add_subcommand("bench", "wall-time benchmark of full vs skip forwards");
    std::string bench_weights, bench_config, bench_mode = "skip";
    std::size_t bench_iters = 200, bench_warmup = 10, bench_threads = 1;
    std::uint64_t bench_seed = 0;
    bool bench_json = false;
    bench->add_option("--weights", bench_weights, "weight file")->required();
    bench->add_option("--config", bench_config, "model config json");
    bench->add_option("--mode", bench_mode, "full|skip");
    bench->add_option("--iters", bench_iters, "timed iterations");
    bench->add_option("--warmup", bench_warmup, "untimed warmup iterations");
    bench->add_option("--seed", bench_seed, "input seed");
    bench->add_option("--threads", bench_threads, "concurrent independent forwards");
    bench->add_flag("--json", bench_json, "emit the report as json");

    auto* track = app.add_subcommand("track", "track a target through a frame manifest");
    std::string track_weights, track_config, track_manifest, track_out;
    track->add_option("--weights", track_weights, "weight file")->required();
    track->add_option("--config", track_config, "model config json");
    track->add_option("--manifest", track_manifest, "json manifest of frames")->required();
    track->add_option("--out", track_out, "output jsonl path")->required();

    auto* mask = app.add_subcommand("mask-sim", "monte-carlo mask pattern statistics");
    std::string mask_mode = "uniform", mask_grid = "8x8", mask_csv, mask_pgm;
    float mask_ratio = 0.25f, mask_bandwidth = 0.25f;
    std::size_t mask_trials = 1000, mask_block = 16;
    std::uint64_t mask_seed = 0;
    mask->add_option("--mode", mask_mode, "uniform|cox");
    mask->add_option("--grid", mask_grid, "grid as HxW");
    mask->add_option("--ratio", mask_ratio, "mask ratio in [0,1]");
    mask->add_option("--trials", mask_trials, "monte-carlo trials");
    mask->add_option("--seed", mask_seed, "base seed");
    mask->add_option("--block", mask_block, "block side in pixels");
    mask->add_option("--bandwidth", mask_bandwidth, "cox gaussian bandwidth fraction");
    mask->add_option("--csv", mask_csv, "write per-cell frequency grid csv");
    mask->add_option("--pgm", mask_pgm, "write one mask pattern as pgm");

    auto* strain = app.add_subcommand("select-train", "train the selector mlp on a dataset");
    std::string strain_dataset, strain_out;
    float strain_lr = 1e-3f;
    std::size_t strain_epochs = 50, strain_batch = 0;
    std::uint64_t strain_seed = 0;
    strain->add_option("--dataset", strain_dataset, "dataset container")->required();
    strain->add_option("--out", strain_out, "output weight file")->required();
    strain->add_option("--lr", strain_lr, "learning rate");
    strain->add_option("--epochs", strain_epochs, "training epochs");
    strain->add_option("--seed", strain_seed, "shuffle seed");
    strain->add_option("--batch", strain_batch, "minibatch size (0 = full batch)");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of mlp gradients");
    std::uint64_t grad_seed = 0;
    std::size_t grad_points = 100;
    grad->add_option("--seed", grad_seed, "rng seed");
    grad->add_option("--points", grad_points, "random evaluation points");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(init)) return cmd_init_weights(init_seed, init_config, init_out);
        if (app.got_subcommand(inspect)) return cmd_inspect_weights(inspect_path);
        if (app.got_subcommand(fwd)) {
            return cmd_forward(fwd_weights, fwd_config, fwd_mode, fwd_input, fwd_seed);
        }
        if (app.got_subcommand(bench)) {
            return cmd_bench(bench_weights, bench_config, bench_mode, bench_iters, bench_warmup,
                             bench_seed, bench_threads, bench_json);
        }
        if (app.got_subcommand(track)) {
            return cmd_track(track_weights, track_config, track_manifest, track_out);
        }
        if (app.got_subcommand(mask)) {
            return cmd_mask_sim(mask_mode, mask_grid, mask_ratio, mask_trials, mask_seed,
                                mask_block, mask_bandwidth, mask_csv, mask_pgm);
        }
        if (app.got_subcommand(strain)) {
            return cmd_select_train(strain_dataset, strain_out, strain_lr, strain_epochs,
                                    strain_seed, strain_batch);
        }
        if (app.got_subcommand(grad)) return cmd_gradcheck(grad_seed, grad_points);
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
