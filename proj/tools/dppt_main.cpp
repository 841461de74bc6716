#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "dppt/data.hpp"
#include "dppt/eval.hpp"
#include "dppt/io.hpp"
#include "dppt/model.hpp"
#include "dppt/prune.hpp"
#include "dppt/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace dppt;

namespace {

// ---- plain key=value config files ------------------------------------------
// CLI flags override file values; file values override built-in defaults.

using KvMap = std::map<std::string, std::string>;

KvMap read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw ConfigError("cannot read config file: " + path);
    KvMap kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(strf("%s:%d: expected key = value", path.c_str(), lineno));
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    return kv;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::string token;
    for (char c : s + ",") {
        if (c == ',') {
            if (!token.empty()) out.push_back(std::stoi(token));
            token.clear();
        } else {
            token += c;
        }
    }
    return out;
}

template <typename T>
void kv_get(const KvMap& kv, const std::string& key, T& out) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    try {
        if constexpr (std::is_same_v<T, int>)
            out = std::stoi(it->second);
        else if constexpr (std::is_same_v<T, double>)
            out = std::stod(it->second);
        else if constexpr (std::is_same_v<T, uint64_t>)
            out = std::stoull(it->second);
        else if constexpr (std::is_same_v<T, std::vector<int>>)
            out = parse_int_list(it->second);
        else
            out = it->second;
    } catch (const std::exception&) {
        throw ConfigError(strf("config key '%s' has invalid value '%s'", key.c_str(),
                               it->second.c_str()));
    }
}

void apply_model_config(ModelConfig& cfg, const KvMap& kv) {
    kv_get(kv, "model.layers", cfg.num_layers);
    kv_get(kv, "model.dim", cfg.embed_dim);
    kv_get(kv, "model.heads", cfg.num_heads);
    kv_get(kv, "model.visual_tokens", cfg.num_visual_tokens);
    kv_get(kv, "model.keypoints", cfg.num_keypoints);
    kv_get(kv, "model.channels", cfg.in_channels);
    kv_get(kv, "model.image_h", cfg.image_h);
    kv_get(kv, "model.image_w", cfg.image_w);
    kv_get(kv, "model.grid_rows", cfg.grid_rows);
    kv_get(kv, "model.grid_cols", cfg.grid_cols);
    kv_get(kv, "model.heatmap_h", cfg.heatmap_h);
    kv_get(kv, "model.heatmap_w", cfg.heatmap_w);
    kv_get(kv, "model.keep_ratio", cfg.keep_ratio);
    kv_get(kv, "model.prune_layers", cfg.prune_before_layers);
    kv_get(kv, "model.seed", cfg.seed);
}

void apply_train_config(TrainConfig& cfg, const KvMap& kv) {
    kv_get(kv, "train.epochs", cfg.epochs);
    kv_get(kv, "train.batch_size", cfg.batch_size);
    kv_get(kv, "train.lr", cfg.lr);
    kv_get(kv, "train.decay_epochs", cfg.decay_epochs);
    kv_get(kv, "train.decay_factor", cfg.decay_factor);
    kv_get(kv, "train.seed", cfg.seed);
    kv_get(kv, "train.threads", cfg.threads);
    kv_get(kv, "distill.lambda_hm", cfg.distill.lambda_hm);
    kv_get(kv, "distill.lambda_attn", cfg.distill.lambda_attn);
    std::vector<int> attn_layers;
    kv_get(kv, "distill.attn_layers", attn_layers);
    if (!attn_layers.empty())
        cfg.distill.attn_layers = std::set<int>(attn_layers.begin(), attn_layers.end());
}

json model_json(const ModelConfig& c) {
    return json{{"layers", c.num_layers},
                {"dim", c.embed_dim},
                {"heads", c.num_heads},
                {"visual_tokens", c.num_visual_tokens},
                {"keypoints", c.num_keypoints},
                {"channels", c.in_channels},
                {"image_h", c.image_h},
                {"image_w", c.image_w},
                {"grid_rows", c.grid_rows},
                {"grid_cols", c.grid_cols},
                {"heatmap_h", c.heatmap_h},
                {"heatmap_w", c.heatmap_w},
                {"keep_ratio", c.keep_ratio},
                {"prune_layers", c.prune_before_layers},
                {"seed", c.seed}};
}

json train_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr", c.lr},
                {"decay_epochs", c.decay_epochs},
                {"decay_factor", c.decay_factor},
                {"seed", c.seed},
                {"mode", train_mode_name(c.mode)},
                {"teacher_checkpoint", c.teacher_checkpoint},
                {"threads", c.threads},
                {"init_from_teacher", c.init_from_teacher},
                {"lambda_hm", c.distill.lambda_hm},
                {"lambda_attn", c.distill.lambda_attn},
                {"attn_layers",
                 std::vector<int>(c.distill.attn_layers.begin(), c.distill.attn_layers.end())}};
}

// ---- run manifest ------------------------------------------------------------

class Manifest {
public:
    Manifest(const fs::path& out_dir, const std::string& command,
             const std::vector<std::string>& argv, json config, uint64_t seed)
        : path_(out_dir / "manifest.json") {
        fs::create_directories(out_dir);
        j_["command"] = command;
        j_["argv"] = argv;
        j_["config"] = std::move(config);
        j_["seed"] = seed;
        j_["source_revision"] = source_revision();
        j_["start_time"] = iso8601_utc_now();
        j_["end_time"] = nullptr;
        j_["status"] = "running";
        j_["outputs"] = json::array();
        write();
    }

    void add_output(const fs::path& p) { j_["outputs"].push_back(p.string()); }

    void finish() {
        j_["status"] = "completed";
        j_["end_time"] = iso8601_utc_now();
        write();
        finished_ = true;
    }

    ~Manifest() {
        if (!finished_) {
            j_["status"] = "failed";
            j_["end_time"] = iso8601_utc_now();
            try {
                write();
            } catch (...) {
            }
        }
    }

private:
    void write() const {
        std::ofstream out(path_);
        out << j_.dump(2) << "\n";
    }
    json j_;
    fs::path path_;
    bool finished_ = false;
};

std::vector<std::string> collect_args(int argc, char** argv) {
    return std::vector<std::string>(argv, argv + argc);
}

// ---- png helpers ----------------------------------------------------------------

std::vector<uint8_t> to_gray(const double* data, int64_t n, double lo, double hi) {
    std::vector<uint8_t> out(n);
    const double range = hi > lo ? hi - lo : 1.0;
    for (int64_t i = 0; i < n; ++i) {
        const double v = std::clamp((data[i] - lo) / range, 0.0, 1.0);
        out[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

std::vector<uint8_t> upscale(const std::vector<uint8_t>& src, int w, int h, int factor) {
    std::vector<uint8_t> out(static_cast<size_t>(w) * h * factor * factor);
    for (int r = 0; r < h * factor; ++r)
        for (int c = 0; c < w * factor; ++c)
            out[static_cast<size_t>(r) * w * factor + c] =
                src[static_cast<size_t>(r / factor) * w + c / factor];
    return out;
}

void write_channel_png(const fs::path& path, const double* data, int w, int h, int factor,
                       double lo, double hi) {
    auto gray = upscale(to_gray(data, static_cast<int64_t>(w) * h, lo, hi), w, h, factor);
    write_png_gray(path.string(), gray, w * factor, h * factor);
}

// ---- commands -------------------------------------------------------------------

struct GenDataArgs {
    std::string spec = "default";
    int train = 2000, val = 200, test = 200;
    uint64_t seed = 0;
    double sigma = 1.0;
    std::string out;
    bool force = false;
};

int cmd_gen_data(const GenDataArgs& a, const std::vector<std::string>& argv) {
    if (a.spec != "default")
        throw ConfigError("unknown skeleton spec '" + a.spec + "' (available: default)");
    if (a.train < 1 || a.val < 1 || a.test < 1)
        throw ConfigError("split sizes must be positive");
    SkeletonSpec spec = SkeletonSpec::mini();
    RenderSpec render;
    render.sigma = a.sigma;
    const fs::path out(a.out);
    const std::vector<std::pair<std::string, int>> splits = {
        {"train", a.train}, {"val", a.val}, {"test", a.test}};
    for (const auto& [name, count] : splits) {
        const fs::path p = out / (name + ".dppt");
        if (fs::exists(p) && !a.force)
            throw ConfigError(p.string() + " exists; pass --force to overwrite");
    }

    json cfg{{"spec", a.spec},
             {"train", a.train},
             {"val", a.val},
             {"test", a.test},
             {"seed", a.seed},
             {"sigma", a.sigma},
             {"image_h", render.image_h},
             {"image_w", render.image_w},
             {"heatmap_h", render.heatmap_h},
             {"heatmap_w", render.heatmap_w}};
    Manifest manifest(out, "gen-data", argv, cfg, a.seed);

    uint64_t stream = 0;
    for (const auto& [name, count] : splits) {
        DatasetSplit split = generate_split(spec, render, count, a.seed, stream);
        stream += 1ull << 32;
        const fs::path p = out / (name + ".dppt");
        save_split(split, p.string());
        manifest.add_output(p);
        log_info(strf("wrote %s (%d samples)", p.string().c_str(), count));
    }
    manifest.finish();
    return 0;
}

struct TrainArgs {
    std::string data, out, config_path, teacher, mode = "gt+hm+attn";
    double keep_ratio = 0.5;
    std::string prune_layers = "3,5";
    uint64_t seed = 0;
    bool seed_set = false;
    int epochs = -1, batch_size = -1, threads = -1;
    double lr = -1.0;
    bool init_from_teacher = false;
};

DatasetSplit load_named_split(const std::string& dir, const std::string& name) {
    const fs::path p = fs::path(dir) / (name + ".dppt");
    if (!fs::exists(p)) throw ConfigError("missing split file: " + p.string());
    return load_split(p.string());
}

void apply_train_overrides(TrainConfig& cfg, const TrainArgs& a) {
    if (a.seed_set) cfg.seed = a.seed;
    if (a.epochs > 0) {
        cfg.epochs = a.epochs;
        // shortened runs drop decay epochs that fall off the end
        std::erase_if(cfg.decay_epochs, [&](int e) { return e > cfg.epochs; });
    }
    if (a.batch_size > 0) cfg.batch_size = a.batch_size;
    if (a.threads > 0) cfg.threads = a.threads;
    if (a.lr > 0) cfg.lr = a.lr;
}

int run_training(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                 const TrainArgs& a, const char* command,
                 const std::vector<std::string>& argv) {
    model_cfg.validate();
    train_cfg.validate();
    DatasetSplit train_split = load_named_split(a.data, "train");
    DatasetSplit val_split = load_named_split(a.data, "val");
    if (train_split.skeleton.num_joints() != model_cfg.num_keypoints)
        throw ConfigError(strf("dataset has %d joints, model expects %d",
                               train_split.skeleton.num_joints(), model_cfg.num_keypoints));

    json cfg{{"model", model_json(model_cfg)},
             {"train", train_json(train_cfg)},
             {"data", a.data}};
    Manifest manifest(a.out, command, argv, cfg, train_cfg.seed);
    TrainResult result = train(model_cfg, train_cfg, train_split, val_split, a.out);
    manifest.add_output(result.metrics_path);
    manifest.add_output(result.val_metrics_path);
    manifest.add_output(result.best_checkpoint);
    manifest.add_output(result.final_checkpoint);
    manifest.finish();
    std::printf("final val PCKh@0.5: %.2f (best %.2f at epoch %d)\n",
                result.metrics.back().val_pck, result.best_val_pck, result.best_epoch);
    return 0;
}

int cmd_train_teacher(const TrainArgs& a, const std::vector<std::string>& argv) {
    ModelConfig model_cfg = ModelConfig::mini();
    TrainConfig train_cfg;
    if (!a.config_path.empty()) {
        KvMap kv = read_config_file(a.config_path);
        apply_model_config(model_cfg, kv);
        apply_train_config(train_cfg, kv);
    }
    apply_train_overrides(train_cfg, a);
    train_cfg.mode = TrainMode::Teacher;
    if (!model_cfg.is_dense())
        throw ConfigError("teacher must be dense: remove model.prune_layers");
    return run_training(model_cfg, train_cfg, a, "train-teacher", argv);
}

TrainMode parse_mode(const std::string& mode) {
    if (mode == "gt") return TrainMode::StudentGt;
    if (mode == "gt+hm") return TrainMode::StudentGtHm;
    if (mode == "gt+hm+attn") return TrainMode::StudentGtHmAttn;
    throw ConfigError("unknown mode '" + mode + "' (gt, gt+hm, gt+hm+attn)");
}

int cmd_distill(const TrainArgs& a, const std::vector<std::string>& argv) {
    auto [teacher_cfg, teacher_params] = load_checkpoint(a.teacher);
    if (!teacher_cfg.is_dense())
        throw ConfigError("teacher must be dense: prune set is not empty");

    ModelConfig model_cfg = teacher_cfg;  // same architecture, plus pruning
    TrainConfig train_cfg;
    if (!a.config_path.empty()) {
        KvMap kv = read_config_file(a.config_path);
        apply_model_config(model_cfg, kv);
        apply_train_config(train_cfg, kv);
    }
    model_cfg = model_cfg.with_pruning(a.keep_ratio, parse_int_list(a.prune_layers));
    apply_train_overrides(train_cfg, a);
    train_cfg.mode = parse_mode(a.mode);
    train_cfg.teacher_checkpoint = a.teacher;
    train_cfg.init_from_teacher = a.init_from_teacher;
    return run_training(model_cfg, train_cfg, a, "distill", argv);
}

struct EvalArgs {
    std::string ckpt, data, split = "test", out;
    double alpha = 0.5;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
    auto [cfg, params] = load_checkpoint(a.ckpt);
    DatasetSplit split = load_named_split(a.data, a.split);
    if (split.skeleton.num_joints() != cfg.num_keypoints)
        throw ConfigError(strf("dataset has %d joints, checkpoint expects %d",
                               split.skeleton.num_joints(), cfg.num_keypoints));

    json mcfg{{"model", model_json(cfg)}, {"data", a.data}, {"split", a.split},
              {"alpha", a.alpha}};
    Manifest manifest(a.out, "eval", argv, mcfg, cfg.seed);
    PckReport report = evaluate_split(cfg, params, split.samples, a.alpha);
    const std::string table = render_pck_table(report, split.skeleton.joint_names);
    std::fputs(table.c_str(), stdout);
    const fs::path jpath = fs::path(a.out) / "pck_report.json";
    std::ofstream(jpath) << pck_report_json(report, split.skeleton.joint_names);
    const fs::path tpath = fs::path(a.out) / "pck_report.txt";
    std::ofstream(tpath) << table;
    manifest.add_output(jpath);
    manifest.add_output(tpath);
    manifest.finish();
    return 0;
}

struct FlopsArgs {
    std::string config_path, ckpt, sweep, out;
};

int cmd_flops(const FlopsArgs& a, const std::vector<std::string>& argv) {
    if (a.config_path.empty() == a.ckpt.empty())
        throw ConfigError("pass exactly one of --config or --ckpt");
    ModelConfig cfg = ModelConfig::mini();
    if (!a.ckpt.empty()) {
        cfg = load_checkpoint(a.ckpt).first;
    } else {
        KvMap kv = read_config_file(a.config_path);
        apply_model_config(cfg, kv);
    }
    cfg.validate();

    json mcfg{{"model", model_json(cfg)}, {"sweep", a.sweep}};
    Manifest manifest(a.out, "flops", argv, mcfg, cfg.seed);
    FlopsReport report = flops(cfg);
    std::string text = render_flops_table(report);
    std::string payload = flops_report_json(report);
    if (!a.sweep.empty()) {
        double lo = 0, hi = 0, step = 0;
        if (std::sscanf(a.sweep.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3)
            throw ConfigError("--sweep-r expects lo:hi:step");
        if (cfg.is_dense())
            log_info("config has no prune layers; the keep-ratio sweep will be flat");
        auto sweep = flops_sweep(cfg, lo, hi, step);
        text += "\n" + render_sweep_table(sweep);
        payload = sweep_json(sweep);
    }
    std::fputs(text.c_str(), stdout);
    const fs::path jpath = fs::path(a.out) / "flops.json";
    std::ofstream(jpath) << payload;
    const fs::path tpath = fs::path(a.out) / "flops.txt";
    std::ofstream(tpath) << text;
    manifest.add_output(jpath);
    manifest.add_output(tpath);
    manifest.finish();
    return 0;
}

struct ExportArgs {
    std::string ckpt, data, split = "test", out;
    int sample_index = 0;
    int scale = 8;
};

int cmd_export(const ExportArgs& a, const std::vector<std::string>& argv) {
    DatasetSplit split = load_named_split(a.data, a.split);
    if (a.sample_index < 0 || a.sample_index >= static_cast<int>(split.samples.size()))
        throw ConfigError(strf("--sample-index %d outside [0,%zu)", a.sample_index,
                               split.samples.size()));
    const PoseSample& sample = split.samples[a.sample_index];
    const int img_h = split.render.image_h, img_w = split.render.image_w;
    const int hm_h = split.render.heatmap_h, hm_w = split.render.heatmap_w;
    const int J = split.skeleton.num_joints();

    // without a checkpoint, export just the sample (image + targets)
    ModelConfig cfg;
    ModelParams params;
    if (!a.ckpt.empty()) {
        std::tie(cfg, params) = load_checkpoint(a.ckpt);
        if (cfg.num_keypoints != J || cfg.image_h != img_h || cfg.image_w != img_w)
            throw ConfigError("checkpoint does not match the dataset geometry");
    }

    json mcfg{{"ckpt", a.ckpt}, {"data", a.data}, {"split", a.split},
              {"sample_index", a.sample_index}};
    Manifest manifest(a.out, "export", argv, mcfg, a.ckpt.empty() ? 0 : cfg.seed);
    const fs::path out(a.out);

    write_channel_png(out / "image.png", sample.image.data(), img_w, img_h, a.scale, 0.0,
                      1.0);
    manifest.add_output(out / "image.png");

    const int64_t hw = static_cast<int64_t>(hm_h) * hm_w;
    for (int j = 0; j < J; ++j) {
        const fs::path tpath = out / strf("heatmap_target_j%d.png", j);
        write_channel_png(tpath, sample.target_heatmaps.data() + j * hw, hm_w, hm_h,
                          2 * a.scale, 0.0, 1.0);
        manifest.add_output(tpath);
    }
    if (a.ckpt.empty()) {
        manifest.finish();
        log_info("sample export written to " + out.string());
        return 0;
    }

    NoGradGuard guard;
    ForwardResult res = forward(sample.image, cfg, params);
    for (int j = 0; j < cfg.num_keypoints; ++j) {
        const double* pred = res.heatmaps.heatmaps.data() + j * hw;
        double lo = pred[0], hi = pred[0];
        for (int64_t i = 0; i < hw; ++i) {
            lo = std::min(lo, pred[i]);
            hi = std::max(hi, pred[i]);
        }
        const fs::path ppath = out / strf("heatmap_pred_j%d.png", j);
        write_channel_png(ppath, pred, cfg.heatmap_w, cfg.heatmap_h, 2 * a.scale, lo, hi);
        manifest.add_output(ppath);
    }

    // per-layer head-averaged keypoint->visual attention scattered onto
    // the patch grid; pruned positions render as black (masked)
    for (const auto& layer : res.record.layers) {
        const int64_t n_v = layer.head_avg.dim(1);
        std::vector<double> grid(static_cast<size_t>(cfg.num_visual_tokens), 0.0);
        double hi = 0.0;
        for (int j = 0; j < cfg.num_keypoints; ++j)
            for (int64_t c = 0; c < n_v; ++c)
                hi = std::max(hi, layer.head_avg.at({j, c}));
        for (int j = 0; j < cfg.num_keypoints; ++j) {
            std::fill(grid.begin(), grid.end(), 0.0);
            for (int64_t c = 0; c < n_v; ++c)
                grid[layer.visual_index_map[c]] = layer.head_avg.at({j, c});
            const fs::path apath = out / strf("attn_l%d_j%d.png", layer.layer_index, j);
            write_channel_png(apath, grid.data(), cfg.grid_cols, cfg.grid_rows,
                              cfg.patch_w() * a.scale, 0.0, hi > 0 ? hi : 1.0);
            manifest.add_output(apath);
        }
        std::fill(grid.begin(), grid.end(), 0.0);
        Tensor scores = hti_score(layer.per_head);
        for (int64_t c = 0; c < n_v; ++c)
            grid[layer.visual_index_map[c]] = scores.data()[c];
        double shi = 0.0;
        for (double v : grid) shi = std::max(shi, v);
        const fs::path mpath = out / strf("attn_l%d_mean.png", layer.layer_index);
        write_channel_png(mpath, grid.data(), cfg.grid_cols, cfg.grid_rows,
                          cfg.patch_w() * a.scale, 0.0, shi > 0 ? shi : 1.0);
        manifest.add_output(mpath);
    }
    manifest.finish();
    log_info("export written to " + out.string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DPPT: distilling a token-pruned pose transformer at desk scale"};
    app.require_subcommand(1);
    const auto args = collect_args(argc, argv);

    GenDataArgs gen;
    auto* sc_gen = app.add_subcommand("gen-data", "generate synthetic pose splits");
    sc_gen->add_option("--spec", gen.spec, "skeleton spec name")->capture_default_str();
    sc_gen->add_option("--train", gen.train, "training samples")->capture_default_str();
    sc_gen->add_option("--val", gen.val, "validation samples")->capture_default_str();
    sc_gen->add_option("--test", gen.test, "test samples")->capture_default_str();
    sc_gen->add_option("--seed", gen.seed, "generation seed")->capture_default_str();
    sc_gen->add_option("--sigma", gen.sigma, "target Gaussian sigma (heatmap cells)")
        ->capture_default_str();
    sc_gen->add_option("--out", gen.out, "output directory")->required();
    sc_gen->add_flag("--force", gen.force, "overwrite existing split files");

    TrainArgs teacher;
    auto* sc_teacher = app.add_subcommand("train-teacher", "train the dense teacher");
    sc_teacher->add_option("--data", teacher.data, "dataset directory")->required();
    sc_teacher->add_option("--config", teacher.config_path, "key=value config file");
    sc_teacher->add_option("--out", teacher.out, "output directory")->required();
    auto* teacher_seed = sc_teacher->add_option("--seed", teacher.seed, "training seed");
    sc_teacher->add_option("--epochs", teacher.epochs, "override epochs");
    sc_teacher->add_option("--batch-size", teacher.batch_size, "override batch size");
    sc_teacher->add_option("--lr", teacher.lr, "override learning rate");
    sc_teacher->add_option("--threads", teacher.threads, "worker threads");

    TrainArgs distill_args;
    auto* sc_distill = app.add_subcommand("distill", "train a pruned student");
    sc_distill->add_option("--teacher", distill_args.teacher, "teacher checkpoint")->required();
    sc_distill->add_option("--mode", distill_args.mode, "gt | gt+hm | gt+hm+attn")
        ->capture_default_str();
    sc_distill->add_option("--keep-ratio", distill_args.keep_ratio, "retention ratio r")
        ->capture_default_str();
    sc_distill->add_option("--prune-layers", distill_args.prune_layers,
                           "comma-separated 1-based layers")
        ->capture_default_str();
    sc_distill->add_option("--data", distill_args.data, "dataset directory")->required();
    sc_distill->add_option("--config", distill_args.config_path, "key=value config file");
    sc_distill->add_option("--out", distill_args.out, "output directory")->required();
    auto* distill_seed = sc_distill->add_option("--seed", distill_args.seed, "training seed");
    sc_distill->add_option("--epochs", distill_args.epochs, "override epochs");
    sc_distill->add_option("--batch-size", distill_args.batch_size, "override batch size");
    sc_distill->add_option("--lr", distill_args.lr, "override learning rate");
    sc_distill->add_option("--threads", distill_args.threads, "worker threads");
    sc_distill->add_flag("--init-from-teacher", distill_args.init_from_teacher,
                         "initialize student from teacher weights");

    EvalArgs eval_args;
    auto* sc_eval = app.add_subcommand("eval", "PCKh over a split");
    sc_eval->add_option("--ckpt", eval_args.ckpt, "model checkpoint")->required();
    sc_eval->add_option("--data", eval_args.data, "dataset directory")->required();
    sc_eval->add_option("--split", eval_args.split, "train | val | test")
        ->capture_default_str();
    sc_eval->add_option("--alpha", eval_args.alpha, "PCKh threshold")->capture_default_str();
    sc_eval->add_option("--out", eval_args.out, "output directory")->required();

    FlopsArgs flops_args;
    auto* sc_flops = app.add_subcommand("flops", "analytical FLOPs report");
    sc_flops->add_option("--config", flops_args.config_path, "key=value config file");
    sc_flops->add_option("--ckpt", flops_args.ckpt, "model checkpoint");
    sc_flops->add_option("--sweep-r", flops_args.sweep, "keep-ratio sweep lo:hi:step");
    sc_flops->add_option("--out", flops_args.out, "output directory")->required();

    ExportArgs export_args;
    auto* sc_export = app.add_subcommand("export", "PNG heatmaps and attention grids");
    sc_export->add_option("--ckpt", export_args.ckpt,
                          "model checkpoint (omit to export the raw sample only)");
    sc_export->add_option("--data", export_args.data, "dataset directory")->required();
    sc_export->add_option("--split", export_args.split, "train | val | test")
        ->capture_default_str();
    sc_export->add_option("--sample-index", export_args.sample_index, "sample to export")
        ->capture_default_str();
    sc_export->add_option("--scale", export_args.scale, "pixel upscaling factor")
        ->capture_default_str();
    sc_export->add_option("--out", export_args.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        teacher.seed_set = teacher_seed->count() > 0;
        distill_args.seed_set = distill_seed->count() > 0;
        if (sc_gen->parsed()) return cmd_gen_data(gen, args);
        if (sc_teacher->parsed()) return cmd_train_teacher(teacher, args);
        if (sc_distill->parsed()) return cmd_distill(distill_args, args);
        if (sc_eval->parsed()) return cmd_eval(eval_args, args);
        if (sc_flops->parsed()) return cmd_flops(flops_args, args);
        if (sc_export->parsed()) return cmd_export(export_args, args);
    } catch (const ConfigError& e) {
        log_error(e.what());
        return 2;
    } catch (const FormatError& e) {
        log_error(e.what());
        return 3;
    } catch (const DivergenceError& e) {
        log_error(e.what());
        return 4;
    } catch (const std::exception& e) {
        log_error(e.what());
        return 1;
    }
    return 2;
}
