#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "dppt/data.hpp"
#include "dppt/distill.hpp"
#include "dppt/eval.hpp"
#include "dppt/model.hpp"
#include "dppt/prune.hpp"
#include "dppt/train.hpp"

namespace py = pybind11;
using namespace dppt;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
    return out;
}

py::dict sample_to_dict(const PoseSample& s) {
    py::dict d;
    d["image"] = array_from_tensor(s.image);
    py::array_t<double> joints({static_cast<py::ssize_t>(s.joints.size()), py::ssize_t(2)});
    for (size_t j = 0; j < s.joints.size(); ++j) {
        joints.mutable_at(j, 0) = s.joints[j].first;
        joints.mutable_at(j, 1) = s.joints[j].second;
    }
    d["joints"] = joints;
    d["visibility"] = s.visibility;
    d["target_heatmaps"] = array_from_tensor(s.target_heatmaps);
    d["head_size"] = s.head_size;
    return d;
}

// Model = config + parameters, the unit the CLI checkpoints.
struct PyModel {
    ModelConfig cfg;
    ModelParams params;

    explicit PyModel(const ModelConfig& config) : cfg(config), params(ModelParams::init(cfg)) {}
    PyModel(ModelConfig c, ModelParams p) : cfg(std::move(c)), params(std::move(p)) {}

    py::dict run(const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
        NoGradGuard guard;
        ForwardResult res = forward(tensor_from_array(image), cfg, params);
        py::dict out;
        out["heatmaps"] = array_from_tensor(res.heatmaps.heatmaps);
        auto joints = decode(res.heatmaps.heatmaps, cfg.image_h, cfg.image_w);
        py::array_t<double> j({static_cast<py::ssize_t>(joints.size()), py::ssize_t(2)});
        for (size_t i = 0; i < joints.size(); ++i) {
            j.mutable_at(i, 0) = joints[i].first;
            j.mutable_at(i, 1) = joints[i].second;
        }
        out["joints"] = j;
        out["visual_tokens_per_layer"] = res.visual_tokens_per_layer;
        py::list attention;
        for (const auto& layer : res.record.layers) {
            py::dict la;
            la["layer"] = layer.layer_index;
            la["head_avg"] = array_from_tensor(layer.head_avg);
            la["per_head"] = array_from_tensor(layer.per_head);
            la["index_map"] = layer.visual_index_map;
            attention.append(la);
        }
        out["attention"] = attention;
        return out;
    }
};

py::dict flops_to_dict(const FlopsReport& r) {
    py::dict d;
    d["keep_ratio"] = r.keep_ratio;
    d["stem"] = r.stem;
    d["head"] = r.head;
    d["encoder_total"] = r.encoder_total;
    d["total"] = r.total;
    d["dense_encoder_total"] = r.dense_encoder_total;
    d["dense_total"] = r.dense_total;
    d["ratio"] = r.ratio;
    d["encoder_ratio"] = r.encoder_ratio;
    py::list layers;
    for (const auto& l : r.layers) {
        py::dict ld;
        ld["layer"] = l.layer;
        ld["tokens"] = l.tokens;
        ld["attention"] = l.attention;
        ld["mlp"] = l.mlp;
        layers.append(ld);
    }
    d["layers"] = layers;
    return d;
}

py::dict train_result_to_dict(const TrainResult& r) {
    py::dict d;
    d["final_checkpoint"] = r.final_checkpoint;
    d["best_checkpoint"] = r.best_checkpoint;
    d["metrics_path"] = r.metrics_path;
    d["val_metrics_path"] = r.val_metrics_path;
    d["best_val_pck"] = r.best_val_pck;
    d["best_epoch"] = r.best_epoch;
    py::list epochs;
    for (const auto& m : r.metrics) {
        py::dict e;
        e["epoch"] = m.epoch;
        e["lr"] = m.lr;
        e["l_gt"] = m.l_gt;
        e["l_hm"] = m.l_hm;
        e["l_attn"] = m.l_attn;
        e["total"] = m.total;
        e["val_pck"] = m.val_pck;
        epochs.append(e);
    }
    d["epochs"] = epochs;
    return d;
}

TrainMode mode_from_string(const std::string& mode) {
    if (mode == "teacher") return TrainMode::Teacher;
    if (mode == "gt") return TrainMode::StudentGt;
    if (mode == "gt+hm") return TrainMode::StudentGtHm;
    if (mode == "gt+hm+attn") return TrainMode::StudentGtHmAttn;
    throw ConfigError("unknown mode '" + mode + "'");
}

}  // namespace

PYBIND11_MODULE(_dppt, m) {
    m.doc() = "Token-pruned pose transformer with self-distillation (C++ core)";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<FormatError>(m, "FormatError");

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("num_layers", &ModelConfig::num_layers)
        .def_readwrite("embed_dim", &ModelConfig::embed_dim)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("num_visual_tokens", &ModelConfig::num_visual_tokens)
        .def_readwrite("num_keypoints", &ModelConfig::num_keypoints)
        .def_readwrite("in_channels", &ModelConfig::in_channels)
        .def_readwrite("image_h", &ModelConfig::image_h)
        .def_readwrite("image_w", &ModelConfig::image_w)
        .def_readwrite("grid_rows", &ModelConfig::grid_rows)
        .def_readwrite("grid_cols", &ModelConfig::grid_cols)
        .def_readwrite("heatmap_h", &ModelConfig::heatmap_h)
        .def_readwrite("heatmap_w", &ModelConfig::heatmap_w)
        .def_readwrite("keep_ratio", &ModelConfig::keep_ratio)
        .def_readwrite("prune_before_layers", &ModelConfig::prune_before_layers)
        .def_readwrite("seed", &ModelConfig::seed)
        .def("validate", &ModelConfig::validate)
        .def("with_pruning", &ModelConfig::with_pruning)
        .def("dense", &ModelConfig::dense)
        .def_static("mini", &ModelConfig::mini)
        .def_static("ppt_s", &ModelConfig::ppt_s);

    py::class_<PyModel>(m, "Model")
        .def(py::init<const ModelConfig&>())
        .def_static("load",
                    [](const std::string& path) {
                        auto [cfg, params] = load_checkpoint(path);
                        return PyModel(std::move(cfg), std::move(params));
                    })
        .def("save",
             [](const PyModel& self, const std::string& path) {
                 save_checkpoint(path, self.cfg, self.params);
             })
        .def_property_readonly("config", [](const PyModel& self) { return self.cfg; })
        .def_property_readonly(
            "parameter_count",
            [](const PyModel& self) { return parameter_count(self.cfg); })
        .def("forward", &PyModel::run, py::arg("image"));

    m.def("parameter_count", &parameter_count);
    m.def("retention_schedule", &retention_schedule);
    m.def("keep_count", &keep_count, py::arg("keep_ratio"), py::arg("n_visual"));
    m.def(
        "hti_score",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& slice) {
            return array_from_tensor(hti_score(tensor_from_array(slice)));
        },
        py::arg("attn_slice"));

    m.def(
        "render_target",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& joints,
           const std::vector<bool>& visibility, int heatmap_h, int heatmap_w, double sigma,
           int image_h, int image_w) {
            if (joints.ndim() != 2 || joints.shape(1) != 2)
                throw ConfigError("joints must be [J, 2]");
            std::vector<std::pair<double, double>> j(joints.shape(0));
            for (py::ssize_t i = 0; i < joints.shape(0); ++i)
                j[i] = {joints.at(i, 0), joints.at(i, 1)};
            return array_from_tensor(
                render_target(j, visibility, heatmap_h, heatmap_w, sigma, image_h, image_w));
        },
        py::arg("joints"), py::arg("visibility"), py::arg("heatmap_h"), py::arg("heatmap_w"),
        py::arg("sigma"), py::arg("image_h"), py::arg("image_w"));

    m.def(
        "generate_samples",
        [](int count, uint64_t seed, uint64_t stream, double sigma) {
            RenderSpec render;
            render.sigma = sigma;
            DatasetSplit split =
                generate_split(SkeletonSpec::mini(), render, count, seed, stream);
            py::list out;
            for (const auto& s : split.samples) out.append(sample_to_dict(s));
            return out;
        },
        py::arg("count"), py::arg("seed"), py::arg("stream") = 0, py::arg("sigma") = 1.0);

    m.def(
        "gen_data",
        [](const std::string& out_dir, int train, int val, int test, uint64_t seed,
           double sigma) {
            RenderSpec render;
            render.sigma = sigma;
            SkeletonSpec spec = SkeletonSpec::mini();
            std::filesystem::create_directories(out_dir);
            uint64_t stream = 0;
            for (const auto& [name, count] :
                 std::vector<std::pair<std::string, int>>{{"train", train}, {"val", val},
                                                          {"test", test}}) {
                save_split(generate_split(spec, render, count, seed, stream),
                           out_dir + "/" + name + ".dppt");
                stream += 1ull << 32;
            }
        },
        py::arg("out_dir"), py::arg("train"), py::arg("val"), py::arg("test"),
        py::arg("seed") = 0, py::arg("sigma") = 1.0);

    m.def("flops", [](const ModelConfig& cfg) { return flops_to_dict(flops(cfg)); });
    m.def(
        "flops_sweep",
        [](const ModelConfig& cfg, double lo, double hi, double step) {
            py::list out;
            for (const auto& rep : flops_sweep(cfg, lo, hi, step))
                out.append(flops_to_dict(rep));
            return out;
        },
        py::arg("config"), py::arg("r_lo"), py::arg("r_hi"), py::arg("r_step"));

    m.def(
        "pckh",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& preds,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& gts,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& head_sizes,
           double alpha) {
            if (preds.ndim() != 3 || gts.ndim() != 3 || preds.shape(2) != 2)
                throw ConfigError("predictions and ground truth must be [N, J, 2]");
            const py::ssize_t n = preds.shape(0), j = preds.shape(1);
            std::vector<std::vector<std::pair<double, double>>> p(n);
            std::vector<PoseSample> samples(n);
            for (py::ssize_t i = 0; i < n; ++i) {
                samples[i].visibility.assign(j, true);
                samples[i].head_size = head_sizes.at(i);
                for (py::ssize_t k = 0; k < j; ++k) {
                    p[i].push_back({preds.at(i, k, 0), preds.at(i, k, 1)});
                    samples[i].joints.push_back({gts.at(i, k, 0), gts.at(i, k, 1)});
                }
            }
            PckReport rep = pckh(p, samples, alpha);
            py::dict out;
            out["mean_pck"] = rep.mean_pck;
            out["per_joint_rate"] = rep.per_joint_rate;
            out["alpha"] = rep.alpha;
            return out;
        },
        py::arg("predictions"), py::arg("ground_truth"), py::arg("head_sizes"),
        py::arg("alpha") = 0.5);

    m.def(
        "evaluate",
        [](const std::string& ckpt, const std::string& data_dir, const std::string& split,
           double alpha) {
            auto [cfg, params] = load_checkpoint(ckpt);
            DatasetSplit s = load_split(data_dir + "/" + split + ".dppt");
            PckReport rep = evaluate_split(cfg, params, s.samples, alpha);
            py::dict out;
            out["mean_pck"] = rep.mean_pck;
            out["per_joint_rate"] = rep.per_joint_rate;
            out["sample_count"] = rep.sample_count;
            return out;
        },
        py::arg("checkpoint"), py::arg("data_dir"), py::arg("split") = "test",
        py::arg("alpha") = 0.5);

    m.def(
        "train",
        [](const ModelConfig& model_cfg, const std::string& data_dir,
           const std::string& out_dir, const std::string& mode, uint64_t seed, int epochs,
           int batch_size, double lr, std::vector<int> decay_epochs,
           const std::string& teacher, double lambda_hm, double lambda_attn, int threads) {
            TrainConfig cfg;
            cfg.mode = mode_from_string(mode);
            cfg.seed = seed;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.lr = lr;
            cfg.decay_epochs = std::move(decay_epochs);
            std::erase_if(cfg.decay_epochs, [&](int e) { return e > cfg.epochs; });
            cfg.teacher_checkpoint = teacher;
            cfg.distill.lambda_hm = lambda_hm;
            cfg.distill.lambda_attn = lambda_attn;
            cfg.threads = threads;
            DatasetSplit train_split = load_split(data_dir + "/train.dppt");
            DatasetSplit val_split = load_split(data_dir + "/val.dppt");
            return train_result_to_dict(
                train(model_cfg, cfg, train_split, val_split, out_dir));
        },
        py::arg("model_config"), py::arg("data_dir"), py::arg("out_dir"),
        py::arg("mode") = "teacher", py::arg("seed") = 0, py::arg("epochs") = 60,
        py::arg("batch_size") = 16, py::arg("lr") = 1e-3,
        py::arg("decay_epochs") = std::vector<int>{40, 52}, py::arg("teacher") = "",
        py::arg("lambda_hm") = 1.0, py::arg("lambda_attn") = 1.0, py::arg("threads") = 0);
}
