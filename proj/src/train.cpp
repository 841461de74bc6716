#include "dppt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <thread>

#include "dppt/eval.hpp"
#include "dppt/prune.hpp"

namespace dppt {

namespace fs = std::filesystem;

const char* train_mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::Teacher: return "teacher";
        case TrainMode::StudentGt: return "student-gt";
        case TrainMode::StudentGtHm: return "student-gt-hm";
        case TrainMode::StudentGtHmAttn: return "student-gt-hm-attn";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(decay_factor > 0.0)) throw ConfigError("decay factor must be positive");
    int prev = 0;
    for (int e : decay_epochs) {
        if (e < 1 || e > epochs)
            throw ConfigError(strf("decay epoch %d outside [1,%d]", e, epochs));
        if (e <= prev) throw ConfigError("decay_epochs must be strictly increasing");
        prev = e;
    }
    const bool needs_teacher =
        mode == TrainMode::StudentGtHm || mode == TrainMode::StudentGtHmAttn;
    if (needs_teacher && teacher_checkpoint.empty())
        throw ConfigError(strf("mode %s requires a teacher checkpoint", train_mode_name(mode)));
    distill.validate();
}

TrainConfig TrainConfig::full_schedule() {
    TrainConfig c;
    c.epochs = 300;
    c.decay_epochs = {200, 260};
    return c;
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 1 || epoch > cfg.epochs)
        throw ConfigError(strf("epoch %d outside [1,%d]", epoch, cfg.epochs));
    double lr = cfg.lr;
    for (int e : cfg.decay_epochs)
        if (epoch >= e) lr *= cfg.decay_factor;
    return lr;
}

DistillConfig distill_for_mode(TrainMode mode, const DistillConfig& base) {
    DistillConfig d = base;
    switch (mode) {
        case TrainMode::Teacher:
        case TrainMode::StudentGt:
            d.lambda_hm = 0.0;
            d.lambda_attn = 0.0;
            break;
        case TrainMode::StudentGtHm:
            d.lambda_attn = 0.0;
            break;
        case TrainMode::StudentGtHmAttn:
            break;
    }
    return d;
}

// ---- Adam -------------------------------------------------------------------

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& [name, t] = params_[pi];
        const std::vector<double>* g = t.grad();
        if (!g) throw ContractError(strf("adam_step: parameter '%s' has no gradient",
                                         name.c_str()));
        double* w = t.data();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < m.size(); ++i) {
            const double gi = (*g)[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
}

// ---- teacher cache -----------------------------------------------------------

namespace {

// Teacher outputs per sample (frozen for the whole run, so cached once).
// per_head slices are not kept; losses only need head-averaged slices.
struct TeacherCache {
    std::vector<ForwardResult> outputs;
};

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int i = t; i < count; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

ForwardResult trim_for_cache(ForwardResult&& res) {
    for (auto& layer : res.record.layers) layer.per_head = Tensor();
    res.final_state = TokenState();
    return std::move(res);
}

TeacherCache build_teacher_cache(const ModelConfig& cfg, const ModelParams& params,
                                 const std::vector<PoseSample>& samples, int threads) {
    TeacherCache cache;
    cache.outputs.resize(samples.size());
    parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
        NoGradGuard guard;
        cache.outputs[i] = trim_for_cache(forward(samples[i].image, cfg, params));
    });
    return cache;
}

struct SampleResult {
    LossBreakdown breakdown;
    detail::GradTable grads;
};

}  // namespace

// ---- train loop -----------------------------------------------------------------

TrainResult train(const ModelConfig& model_cfg_in, const TrainConfig& cfg,
                  const DatasetSplit& train_split, const DatasetSplit& val_split,
                  const std::string& out_dir) {
    cfg.validate();
    if (train_split.samples.empty()) throw ConfigError("train split is empty");
    fs::create_directories(out_dir);

    ModelConfig model_cfg = model_cfg_in;
    model_cfg.seed = cfg.seed;
    if (cfg.mode == TrainMode::Teacher && !model_cfg.is_dense())
        throw ConfigError("teacher training requires a dense config (empty prune set)");
    model_cfg.validate();

    const int threads = cfg.threads > 0
                            ? cfg.threads
                            : std::max(1u, std::thread::hardware_concurrency());
    const DistillConfig distill = distill_for_mode(cfg.mode, cfg.distill);
    const bool use_teacher = !cfg.teacher_checkpoint.empty() && cfg.mode != TrainMode::Teacher &&
                             cfg.mode != TrainMode::StudentGt;

    // teacher: read-only, dense, shape-compatible
    ModelConfig teacher_cfg;
    ModelParams teacher_params;
    TeacherCache teacher_train, teacher_val;
    if (use_teacher) {
        std::tie(teacher_cfg, teacher_params) = load_checkpoint(cfg.teacher_checkpoint);
        if (!teacher_cfg.is_dense())
            throw ConfigError("teacher must be dense: prune set is not empty");
        if (teacher_cfg.num_keypoints != model_cfg.num_keypoints ||
            teacher_cfg.heatmap_h != model_cfg.heatmap_h ||
            teacher_cfg.heatmap_w != model_cfg.heatmap_w ||
            teacher_cfg.image_h != model_cfg.image_h ||
            teacher_cfg.image_w != model_cfg.image_w ||
            teacher_cfg.num_visual_tokens != model_cfg.num_visual_tokens)
            throw ConfigError(
                "teacher/student configs disagree on (J, heatmap_size, image_size, N_v)");
        log_info("caching teacher outputs for " +
                 std::to_string(train_split.samples.size() + val_split.samples.size()) +
                 " samples");
        teacher_train = build_teacher_cache(teacher_cfg, teacher_params, train_split.samples,
                                            threads);
        teacher_val = build_teacher_cache(teacher_cfg, teacher_params, val_split.samples,
                                          threads);
    }

    ModelParams params;
    if (cfg.init_from_teacher) {
        if (!use_teacher) throw ConfigError("init_from_teacher requires a teacher checkpoint");
        params = teacher_params.clone();
    } else {
        params = ModelParams::init(model_cfg);
    }
    auto registry = params.named();
    Adam adam(registry);

    {
        auto schedule = retention_schedule(model_cfg);
        std::string s = "token schedule (visual):";
        for (int n : schedule) s += " " + std::to_string(n);
        log_info(s);
    }

    const std::string metrics_path = (fs::path(out_dir) / "metrics.tsv").string();
    const std::string val_metrics_path = (fs::path(out_dir) / "val_metrics.tsv").string();
    std::FILE* metrics_file = std::fopen(metrics_path.c_str(), "w");
    std::FILE* val_file = std::fopen(val_metrics_path.c_str(), "w");
    if (!metrics_file || !val_file) throw FormatError("cannot open metrics logs in " + out_dir);
    std::fprintf(metrics_file, "epoch\tlr\tl_gt\tl_hm\tl_attn\ttotal\tval_pck\n");
    std::fprintf(val_file, "epoch\tval_l_gt\tval_l_hm\tval_l_attn\tval_total\tval_pck\n");

    TrainResult result;
    result.metrics_path = metrics_path;
    result.val_metrics_path = val_metrics_path;
    result.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
    result.final_checkpoint = (fs::path(out_dir) / "final.ckpt").string();
    result.best_val_pck = -1.0;

    const int n_train = static_cast<int>(train_split.samples.size());
    std::vector<int> order(n_train);
    Rng epoch_rng = Rng(cfg.seed).fork(1);  // batch shuffling stream

    auto eval_losses = [&](const std::vector<PoseSample>& samples, const TeacherCache& cache,
                           int epoch) {
        NoGradGuard guard;
        ValMetrics vm;
        vm.epoch = epoch;
        std::vector<std::vector<std::pair<double, double>>> preds(samples.size());
        std::vector<LossBreakdown> breakdowns(samples.size());
        parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
            NoGradGuard inner;
            ForwardResult res = forward(samples[i].image, model_cfg, params);
            preds[i] = decode(res.heatmaps.heatmaps, model_cfg.image_h, model_cfg.image_w);
            const ForwardResult* teacher = use_teacher ? &cache.outputs[i] : nullptr;
            breakdowns[i] = total_loss(samples[i].target_heatmaps, teacher, res, distill);
        });
        for (const auto& b : breakdowns) {
            vm.l_gt += b.l_gt;
            vm.l_hm += b.l_hm;
            vm.l_attn += b.l_attn;
            vm.total += b.total;
        }
        const double inv = samples.empty() ? 0.0 : 1.0 / samples.size();
        vm.l_gt *= inv;
        vm.l_hm *= inv;
        vm.l_attn *= inv;
        vm.total *= inv;
        vm.pck = pckh(preds, samples, 0.5).mean_pck;
        return vm;
    };

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        for (int i = 0; i < n_train; ++i) order[i] = i;
        epoch_rng.shuffle(order);

        double epoch_gt = 0.0, epoch_hm = 0.0, epoch_attn = 0.0, epoch_total = 0.0;
        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n_train - start);
            std::vector<SampleResult> results(bsz);
            parallel_for(bsz, threads, [&](int bi) {
                const PoseSample& sample = train_split.samples[order[start + bi]];
                ForwardResult res = forward(sample.image, model_cfg, params);
                const ForwardResult* teacher =
                    use_teacher ? &teacher_train.outputs[order[start + bi]] : nullptr;
                SampleResult& out = results[bi];
                out.breakdown = total_loss(sample.target_heatmaps, teacher, res, distill);
                out.grads = detail::run_backward(out.breakdown.total_tensor);
            });

            // fixed-order reduction keeps results independent of thread count
            adam.zero_grads();
            for (int bi = 0; bi < bsz; ++bi) {
                const auto& b = results[bi].breakdown;
                if (!std::isfinite(b.total))
                    throw DivergenceError(strf("non-finite loss at epoch %d", epoch));
                epoch_gt += b.l_gt;
                epoch_hm += b.l_hm;
                epoch_attn += b.l_attn;
                epoch_total += b.total;
                for (auto& [name, t] : registry) {
                    auto it = results[bi].grads.find(t.impl().get());
                    if (it != results[bi].grads.end()) t.accumulate_grad(it->second);
                }
            }
            const double inv_b = 1.0 / bsz;
            for (auto& [name, t] : registry) {
                if (!t.grad()) {
                    // a parameter outside the graph would be silent: fail loudly
                    throw ContractError(strf("parameter '%s' received no gradient",
                                             name.c_str()));
                }
                auto* g = const_cast<std::vector<double>*>(t.grad());
                for (double& v : *g) v *= inv_b;
            }
            adam.step(lr);
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr;
        em.l_gt = epoch_gt / n_train;
        em.l_hm = epoch_hm / n_train;
        em.l_attn = epoch_attn / n_train;
        em.total = epoch_total / n_train;

        ValMetrics vm = eval_losses(val_split.samples, teacher_val, epoch);
        em.val_pck = vm.pck;
        result.metrics.push_back(em);
        result.val_metrics.push_back(vm);
        std::fprintf(metrics_file, "%d\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\n", em.epoch,
                     em.lr, em.l_gt, em.l_hm, em.l_attn, em.total, em.val_pck);
        std::fprintf(val_file, "%d\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\n", vm.epoch, vm.l_gt,
                     vm.l_hm, vm.l_attn, vm.total, vm.pck);
        std::fflush(metrics_file);
        std::fflush(val_file);
        log_info(strf("epoch %3d lr %.2g l_gt %.5f total %.5f val_pck %.2f", epoch, lr,
                      em.l_gt, em.total, em.val_pck));

        if (vm.pck > result.best_val_pck) {
            result.best_val_pck = vm.pck;
            result.best_epoch = epoch;
            save_checkpoint(result.best_checkpoint, model_cfg, params);
        }
    }
    save_checkpoint(result.final_checkpoint, model_cfg, params);
    std::fclose(metrics_file);
    std::fclose(val_file);
    return result;
}

}  // namespace dppt
