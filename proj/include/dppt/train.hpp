#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dppt/data.hpp"
#include "dppt/distill.hpp"
#include "dppt/model.hpp"

namespace dppt {

enum class TrainMode { Teacher, StudentGt, StudentGtHm, StudentGtHmAttn };

const char* train_mode_name(TrainMode mode);

struct TrainConfig {
    int epochs = 60;
    int batch_size = 16;
    double lr = 1e-3;
    std::vector<int> decay_epochs = {40, 52};  // paper's 300/200/260 scaled by 1/5
    double decay_factor = 0.1;
    uint64_t seed = 0;
    TrainMode mode = TrainMode::Teacher;
    std::string teacher_checkpoint;  // required except for teacher / student-gt
    DistillConfig distill;
    // Worker threads for per-sample forward/backward inside a step;
    // 0 = hardware. Gradients are reduced in a fixed sample order, so
    // results are identical for any thread count.
    int threads = 0;
    bool init_from_teacher = false;

    void validate() const;
    // Full-length schedule preset: 300 epochs, x0.1 decay at 200 and 260.
    static TrainConfig full_schedule();
};

// lr * decay_factor^(#decay epochs reached); piecewise constant.
double lr_at(int epoch, const TrainConfig& cfg);

// Effective lambdas for a mode (ablation presets).
DistillConfig distill_for_mode(TrainMode mode, const DistillConfig& base);

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Bias-corrected Adam over a fixed-order parameter registry.
class Adam {
public:
    explicit Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg = {});
    // Applies one update from the parameters' .grad buffers; throws
    // ContractError naming any parameter with no gradient.
    void step(double lr);
    void zero_grads();
    int64_t steps_taken() const { return step_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int64_t step_ = 0;
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0, l_gt = 0.0, l_hm = 0.0, l_attn = 0.0, total = 0.0, val_pck = 0.0;
};

struct ValMetrics {
    int epoch = 0;
    double l_gt = 0.0, l_hm = 0.0, l_attn = 0.0, total = 0.0, pck = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::vector<ValMetrics> val_metrics;
    std::string final_checkpoint;
    std::string best_checkpoint;
    std::string metrics_path;
    std::string val_metrics_path;
    double best_val_pck = 0.0;
    int best_epoch = 0;
};

// Full optimization loop: seeded shuffling, Adam with step decay,
// per-epoch metrics + validation PCKh, best/final checkpoints. Teacher
// (when required) is loaded read-only, must be dense, and its outputs
// are cached once (it is frozen for the whole run).
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const DatasetSplit& train_split, const DatasetSplit& val_split,
                  const std::string& out_dir);

}  // namespace dppt
