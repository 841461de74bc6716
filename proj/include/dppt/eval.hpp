#pragma once

#include <string>
#include <vector>

#include "dppt/data.hpp"
#include "dppt/model.hpp"

namespace dppt {

struct PckReport {
    double alpha = 0.5;
    std::vector<double> per_joint_rate;  // in [0,1], visible instances only
    std::vector<int> per_joint_total;    // visible instances per joint
    double mean_pck = 0.0;               // percent, average of per-joint rates
    int sample_count = 0;
};

// Per-channel argmax cell scaled back to image coordinates.
std::vector<std::pair<double, double>> decode(const Tensor& heatmaps, int image_h, int image_w);

// A joint is correct iff dist(pred, gt) <= alpha * head_size (inclusive).
// Invisible joints are excluded from numerator and denominator.
PckReport pckh(const std::vector<std::vector<std::pair<double, double>>>& predictions,
               const std::vector<PoseSample>& samples, double alpha = 0.5);

// Analytical FLOPs (multiply-accumulate counted as 2 FLOPs; softmax and
// layer-norm excluded). Per encoder layer with n tokens:
//   attention = 4*n*D^2 + 2*n^2*D, MLP = 2*n*D*hidden*2.
struct LayerFlops {
    int layer = 0;
    int tokens = 0;
    int64_t attention = 0;
    int64_t mlp = 0;
};

struct FlopsReport {
    std::vector<LayerFlops> layers;
    int64_t stem = 0;
    int64_t head = 0;
    int64_t encoder_total = 0;
    int64_t total = 0;
    int64_t dense_encoder_total = 0;
    int64_t dense_total = 0;
    double ratio = 1.0;          // total / dense total
    double encoder_ratio = 1.0;  // encoder / dense encoder
    double keep_ratio = 1.0;
};

FlopsReport flops(const ModelConfig& cfg);
std::vector<FlopsReport> flops_sweep(const ModelConfig& cfg, double r_lo, double r_hi,
                                     double r_step);

std::string render_pck_table(const PckReport& report, const std::vector<std::string>& names);
std::string render_flops_table(const FlopsReport& report);
std::string render_sweep_table(const std::vector<FlopsReport>& sweep);

std::string pck_report_json(const PckReport& report, const std::vector<std::string>& names);
std::string flops_report_json(const FlopsReport& report);
std::string sweep_json(const std::vector<FlopsReport>& sweep);

// PCKh of a checkpointed model over a split.
PckReport evaluate_split(const ModelConfig& cfg, const ModelParams& params,
                         const std::vector<PoseSample>& samples, double alpha = 0.5);

}  // namespace dppt
