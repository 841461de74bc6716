#pragma once

#include <optional>
#include <set>
#include <vector>

#include "dppt/model.hpp"

namespace dppt {

struct DistillConfig {
    double lambda_hm = 1.0;    // weight on the teacher-heatmap term
    double lambda_attn = 1.0;  // weight on the attention-transfer term
    // Layers included in the attention loss; empty means all layers.
    std::set<int> attn_layers;
    // Pruned-column alignment strategy. The teacher's columns are
    // restricted to the student's surviving indices, without
    // renormalizing rows.
    enum class AlignMode { RestrictTeacherColumns } align_mode =
        AlignMode::RestrictTeacherColumns;

    void validate() const;
};

struct LossBreakdown {
    double l_gt = 0.0;
    double l_hm = 0.0;
    double l_attn = 0.0;
    double total = 0.0;
    std::vector<std::pair<int, double>> per_layer_attn;  // (layer, term)
    Tensor total_tensor;  // scalar on the graph; backward-ready
};

// Mean squared error against the rendered target heatmaps.
Tensor loss_gt(const Tensor& student_hm, const Tensor& target_hm);

// Mean squared error against the teacher's heatmaps. The teacher tensor
// must be detached (run under NoGradGuard); gradients may not reach it.
Tensor loss_hm(const Tensor& student_hm, const Tensor& teacher_hm);

// Sum over layers of the MSE between the student's head-averaged
// keypoint->visual slice and the teacher's slice restricted to the
// student's surviving columns.
Tensor loss_attn(const AttentionRecord& student_rec, const AttentionRecord& teacher_rec,
                 const DistillConfig& cfg);

// L = L_gt + lambda1 * L_hm + lambda2 * L_attn. Terms with zero weight
// are dropped from the graph entirely. teacher may be null only when
// both lambdas are zero.
LossBreakdown total_loss(const Tensor& target_hm, const ForwardResult* teacher,
                         const ForwardResult& student, const DistillConfig& cfg);

}  // namespace dppt
