#include "dppt/distill.hpp"

namespace dppt {

void DistillConfig::validate() const {
    if (lambda_hm < 0.0 || lambda_attn < 0.0)
        throw ConfigError("distillation weights must be non-negative");
}

Tensor loss_gt(const Tensor& student_hm, const Tensor& target_hm) {
    return mse(student_hm, target_hm);
}

Tensor loss_hm(const Tensor& student_hm, const Tensor& teacher_hm) {
    if (teacher_hm.requires_grad())
        throw ContractError("loss_hm: teacher heatmaps must be detached (frozen teacher)");
    return mse(student_hm, teacher_hm);
}

// Teacher slice restricted to the student's surviving columns, no
// renormalization. Plain data; gradients flow only through the student.
static Tensor gather_teacher_cols(const Tensor& teacher_avg,
                                  const std::vector<int64_t>& index_map) {
    const int64_t J = teacher_avg.dim(0);
    const int64_t cols = teacher_avg.dim(1);
    Tensor out = Tensor::zeros({J, static_cast<int64_t>(index_map.size())});
    const double* src = teacher_avg.data();
    double* dst = out.data();
    const int64_t w = static_cast<int64_t>(index_map.size());
    for (int64_t c = 0; c < w; ++c) {
        const int64_t idx = index_map[c];
        if (idx < 0 || idx >= cols)
            throw ContractError(strf("loss_attn: student index %lld outside teacher columns %lld",
                                     static_cast<long long>(idx),
                                     static_cast<long long>(cols)));
        for (int64_t j = 0; j < J; ++j) dst[j * w + c] = src[j * cols + idx];
    }
    return out;
}

static std::set<int> effective_layers(const AttentionRecord& student_rec,
                                      const DistillConfig& cfg) {
    if (!cfg.attn_layers.empty()) return cfg.attn_layers;
    std::set<int> all;
    for (const auto& l : student_rec.layers) all.insert(l.layer_index);
    return all;
}

Tensor loss_attn(const AttentionRecord& student_rec, const AttentionRecord& teacher_rec,
                 const DistillConfig& cfg) {
    Tensor acc;
    for (int l : effective_layers(student_rec, cfg)) {
        const LayerAttention* s = student_rec.find(l);
        const LayerAttention* t = teacher_rec.find(l);
        if (!s || !t)
            throw ContractError(strf("loss_attn: layer %d missing from %s record", l,
                                     s ? "teacher" : "student"));
        if (t->head_avg.requires_grad())
            throw ContractError("loss_attn: teacher record must be detached (frozen teacher)");
        Tensor teacher_cols = gather_teacher_cols(t->head_avg, s->visual_index_map);
        Tensor term = mse(s->head_avg, teacher_cols);
        acc = acc.defined() ? add(acc, term) : term;
    }
    if (!acc.defined()) throw ContractError("loss_attn: no layers selected");
    return acc;
}

LossBreakdown total_loss(const Tensor& target_hm, const ForwardResult* teacher,
                         const ForwardResult& student, const DistillConfig& cfg) {
    cfg.validate();
    const bool need_teacher = cfg.lambda_hm > 0.0 || cfg.lambda_attn > 0.0;
    if (need_teacher && !teacher)
        throw ContractError("total_loss: teacher outputs required when a distill weight is > 0");

    LossBreakdown out;
    Tensor gt = loss_gt(student.heatmaps.heatmaps, target_hm);
    out.l_gt = gt.item();
    Tensor total = gt;

    if (teacher) {
        Tensor hm = loss_hm(student.heatmaps.heatmaps, teacher->heatmaps.heatmaps);
        out.l_hm = hm.item();
        if (cfg.lambda_hm > 0.0) total = add(total, scale(hm, cfg.lambda_hm));

        Tensor attn = loss_attn(student.record, teacher->record, cfg);
        out.l_attn = attn.item();
        for (int l : effective_layers(student.record, cfg)) {
            const LayerAttention* s = student.record.find(l);
            const LayerAttention* t = teacher->record.find(l);
            Tensor term = mse(s->head_avg.detach(),
                              gather_teacher_cols(t->head_avg, s->visual_index_map));
            out.per_layer_attn.emplace_back(l, term.item());
        }
        if (cfg.lambda_attn > 0.0) total = add(total, scale(attn, cfg.lambda_attn));
    }
    out.total_tensor = total;
    out.total = total.item();
    return out;
}

}  // namespace dppt
