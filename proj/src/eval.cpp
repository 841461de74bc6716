#include "dppt/eval.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "dppt/prune.hpp"

namespace dppt {

using json = nlohmann::ordered_json;

std::vector<std::pair<double, double>> decode(const Tensor& heatmaps, int image_h,
                                              int image_w) {
    if (heatmaps.ndim() != 3)
        throw ShapeError(strf("decode: need [J x H x W], got %s",
                              shape_str(heatmaps.shape()).c_str()));
    const int64_t J = heatmaps.dim(0), H = heatmaps.dim(1), W = heatmaps.dim(2);
    const double sx = static_cast<double>(image_w) / W;
    const double sy = static_cast<double>(image_h) / H;
    std::vector<std::pair<double, double>> joints(J);
    const double* p = heatmaps.data();
    for (int64_t j = 0; j < J; ++j) {
        const double* ch = p + j * H * W;
        int64_t best = 0;  // first occurrence wins on ties
        for (int64_t i = 1; i < H * W; ++i)
            if (ch[i] > ch[best]) best = i;
        joints[j] = {static_cast<double>(best % W) * sx, static_cast<double>(best / W) * sy};
    }
    return joints;
}

PckReport pckh(const std::vector<std::vector<std::pair<double, double>>>& predictions,
               const std::vector<PoseSample>& samples, double alpha) {
    if (predictions.size() != samples.size())
        throw ContractError(strf("pckh: %zu predictions for %zu samples", predictions.size(),
                                 samples.size()));
    PckReport report;
    report.alpha = alpha;
    report.sample_count = static_cast<int>(samples.size());
    if (samples.empty()) return report;
    const size_t J = samples[0].joints.size();
    std::vector<int> correct(J, 0), total(J, 0);
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (predictions[i].size() != J || s.joints.size() != J)
            throw ContractError("pckh: joint count mismatch");
        for (size_t j = 0; j < J; ++j) {
            if (!s.visibility[j]) continue;
            ++total[j];
            const double dx = predictions[i][j].first - s.joints[j].first;
            const double dy = predictions[i][j].second - s.joints[j].second;
            if (std::sqrt(dx * dx + dy * dy) <= alpha * s.head_size) ++correct[j];
        }
    }
    report.per_joint_rate.resize(J, 0.0);
    report.per_joint_total = total;
    double sum = 0.0;
    int joints_with_data = 0;
    for (size_t j = 0; j < J; ++j) {
        if (total[j] > 0) {
            report.per_joint_rate[j] = static_cast<double>(correct[j]) / total[j];
            sum += report.per_joint_rate[j];
            ++joints_with_data;
        }
    }
    report.mean_pck = joints_with_data > 0 ? 100.0 * sum / joints_with_data : 0.0;
    return report;
}

// ---- FLOPs accounting ------------------------------------------------------

static int64_t attention_flops(int64_t n, int64_t d) {
    return 4 * n * d * d + 2 * n * n * d;
}

static int64_t mlp_flops(int64_t n, int64_t d, int64_t hidden) {
    return 2 * n * d * hidden * 2;
}

static void fill_encoder(FlopsReport& report, const ModelConfig& cfg) {
    const auto schedule = retention_schedule(cfg);
    const int64_t D = cfg.embed_dim;
    report.encoder_total = 0;
    for (int l = 0; l < cfg.num_layers; ++l) {
        LayerFlops lf;
        lf.layer = l + 1;
        lf.tokens = schedule[l] + cfg.num_keypoints;
        lf.attention = attention_flops(lf.tokens, D);
        lf.mlp = mlp_flops(lf.tokens, D, cfg.mlp_hidden());
        report.encoder_total += lf.attention + lf.mlp;
        report.layers.push_back(lf);
    }
}

FlopsReport flops(const ModelConfig& cfg) {
    cfg.validate();
    FlopsReport report;
    report.keep_ratio = cfg.keep_ratio;
    fill_encoder(report, cfg);
    report.stem = 2ll * cfg.num_visual_tokens * cfg.patch_dim() * cfg.embed_dim;
    report.head = 2ll * cfg.num_keypoints * cfg.embed_dim * cfg.heatmap_h * cfg.heatmap_w;
    report.total = report.encoder_total + report.stem + report.head;

    FlopsReport dense;
    fill_encoder(dense, cfg.dense());
    report.dense_encoder_total = dense.encoder_total;
    report.dense_total = dense.encoder_total + report.stem + report.head;
    report.ratio = static_cast<double>(report.total) / report.dense_total;
    report.encoder_ratio =
        static_cast<double>(report.encoder_total) / report.dense_encoder_total;
    return report;
}

std::vector<FlopsReport> flops_sweep(const ModelConfig& cfg, double r_lo, double r_hi,
                                     double r_step) {
    if (!(r_lo > 0.0 && r_lo <= r_hi && r_hi <= 1.0 && r_step > 0.0))
        throw ConfigError(strf("invalid sweep range %g:%g:%g", r_lo, r_hi, r_step));
    std::vector<FlopsReport> out;
    for (int i = 0;; ++i) {
        const double r = r_lo + i * r_step;
        if (r > r_hi + 1e-12) break;
        ModelConfig c = cfg;
        c.keep_ratio = std::min(r, 1.0);
        out.push_back(flops(c));
    }
    return out;
}

// ---- rendering ------------------------------------------------------------

std::string render_pck_table(const PckReport& report, const std::vector<std::string>& names) {
    std::string out = strf("PCKh@%.2f over %d samples\n", report.alpha, report.sample_count);
    out += strf("%-12s %10s %8s\n", "joint", "rate", "visible");
    for (size_t j = 0; j < report.per_joint_rate.size(); ++j) {
        const char* name = j < names.size() ? names[j].c_str() : "?";
        out += strf("%-12s %9.2f%% %8d\n", name, 100.0 * report.per_joint_rate[j],
                    report.per_joint_total[j]);
    }
    out += strf("%-12s %9.2f%%\n", "mean", report.mean_pck);
    return out;
}

std::string render_flops_table(const FlopsReport& report) {
    std::string out;
    out += "FLOPs (multiply-accumulate = 2 FLOPs; softmax/layer-norm excluded)\n";
    out += strf("keep ratio %.3f\n", report.keep_ratio);
    out += strf("%-7s %8s %16s %16s\n", "layer", "tokens", "attention", "mlp");
    for (const auto& l : report.layers)
        out += strf("%-7d %8d %16lld %16lld\n", l.layer, l.tokens,
                    static_cast<long long>(l.attention), static_cast<long long>(l.mlp));
    out += strf("stem    %16lld\nhead    %16lld\n", static_cast<long long>(report.stem),
                static_cast<long long>(report.head));
    out += strf("encoder %16lld (dense %lld, ratio %.4f)\n",
                static_cast<long long>(report.encoder_total),
                static_cast<long long>(report.dense_encoder_total), report.encoder_ratio);
    out += strf("total   %16lld (dense %lld, ratio %.4f)\n",
                static_cast<long long>(report.total), static_cast<long long>(report.dense_total),
                report.ratio);
    return out;
}

std::string render_sweep_table(const std::vector<FlopsReport>& sweep) {
    std::string out;
    out += "FLOPs sweep (multiply-accumulate = 2 FLOPs; softmax/layer-norm excluded)\n";
    out += strf("%8s %16s %16s %12s %12s\n", "r", "encoder", "total", "enc ratio",
                "enc saving");
    for (const auto& rep : sweep)
        out += strf("%8.3f %16lld %16lld %12.4f %11.1f%%\n", rep.keep_ratio,
                    static_cast<long long>(rep.encoder_total),
                    static_cast<long long>(rep.total), rep.encoder_ratio,
                    100.0 * (1.0 - rep.encoder_ratio));
    return out;
}

static json flops_to_json(const FlopsReport& r) {
    json j;
    j["convention"] = "multiply-accumulate = 2 FLOPs; softmax/layer-norm excluded";
    j["keep_ratio"] = r.keep_ratio;
    j["layers"] = json::array();
    for (const auto& l : r.layers)
        j["layers"].push_back(
            {{"layer", l.layer}, {"tokens", l.tokens}, {"attention", l.attention}, {"mlp", l.mlp}});
    j["stem"] = r.stem;
    j["head"] = r.head;
    j["encoder_total"] = r.encoder_total;
    j["total"] = r.total;
    j["dense_encoder_total"] = r.dense_encoder_total;
    j["dense_total"] = r.dense_total;
    j["ratio"] = r.ratio;
    j["encoder_ratio"] = r.encoder_ratio;
    return j;
}

std::string flops_report_json(const FlopsReport& report) {
    return flops_to_json(report).dump(2) + "\n";
}

std::string sweep_json(const std::vector<FlopsReport>& sweep) {
    json arr = json::array();
    for (const auto& r : sweep) arr.push_back(flops_to_json(r));
    return arr.dump(2) + "\n";
}

std::string pck_report_json(const PckReport& report, const std::vector<std::string>& names) {
    json j;
    j["alpha"] = report.alpha;
    j["sample_count"] = report.sample_count;
    j["mean_pck"] = report.mean_pck;
    j["per_joint"] = json::array();
    for (size_t i = 0; i < report.per_joint_rate.size(); ++i)
        j["per_joint"].push_back({{"name", i < names.size() ? names[i] : "?"},
                                  {"rate", report.per_joint_rate[i]},
                                  {"visible", report.per_joint_total[i]}});
    return j.dump(2) + "\n";
}

PckReport evaluate_split(const ModelConfig& cfg, const ModelParams& params,
                         const std::vector<PoseSample>& samples, double alpha) {
    NoGradGuard guard;
    std::vector<std::vector<std::pair<double, double>>> predictions;
    predictions.reserve(samples.size());
    for (const auto& s : samples) {
        ForwardResult res = forward(s.image, cfg, params);
        predictions.push_back(decode(res.heatmaps.heatmaps, cfg.image_h, cfg.image_w));
    }
    return pckh(predictions, samples, alpha);
}

}  // namespace dppt
