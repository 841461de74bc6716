#include "dppt/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dppt {

int64_t keep_count(double keep_ratio, int64_t n_visual) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
        throw ConfigError(strf("keep_ratio %g outside (0,1]", keep_ratio));
    const auto k = static_cast<int64_t>(std::floor(keep_ratio * static_cast<double>(n_visual)));
    return std::max<int64_t>(1, k);
}

std::vector<int> retention_schedule(const ModelConfig& cfg) {
    std::vector<int> out;
    out.reserve(cfg.num_layers);
    int64_t n = cfg.num_visual_tokens;
    for (int l = 1; l <= cfg.num_layers; ++l) {
        if (std::find(cfg.prune_before_layers.begin(), cfg.prune_before_layers.end(), l) !=
            cfg.prune_before_layers.end())
            n = keep_count(cfg.keep_ratio, n);
        out.push_back(static_cast<int>(n));
    }
    return out;
}

Tensor hti_score(const Tensor& attn_slice) {
    if (attn_slice.ndim() != 3)
        throw ShapeError(strf("hti_score: need [heads x J x n_v], got %s",
                              shape_str(attn_slice.shape()).c_str()));
    const int64_t heads = attn_slice.dim(0), J = attn_slice.dim(1), n_v = attn_slice.dim(2);
    if (n_v < 1) throw ContractError("hti_score: no visual tokens");
    Tensor scores = Tensor::zeros({n_v});
    double* s = scores.data();
    const double* a = attn_slice.data();
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t j = 0; j < J; ++j) {
            const double* row = a + (h * J + j) * n_v;
            for (int64_t t = 0; t < n_v; ++t) s[t] += row[t];
        }
    const double inv = 1.0 / static_cast<double>(heads * J);
    for (int64_t t = 0; t < n_v; ++t) s[t] *= inv;
    return scores;
}

std::pair<TokenState, PruneDecision> hti_prune(const TokenState& state,
                                               const Tensor& attn_slice, double keep_ratio) {
    const int64_t n_v = state.visual_tokens.dim(0);
    if (n_v < 1) throw ContractError("hti_prune: empty visual token set");
    if (attn_slice.dim(2) != n_v)
        throw ShapeError(strf("hti_prune: attention slice has %lld columns for %lld tokens",
                              static_cast<long long>(attn_slice.dim(2)),
                              static_cast<long long>(n_v)));

    PruneDecision d;
    d.scores = hti_score(attn_slice);
    d.k = keep_count(keep_ratio, n_v);

    // top-k by score; stable sort keeps the lower index on ties
    std::vector<int64_t> order(n_v);
    std::iota(order.begin(), order.end(), 0);
    const double* s = d.scores.data();
    std::stable_sort(order.begin(), order.end(),
                     [s](int64_t a, int64_t b) { return s[a] > s[b]; });
    order.resize(d.k);
    std::sort(order.begin(), order.end());  // preserve original relative order
    d.kept_local_indices = order;
    d.kept_original_indices.reserve(d.k);
    for (int64_t i : order) d.kept_original_indices.push_back(state.visual_index_map[i]);

    TokenState out;
    out.keypoint_tokens = state.keypoint_tokens;
    out.visual_tokens = gather_rows(state.visual_tokens, d.kept_local_indices);
    out.visual_index_map = d.kept_original_indices;
    out.layer_index = state.layer_index;
    return {std::move(out), std::move(d)};
}

}  // namespace dppt
