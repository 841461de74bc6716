#pragma once

#include <vector>

#include "dppt/model.hpp"

namespace dppt {

struct PruneDecision {
    Tensor scores;  // [n_v], one per pre-prune visual token
    std::vector<int64_t> kept_local_indices;     // ascending, length k
    std::vector<int64_t> kept_original_indices;  // through visual_index_map
    int64_t k = 0;
};

// k = max(1, floor(r * n))
int64_t keep_count(double keep_ratio, int64_t n_visual);

// Visual token counts at each layer's input (layers 1..L) under the
// configured prune schedule.
std::vector<int> retention_schedule(const ModelConfig& cfg);

// Mean attention mass each visual token receives, over heads and
// keypoint queries. attn_slice is [heads x J x n_v].
Tensor hti_score(const Tensor& attn_slice);

// Keep the top-k visual tokens by HTI score (ties keep the lower index),
// preserving original relative order. Keypoint tokens pass through.
std::pair<TokenState, PruneDecision> hti_prune(const TokenState& state,
                                               const Tensor& attn_slice, double keep_ratio);

}  // namespace dppt
