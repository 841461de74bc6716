#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dppt/tensor.hpp"

namespace dppt {

// Architecture hyperparameters. A model is "dense" when
// prune_before_layers is empty; keep_ratio then has no effect.
struct ModelConfig {
    int num_layers = 6;
    int embed_dim = 64;
    int num_heads = 4;
    int num_visual_tokens = 64;
    int num_keypoints = 5;
    int in_channels = 1;
    int image_h = 32, image_w = 32;
    int grid_rows = 8, grid_cols = 8;
    int heatmap_h = 16, heatmap_w = 16;
    double keep_ratio = 1.0;
    std::vector<int> prune_before_layers;  // 1-based, ascending
    uint64_t seed = 0;

    int mlp_hidden() const { return 3 * embed_dim; }  // TokenPose-S convention
    int patch_h() const { return image_h / grid_rows; }
    int patch_w() const { return image_w / grid_cols; }
    int patch_dim() const { return in_channels * patch_h() * patch_w(); }
    bool is_dense() const { return prune_before_layers.empty(); }

    void validate() const;  // throws ConfigError
    ModelConfig with_pruning(double r, std::vector<int> layers) const;
    ModelConfig dense() const;

    // Desk-scale configuration used throughout tests and defaults.
    static ModelConfig mini();
    // PPT-S shape (for token schedules and FLOPs; not trained here).
    static ModelConfig ppt_s();
};

struct LayerParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ModelParams {
    Tensor patch_weight;     // [patch_dim x D]
    Tensor patch_bias;       // [D]
    Tensor pos_embed;        // [N_v x D]
    Tensor keypoint_tokens;  // [J x D]
    std::vector<LayerParams> layers;
    Tensor head_weight;  // [D x (H_hm*W_hm)]
    Tensor head_bias;    // [H_hm*W_hm]

    // Fixed-order registry; tensors share storage with the fields.
    std::vector<std::pair<std::string, Tensor>> named() const;

    static ModelParams init(const ModelConfig& cfg);  // truncated-normal(0.02), seeded
    ModelParams clone() const;                        // deep copy, leaves
};

// name -> shape, in registry order; the checkpoint loader validates
// against this.
std::vector<std::pair<std::string, std::vector<int64_t>>> parameter_shapes(
    const ModelConfig& cfg);
int64_t parameter_count(const ModelConfig& cfg);

// Live token sequence between layers. Keypoint tokens are never pruned.
struct TokenState {
    Tensor keypoint_tokens;                 // [J x D]
    Tensor visual_tokens;                   // [n_v x D]
    std::vector<int64_t> visual_index_map;  // ascending originals in [0, N_v)
    int layer_index = 0;
};

// Keypoint-query attention onto visual keys, one entry per encoder layer.
struct LayerAttention {
    int layer_index = 0;
    Tensor per_head;  // [heads x J x n_v], detached (drives HTI scoring)
    Tensor head_avg;  // [J x n_v], on the graph (drives the attention loss)
    std::vector<int64_t> visual_index_map;
};

struct AttentionRecord {
    std::vector<LayerAttention> layers;
    const LayerAttention* find(int layer_index) const;
};

struct HeatmapSet {
    Tensor heatmaps;  // [J x H_hm x W_hm]
    // Argmax cell per channel, (x, y) in heatmap coordinates, first
    // occurrence on ties.
    std::vector<std::pair<int, int>> decoded_joints;
};

struct ForwardResult {
    HeatmapSet heatmaps;
    AttentionRecord record;
    TokenState final_state;
    std::vector<int> visual_tokens_per_layer;  // n_v at each layer's input
};

// Patch flattening -> shared linear projection -> learnable position
// embedding. Row i is patch i in row-major grid order.
Tensor patch_embed(const Tensor& image, const ModelConfig& cfg, const ModelParams& params);

// Pre-norm MHSA + residual, pre-norm GELU MLP + residual. Appends the
// keypoint->visual attention slice for the produced layer to `record`.
TokenState encoder_layer(const TokenState& state, const LayerParams& layer, int num_heads,
                         AttentionRecord& record);

HeatmapSet heatmap_head(const Tensor& keypoint_tokens, const ModelConfig& cfg,
                        const ModelParams& params);

ForwardResult forward(const Tensor& image, const ModelConfig& cfg, const ModelParams& params);

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

}  // namespace dppt
