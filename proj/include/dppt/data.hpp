#pragma once

#include <string>
#include <vector>

#include "dppt/common.hpp"
#include "dppt/tensor.hpp"

namespace dppt {

// Articulated stick-figure skeleton. Limbs are sampled in list order,
// each child placed relative to its (already placed) parent.
struct LimbSpec {
    int parent = 0, child = 0;
    double min_len = 0.0, max_len = 0.0;
    // direction angle in radians, x right / y down
    double min_angle = 0.0, max_angle = 0.0;
};

struct SkeletonSpec {
    std::vector<std::string> joint_names;
    int root = 0;
    double root_x_min = 0.0, root_x_max = 0.0;
    double root_y_min = 0.0, root_y_max = 0.0;
    std::vector<LimbSpec> limbs;
    int head_joint = 0, neck_joint = 0;  // PCKh normalizer segment

    int num_joints() const { return static_cast<int>(joint_names.size()); }
    void validate() const;

    // 5-joint figure (head, neck, pelvis, left/right foot) sized for a
    // 32x32 image.
    static SkeletonSpec mini();
};

struct RenderSpec {
    int image_h = 32, image_w = 32;
    int heatmap_h = 16, heatmap_w = 16;
    double sigma = 1.0;  // heatmap cells
};

struct PoseSample {
    Tensor image;                                  // [1 x H x W], values in [0,1]
    std::vector<std::pair<double, double>> joints;  // (x, y) image pixels
    std::vector<bool> visibility;
    Tensor target_heatmaps;  // [J x H_hm x W_hm]
    double head_size = 0.0;  // pixels
};

// Unnormalized Gaussian per channel, peak exactly 1.0 at the joint's
// nearest heatmap cell; invisible joints give all-zero channels.
Tensor render_target(const std::vector<std::pair<double, double>>& joints,
                     const std::vector<bool>& visibility, int heatmap_h, int heatmap_w,
                     double sigma, int image_h, int image_w);

// Deterministic in (spec, render, rng state).
PoseSample generate_sample(const SkeletonSpec& spec, const RenderSpec& render, Rng& rng);

struct DatasetSplit {
    SkeletonSpec skeleton;
    RenderSpec render;
    std::vector<PoseSample> samples;
};

DatasetSplit generate_split(const SkeletonSpec& spec, const RenderSpec& render, int count,
                            uint64_t seed, uint64_t stream_offset);

// "DPPTDS1" container, little-endian; round-trip is lossless.
void save_split(const DatasetSplit& split, const std::string& path);
DatasetSplit load_split(const std::string& path);

// Exact on-disk sizes for the declared layout.
size_t split_header_bytes(const SkeletonSpec& spec);
size_t split_record_bytes(const SkeletonSpec& spec, const RenderSpec& render);

// True for patches whose pixels the rendered figure touches (used to
// contrast attention on figure vs background).
std::vector<bool> figure_patch_mask(const PoseSample& sample, const SkeletonSpec& spec,
                                    int grid_rows, int grid_cols);

}  // namespace dppt
