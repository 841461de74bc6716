#include "dppt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dppt/io.hpp"

namespace dppt {

void SkeletonSpec::validate() const {
    const int J = num_joints();
    if (J < 2) throw ConfigError("skeleton needs at least two joints");
    if (root < 0 || root >= J) throw ConfigError("skeleton root out of range");
    if (head_joint < 0 || head_joint >= J || neck_joint < 0 || neck_joint >= J ||
        head_joint == neck_joint)
        throw ConfigError("head/neck joints invalid");
    if (static_cast<int>(limbs.size()) != J - 1)
        throw ConfigError(strf("connected skeleton needs %d limbs, got %zu", J - 1,
                               limbs.size()));
    std::vector<bool> placed(J, false);
    placed[root] = true;
    for (const auto& limb : limbs) {
        if (limb.parent < 0 || limb.parent >= J || limb.child < 0 || limb.child >= J)
            throw ConfigError("limb joint index out of range");
        if (!placed[limb.parent])
            throw ConfigError(strf("limb parent %d sampled before being placed", limb.parent));
        if (placed[limb.child])
            throw ConfigError(strf("joint %d placed twice", limb.child));
        if (!(limb.min_len > 0.0) || limb.max_len < limb.min_len)
            throw ConfigError(strf("limb %d->%d has degenerate length range [%g,%g]",
                                   limb.parent, limb.child, limb.min_len, limb.max_len));
        if (limb.max_angle < limb.min_angle)
            throw ConfigError("limb angle range is empty");
        placed[limb.child] = true;
    }
    if (root_x_max < root_x_min || root_y_max < root_y_min)
        throw ConfigError("root position range is empty");
}

SkeletonSpec SkeletonSpec::mini() {
    constexpr double kUp = -M_PI / 2.0;    // y grows downward
    constexpr double kDown = M_PI / 2.0;
    SkeletonSpec s;
    s.joint_names = {"head", "neck", "pelvis", "foot_l", "foot_r"};
    s.root = 2;
    s.head_joint = 0;
    s.neck_joint = 1;
    s.root_x_min = 10.0;
    s.root_x_max = 22.0;
    s.root_y_min = 16.0;
    s.root_y_max = 19.0;
    // short head segment: PCKh@0.5 then demands cell-accurate decoding
    s.limbs = {
        {2, 1, 8.0, 12.0, kUp - 0.55, kUp + 0.55},     // pelvis -> neck
        {1, 0, 3.2, 4.8, kUp - 0.5, kUp + 0.5},        // neck -> head
        {2, 3, 8.0, 13.0, kDown + 0.15, kDown + 1.2},  // pelvis -> left foot (x < pelvis)
        {2, 4, 8.0, 13.0, kDown - 1.2, kDown - 0.15},  // pelvis -> right foot
    };
    s.validate();
    return s;
}

Tensor render_target(const std::vector<std::pair<double, double>>& joints,
                     const std::vector<bool>& visibility, int heatmap_h, int heatmap_w,
                     double sigma, int image_h, int image_w) {
    if (!(sigma > 0.0)) throw ConfigError("render_target: sigma must be positive");
    const int64_t J = static_cast<int64_t>(joints.size());
    if (visibility.size() != joints.size())
        throw ContractError("render_target: visibility size mismatch");
    Tensor out = Tensor::zeros({J, heatmap_h, heatmap_w});
    double* p = out.data();
    const double sx = static_cast<double>(heatmap_w) / image_w;
    const double sy = static_cast<double>(heatmap_h) / image_h;
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    for (int64_t j = 0; j < J; ++j) {
        if (!visibility[j]) continue;
        // nearest heatmap cell carries the peak of exactly 1
        const auto cx = std::clamp<long>(std::lround(joints[j].first * sx), 0, heatmap_w - 1);
        const auto cy = std::clamp<long>(std::lround(joints[j].second * sy), 0, heatmap_h - 1);
        double* ch = p + j * heatmap_h * heatmap_w;
        for (int v = 0; v < heatmap_h; ++v)
            for (int u = 0; u < heatmap_w; ++u) {
                const double dx = u - static_cast<double>(cx);
                const double dy = v - static_cast<double>(cy);
                ch[v * heatmap_w + u] = std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);
            }
    }
    return out;
}

static double segment_distance(double px, double py, double ax, double ay, double bx,
                               double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

PoseSample generate_sample(const SkeletonSpec& spec, const RenderSpec& render, Rng& rng) {
    spec.validate();
    const int J = spec.num_joints();
    const double x_hi = render.image_w - 2.0;
    const double y_hi = render.image_h - 2.0;

    std::vector<std::pair<double, double>> joints(J);
    double head_size = 0.0;
    for (int attempt = 0;; ++attempt) {
        joints[spec.root] = {rng.uniform(spec.root_x_min, spec.root_x_max),
                             rng.uniform(spec.root_y_min, spec.root_y_max)};
        for (const auto& limb : spec.limbs) {
            const double angle = rng.uniform(limb.min_angle, limb.max_angle);
            const double len = rng.uniform(limb.min_len, limb.max_len);
            const auto& [px, py] = joints[limb.parent];
            joints[limb.child] = {std::clamp(px + len * std::cos(angle), 1.0, x_hi),
                                  std::clamp(py + len * std::sin(angle), 1.0, y_hi)};
        }
        joints[spec.root].first = std::clamp(joints[spec.root].first, 1.0, x_hi);
        joints[spec.root].second = std::clamp(joints[spec.root].second, 1.0, y_hi);
        const double hx = joints[spec.head_joint].first - joints[spec.neck_joint].first;
        const double hy = joints[spec.head_joint].second - joints[spec.neck_joint].second;
        head_size = std::sqrt(hx * hx + hy * hy);
        // clamping can shorten the head segment; keep the PCKh radius
        // above the heatmap quantization floor, else redraw
        if (head_size >= 3.0) break;
        if (attempt > 100)
            throw ContractError("generate_sample: could not place a valid figure");
    }

    PoseSample sample;
    sample.joints = joints;
    sample.visibility.assign(J, true);
    sample.head_size = head_size;

    // bright figure on a dark noisy background
    sample.image = Tensor::zeros({1, render.image_h, render.image_w});
    double* img = sample.image.data();
    for (int r = 0; r < render.image_h; ++r)
        for (int c = 0; c < render.image_w; ++c) {
            double intensity = 0.0;
            for (const auto& limb : spec.limbs) {
                const double d =
                    segment_distance(c, r, joints[limb.parent].first, joints[limb.parent].second,
                                     joints[limb.child].first, joints[limb.child].second);
                intensity = std::max(intensity, std::clamp(1.4 - d, 0.0, 1.0));
            }
            for (int j = 0; j < J; ++j) {
                const double dx = c - joints[j].first, dy = r - joints[j].second;
                const double d = std::sqrt(dx * dx + dy * dy);
                intensity = std::max(intensity, std::clamp(2.0 - d, 0.0, 1.0));
            }
            img[r * render.image_w + c] = intensity;
        }
    for (int64_t i = 0; i < sample.image.numel(); ++i)
        img[i] = std::clamp(img[i] + rng.uniform(0.0, 0.1), 0.0, 1.0);

    sample.target_heatmaps = render_target(sample.joints, sample.visibility, render.heatmap_h,
                                           render.heatmap_w, render.sigma, render.image_h,
                                           render.image_w);
    return sample;
}

DatasetSplit generate_split(const SkeletonSpec& spec, const RenderSpec& render, int count,
                            uint64_t seed, uint64_t stream_offset) {
    DatasetSplit split;
    split.skeleton = spec;
    split.render = render;
    split.samples.reserve(count);
    Rng base(seed);
    for (int i = 0; i < count; ++i) {
        Rng sample_rng = base.fork(stream_offset + static_cast<uint64_t>(i));
        split.samples.push_back(generate_sample(spec, render, sample_rng));
    }
    return split;
}

// ---- DPPTDS1 container ----------------------------------------------------

static constexpr char kSplitMagic[7] = {'D', 'P', 'P', 'T', 'D', 'S', '1'};

size_t split_header_bytes(const SkeletonSpec& spec) {
    size_t n = 7;       // magic
    n += 4 * 7;         // count, J, image h/w, channels, heatmap h/w
    n += 8;             // sigma
    n += 4 * 3;         // root, head, neck
    n += 8 * 4;         // root ranges
    for (const auto& name : spec.joint_names) n += 4 + name.size();
    n += 4;             // limb count
    n += spec.limbs.size() * (4 + 4 + 8 * 4);
    return n;
}

size_t split_record_bytes(const SkeletonSpec& spec, const RenderSpec& render) {
    const size_t J = spec.joint_names.size();
    return 8ull * (static_cast<size_t>(render.image_h) * render.image_w + 2 * J + 1) + J;
}

void save_split(const DatasetSplit& split, const std::string& path) {
    split.skeleton.validate();
    const int J = split.skeleton.num_joints();
    BinWriter w(path);
    w.bytes(kSplitMagic, 7);
    w.u32(static_cast<uint32_t>(split.samples.size()));
    w.u32(static_cast<uint32_t>(J));
    w.u32(static_cast<uint32_t>(split.render.image_h));
    w.u32(static_cast<uint32_t>(split.render.image_w));
    w.u32(1);  // channels
    w.u32(static_cast<uint32_t>(split.render.heatmap_h));
    w.u32(static_cast<uint32_t>(split.render.heatmap_w));
    w.f64(split.render.sigma);
    w.u32(static_cast<uint32_t>(split.skeleton.root));
    w.u32(static_cast<uint32_t>(split.skeleton.head_joint));
    w.u32(static_cast<uint32_t>(split.skeleton.neck_joint));
    w.f64(split.skeleton.root_x_min);
    w.f64(split.skeleton.root_x_max);
    w.f64(split.skeleton.root_y_min);
    w.f64(split.skeleton.root_y_max);
    for (const auto& name : split.skeleton.joint_names) w.str(name);
    w.u32(static_cast<uint32_t>(split.skeleton.limbs.size()));
    for (const auto& limb : split.skeleton.limbs) {
        w.u32(static_cast<uint32_t>(limb.parent));
        w.u32(static_cast<uint32_t>(limb.child));
        w.f64(limb.min_len);
        w.f64(limb.max_len);
        w.f64(limb.min_angle);
        w.f64(limb.max_angle);
    }
    for (const auto& s : split.samples) {
        if (s.image.numel() != static_cast<int64_t>(split.render.image_h) * split.render.image_w)
            throw ContractError("save_split: sample image does not match render spec");
        w.f64s(s.image.data(), static_cast<size_t>(s.image.numel()));
        for (const auto& [x, y] : s.joints) {
            w.f64(x);
            w.f64(y);
        }
        for (int j = 0; j < J; ++j) w.u8(s.visibility[j] ? 1 : 0);
        w.f64(s.head_size);
    }
    w.close();
}

DatasetSplit load_split(const std::string& path) {
    BinReader r(path);
    char magic[7];
    r.bytes(magic, 7);
    if (std::memcmp(magic, kSplitMagic, 7) != 0) r.fail("bad DPPTDS1 magic");
    DatasetSplit split;
    const uint32_t count = r.u32();
    const uint32_t J = r.u32();
    if (J == 0 || J > 1024) r.fail("joint count out of range");
    split.render.image_h = static_cast<int>(r.u32());
    split.render.image_w = static_cast<int>(r.u32());
    const uint32_t channels = r.u32();
    if (channels != 1) r.fail("unsupported channel count");
    split.render.heatmap_h = static_cast<int>(r.u32());
    split.render.heatmap_w = static_cast<int>(r.u32());
    split.render.sigma = r.f64();
    split.skeleton.root = static_cast<int>(r.u32());
    split.skeleton.head_joint = static_cast<int>(r.u32());
    split.skeleton.neck_joint = static_cast<int>(r.u32());
    split.skeleton.root_x_min = r.f64();
    split.skeleton.root_x_max = r.f64();
    split.skeleton.root_y_min = r.f64();
    split.skeleton.root_y_max = r.f64();
    split.skeleton.joint_names.resize(J);
    for (auto& name : split.skeleton.joint_names) name = r.str(4096);
    const uint32_t limbs = r.u32();
    if (limbs != J - 1) r.fail("limb count does not form a connected skeleton");
    split.skeleton.limbs.resize(limbs);
    for (auto& limb : split.skeleton.limbs) {
        limb.parent = static_cast<int>(r.u32());
        limb.child = static_cast<int>(r.u32());
        limb.min_len = r.f64();
        limb.max_len = r.f64();
        limb.min_angle = r.f64();
        limb.max_angle = r.f64();
    }
    split.skeleton.validate();
    split.samples.resize(count);
    for (auto& s : split.samples) {
        s.image = Tensor::zeros({1, split.render.image_h, split.render.image_w});
        r.f64s(s.image.data(), static_cast<size_t>(s.image.numel()));
        s.joints.resize(J);
        for (auto& [x, y] : s.joints) {
            x = r.f64();
            y = r.f64();
        }
        s.visibility.resize(J);
        for (uint32_t j = 0; j < J; ++j) s.visibility[j] = r.u8() != 0;
        s.head_size = r.f64();
        s.target_heatmaps =
            render_target(s.joints, s.visibility, split.render.heatmap_h, split.render.heatmap_w,
                          split.render.sigma, split.render.image_h, split.render.image_w);
    }
    if (!r.at_eof()) r.fail("trailing bytes after last sample");
    return split;
}

std::vector<bool> figure_patch_mask(const PoseSample& sample, const SkeletonSpec& spec,
                                    int grid_rows, int grid_cols) {
    const int H = static_cast<int>(sample.image.dim(1));
    const int W = static_cast<int>(sample.image.dim(2));
    const int ph = H / grid_rows, pw = W / grid_cols;
    std::vector<bool> mask(static_cast<size_t>(grid_rows) * grid_cols, false);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double d = 1e9;
            for (const auto& limb : spec.limbs)
                d = std::min(d, segment_distance(c, r, sample.joints[limb.parent].first,
                                                 sample.joints[limb.parent].second,
                                                 sample.joints[limb.child].first,
                                                 sample.joints[limb.child].second));
            if (d <= 1.5) mask[(r / ph) * grid_cols + (c / pw)] = true;
        }
    return mask;
}

}  // namespace dppt
