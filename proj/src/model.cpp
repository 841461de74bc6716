#include "dppt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dppt/io.hpp"
#include "dppt/prune.hpp"

namespace dppt {

// ---- configuration --------------------------------------------------------

void ModelConfig::validate() const {
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0)
        throw ConfigError(strf("embed_dim %d must be divisible by num_heads %d", embed_dim,
                               num_heads));
    if (grid_rows < 1 || grid_cols < 1 || grid_rows * grid_cols != num_visual_tokens)
        throw ConfigError(strf("patch grid %dx%d does not produce %d visual tokens", grid_rows,
                               grid_cols, num_visual_tokens));
    if (image_h % grid_rows != 0 || image_w % grid_cols != 0)
        throw ConfigError(strf("image %dx%d not divisible by patch grid %dx%d", image_h,
                               image_w, grid_rows, grid_cols));
    if (num_keypoints < 1) throw ConfigError("num_keypoints must be >= 1");
    if (heatmap_h < 1 || heatmap_w < 1) throw ConfigError("heatmap size must be positive");
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
        throw ConfigError(strf("keep_ratio %g outside (0,1]", keep_ratio));
    int prev = 0;
    for (int l : prune_before_layers) {
        if (l < 1 || l > num_layers)
            throw ConfigError(strf("prune layer %d outside [1,%d]", l, num_layers));
        if (l == 1)
            throw ConfigError("cannot prune before layer 1: no attention slice exists yet");
        if (l <= prev) throw ConfigError("prune_before_layers must be strictly ascending");
        prev = l;
    }
}

ModelConfig ModelConfig::with_pruning(double r, std::vector<int> layers) const {
    ModelConfig c = *this;
    c.keep_ratio = r;
    c.prune_before_layers = std::move(layers);
    c.validate();
    return c;
}

ModelConfig ModelConfig::dense() const {
    ModelConfig c = *this;
    c.keep_ratio = 1.0;
    c.prune_before_layers.clear();
    return c;
}

ModelConfig ModelConfig::mini() {
    ModelConfig c;  // defaults are the mini configuration
    c.validate();
    return c;
}

ModelConfig ModelConfig::ppt_s() {
    ModelConfig c;
    c.num_layers = 12;
    c.embed_dim = 192;
    c.num_heads = 8;
    c.num_visual_tokens = 256;
    c.num_keypoints = 16;
    c.in_channels = 3;
    c.image_h = c.image_w = 256;
    c.grid_rows = c.grid_cols = 16;
    c.heatmap_h = c.heatmap_w = 64;
    c.prune_before_layers = {4, 7, 10};
    c.keep_ratio = 0.5;
    c.validate();
    return c;
}

// ---- parameters -------------------------------------------------------------

std::vector<std::pair<std::string, std::vector<int64_t>>> parameter_shapes(
    const ModelConfig& cfg) {
    const int64_t D = cfg.embed_dim;
    const int64_t hidden = cfg.mlp_hidden();
    std::vector<std::pair<std::string, std::vector<int64_t>>> out;
    out.emplace_back("patch_proj.weight", std::vector<int64_t>{cfg.patch_dim(), D});
    out.emplace_back("patch_proj.bias", std::vector<int64_t>{D});
    out.emplace_back("pos_embed", std::vector<int64_t>{cfg.num_visual_tokens, D});
    out.emplace_back("keypoint_tokens", std::vector<int64_t>{cfg.num_keypoints, D});
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string p = strf("layers.%d.", l);
        out.emplace_back(p + "ln1.gamma", std::vector<int64_t>{D});
        out.emplace_back(p + "ln1.beta", std::vector<int64_t>{D});
        out.emplace_back(p + "attn.wq", std::vector<int64_t>{D, D});
        out.emplace_back(p + "attn.bq", std::vector<int64_t>{D});
        out.emplace_back(p + "attn.wk", std::vector<int64_t>{D, D});
        out.emplace_back(p + "attn.bk", std::vector<int64_t>{D});
        out.emplace_back(p + "attn.wv", std::vector<int64_t>{D, D});
        out.emplace_back(p + "attn.bv", std::vector<int64_t>{D});
        out.emplace_back(p + "attn.wo", std::vector<int64_t>{D, D});
        out.emplace_back(p + "attn.bo", std::vector<int64_t>{D});
        out.emplace_back(p + "ln2.gamma", std::vector<int64_t>{D});
        out.emplace_back(p + "ln2.beta", std::vector<int64_t>{D});
        out.emplace_back(p + "mlp.w1", std::vector<int64_t>{D, hidden});
        out.emplace_back(p + "mlp.b1", std::vector<int64_t>{hidden});
        out.emplace_back(p + "mlp.w2", std::vector<int64_t>{hidden, D});
        out.emplace_back(p + "mlp.b2", std::vector<int64_t>{D});
    }
    out.emplace_back("head.weight",
                     std::vector<int64_t>{D, static_cast<int64_t>(cfg.heatmap_h) * cfg.heatmap_w});
    out.emplace_back("head.bias",
                     std::vector<int64_t>{static_cast<int64_t>(cfg.heatmap_h) * cfg.heatmap_w});
    return out;
}

int64_t parameter_count(const ModelConfig& cfg) {
    int64_t n = 0;
    for (const auto& [name, shape] : parameter_shapes(cfg)) n += numel_of(shape);
    return n;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("patch_proj.weight", patch_weight);
    out.emplace_back("patch_proj.bias", patch_bias);
    out.emplace_back("pos_embed", pos_embed);
    out.emplace_back("keypoint_tokens", keypoint_tokens);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string p = strf("layers.%zu.", l);
        const LayerParams& lp = layers[l];
        out.emplace_back(p + "ln1.gamma", lp.ln1_gamma);
        out.emplace_back(p + "ln1.beta", lp.ln1_beta);
        out.emplace_back(p + "attn.wq", lp.wq);
        out.emplace_back(p + "attn.bq", lp.bq);
        out.emplace_back(p + "attn.wk", lp.wk);
        out.emplace_back(p + "attn.bk", lp.bk);
        out.emplace_back(p + "attn.wv", lp.wv);
        out.emplace_back(p + "attn.bv", lp.bv);
        out.emplace_back(p + "attn.wo", lp.wo);
        out.emplace_back(p + "attn.bo", lp.bo);
        out.emplace_back(p + "ln2.gamma", lp.ln2_gamma);
        out.emplace_back(p + "ln2.beta", lp.ln2_beta);
        out.emplace_back(p + "mlp.w1", lp.mlp_w1);
        out.emplace_back(p + "mlp.b1", lp.mlp_b1);
        out.emplace_back(p + "mlp.w2", lp.mlp_w2);
        out.emplace_back(p + "mlp.b2", lp.mlp_b2);
    }
    out.emplace_back("head.weight", head_weight);
    out.emplace_back("head.bias", head_bias);
    return out;
}

static Tensor trunc_normal_tensor(std::vector<int64_t> shape, Rng& rng, double sigma) {
    Tensor t = Tensor::zeros(std::move(shape));
    double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.truncated_normal(sigma);
    t.set_requires_grad(true);
    return t;
}

static Tensor const_param(std::vector<int64_t> shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

static ModelParams assemble(const ModelConfig& cfg,
                            const std::vector<std::pair<std::string, Tensor>>& flat) {
    ModelParams p;
    size_t i = 0;
    auto next = [&](const char* suffix) -> Tensor {
        (void)suffix;
        return flat.at(i++).second;
    };
    p.patch_weight = next("patch_proj.weight");
    p.patch_bias = next("patch_proj.bias");
    p.pos_embed = next("pos_embed");
    p.keypoint_tokens = next("keypoint_tokens");
    p.layers.resize(cfg.num_layers);
    for (auto& lp : p.layers) {
        lp.ln1_gamma = next("ln1.gamma");
        lp.ln1_beta = next("ln1.beta");
        lp.wq = next("attn.wq");
        lp.bq = next("attn.bq");
        lp.wk = next("attn.wk");
        lp.bk = next("attn.bk");
        lp.wv = next("attn.wv");
        lp.bv = next("attn.bv");
        lp.wo = next("attn.wo");
        lp.bo = next("attn.bo");
        lp.ln2_gamma = next("ln2.gamma");
        lp.ln2_beta = next("ln2.beta");
        lp.mlp_w1 = next("mlp.w1");
        lp.mlp_b1 = next("mlp.b1");
        lp.mlp_w2 = next("mlp.w2");
        lp.mlp_b2 = next("mlp.b2");
    }
    p.head_weight = next("head.weight");
    p.head_bias = next("head.bias");
    return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    constexpr double sigma = 0.02;
    std::vector<std::pair<std::string, Tensor>> flat;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
        const bool is_weight = name.ends_with("weight") || name.ends_with(".wq") ||
                               name.ends_with(".wk") || name.ends_with(".wv") ||
                               name.ends_with(".wo") || name.ends_with(".w1") ||
                               name.ends_with(".w2") || name == "pos_embed" ||
                               name == "keypoint_tokens";
        const bool is_gamma = name.ends_with("gamma");
        Tensor t;
        if (is_weight)
            t = trunc_normal_tensor(shape, rng, sigma);
        else if (is_gamma)
            t = const_param(shape, 1.0);
        else
            t = const_param(shape, 0.0);
        flat.emplace_back(name, std::move(t));
    }
    return assemble(cfg, flat);
}

ModelParams ModelParams::clone() const {
    ModelParams out;
    auto src = named();
    std::vector<std::pair<std::string, Tensor>> flat;
    flat.reserve(src.size());
    for (auto& [name, t] : src) {
        Tensor c = t.detach();
        c.set_requires_grad(true);
        flat.emplace_back(name, std::move(c));
    }
    ModelConfig fake;  // only num_layers matters for assembly
    fake.num_layers = static_cast<int>(layers.size());
    return assemble(fake, flat);
}

// ---- attention record --------------------------------------------------------

const LayerAttention* AttentionRecord::find(int layer_index) const {
    for (const auto& l : layers)
        if (l.layer_index == layer_index) return &l;
    return nullptr;
}

// ---- ops ----------------------------------------------------------------------

Tensor patch_embed(const Tensor& image, const ModelConfig& cfg, const ModelParams& params) {
    if (image.ndim() != 3 || image.dim(0) != cfg.in_channels || image.dim(1) != cfg.image_h ||
        image.dim(2) != cfg.image_w)
        throw ConfigError(strf("patch_embed: image %s does not match config %dx%dx%d",
                               shape_str(image.shape()).c_str(), cfg.in_channels, cfg.image_h,
                               cfg.image_w));
    const int ph = cfg.patch_h(), pw = cfg.patch_w();
    const int64_t n_v = cfg.num_visual_tokens;
    const int64_t pd = cfg.patch_dim();
    // patch matrix is plain data; gradients never flow into the image
    Tensor patches = Tensor::zeros({n_v, pd});
    double* dst = patches.data();
    const double* src = image.data();
    const int64_t plane = static_cast<int64_t>(cfg.image_h) * cfg.image_w;
    for (int gr = 0; gr < cfg.grid_rows; ++gr)
        for (int gc = 0; gc < cfg.grid_cols; ++gc) {
            const int64_t patch = static_cast<int64_t>(gr) * cfg.grid_cols + gc;
            int64_t o = patch * pd;
            for (int c = 0; c < cfg.in_channels; ++c)
                for (int r = 0; r < ph; ++r)
                    for (int q = 0; q < pw; ++q)
                        dst[o++] = src[c * plane +
                                       static_cast<int64_t>(gr * ph + r) * cfg.image_w +
                                       (gc * pw + q)];
        }
    Tensor projected = add(matmul(patches, params.patch_weight), params.patch_bias);
    return add(projected, params.pos_embed);
}

TokenState encoder_layer(const TokenState& state, const LayerParams& layer, int num_heads,
                         AttentionRecord& record) {
    const int64_t J = state.keypoint_tokens.dim(0);
    const int64_t n_v = state.visual_tokens.dim(0);
    if (static_cast<int64_t>(state.visual_index_map.size()) != n_v)
        throw ContractError("encoder_layer: index map does not match visual tokens");
    const int64_t N = J + n_v;
    const int64_t D = state.keypoint_tokens.dim(1);
    const int64_t dh = D / num_heads;

    Tensor x = concat_rows(state.keypoint_tokens, state.visual_tokens);

    // pre-norm multi-head self-attention
    Tensor u = layer_norm(x, layer.ln1_gamma, layer.ln1_beta);
    Tensor q = add(matmul(u, layer.wq), layer.bq);
    Tensor k = add(matmul(u, layer.wk), layer.bk);
    Tensor v = add(matmul(u, layer.wv), layer.bv);

    std::vector<Tensor> head_out(num_heads);
    std::vector<Tensor> kv_slices(num_heads);  // keypoint->visual blocks
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < num_heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), 1);
        head_out[h] = matmul(attn, vh);
        kv_slices[h] = slice_cols(slice_rows(attn, 0, J), J, N);
    }
    Tensor attn_out = add(matmul(concat_cols(head_out), layer.wo), layer.bo);
    x = add(x, attn_out);

    // pre-norm MLP
    Tensor w = layer_norm(x, layer.ln2_gamma, layer.ln2_beta);
    Tensor hidden = gelu(add(matmul(w, layer.mlp_w1), layer.mlp_b1));
    Tensor mlp_out = add(matmul(hidden, layer.mlp_w2), layer.mlp_b2);
    x = add(x, mlp_out);

    // record the keypoint->visual slice produced by this layer
    LayerAttention la;
    la.layer_index = state.layer_index + 1;
    la.visual_index_map = state.visual_index_map;
    Tensor avg = kv_slices[0];
    for (int h = 1; h < num_heads; ++h) avg = add(avg, kv_slices[h]);
    la.head_avg = scale(avg, 1.0 / num_heads);
    Tensor per_head = Tensor::zeros({num_heads, J, n_v});
    for (int h = 0; h < num_heads; ++h)
        std::memcpy(per_head.data() + static_cast<int64_t>(h) * J * n_v, kv_slices[h].data(),
                    sizeof(double) * J * n_v);
    la.per_head = std::move(per_head);
    record.layers.push_back(std::move(la));

    TokenState out;
    out.keypoint_tokens = slice_rows(x, 0, J);
    out.visual_tokens = slice_rows(x, J, N);
    out.visual_index_map = state.visual_index_map;
    out.layer_index = state.layer_index + 1;
    return out;
}

HeatmapSet heatmap_head(const Tensor& keypoint_tokens, const ModelConfig& cfg,
                        const ModelParams& params) {
    const int64_t J = keypoint_tokens.dim(0);
    Tensor flat = add(matmul(keypoint_tokens, params.head_weight), params.head_bias);
    HeatmapSet out;
    out.heatmaps = reshape(flat, {J, cfg.heatmap_h, cfg.heatmap_w});
    out.decoded_joints.resize(J);
    const double* p = out.heatmaps.data();
    const int64_t hw = static_cast<int64_t>(cfg.heatmap_h) * cfg.heatmap_w;
    for (int64_t j = 0; j < J; ++j) {
        const double* ch = p + j * hw;
        int64_t best = 0;
        for (int64_t i = 1; i < hw; ++i)
            if (ch[i] > ch[best]) best = i;
        out.decoded_joints[j] = {static_cast<int>(best % cfg.heatmap_w),
                                 static_cast<int>(best / cfg.heatmap_w)};
    }
    return out;
}

ForwardResult forward(const Tensor& image, const ModelConfig& cfg, const ModelParams& params) {
    cfg.validate();
    ForwardResult res;
    TokenState state;
    state.keypoint_tokens = params.keypoint_tokens;
    state.visual_tokens = patch_embed(image, cfg, params);
    state.visual_index_map.resize(cfg.num_visual_tokens);
    for (int64_t i = 0; i < cfg.num_visual_tokens; ++i) state.visual_index_map[i] = i;
    state.layer_index = 0;

    for (int l = 1; l <= cfg.num_layers; ++l) {
        if (std::find(cfg.prune_before_layers.begin(), cfg.prune_before_layers.end(), l) !=
            cfg.prune_before_layers.end()) {
            if (res.record.layers.empty())
                throw ConfigError(strf("prune before layer %d has no attention slice", l));
            auto [pruned, decision] =
                hti_prune(state, res.record.layers.back().per_head, cfg.keep_ratio);
            state = std::move(pruned);
        }
        res.visual_tokens_per_layer.push_back(static_cast<int>(state.visual_tokens.dim(0)));
        state = encoder_layer(state, params.layers[l - 1], cfg.num_heads, res.record);
    }
    res.heatmaps = heatmap_head(state.keypoint_tokens, cfg, params);
    res.final_state = std::move(state);
    return res;
}

// ---- checkpoint I/O -------------------------------------------------------------

static constexpr char kCkptMagic[8] = {'D', 'P', 'P', 'T', 'C', 'K', '1', '\0'};

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params) {
    BinWriter w(path);
    w.bytes(kCkptMagic, 8);
    w.u32(static_cast<uint32_t>(cfg.num_layers));
    w.u32(static_cast<uint32_t>(cfg.embed_dim));
    w.u32(static_cast<uint32_t>(cfg.num_heads));
    w.u32(static_cast<uint32_t>(cfg.num_visual_tokens));
    w.u32(static_cast<uint32_t>(cfg.num_keypoints));
    w.u32(static_cast<uint32_t>(cfg.in_channels));
    w.u32(static_cast<uint32_t>(cfg.image_h));
    w.u32(static_cast<uint32_t>(cfg.image_w));
    w.u32(static_cast<uint32_t>(cfg.grid_rows));
    w.u32(static_cast<uint32_t>(cfg.grid_cols));
    w.u32(static_cast<uint32_t>(cfg.heatmap_h));
    w.u32(static_cast<uint32_t>(cfg.heatmap_w));
    w.f64(cfg.keep_ratio);
    w.u32(static_cast<uint32_t>(cfg.prune_before_layers.size()));
    for (int l : cfg.prune_before_layers) w.u32(static_cast<uint32_t>(l));
    w.u64(cfg.seed);
    auto named = params.named();
    w.u32(static_cast<uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        w.str(name);
        w.u8(static_cast<uint8_t>(t.ndim()));
        for (int64_t d : t.shape()) w.u32(static_cast<uint32_t>(d));
        w.f64s(t.data(), static_cast<size_t>(t.numel()));
    }
    w.close();
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
    BinReader r(path);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCkptMagic, 8) != 0) r.fail("bad checkpoint magic");
    ModelConfig cfg;
    cfg.num_layers = static_cast<int>(r.u32());
    cfg.embed_dim = static_cast<int>(r.u32());
    cfg.num_heads = static_cast<int>(r.u32());
    cfg.num_visual_tokens = static_cast<int>(r.u32());
    cfg.num_keypoints = static_cast<int>(r.u32());
    cfg.in_channels = static_cast<int>(r.u32());
    cfg.image_h = static_cast<int>(r.u32());
    cfg.image_w = static_cast<int>(r.u32());
    cfg.grid_rows = static_cast<int>(r.u32());
    cfg.grid_cols = static_cast<int>(r.u32());
    cfg.heatmap_h = static_cast<int>(r.u32());
    cfg.heatmap_w = static_cast<int>(r.u32());
    cfg.keep_ratio = r.f64();
    const uint32_t np = r.u32();
    if (np > 1024) r.fail("prune layer list too long");
    cfg.prune_before_layers.resize(np);
    for (auto& l : cfg.prune_before_layers) l = static_cast<int>(r.u32());
    cfg.seed = r.u64();
    cfg.validate();

    auto expected = parameter_shapes(cfg);
    const uint32_t nt = r.u32();
    if (nt != expected.size())
        r.fail(strf("checkpoint holds %u tensors, config requires %zu", nt, expected.size()));
    std::vector<std::pair<std::string, Tensor>> flat;
    flat.reserve(nt);
    for (uint32_t i = 0; i < nt; ++i) {
        std::string name = r.str(4096);
        if (name != expected[i].first)
            r.fail(strf("tensor %u named '%s', expected '%s'", i, name.c_str(),
                        expected[i].first.c_str()));
        const uint8_t ndim = r.u8();
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = static_cast<int64_t>(r.u32());
        if (shape != expected[i].second)
            r.fail(strf("tensor '%s' shape %s, expected %s", name.c_str(),
                        shape_str(shape).c_str(), shape_str(expected[i].second).c_str()));
        Tensor t = Tensor::zeros(shape);
        r.f64s(t.data(), static_cast<size_t>(t.numel()));
        t.set_requires_grad(true);
        flat.emplace_back(name, std::move(t));
    }
    if (!r.at_eof()) r.fail("trailing bytes after last tensor");
    return {cfg, assemble(cfg, flat)};
}

}  // namespace dppt
