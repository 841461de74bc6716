#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "dppt/model.hpp"
#include "dppt/prune.hpp"
#include "test_util.hpp"

using namespace dppt;
using dppt_test::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.num_layers = 2;
    c.embed_dim = 6;
    c.num_heads = 2;
    c.num_visual_tokens = 16;
    c.num_keypoints = 2;
    c.in_channels = 1;
    c.image_h = c.image_w = 8;
    c.grid_rows = c.grid_cols = 4;
    c.heatmap_h = c.heatmap_w = 4;
    c.validate();
    return c;
}

void zero_params(ModelParams& p) {
    for (auto& [name, t] : p.named())
        std::fill(t.data(), t.data() + t.numel(), 0.0);
}

Tensor random_image(const ModelConfig& cfg, Rng& rng) {
    return random_tensor({cfg.in_channels, cfg.image_h, cfg.image_w}, rng, 0.0, 1.0, false);
}

}  // namespace

TEST_CASE("patch_embed produces one row per patch") {
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg);
    Rng rng(1);
    Tensor out = patch_embed(random_image(cfg, rng), cfg, params);
    CHECK(out.shape() == std::vector<int64_t>{16, 6});
}

TEST_CASE("patch_embed on zero image with zero projection equals the position embedding") {
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg);
    std::fill(params.patch_weight.data(), params.patch_weight.data() + params.patch_weight.numel(),
              0.0);
    Tensor img = Tensor::zeros({1, 8, 8});
    Tensor out = patch_embed(img, cfg, params);
    for (int64_t i = 0; i < out.numel(); ++i)
        CHECK(out.data()[i] == params.pos_embed.data()[i]);
}

TEST_CASE("patch_embed rows are the per-patch projections, in grid order") {
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg);
    std::fill(params.pos_embed.data(), params.pos_embed.data() + params.pos_embed.numel(), 0.0);
    Rng rng(2);
    Tensor img = random_image(cfg, rng);
    Tensor out = patch_embed(img, cfg, params);

    // oracle: project each patch independently with explicit loops
    const int ph = cfg.patch_h(), pw = cfg.patch_w();
    for (int gr = 0; gr < cfg.grid_rows; ++gr)
        for (int gc = 0; gc < cfg.grid_cols; ++gc) {
            std::vector<double> patch;
            for (int r = 0; r < ph; ++r)
                for (int q = 0; q < pw; ++q)
                    patch.push_back(img.at({0, gr * ph + r, gc * pw + q}));
            const int64_t row = gr * cfg.grid_cols + gc;
            for (int64_t d = 0; d < cfg.embed_dim; ++d) {
                double acc = params.patch_bias.data()[d];
                for (size_t k = 0; k < patch.size(); ++k)
                    acc += patch[k] * params.patch_weight.at({(int64_t)k, d});
                CHECK(out.at({row, d}) == doctest::Approx(acc).epsilon(1e-12));
            }
        }

    // permuting two input patches permutes exactly those output rows
    Tensor swapped = img.detach();
    for (int r = 0; r < ph; ++r)
        for (int q = 0; q < pw; ++q) {
            double* p = swapped.data();
            const int64_t a = (0 * ph + r) * cfg.image_w + (0 * pw + q);
            const int64_t b = (1 * ph + r) * cfg.image_w + (2 * pw + q);  // patch (1,2) = row 6
            std::swap(p[a], p[b]);
        }
    Tensor out2 = patch_embed(swapped, cfg, params);
    for (int64_t d = 0; d < cfg.embed_dim; ++d) {
        CHECK(out2.at({0, d}) == out.at({6, d}));
        CHECK(out2.at({6, d}) == out.at({0, d}));
        CHECK(out2.at({3, d}) == out.at({3, d}));
    }
}

TEST_CASE("encoder_layer with zero weights passes tokens through the residuals") {
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg);
    zero_params(params);
    Rng rng(3);
    TokenState state;
    state.keypoint_tokens = random_tensor({2, 6}, rng, -1.0, 1.0, false);
    state.visual_tokens = random_tensor({5, 6}, rng, -1.0, 1.0, false);
    state.visual_index_map = {0, 3, 7, 9, 12};
    AttentionRecord rec;
    TokenState out = encoder_layer(state, params.layers[0], cfg.num_heads, rec);
    for (int64_t i = 0; i < out.keypoint_tokens.numel(); ++i)
        CHECK(out.keypoint_tokens.data()[i] ==
              doctest::Approx(state.keypoint_tokens.data()[i]).epsilon(1e-15));
    for (int64_t i = 0; i < out.visual_tokens.numel(); ++i)
        CHECK(out.visual_tokens.data()[i] ==
              doctest::Approx(state.visual_tokens.data()[i]).epsilon(1e-15));
    CHECK(out.layer_index == 1);
    CHECK(out.visual_index_map == state.visual_index_map);
}

// Independent dense attention oracle with explicit loops.
namespace {

struct OracleOut {
    std::vector<std::vector<double>> tokens;   // N x D
    std::vector<std::vector<double>> kv_attn;  // J x n_v (single head)
    std::vector<double> full_row_sums;         // N
};

OracleOut dense_layer_oracle(const std::vector<std::vector<double>>& x, int J,
                             const LayerParams& lp, int D) {
    const int N = static_cast<int>(x.size());
    auto vec_at = [](const Tensor& t, int64_t i) { return t.data()[i]; };
    auto mat_at = [](const Tensor& t, int64_t r, int64_t c) { return t.at({r, c}); };

    auto ln = [&](const std::vector<std::vector<double>>& in, const Tensor& gamma,
                  const Tensor& beta) {
        std::vector<std::vector<double>> out(in.size(), std::vector<double>(D));
        for (size_t r = 0; r < in.size(); ++r) {
            double mean = 0.0;
            for (int j = 0; j < D; ++j) mean += in[r][j];
            mean /= D;
            double var = 0.0;
            for (int j = 0; j < D; ++j) var += (in[r][j] - mean) * (in[r][j] - mean);
            var /= D;
            const double inv = 1.0 / std::sqrt(var + 1e-6);
            for (int j = 0; j < D; ++j)
                out[r][j] = vec_at(gamma, j) * (in[r][j] - mean) * inv + vec_at(beta, j);
        }
        return out;
    };
    auto linear = [&](const std::vector<std::vector<double>>& in, const Tensor& w,
                      const Tensor& b) {
        const int64_t outdim = w.dim(1);
        std::vector<std::vector<double>> out(in.size(), std::vector<double>(outdim));
        for (size_t r = 0; r < in.size(); ++r)
            for (int64_t c = 0; c < outdim; ++c) {
                double acc = vec_at(b, c);
                for (int64_t k = 0; k < w.dim(0); ++k) acc += in[r][k] * mat_at(w, k, c);
                out[r][c] = acc;
            }
        return out;
    };

    OracleOut res;
    auto u = ln(x, lp.ln1_gamma, lp.ln1_beta);
    auto q = linear(u, lp.wq, lp.bq);
    auto k = linear(u, lp.wk, lp.bk);
    auto v = linear(u, lp.wv, lp.bv);
    std::vector<std::vector<double>> attn(N, std::vector<double>(N));
    const double invs = 1.0 / std::sqrt(static_cast<double>(D));  // single head: d_h = D
    for (int i = 0; i < N; ++i) {
        double mx = -1e300;
        for (int j = 0; j < N; ++j) {
            double s = 0.0;
            for (int d = 0; d < D; ++d) s += q[i][d] * k[j][d];
            attn[i][j] = s * invs;
            mx = std::max(mx, attn[i][j]);
        }
        double denom = 0.0;
        for (int j = 0; j < N; ++j) {
            attn[i][j] = std::exp(attn[i][j] - mx);
            denom += attn[i][j];
        }
        double row_sum = 0.0;
        for (int j = 0; j < N; ++j) {
            attn[i][j] /= denom;
            row_sum += attn[i][j];
        }
        res.full_row_sums.push_back(row_sum);
    }
    for (int i = 0; i < J; ++i) {
        std::vector<double> row;
        for (int j = J; j < N; ++j) row.push_back(attn[i][j]);
        res.kv_attn.push_back(row);
    }
    std::vector<std::vector<double>> ctx(N, std::vector<double>(D, 0.0));
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            for (int d = 0; d < D; ++d) ctx[i][d] += attn[i][j] * v[j][d];
    auto proj = linear(ctx, lp.wo, lp.bo);
    std::vector<std::vector<double>> x1(N, std::vector<double>(D));
    for (int i = 0; i < N; ++i)
        for (int d = 0; d < D; ++d) x1[i][d] = x[i][d] + proj[i][d];

    auto w2in = ln(x1, lp.ln2_gamma, lp.ln2_beta);
    auto h = linear(w2in, lp.mlp_w1, lp.mlp_b1);
    for (auto& row : h)
        for (auto& val : row) val = 0.5 * val * (1.0 + std::erf(val * M_SQRT1_2));
    auto m = linear(h, lp.mlp_w2, lp.mlp_b2);
    res.tokens.resize(N, std::vector<double>(D));
    for (int i = 0; i < N; ++i)
        for (int d = 0; d < D; ++d) res.tokens[i][d] = x1[i][d] + m[i][d];
    return res;
}

}  // namespace

TEST_CASE("encoder_layer matches the loop-based dense attention oracle") {
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.embed_dim = 4;
    cfg.num_heads = 1;
    cfg.num_visual_tokens = 4;
    cfg.num_keypoints = 2;
    cfg.image_h = cfg.image_w = 4;
    cfg.grid_rows = cfg.grid_cols = 2;
    cfg.heatmap_h = cfg.heatmap_w = 2;
    cfg.seed = 5;
    cfg.validate();
    ModelParams params = ModelParams::init(cfg);

    Rng rng(6);
    const int J = 2, n_v = 3, D = 4;
    TokenState state;
    state.keypoint_tokens = random_tensor({J, D}, rng, -1.0, 1.0, false);
    state.visual_tokens = random_tensor({n_v, D}, rng, -1.0, 1.0, false);
    state.visual_index_map = {0, 1, 2};

    std::vector<std::vector<double>> x;
    for (int i = 0; i < J; ++i) {
        std::vector<double> row(D);
        for (int d = 0; d < D; ++d) row[d] = state.keypoint_tokens.at({i, d});
        x.push_back(row);
    }
    for (int i = 0; i < n_v; ++i) {
        std::vector<double> row(D);
        for (int d = 0; d < D; ++d) row[d] = state.visual_tokens.at({i, d});
        x.push_back(row);
    }
    OracleOut oracle = dense_layer_oracle(x, J, params.layers[0], D);

    AttentionRecord rec;
    TokenState out = encoder_layer(state, params.layers[0], cfg.num_heads, rec);

    for (double s : oracle.full_row_sums) CHECK(std::fabs(s - 1.0) < 1e-12);
    for (int i = 0; i < J; ++i)
        for (int d = 0; d < D; ++d)
            CHECK(out.keypoint_tokens.at({i, d}) ==
                  doctest::Approx(oracle.tokens[i][d]).epsilon(1e-9));
    for (int i = 0; i < n_v; ++i)
        for (int d = 0; d < D; ++d)
            CHECK(out.visual_tokens.at({i, d}) ==
                  doctest::Approx(oracle.tokens[J + i][d]).epsilon(1e-9));
    REQUIRE(rec.layers.size() == 1);
    const LayerAttention& la = rec.layers[0];
    CHECK(la.layer_index == 1);
    for (int i = 0; i < J; ++i)
        for (int j = 0; j < n_v; ++j) {
            CHECK(la.head_avg.at({i, j}) == doctest::Approx(oracle.kv_attn[i][j]).epsilon(1e-9));
            CHECK(la.per_head.at({0, i, j}) ==
                  doctest::Approx(oracle.kv_attn[i][j]).epsilon(1e-9));
        }
    // keypoint->visual mass never exceeds the softmax total
    for (int i = 0; i < J; ++i) {
        double mass = 0.0;
        for (int j = 0; j < n_v; ++j) mass += la.head_avg.at({i, j});
        CHECK(mass <= 1.0 + 1e-12);
    }
}

TEST_CASE("heatmap_head bias propagates and argmax decodes first maximum") {
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg);
    zero_params(params);
    for (int64_t i = 0; i < params.head_bias.numel(); ++i)
        params.head_bias.data()[i] = 0.01 * static_cast<double>(i);
    params.head_bias.data()[2 * cfg.heatmap_w + 3] = 9.0;  // unique max at row 2, col 3

    Tensor kpt = Tensor::zeros({cfg.num_keypoints, cfg.embed_dim});
    HeatmapSet hs = heatmap_head(kpt, cfg, params);
    CHECK(hs.heatmaps.shape() ==
          std::vector<int64_t>{cfg.num_keypoints, cfg.heatmap_h, cfg.heatmap_w});
    for (int64_t j = 0; j < cfg.num_keypoints; ++j) {
        for (int64_t r = 0; r < cfg.heatmap_h; ++r)
            for (int64_t c = 0; c < cfg.heatmap_w; ++c)
                CHECK(hs.heatmaps.at({j, r, c}) ==
                      params.head_bias.data()[r * cfg.heatmap_w + c]);
        CHECK(hs.decoded_joints[j] == std::pair<int, int>{3, 2});
    }

    // constant channel decodes to the first cell
    zero_params(params);
    HeatmapSet flat = heatmap_head(kpt, cfg, params);
    CHECK(flat.decoded_joints[0] == std::pair<int, int>{0, 0});
}

TEST_CASE("ppt-s retention schedule and forward shapes") {
    ModelConfig cfg = ModelConfig::ppt_s();  // r = 0.5, prune before {4,7,10}
    auto schedule = retention_schedule(cfg);
    const std::vector<int> expect = {256, 256, 256, 128, 128, 128, 64, 64, 64, 32, 32, 32};
    CHECK(schedule == expect);

    Rng rng(7);
    Tensor img = random_tensor({3, 256, 256}, rng, 0.0, 1.0, false);
    NoGradGuard guard;
    ForwardResult res = forward(img, cfg, ModelParams::init(cfg));
    CHECK(res.final_state.visual_tokens.dim(0) == 32);
    CHECK(res.final_state.keypoint_tokens.dim(0) == 16);  // sequence length 48
    CHECK(res.visual_tokens_per_layer == expect);
}

TEST_CASE("dense config keeps every visual token at every layer") {
    ModelConfig cfg = ModelConfig::mini();
    auto schedule = retention_schedule(cfg);
    for (int n : schedule) CHECK(n == cfg.num_visual_tokens);
}

TEST_CASE("keep-all pruning is bit-identical to the dense path") {
    ModelConfig dense = ModelConfig::mini();
    dense.seed = 9;
    ModelConfig pruned = dense.with_pruning(1.0, {3, 5});
    ModelParams params = ModelParams::init(dense);
    Rng rng(10);
    NoGradGuard guard;
    for (int trial = 0; trial < 5; ++trial) {
        Tensor img = random_image(dense, rng);
        ForwardResult a = forward(img, dense, params);
        ForwardResult b = forward(img, pruned, params);
        REQUIRE(a.heatmaps.heatmaps.numel() == b.heatmaps.heatmaps.numel());
        for (int64_t i = 0; i < a.heatmaps.heatmaps.numel(); ++i)
            CHECK(a.heatmaps.heatmaps.data()[i] == b.heatmaps.heatmaps.data()[i]);
        for (int64_t i = 0; i < a.final_state.visual_tokens.numel(); ++i)
            CHECK(a.final_state.visual_tokens.data()[i] ==
                  b.final_state.visual_tokens.data()[i]);
    }
}

TEST_CASE("parameter count is independent of pruning configuration") {
    ModelConfig dense = ModelConfig::mini();
    ModelConfig pruned = dense.with_pruning(0.5, {3, 5});
    CHECK(parameter_count(dense) == parameter_count(pruned));
    int64_t actual = 0;
    for (auto& [name, t] : ModelParams::init(pruned).named()) actual += t.numel();
    CHECK(actual == parameter_count(dense));
}

TEST_CASE("token counts never increase along the layers") {
    ModelConfig cfg = ModelConfig::mini().with_pruning(0.37, {2, 4, 6});
    cfg.seed = 11;
    ModelParams params = ModelParams::init(cfg);
    Rng rng(12);
    NoGradGuard guard;
    ForwardResult res = forward(random_image(cfg, rng), cfg, params);
    int prev = cfg.num_visual_tokens;
    for (size_t l = 0; l < res.record.layers.size(); ++l) {
        const int n = static_cast<int>(res.record.layers[l].head_avg.dim(1));
        CHECK(n <= prev);
        if (static_cast<int>(l) + 1 < 2) CHECK(n == cfg.num_visual_tokens);
        CHECK(res.record.layers[l].per_head.dim(2) == n);
        CHECK(static_cast<int>(res.record.layers[l].visual_index_map.size()) == n);
        CHECK(res.visual_tokens_per_layer[l] == n);
        prev = n;
    }
}

TEST_CASE("gradient reaches every parameter at initialization") {
    ModelConfig cfg = ModelConfig::mini().with_pruning(0.5, {3, 5});
    cfg.seed = 13;
    ModelParams params = ModelParams::init(cfg);
    Rng rng(14);
    Tensor img = random_image(cfg, rng);
    Tensor target = random_tensor({cfg.num_keypoints, cfg.heatmap_h, cfg.heatmap_w}, rng, 0.0,
                                  1.0, false);
    ForwardResult res = forward(img, cfg, params);
    backward(mse(res.heatmaps.heatmaps, target));
    for (auto& [name, t] : params.named()) {
        REQUIRE_MESSAGE(t.grad() != nullptr, name);
        double norm = 0.0;
        for (double g : *t.grad()) norm += g * g;
        CHECK_MESSAGE(norm > 0.0, name);
    }
}

TEST_CASE("pruning before layer 1 is rejected") {
    ModelConfig cfg = ModelConfig::mini();
    CHECK_THROWS_AS(cfg.with_pruning(0.5, {1, 3}), ConfigError);
}

TEST_CASE("checkpoint round-trips and validates") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "dppt_test_ckpt";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();

    ModelConfig cfg = ModelConfig::mini().with_pruning(0.5, {3, 5});
    cfg.seed = 21;
    ModelParams params = ModelParams::init(cfg);
    save_checkpoint(path, cfg, params);

    auto [cfg2, params2] = load_checkpoint(path);
    CHECK(cfg2.num_layers == cfg.num_layers);
    CHECK(cfg2.keep_ratio == cfg.keep_ratio);
    CHECK(cfg2.prune_before_layers == cfg.prune_before_layers);
    CHECK(cfg2.seed == cfg.seed);
    auto a = params.named(), b = params2.named();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        REQUIRE(a[i].second.numel() == b[i].second.numel());
        for (int64_t j = 0; j < a[i].second.numel(); ++j)
            CHECK(a[i].second.data()[j] == b[i].second.data()[j]);
        CHECK(b[i].second.requires_grad());
    }

    // corrupt the magic
    {
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fputc('X', f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    // truncated file
    save_checkpoint(path, cfg, params);
    fs::resize_file(path, fs::file_size(path) - 17);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    fs::remove_all(dir);
}
