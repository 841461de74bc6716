#include <doctest.h>

#include <cmath>

#include "dppt/eval.hpp"
#include "test_util.hpp"

using namespace dppt;
using dppt_test::random_tensor;

TEST_CASE("decode examples") {
    Tensor hm = Tensor::zeros({1, 8, 8});
    hm.data()[3 * 8 + 5] = 1.0;  // row 3, col 5
    auto joints = decode(hm, 16, 16);  // scale 2
    CHECK(joints[0].first == 10.0);
    CHECK(joints[0].second == 6.0);

    Tensor flat = Tensor::full({1, 8, 8}, 0.25);
    auto tie = decode(flat, 16, 16);
    CHECK(tie[0].first == 0.0);
    CHECK(tie[0].second == 0.0);
}

TEST_CASE("decode of a rendered target recovers the nearest cell") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const double x = rng.uniform(0.0, 31.0);
        const double y = rng.uniform(0.0, 31.0);
        Tensor t = render_target({{x, y}}, {true}, 16, 16, 1.0, 32, 32);
        auto joints = decode(t, 32, 32);
        const double cx = std::clamp<double>(std::lround(x * 0.5), 0, 15);
        const double cy = std::clamp<double>(std::lround(y * 0.5), 0, 15);
        CHECK(joints[0].first == cx * 2.0);
        CHECK(joints[0].second == cy * 2.0);
    }
}

namespace {

PoseSample sample_with_joints(std::vector<std::pair<double, double>> joints,
                              double head_size) {
    PoseSample s;
    s.joints = std::move(joints);
    s.visibility.assign(s.joints.size(), true);
    s.head_size = head_size;
    return s;
}

}  // namespace

TEST_CASE("pckh counts joints within the inclusive threshold") {
    PoseSample s = sample_with_joints({{4, 4}, {10, 10}, {20, 20}}, 4.0);
    // exact predictions score 100
    PckReport perfect = pckh({s.joints}, {s}, 0.5);
    CHECK(perfect.mean_pck == 100.0);

    // distance exactly alpha * head_size counts as correct
    PckReport boundary =
        pckh({{{4 + 2.0, 4}, {10, 10 + 2.0}, {20 - 2.0, 20}}}, {s}, 0.5);
    CHECK(boundary.mean_pck == 100.0);

    // distances {0.3, 0.6, 1.2} * head_size: one of three within 0.5
    PckReport mixed =
        pckh({{{4 + 0.3 * 4, 4}, {10 + 0.6 * 4, 10}, {20 + 1.2 * 4, 20}}}, {s}, 0.5);
    CHECK(mixed.mean_pck == doctest::Approx(100.0 / 3).epsilon(1e-12));
    CHECK(mixed.mean_pck == doctest::Approx(33.33).epsilon(1e-3));
    CHECK(mixed.per_joint_rate[0] == 1.0);
    CHECK(mixed.per_joint_rate[1] == 0.0);
    CHECK(mixed.per_joint_rate[2] == 0.0);
}

TEST_CASE("pckh excludes invisible joints from both sides") {
    PoseSample s = sample_with_joints({{4, 4}, {10, 10}}, 4.0);
    s.visibility = {true, false};
    PckReport rep = pckh({{{4, 4}, {100, 100}}}, {s}, 0.5);
    CHECK(rep.mean_pck == 100.0);
    CHECK(rep.per_joint_total[0] == 1);
    CHECK(rep.per_joint_total[1] == 0);
}

TEST_CASE("pckh is scale-equivariant") {
    Rng rng(2);
    std::vector<PoseSample> samples;
    std::vector<std::vector<std::pair<double, double>>> preds;
    for (int i = 0; i < 20; ++i) {
        PoseSample s = sample_with_joints(
            {{rng.uniform(0, 30), rng.uniform(0, 30)}, {rng.uniform(0, 30), rng.uniform(0, 30)}},
            rng.uniform(2.0, 6.0));
        preds.push_back({{s.joints[0].first + rng.uniform(-3, 3),
                          s.joints[0].second + rng.uniform(-3, 3)},
                         {s.joints[1].first + rng.uniform(-3, 3),
                          s.joints[1].second + rng.uniform(-3, 3)}});
        samples.push_back(s);
    }
    PckReport base = pckh(preds, samples, 0.5);

    const double c = 3.7;
    std::vector<PoseSample> scaled_samples = samples;
    auto scaled_preds = preds;
    for (auto& s : scaled_samples) {
        for (auto& [x, y] : s.joints) {
            x *= c;
            y *= c;
        }
        s.head_size *= c;
    }
    for (auto& p : scaled_preds)
        for (auto& [x, y] : p) {
            x *= c;
            y *= c;
        }
    PckReport scaled = pckh(scaled_preds, scaled_samples, 0.5);
    CHECK(scaled.mean_pck == doctest::Approx(base.mean_pck).epsilon(1e-12));
    for (size_t j = 0; j < base.per_joint_rate.size(); ++j)
        CHECK(scaled.per_joint_rate[j] == base.per_joint_rate[j]);
}

TEST_CASE("flops: dense layer attention term from direct arithmetic") {
    ModelConfig cfg = ModelConfig::ppt_s().dense();
    FlopsReport rep = flops(cfg);
    // oracle: 4 n D^2 + 2 n^2 D with n = 272, D = 192
    const int64_t n = 272, D = 192;
    const int64_t expect = 4 * n * D * D + 2 * n * n * D;
    CHECK(expect == 68517888);
    for (const auto& l : rep.layers) {
        CHECK(l.tokens == 272);
        CHECK(l.attention == expect);
        CHECK(l.mlp == 2 * n * D * (3 * D) * 2);
    }
    CHECK(rep.ratio == 1.0);
    CHECK(rep.encoder_ratio == 1.0);
}

TEST_CASE("flops: keep-all ratio is exactly one and sweeps are monotone") {
    ModelConfig cfg = ModelConfig::ppt_s();
    cfg.keep_ratio = 1.0;
    CHECK(flops(cfg).ratio == 1.0);

    auto sweep = flops_sweep(ModelConfig::ppt_s(), 0.5, 1.0, 0.05);
    REQUIRE(sweep.size() == 11);
    int64_t prev_total = 0;
    for (const auto& rep : sweep) {
        CHECK(rep.total >= prev_total);
        CHECK(rep.total <= rep.dense_total);
        prev_total = rep.total;
    }
    CHECK(sweep.back().total == sweep.back().dense_total);
}

TEST_CASE("flops sweep reaches the 24% encoder reduction band") {
    auto sweep = flops_sweep(ModelConfig::ppt_s(), 0.5, 1.0, 0.05);
    bool found = false;
    for (const auto& rep : sweep) {
        const double reduction = 1.0 - rep.encoder_ratio;
        if (reduction >= 0.19 && reduction <= 0.29) found = true;
    }
    CHECK(found);
}

TEST_CASE("dense totals agree between the pruned code path and the dense formula") {
    ModelConfig pruned = ModelConfig::ppt_s();
    ModelConfig dense = pruned.dense();
    FlopsReport a = flops(pruned);
    FlopsReport b = flops(dense);
    CHECK(a.dense_encoder_total == b.encoder_total);
    CHECK(a.dense_total == b.total);
    // mini config: same identity
    FlopsReport c = flops(ModelConfig::mini().with_pruning(0.5, {3, 5}));
    FlopsReport d = flops(ModelConfig::mini());
    CHECK(c.dense_encoder_total == d.encoder_total);
}

TEST_CASE("report rendering mentions the counting convention") {
    FlopsReport rep = flops(ModelConfig::mini());
    CHECK(render_flops_table(rep).find("multiply-accumulate = 2 FLOPs") != std::string::npos);
    CHECK(flops_report_json(rep).find("encoder_total") != std::string::npos);
    auto sweep = flops_sweep(ModelConfig::mini().with_pruning(0.5, {3, 5}), 0.5, 1.0, 0.1);
    CHECK(render_sweep_table(sweep).find("enc saving") != std::string::npos);

    PckReport pck;
    pck.alpha = 0.5;
    pck.per_joint_rate = {1.0, 0.5};
    pck.per_joint_total = {10, 10};
    pck.mean_pck = 75.0;
    pck.sample_count = 10;
    const std::string table = render_pck_table(pck, {"head", "neck"});
    CHECK(table.find("head") != std::string::npos);
    CHECK(table.find("75.00") != std::string::npos);
    CHECK(pck_report_json(pck, {"head", "neck"}).find("mean_pck") != std::string::npos);
}

TEST_CASE("evaluate_split runs a model over samples") {
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.num_visual_tokens = 16;
    cfg.num_keypoints = 5;
    cfg.image_h = cfg.image_w = 32;
    cfg.grid_rows = cfg.grid_cols = 4;
    cfg.heatmap_h = cfg.heatmap_w = 16;
    cfg.seed = 4;
    cfg.validate();
    ModelParams params = ModelParams::init(cfg);
    DatasetSplit split = generate_split(SkeletonSpec::mini(), RenderSpec{}, 4, 11, 0);
    PckReport rep = evaluate_split(cfg, params, split.samples);
    CHECK(rep.sample_count == 4);
    CHECK(rep.mean_pck >= 0.0);
    CHECK(rep.mean_pck <= 100.0);
}
