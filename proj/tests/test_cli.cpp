#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dppt/data.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

#ifndef DPPT_CLI_PATH
#define DPPT_CLI_PATH "dppt"
#endif

namespace {

fs::path work_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "dppt_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

int run(const std::string& args) {
    const std::string cmd = std::string(DPPT_CLI_PATH) + " " + args + " >> " +
                            (work_root() / "cli.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), p.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_small_config(const fs::path& p) {
    std::ofstream out(p);
    out << "# small architecture for integration tests\n"
        << "model.layers = 2\n"
        << "model.dim = 16\n"
        << "model.heads = 2\n"
        << "model.visual_tokens = 16\n"
        << "model.grid_rows = 4\n"
        << "model.grid_cols = 4\n"
        << "train.epochs = 1\n"
        << "train.batch_size = 4\n"
        << "train.decay_epochs =\n";
}

const fs::path& data_dir() {
    static fs::path dir = [] {
        fs::path d = work_root() / "data";
        REQUIRE(run("gen-data --train 12 --val 4 --test 4 --seed 9 --out " + d.string()) == 0);
        return d;
    }();
    return dir;
}

const fs::path& teacher_dir() {
    static fs::path dir = [] {
        fs::path d = work_root() / "teacher";
        write_small_config(work_root() / "small.cfg");
        REQUIRE(run("train-teacher --data " + data_dir().string() + " --config " +
                    (work_root() / "small.cfg").string() + " --out " + d.string() +
                    " --seed 1") == 0);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_CASE("gen-data writes splits that match the declared layout") {
    const fs::path d = data_dir();
    CHECK(fs::exists(d / "train.dppt"));
    CHECK(fs::exists(d / "val.dppt"));
    CHECK(fs::exists(d / "test.dppt"));

    dppt::SkeletonSpec spec = dppt::SkeletonSpec::mini();
    dppt::RenderSpec render;
    CHECK(fs::file_size(d / "train.dppt") ==
          dppt::split_header_bytes(spec) + 12 * dppt::split_record_bytes(spec, render));
    CHECK(fs::file_size(d / "val.dppt") ==
          dppt::split_header_bytes(spec) + 4 * dppt::split_record_bytes(spec, render));

    const json manifest = json::parse(slurp(d / "manifest.json"));
    CHECK(manifest.at("command") == "gen-data");
    CHECK(manifest.at("status") == "completed");
    CHECK(manifest.at("seed") == 9);
    CHECK_FALSE(manifest.at("end_time").is_null());
}

TEST_CASE("gen-data refuses to overwrite without --force and reproduces bytes") {
    const fs::path d = data_dir();
    CHECK(run("gen-data --train 12 --val 4 --test 4 --seed 9 --out " + d.string()) == 2);

    const std::string before = slurp(d / "train.dppt");
    CHECK(run("gen-data --train 12 --val 4 --test 4 --seed 9 --out " + d.string() +
              " --force") == 0);
    CHECK(slurp(d / "train.dppt") == before);
}

TEST_CASE("invalid flag combinations fail before any file is written") {
    const fs::path out = work_root() / "never";
    CHECK(run("gen-data --train 0 --out " + out.string()) == 2);
    CHECK_FALSE(fs::exists(out));
    CHECK(run("flops --out " + out.string()) == 2);  // neither --config nor --ckpt
    CHECK_FALSE(fs::exists(out));
    CHECK(run("distill --data x --out " + out.string()) == 2);  // missing --teacher
    CHECK_FALSE(fs::exists(out));
    CHECK(run("bogus-subcommand") == 2);
}

TEST_CASE("train-teacher emits checkpoints, logs, manifest and final PCKh") {
    const fs::path d = teacher_dir();
    CHECK(fs::exists(d / "best.ckpt"));
    CHECK(fs::exists(d / "final.ckpt"));
    CHECK(fs::exists(d / "metrics.tsv"));
    CHECK(fs::exists(d / "val_metrics.tsv"));
    const json manifest = json::parse(slurp(d / "manifest.json"));
    CHECK(manifest.at("status") == "completed");
    CHECK(manifest.at("config").at("model").at("dim") == 16);
    CHECK(manifest.at("config").at("train").at("epochs") == 1);
}

TEST_CASE("teacher training is seed-reproducible through the CLI") {
    const fs::path again = work_root() / "teacher_again";
    CHECK(run("train-teacher --data " + data_dir().string() + " --config " +
              (work_root() / "small.cfg").string() + " --out " + again.string() +
              " --seed 1") == 0);
    CHECK(slurp(again / "final.ckpt") == slurp(teacher_dir() / "final.ckpt"));
    CHECK(slurp(again / "metrics.tsv") == slurp(teacher_dir() / "metrics.tsv"));
}

TEST_CASE("distill exercises every mode and rejects a pruned teacher") {
    const fs::path ckpt = teacher_dir() / "final.ckpt";
    const fs::path s1 = work_root() / "student_gt";
    CHECK(run("distill --teacher " + ckpt.string() + " --mode gt --keep-ratio 0.5 " +
              "--prune-layers 2 --data " + data_dir().string() + " --out " + s1.string() +
              " --seed 3 --epochs 1 --batch-size 4") == 0);
    const json manifest = json::parse(slurp(s1 / "manifest.json"));
    CHECK(manifest.at("config").at("train").at("lambda_hm") == 1.0);  // base config echo
    CHECK(manifest.at("config").at("train").at("mode") == "student-gt");
    CHECK(manifest.at("config").at("model").at("keep_ratio") == 0.5);

    const fs::path s2 = work_root() / "student_full";
    CHECK(run("distill --teacher " + ckpt.string() + " --mode gt+hm+attn --keep-ratio 0.5 " +
              "--prune-layers 2 --data " + data_dir().string() + " --out " + s2.string() +
              " --seed 3 --epochs 1 --batch-size 4") == 0);

    // a pruned checkpoint cannot serve as the teacher
    const fs::path s3 = work_root() / "student_bad";
    CHECK(run("distill --teacher " + (s2 / "final.ckpt").string() +
              " --mode gt+hm+attn --keep-ratio 0.5 --data " + data_dir().string() +
              " --out " + s3.string() + " --epochs 1") == 2);

    // unknown mode is a config error
    CHECK(run("distill --teacher " + ckpt.string() + " --mode nonsense --data " +
              data_dir().string() + " --out " + s3.string()) == 2);
}

TEST_CASE("eval prints and stores a PCK report") {
    const fs::path out = work_root() / "eval";
    CHECK(run("eval --ckpt " + (teacher_dir() / "final.ckpt").string() + " --data " +
              data_dir().string() + " --split test --out " + out.string()) == 0);
    const json report = json::parse(slurp(out / "pck_report.json"));
    CHECK(report.at("alpha") == 0.5);
    CHECK(report.at("sample_count") == 4);
    CHECK(report.at("mean_pck").is_number());
    CHECK(report.at("per_joint").size() == 5);
}

TEST_CASE("corrupt data files map to the data-format exit code") {
    const fs::path broken = work_root() / "broken";
    fs::create_directories(broken);
    fs::copy_file(data_dir() / "test.dppt", broken / "test.dppt",
                  fs::copy_options::overwrite_existing);
    {
        std::ofstream f(broken / "test.dppt", std::ios::binary | std::ios::in);
        f.seekp(0);
        f.put('X');
    }
    const fs::path out = work_root() / "eval_broken";
    CHECK(run("eval --ckpt " + (teacher_dir() / "final.ckpt").string() + " --data " +
              broken.string() + " --split test --out " + out.string()) == 3);
}

TEST_CASE("flops reports from a config file and sweeps keep ratios") {
    const fs::path cfg = work_root() / "flops.cfg";
    {
        std::ofstream out(cfg);
        out << "model.layers = 12\nmodel.dim = 192\nmodel.heads = 8\n"
            << "model.visual_tokens = 256\nmodel.keypoints = 16\nmodel.channels = 3\n"
            << "model.image_h = 256\nmodel.image_w = 256\n"
            << "model.grid_rows = 16\nmodel.grid_cols = 16\n"
            << "model.heatmap_h = 64\nmodel.heatmap_w = 64\n"
            << "model.keep_ratio = 0.5\nmodel.prune_layers = 4,7,10\n";
    }
    const fs::path out = work_root() / "flops";
    CHECK(run("flops --config " + cfg.string() + " --sweep-r 0.5:1.0:0.1 --out " +
              out.string()) == 0);
    const json sweep = json::parse(slurp(out / "flops.json"));
    REQUIRE(sweep.is_array());
    CHECK(sweep.size() == 6);
    int64_t prev = 0;
    for (const auto& entry : sweep) {
        const int64_t total = entry.at("total").get<int64_t>();
        CHECK(total >= prev);
        prev = total;
    }
    CHECK(sweep.back().at("encoder_ratio") == 1.0);

    // --ckpt and --config are mutually exclusive
    CHECK(run("flops --config " + cfg.string() + " --ckpt " +
              (teacher_dir() / "final.ckpt").string() + " --out " + out.string()) == 2);
}

TEST_CASE("export writes the image, heatmaps and attention grids") {
    const fs::path out = work_root() / "export";
    CHECK(run("export --ckpt " + (teacher_dir() / "final.ckpt").string() + " --data " +
              data_dir().string() + " --split test --sample-index 1 --out " +
              out.string()) == 0);
    CHECK(fs::exists(out / "image.png"));
    for (int j = 0; j < 5; ++j) {
        CHECK(fs::exists(out / ("heatmap_pred_j" + std::to_string(j) + ".png")));
        CHECK(fs::exists(out / ("heatmap_target_j" + std::to_string(j) + ".png")));
    }
    for (int l = 1; l <= 2; ++l) {
        CHECK(fs::exists(out / ("attn_l" + std::to_string(l) + "_j0.png")));
        CHECK(fs::exists(out / ("attn_l" + std::to_string(l) + "_mean.png")));
    }
    // PNG signature
    const std::string png = slurp(out / "image.png");
    REQUIRE(png.size() > 8);
    CHECK(static_cast<unsigned char>(png[0]) == 0x89);
    CHECK(png.substr(1, 3) == "PNG");

    CHECK(run("export --ckpt " + (teacher_dir() / "final.ckpt").string() + " --data " +
              data_dir().string() + " --split test --sample-index 99 --out " +
              (work_root() / "export_bad").string()) == 2);
}

TEST_CASE("export without a checkpoint dumps the raw sample") {
    const fs::path out = work_root() / "export_raw";
    CHECK(run("export --data " + data_dir().string() +
              " --split val --sample-index 0 --out " + out.string()) == 0);
    CHECK(fs::exists(out / "image.png"));
    CHECK(fs::exists(out / "heatmap_target_j4.png"));
    CHECK_FALSE(fs::exists(out / "heatmap_pred_j0.png"));
}
