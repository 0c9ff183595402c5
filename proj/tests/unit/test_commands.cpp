#include "doctest.h"

#include "resmatch/commands.hpp"
#include "resmatch/config.hpp"
#include "resmatch/errors.hpp"
#include "resmatch/io.hpp"
#include "unit/test_support.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace resmatch;
namespace fs = std::filesystem;

namespace {

nlohmann::json toy_config() {
    return nlohmann::json::parse(R"({
      "seed": 5,
      "datasets": {
        "train": {"n_pairs": 8, "patch": 32, "seed": 1},
        "test": {"n_pairs": 3, "patch": 32, "seed": 2}
      },
      "arch": {"base_channels": 8, "n_res_blocks": 1, "time_embed_dim": 16},
      "train": {"dataset": "train", "validation": "test", "max_steps": 20, "patch": 32,
                "lr": 2e-3, "val_every": 10},
      "infer": {"input": "test"},
      "sample": {"input": "test", "K": 4},
      "eval": {"ground_truth": "test", "ms_ssim_scales": 2},
      "calibrate": {"ground_truth": "test"}
    })");
}

std::string run_cli(const std::string& args, int& code) {
    const std::string out = (fs::temp_directory_path() / "resmatch_cli_stderr.txt").string();
    const std::string cmd = std::string(RESMATCH_CLI_PATH) + " " + args + " >/dev/null 2>" + out;
    const int status = std::system(cmd.c_str());
    code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream f(out);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream(p) << s;
}

} // namespace

TEST_CASE("full pipeline on an 8-pair toy set emits every artifact") {
    const fs::path dir = testing::scratch_dir("pipeline");
    const auto cfg = config::parse_config(toy_config(), dir);
    std::ostringstream log;
    commands::cmd_gen_data(cfg, log);
    commands::cmd_train(cfg, log);
    commands::cmd_infer(cfg, log);
    commands::cmd_sample(cfg, log);
    const auto report = commands::cmd_eval(cfg, log);
    const auto fit = commands::cmd_calibrate(cfg, log);

    for (const char* p : {"train/manifest.json", "test/pairs/0002_hr.f32img", "run/final.resm",
                          "run/step_000010.resm", "run/train_log.csv", "predictions/0000.f32img",
                          "ensembles/0001/mmse.f32img", "ensembles/0001/pixel_std.f32img",
                          "ensembles/0001/members/003.f32img", "ensembles/0001/ensemble.json",
                          "metrics.csv", "calibration.csv"}) {
        CAPTURE(p);
        CHECK(fs::exists(dir / p));
    }
    CHECK(report.rows.size() == 3);
    CHECK(fit.points.size() == 3);

    SUBCASE("infer is idempotent and equals ensemble member 0") {
        const std::string first = read_file(dir / "predictions/0000.f32img");
        commands::cmd_infer(cfg, log);
        CHECK(read_file(dir / "predictions/0000.f32img") == first);
        CHECK(read_file(dir / "ensembles/0000/members/000.f32img") == first);
    }
    SUBCASE("sampling does not depend on the thread count") {
        auto threaded = cfg;
        config::apply_overrides(threaded, std::nullopt, 3);
        threaded.sample.out = dir / "ensembles_mt";
        commands::cmd_sample(threaded, log);
        CHECK(read_file(dir / "ensembles_mt/0002/mmse.f32img") == read_file(dir / "ensembles/0002/mmse.f32img"));
    }
    SUBCASE("inputs are not modified") {
        const std::string lr = read_file(dir / "test/pairs/0000_lr.f32img");
        commands::cmd_sample(cfg, log);
        CHECK(read_file(dir / "test/pairs/0000_lr.f32img") == lr);
    }
    SUBCASE("eval with mismatched sizes fails and writes no CSV") {
        fs::create_directories(dir / "bad_pred");
        for (const char* id : {"0000", "0001", "0002"}) {
            write_f32img(dir / "bad_pred" / (std::string(id) + ".f32img"), Image(31, 32));
        }
        auto bad = cfg;
        bad.eval.predictions = dir / "bad_pred";
        bad.eval.out = dir / "bad_metrics.csv";
        CHECK_THROWS_WITH_AS(commands::cmd_eval(bad, log), doctest::Contains("image '0000'"),
                             std::invalid_argument);
        CHECK_FALSE(fs::exists(dir / "bad_metrics.csv"));
    }
    SUBCASE("LR baseline via the dataset directory") {
        auto base = cfg;
        base.eval.predictions = dir / "test";
        base.eval.out = dir / "lr_metrics.csv";
        CHECK(commands::cmd_eval(base, log).rows.size() == 3);
    }
}

TEST_CASE("tiled prediction seeds tiles by origin") {
    model::ArchConfig arch;
    arch.base_channels = 4;
    arch.n_res_blocks = 1;
    arch.time_embed_dim = 8;
    model::ModelParams p = model::init_params(arch, 1);
    const Image big = testing::random_image(40, 52, 3);
    const Image a = commands::predict(p, big, 3, 16, 8, 77, 1);
    const Image b = commands::predict(p, big, 3, 16, 8, 77, 3);
    CHECK(bitwise_equal(a, b));
    // untrained head outputs v = 0, so the output is the per-tile noise: tiles differ
    CHECK_FALSE(bitwise_equal(a.crop(0, 0, 8, 8), a.crop(16, 16, 8, 8)));
    CHECK(bitwise_equal(commands::predict(p, big.crop(0, 0, 16, 16), 3, 16, 8, 77),
                        commands::predict(p, big.crop(0, 0, 16, 16), 3, 128, 64, 77)));
}

TEST_CASE("config schema") {
    const fs::path dir = testing::scratch_dir("config");
    SUBCASE("paths resolve against the config location and dataset names alias their output") {
        const auto cfg = config::parse_config(toy_config(), dir);
        CHECK(cfg.train.dataset == dir / "train");
        CHECK(cfg.infer.checkpoint == dir / "run" / "final.resm");
        CHECK(cfg.train.train.seed == 5);
        CHECK(cfg.sample.K == 4);
    }
    SUBCASE("defaults") {
        const auto cfg = config::parse_config(nlohmann::json::object(), dir);
        CHECK(cfg.sample.K == 50);
        CHECK(cfg.infer.T == 20);
        CHECK(cfg.infer.tile == 128);
        CHECK(cfg.infer.core == 64);
        CHECK(cfg.threads == 1);
    }
    SUBCASE("unknown and mistyped keys are named") {
        auto doc = toy_config();
        doc["train"]["learning_rate"] = 1.0;
        CHECK_THROWS_WITH_AS(config::parse_config(doc, dir), "train.learning_rate: unknown key",
                             ConfigError);
        doc = toy_config();
        doc["datasets"]["train"]["lr"]["psf_sigmaa"] = 1.0;
        CHECK_THROWS_WITH_AS(config::parse_config(doc, dir), "datasets.train.lr.psf_sigmaa: unknown key",
                             ConfigError);
        doc = toy_config();
        doc["sample"]["K"] = "fifty";
        CHECK_THROWS_WITH_AS(config::parse_config(doc, dir), "sample.K: expected an integer", ConfigError);
        doc = toy_config();
        doc["datasets"]["test"].erase("seed");
        CHECK_THROWS_WITH_AS(config::parse_config(doc, dir), "datasets.test.seed: required key missing",
                             ConfigError);
    }
    SUBCASE("syntax errors report the line") {
        write_text(dir / "bad.json", "{\n  \"seed\": 1,\n  \"train\": {\"lr\": }\n}\n");
        CHECK_THROWS_WITH_AS(config::load_config(dir / "bad.json"), doctest::Contains("bad.json:3:"),
                             ConfigError);
    }
    SUBCASE("overrides") {
        auto cfg = config::parse_config(toy_config(), dir);
        config::apply_overrides(cfg, 99, 2);
        CHECK(cfg.seed == 99);
        CHECK(cfg.train.train.seed == 99);
        CHECK(cfg.threads == 2);
        CHECK_THROWS_AS(config::apply_overrides(cfg, std::nullopt, 0), ConfigError);
    }
}

TEST_CASE("cli exit codes and single-line errors") {
    const fs::path dir = testing::scratch_dir("cli");
    int code = 0;
    write_text(dir / "unknown.json", R"({"trian": {}})");
    std::string err = run_cli("--config " + (dir / "unknown.json").string() + " train", code);
    CHECK(code == 2);
    CHECK(err == "{\"error\":\"config\",\"message\":\"trian: unknown key\"}\n");

    err = run_cli("eval --pred " + (dir / "missing").string() + " --gt " + (dir / "missing").string(), code);
    CHECK(code == 3);
    CHECK(err.find("\"path\":") != std::string::npos);
    CHECK(std::count(err.begin(), err.end(), '\n') == 1);

    write_f32img(dir / "a.f32img", Image(16, 16));
    write_text(dir / "corrupt.resm", "RESMATCHgarbage");
    err = run_cli("infer --checkpoint " + (dir / "corrupt.resm").string() + " --input " +
                      (dir / "a.f32img").string() + " --out " + (dir / "o").string(),
                  code);
    CHECK(code == 3);
    CHECK(err.find("\"error\":\"format\"") != std::string::npos);

    run_cli("frobnicate", code);
    CHECK(code == 2);

    // full toy pipeline through the binary
    auto doc = toy_config();
    doc["train"]["max_steps"] = 4;
    doc["sample"]["K"] = 2;
    write_text(dir / "cfg.json", doc.dump());
    const std::string c = "--config " + (dir / "cfg.json").string() + " ";
    for (const char* verb : {"gen-data", "train", "infer", "sample", "eval", "calibrate"}) {
        CAPTURE(verb);
        err = run_cli(c + verb, code);
        CHECK(code == 0);
        CHECK(err.empty());
    }
    CHECK(fs::exists(dir / "calibration.csv"));
}
