#include "resmatch/commands.hpp"
#include "resmatch/config.hpp"
#include "resmatch/errors.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace resmatch;

namespace {

int fail(const char* kind, const std::string& message, int code,
         const std::optional<fs::path>& path = std::nullopt) {
    nlohmann::json j = {{"error", kind}, {"message", message}};
    if (path) {
        j["path"] = path->string();
    }
    std::cerr << j.dump() << "\n";
    return code;
}

void override_path(fs::path& target, const std::string& value) {
    if (!value.empty()) {
        target = fs::absolute(value).lexically_normal();
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional flow matching for microscopy image restoration"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed, "run seed (overrides config)");
    app.add_option("--threads", threads, "worker threads (overrides config)");

    struct Paths {
        std::string a, b, c;
    } p;
    std::optional<int> steps;
    std::optional<int> K;

    auto* gen = app.add_subcommand("gen-data", "generate the configured synthetic datasets");
    auto* train = app.add_subcommand("train", "train the velocity network");
    train->add_option("--dataset", p.a, "training dataset directory");
    train->add_option("--out", p.b, "checkpoint / log directory");
    train->add_option("--resume", p.c, "checkpoint to continue from");
    train->add_option("--steps", steps, "max_steps");
    auto* infer = app.add_subcommand("infer", "single-sample tiled prediction");
    infer->add_option("--checkpoint", p.a);
    infer->add_option("--input", p.b, "dataset, .f32img directory or file");
    infer->add_option("--out", p.c);
    auto* sample = app.add_subcommand("sample", "posterior ensemble, MMSE and pixel std");
    sample->add_option("--checkpoint", p.a);
    sample->add_option("--input", p.b);
    sample->add_option("--out", p.c);
    sample->add_option("-K", K, "ensemble size");
    auto* eval = app.add_subcommand("eval", "PSNR / SSIM / MS-SSIM / RMSE against ground truth");
    eval->add_option("--pred", p.a);
    eval->add_option("--gt", p.b);
    eval->add_option("--out", p.c);
    auto* calib = app.add_subcommand("calibrate", "fit rmse against rmv over ensembles");
    calib->add_option("--ensembles", p.a);
    calib->add_option("--gt", p.b);
    calib->add_option("--out", p.c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        return fail("usage", e.what(), 2);
    }

    try {
        config::RunConfig cfg = config_path.empty()
                                    ? config::parse_config(nlohmann::json::object(), fs::current_path())
                                    : config::load_config(config_path);
        config::apply_overrides(cfg, seed, threads);

        if (gen->parsed()) {
            commands::cmd_gen_data(cfg, std::cout);
        } else if (train->parsed()) {
            override_path(cfg.train.dataset, p.a);
            override_path(cfg.train.out, p.b);
            if (!p.c.empty()) {
                cfg.train.resume = fs::absolute(p.c);
            }
            if (steps) {
                cfg.train.train.max_steps = *steps;
            }
            commands::cmd_train(cfg, std::cout);
        } else if (infer->parsed()) {
            override_path(cfg.infer.checkpoint, p.a);
            override_path(cfg.infer.input, p.b);
            override_path(cfg.infer.out, p.c);
            commands::cmd_infer(cfg, std::cout);
        } else if (sample->parsed()) {
            override_path(cfg.sample.checkpoint, p.a);
            override_path(cfg.sample.input, p.b);
            override_path(cfg.sample.out, p.c);
            if (K) {
                cfg.sample.K = *K;
            }
            commands::cmd_sample(cfg, std::cout);
        } else if (eval->parsed()) {
            override_path(cfg.eval.predictions, p.a);
            override_path(cfg.eval.ground_truth, p.b);
            override_path(cfg.eval.out, p.c);
            commands::cmd_eval(cfg, std::cout);
        } else if (calib->parsed()) {
            override_path(cfg.calibrate.ensembles, p.a);
            override_path(cfg.calibrate.ground_truth, p.b);
            override_path(cfg.calibrate.out, p.c);
            commands::cmd_calibrate(cfg, std::cout);
        }
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const FormatError& e) {
        return fail("format", e.what(), 3, e.path());
    } catch (const IoError& e) {
        return fail("io", e.what(), 3, e.path());
    } catch (const NumericalError& e) {
        return fail("numerical", e.what(), 4);
    } catch (const DegenerateFitError& e) {
        return fail("degenerate_fit", e.what(), 5);
    } catch (const std::invalid_argument& e) {
        return fail("invalid_argument", e.what(), 6);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}
