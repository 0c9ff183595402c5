#include "resmatch/calibration.hpp"
#include "resmatch/checkpoint.hpp"
#include "resmatch/commands.hpp"
#include "resmatch/config.hpp"
#include "resmatch/datagen.hpp"
#include "resmatch/errors.hpp"
#include "resmatch/flow_core.hpp"
#include "resmatch/metrics.hpp"
#include "resmatch/sampler.hpp"
#include "resmatch/tiling.hpp"
#include "resmatch/trainer.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace resmatch;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
    if (a.ndim() != 2) {
        throw std::invalid_argument("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
    }
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), img.data());
    return img;
}

Array to_array(const Image& img) {
    Array a({img.height(), img.width()});
    std::copy(img.data(), img.data() + img.size(), a.mutable_data());
    return a;
}

std::vector<datagen::PairedSample> to_pairs(const std::vector<std::pair<Array, Array>>& pairs) {
    std::vector<datagen::PairedSample> out;
    for (const auto& [lr, hr] : pairs) {
        out.push_back({to_image(lr), to_image(hr), 0});
    }
    return out;
}

py::list pairs_to_list(const std::vector<datagen::PairedSample>& pairs) {
    py::list out;
    for (const auto& p : pairs) {
        out.append(py::make_tuple(to_array(p.lr), to_array(p.hr)));
    }
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Conditional flow matching for microscopy image restoration";

    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<DegenerateFitError>(m, "DegenerateFitError", PyExc_ValueError);

    py::class_<datagen::DegradationSpec>(m, "DegradationSpec")
        .def(py::init([](double psf_sigma, double gain, double read_sigma) {
                 datagen::DegradationSpec d{psf_sigma, gain, read_sigma};
                 d.validate();
                 return d;
             }),
             py::arg("psf_sigma") = 1.0, py::arg("gain") = 100.0, py::arg("read_sigma") = 0.0)
        .def_readwrite("psf_sigma", &datagen::DegradationSpec::psf_sigma)
        .def_readwrite("gain", &datagen::DegradationSpec::gain)
        .def_readwrite("read_sigma", &datagen::DegradationSpec::read_sigma);

    m.def(
        "gen_structure",
        [](const std::string& kind, int height, int width, std::uint64_t seed) {
            return to_array(datagen::gen_structure(datagen::parse_structure_kind(kind), height, width, seed).pixels);
        },
        py::arg("kind"), py::arg("height"), py::arg("width"), py::arg("seed"));
    m.def(
        "degrade",
        [](const Array& x, const datagen::DegradationSpec& spec, std::uint64_t noise_seed) {
            return to_array(datagen::degrade(datagen::Structure{to_image(x)}, spec, noise_seed));
        },
        py::arg("x"), py::arg("spec"), py::arg("noise_seed"));
    m.def(
        "make_dataset",
        [](int n_pairs, const datagen::DegradationSpec& lr, const datagen::DegradationSpec& hr,
           int patch, std::uint64_t seed, const std::string& kind) {
            datagen::DatasetSpec spec;
            spec.n_pairs = n_pairs;
            spec.lr = lr;
            spec.hr = hr;
            spec.patch = patch;
            spec.seed = seed;
            spec.kind = datagen::parse_structure_kind(kind);
            return pairs_to_list(datagen::make_dataset(spec).pairs);
        },
        py::arg("n_pairs"), py::arg("lr"), py::arg("hr"), py::arg("patch") = 64,
        py::arg("seed") = 0, py::arg("kind") = "filaments",
        "List of (lr, hr) float32 arrays.");

    m.def(
        "interpolate",
        [](const Array& x0, const Array& x1, double t) {
            return to_array(flow::interpolate(to_image(x0), to_image(x1), t));
        },
        py::arg("x0"), py::arg("x1"), py::arg("t"));
    m.def(
        "fm_loss",
        [](const Array& v, const Array& x0, const Array& x1) {
            return flow::fm_loss(to_image(v), to_image(x0), to_image(x1));
        },
        py::arg("v_pred"), py::arg("x0"), py::arg("x1"));

    py::class_<model::ArchConfig>(m, "ArchConfig")
        .def(py::init([](int base_channels, int n_res_blocks, int kernel_size, int time_embed_dim) {
                 model::ArchConfig a{base_channels, n_res_blocks, kernel_size, time_embed_dim};
                 a.validate();
                 return a;
             }),
             py::arg("base_channels") = 32, py::arg("n_res_blocks") = 4, py::arg("kernel_size") = 3,
             py::arg("time_embed_dim") = 64)
        .def_readonly("base_channels", &model::ArchConfig::base_channels)
        .def_readonly("n_res_blocks", &model::ArchConfig::n_res_blocks)
        .def_readonly("kernel_size", &model::ArchConfig::kernel_size)
        .def_readonly("time_embed_dim", &model::ArchConfig::time_embed_dim);
    m.def("parameter_count", &model::parameter_count, py::arg("arch"));

    py::class_<model::ModelParams>(m, "Model")
        .def_static(
            "init", [](const model::ArchConfig& a, std::uint64_t seed) { return model::init_params(a, seed); },
            py::arg("arch"), py::arg("seed") = 0)
        .def_static(
            "load", [](const std::filesystem::path& p) { return model::load_checkpoint(p).model; },
            py::arg("path"))
        .def(
            "save",
            [](const model::ModelParams& p, const std::filesystem::path& path) {
                model::Checkpoint c;
                c.model = p;
                model::save_checkpoint(path, c);
            },
            py::arg("path"))
        .def_readonly("arch", &model::ModelParams::arch)
        .def_property_readonly("norm", [](const model::ModelParams& p) { return py::make_tuple(p.norm.mean, p.norm.std); })
        .def(
            "velocity",
            [](const model::ModelParams& p, double t, const Array& x_t, const Array& cond) {
                return to_array(model::forward(p, t, to_image(x_t), to_image(cond)));
            },
            py::arg("t"), py::arg("x_t"), py::arg("cond"),
            "Raw network output in normalised space.");

    m.def(
        "train",
        [](const std::vector<std::pair<Array, Array>>& pairs, const model::ArchConfig& arch, int steps,
           double lr, int batch_size, int patch, std::uint64_t seed, int T, int threads) {
            trainer::TrainConfig c;
            c.max_steps = steps;
            c.lr = lr;
            c.batch_size = batch_size;
            c.patch = patch;
            c.seed = seed;
            c.T = T;
            c.threads = threads;
            c.val_every = 0;
            const auto data = to_pairs(pairs);
            trainer::TrainResult r;
            {
                py::gil_scoped_release release;
                r = trainer::train(data, c, arch);
            }
            std::vector<double> losses;
            for (const auto& e : r.log.entries) {
                losses.push_back(e.loss);
            }
            return py::make_tuple(r.params, losses);
        },
        py::arg("pairs"), py::arg("arch"), py::arg("steps"), py::arg("lr") = 1e-4,
        py::arg("batch_size") = 8, py::arg("patch") = 64, py::arg("seed") = 0, py::arg("T") = 20,
        py::arg("threads") = 1, "Returns (model, per-step losses).");

    m.def(
        "predict",
        [](const model::ModelParams& p, const Array& x, int T, int tile, int core, std::uint64_t seed,
           int threads) {
            const Image in = to_image(x);
            Image out;
            {
                py::gil_scoped_release release;
                out = commands::predict(p, in, T, tile, core, seed, threads);
            }
            return to_array(out);
        },
        py::arg("model"), py::arg("x"), py::arg("T") = 20, py::arg("tile") = 128, py::arg("core") = 64,
        py::arg("seed") = 0, py::arg("threads") = 1, "Single tiled posterior sample.");
    m.def(
        "posterior_sample",
        [](const model::ModelParams& p, const Array& x, int T, int K, int tile, int core, std::uint64_t seed,
           int threads) {
            const Image in = to_image(x);
            sampler::PosteriorEnsemble e;
            {
                py::gil_scoped_release release;
                e = commands::predict_ensemble(p, in, T, K, tile, core, seed, threads);
            }
            py::list samples;
            for (const auto& s : e.samples) {
                samples.append(to_array(s));
            }
            py::object sd = e.pixel_std ? py::object(to_array(*e.pixel_std)) : py::object(py::none());
            return py::make_tuple(to_array(e.mean), sd, samples);
        },
        py::arg("model"), py::arg("x"), py::arg("T") = 20, py::arg("K") = 50, py::arg("tile") = 128,
        py::arg("core") = 64, py::arg("seed") = 0, py::arg("threads") = 1,
        "Returns (mmse, pixel_std or None, samples).");
    m.def(
        "euler_integrate",
        [](const std::function<Array(double, Array, Array)>& field, const Array& cond, int T,
           std::uint64_t seed) {
            const sampler::FunctionField f([&](double t, const Image& x, const Image& c) {
                return to_image(field(t, to_array(x), to_array(c)));
            });
            return to_array(sampler::euler_integrate(f, to_image(cond), T, seed));
        },
        py::arg("field"), py::arg("cond"), py::arg("T") = 20, py::arg("seed") = 0,
        "Euler integration of a Python velocity field v(t, x, cond).");

    m.def(
        "plan_tiles",
        [](int h, int w, int tile, int core) {
            const auto g = tiling::plan_tiles(h, w, tile, core);
            py::list out;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const auto r = g.assigned(i);
                out.append(py::make_tuple(py::make_tuple(g.origins[i].row, g.origins[i].col),
                                          py::make_tuple(r.row0, r.col0, r.row1, r.col1)));
            }
            return out;
        },
        py::arg("height"), py::arg("width"), py::arg("tile") = 128, py::arg("core") = 64,
        "List of ((row, col) origin, (row0, col0, row1, col1) assigned region).");
    m.def(
        "tiled_apply",
        [](const std::function<Array(Array, std::uint64_t)>& op, const Array& x, int tile, int core,
           std::uint64_t seed) {
            const Image img = to_image(x);
            const auto g = tiling::plan_tiles(img.height(), img.width(), tile, core);
            const tiling::TileOp f = [&](const Image& t, std::uint64_t s) { return to_image(op(to_array(t), s)); };
            return to_array(tiling::tiled_apply(f, img, g, seed, 1));
        },
        py::arg("op"), py::arg("x"), py::arg("tile") = 128, py::arg("core") = 64, py::arg("seed") = 0);

    auto range = [](const std::optional<double>& r, const Image& gt) {
        return r.value_or(metrics::default_data_range(gt));
    };
    m.def(
        "psnr",
        [range](const Array& pred, const Array& gt, std::optional<double> data_range) {
            const Image g = to_image(gt);
            return metrics::psnr(to_image(pred), g, range(data_range, g));
        },
        py::arg("pred"), py::arg("gt"), py::arg("data_range") = py::none());
    m.def(
        "ssim",
        [range](const Array& pred, const Array& gt, std::optional<double> data_range) {
            const Image g = to_image(gt);
            return metrics::ssim(to_image(pred), g, range(data_range, g));
        },
        py::arg("pred"), py::arg("gt"), py::arg("data_range") = py::none());
    m.def(
        "ms_ssim",
        [range](const Array& pred, const Array& gt, std::optional<double> data_range, int scales) {
            const Image g = to_image(gt);
            return metrics::ms_ssim(to_image(pred), g, range(data_range, g), scales);
        },
        py::arg("pred"), py::arg("gt"), py::arg("data_range") = py::none(), py::arg("scales") = 3);
    m.def(
        "rmse", [](const Array& pred, const Array& gt) { return metrics::rmse(to_image(pred), to_image(gt)); },
        py::arg("pred"), py::arg("gt"));

    m.def(
        "fit_calibration",
        [](const std::vector<double>& rmv, const std::vector<double>& rmse) {
            if (rmv.size() != rmse.size()) {
                throw std::invalid_argument("rmv and rmse lengths differ");
            }
            std::vector<calibration::CalibrationPoint> pts;
            for (std::size_t i = 0; i < rmv.size(); ++i) {
                pts.push_back({std::to_string(i), rmv[i], rmse[i]});
            }
            const auto f = calibration::fit_linear(std::move(pts));
            return py::dict(py::arg("alpha") = f.alpha, py::arg("beta") = f.beta, py::arg("r2") = f.r2);
        },
        py::arg("rmv"), py::arg("rmse"), "Least-squares rmse = alpha * rmv + beta.");

    m.def(
        "run",
        [](const std::string& verb, const std::filesystem::path& config_path) {
            config::RunConfig cfg = config::load_config(config_path);
            std::ostringstream log;
            py::gil_scoped_release release;
            if (verb == "gen-data") {
                commands::cmd_gen_data(cfg, log);
            } else if (verb == "train") {
                commands::cmd_train(cfg, log);
            } else if (verb == "infer") {
                commands::cmd_infer(cfg, log);
            } else if (verb == "sample") {
                commands::cmd_sample(cfg, log);
            } else if (verb == "eval") {
                commands::cmd_eval(cfg, log);
            } else if (verb == "calibrate") {
                commands::cmd_calibrate(cfg, log);
            } else {
                throw std::invalid_argument("unknown command '" + verb + "'");
            }
            return log.str();
        },
        py::arg("verb"), py::arg("config"), "Runs one CLI command; returns its log.");
}
