#pragma once

#include "resmatch/calibration.hpp"
#include "resmatch/config.hpp"
#include "resmatch/image.hpp"
#include "resmatch/metrics.hpp"
#include "resmatch/sampler.hpp"
#include "resmatch/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace resmatch::commands {

struct NamedImage {
    std::string id;
    Image image;
};

enum class Role { input, target };

/// Images from a dataset directory (LR for `input`, HR for `target`), an
/// ensemble directory (each member's mmse), a directory of .f32img files or
/// a single .f32img file. Sorted by id.
std::vector<NamedImage> load_images(const std::filesystem::path& source, Role role);

/// Seed for image `id`; independent of listing order.
std::uint64_t image_seed(std::uint64_t run_seed, const std::string& id);

/// Tiled Euler integration of one posterior sample. Images that fit inside a
/// single tile are integrated whole, seeded as the tile at (0, 0).
Image predict(const model::ModelParams& params, const Image& input, int T, int tile, int core,
              std::uint64_t seed, int threads = 1);

/// K tiled samples; member k uses sampler::member_seed(seed, k). Members are
/// distributed across threads, so the result is thread-count independent.
sampler::PosteriorEnsemble predict_ensemble(const model::ModelParams& params, const Image& input,
                                            int T, int K, int tile, int core, std::uint64_t seed,
                                            int threads = 1);

void cmd_gen_data(const config::RunConfig& cfg, std::ostream& log);
trainer::TrainResult cmd_train(const config::RunConfig& cfg, std::ostream& log);
/// Writes <out>/<id>.f32img, one single-sample prediction per input.
void cmd_infer(const config::RunConfig& cfg, std::ostream& log);
/// Writes <out>/<id>/{mmse,pixel_std}.f32img, members/NNN.f32img and
/// ensemble.json.
void cmd_sample(const config::RunConfig& cfg, std::ostream& log);
/// Nothing is written unless every image evaluates.
metrics::MetricReport cmd_eval(const config::RunConfig& cfg, std::ostream& log);
calibration::CalibrationFit cmd_calibrate(const config::RunConfig& cfg, std::ostream& log);

} // namespace resmatch::commands
