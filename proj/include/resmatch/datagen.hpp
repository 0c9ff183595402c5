#pragma once

#include "resmatch/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace resmatch::datagen {

enum class StructureKind { filaments, pits, curves };

std::string_view to_string(StructureKind kind);
StructureKind parse_structure_kind(std::string_view name);

inline constexpr int kMinStructureSide = 32;

/// Ground-truth specimen, peak-normalised to 1 with zero background.
struct Structure {
    Image pixels;
    StructureKind kind = StructureKind::filaments;
    std::uint64_t seed = 0;
};

/// Gaussian PSF followed by Poisson-Gaussian noise.
struct DegradationSpec {
    double psf_sigma = 1.0;  ///< blur std in pixels, kernel radius ceil(4 sigma)
    double gain = 100.0;     ///< photons per intensity unit
    double read_sigma = 0.0; ///< additive Gaussian std

    void validate() const;
    friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

struct PairedSample {
    Image lr;
    Image hr;
    std::uint64_t structure_seed = 0;
};

Structure gen_structure(StructureKind kind, int height, int width, std::uint64_t seed);

/// Normalised 1-D Gaussian taps for offsets -radius..radius.
std::vector<double> gaussian_kernel(double sigma);
int kernel_radius(double sigma);

/// Separable Gaussian blur with half-sample symmetric (mirror) boundaries.
/// Mass preserving: the sum of the output equals the sum of the input.
Image gaussian_blur(const Image& img, double sigma);

Image degrade(const Structure& s, const DegradationSpec& spec, std::uint64_t noise_seed);

/// Noise stage of `degrade` applied to an already blurred image.
Image add_noise(const Image& blurred, const DegradationSpec& spec, std::uint64_t noise_seed);

struct DatasetSpec {
    int n_pairs = 0;
    DegradationSpec lr;
    DegradationSpec hr;
    int patch = 64;
    std::uint64_t seed = 0;
    StructureKind kind = StructureKind::filaments;
    /// Side of each generated specimen; 0 selects 2 * patch. Patches are
    /// cropped from it on a regular, non-overlapping grid.
    int structure_side = 0;
};

struct PairRecord {
    std::uint64_t structure_seed = 0;
    std::uint64_t lr_noise_seed = 0;
    std::uint64_t hr_noise_seed = 0;
    int crop_row = 0;
    int crop_col = 0;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<PairedSample> pairs;
    std::vector<PairRecord> records;
    NormConstants norm;
};

Dataset make_dataset(const DatasetSpec& spec);

/// Mean and std over every LR and HR pixel of the pairs.
NormConstants compute_norm_constants(const std::vector<PairedSample>& pairs);

/// Directory layout: pairs/NNNN_lr.f32img, pairs/NNNN_hr.f32img, manifest.json.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace resmatch::datagen
