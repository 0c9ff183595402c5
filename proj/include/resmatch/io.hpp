#pragma once

#include "resmatch/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace resmatch {

// .f32img layout: 8-byte magic "F32IMG\0\0", uint32 LE height, uint32 LE
// width, then height*width IEEE-754 LE float32 values in row-major order.

void write_f32img(const std::filesystem::path& path, const Image& img);
Image read_f32img(const std::filesystem::path& path);

struct PngScale {
    double min = 0.0;
    double max = 0.0;
};

/// 16-bit grayscale PNG, linearly min-max scaled. A JSON sidecar
/// `<path>.json` records the scale so intensities can be recovered.
PngScale write_png16(const std::filesystem::path& path, const Image& img);

/// Writes `contents` through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

} // namespace resmatch
