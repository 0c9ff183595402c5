#include "resmatch/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace resmatch {

Image::Image(int height, int width, float fill) : height_(height), width_(width) {
    if (height < 0 || width < 0) {
        throw std::invalid_argument("Image: negative dimensions");
    }
    data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

Image Image::crop(int row, int col, int h, int w) const {
    if (row < 0 || col < 0 || h < 0 || w < 0 || row + h > height_ || col + w > width_) {
        throw std::invalid_argument("Image::crop: rectangle outside image");
    }
    Image out(h, w);
    for (int r = 0; r < h; ++r) {
        std::copy_n(data_.data() + index(row + r, col), w, out.data() + out.index(r, 0));
    }
    return out;
}

Image normalize(const Image& raw, const NormConstants& norm) {
    if (!(norm.std > 0.0)) {
        throw std::invalid_argument("normalize: std must be positive");
    }
    Image out(raw.height(), raw.width());
    const double inv = 1.0 / norm.std;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out.data()[i] = static_cast<float>((raw.data()[i] - norm.mean) * inv);
    }
    return out;
}

Image denormalize(const Image& normalized, const NormConstants& norm) {
    Image out(normalized.height(), normalized.width());
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        out.data()[i] = static_cast<float>(normalized.data()[i] * norm.std + norm.mean);
    }
    return out;
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                    std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                                    " vs " + std::to_string(b.height()) + "x" +
                                    std::to_string(b.width()) + ")");
    }
}

bool bitwise_equal(const Image& a, const Image& b) noexcept {
    return a.same_shape(b) &&
           (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

double mean(const Image& img) {
    if (img.empty()) {
        throw std::invalid_argument("mean: empty image");
    }
    double sum = 0.0;
    for (float v : img.pixels()) {
        sum += v;
    }
    return sum / static_cast<double>(img.size());
}

double max_value(const Image& img) {
    if (img.empty()) {
        throw std::invalid_argument("max_value: empty image");
    }
    return *std::max_element(img.pixels().begin(), img.pixels().end());
}

double min_value(const Image& img) {
    if (img.empty()) {
        throw std::invalid_argument("min_value: empty image");
    }
    return *std::min_element(img.pixels().begin(), img.pixels().end());
}

bool all_finite(const Image& img) noexcept {
    return std::all_of(img.pixels().begin(), img.pixels().end(),
                       [](float v) { return std::isfinite(v); });
}

} // namespace resmatch
