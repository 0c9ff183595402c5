#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace resmatch {

/// Dense row-major single-channel image of float intensities.
class Image {
public:
    Image() = default;
    Image(int height, int width, float fill = 0.0f);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(int row, int col) noexcept { return data_[index(row, col)]; }
    float operator()(int row, int col) const noexcept { return data_[index(row, col)]; }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> pixels() noexcept { return data_; }
    std::span<const float> pixels() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    /// Copy of the rectangle [row, row + h) x [col, col + w).
    Image crop(int row, int col, int h, int w) const;

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int row, int col) const noexcept {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(col);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

/// Affine intensity normalisation: normalised = (raw - mean) / std.
struct NormConstants {
    double mean = 0.0;
    double std = 1.0;
    friend bool operator==(const NormConstants&, const NormConstants&) = default;
};

Image normalize(const Image& raw, const NormConstants& norm);
Image denormalize(const Image& normalized, const NormConstants& norm);

/// Throws std::invalid_argument naming `what` when shapes differ.
void require_same_shape(const Image& a, const Image& b, const char* what);

/// True when both images hold the same bit patterns.
bool bitwise_equal(const Image& a, const Image& b) noexcept;

double mean(const Image& img);
double max_value(const Image& img);
double min_value(const Image& img);
bool all_finite(const Image& img) noexcept;

} // namespace resmatch
