#include "resmatch/io.hpp"

#include "resmatch/errors.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace resmatch {
namespace {

constexpr std::array<char, 8> kMagic = {'F', '3', '2', 'I', 'M', 'G', '\0', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(path, "cannot open for reading");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError(path, "cannot open for writing");
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            throw IoError(path, "write failed");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError(path, "rename failed");
    }
}

void write_f32img(const std::filesystem::path& path, const Image& img) {
    std::string out;
    out.reserve(16 + img.size() * 4);
    out.append(kMagic.data(), kMagic.size());
    put_u32(out, static_cast<std::uint32_t>(img.height()));
    put_u32(out, static_cast<std::uint32_t>(img.width()));
    for (float v : img.pixels()) {
        put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    write_file_atomic(path, out);
}

Image read_f32img(const std::filesystem::path& path) {
    const std::string raw = read_file(path);
    if (raw.size() < 16 || std::memcmp(raw.data(), kMagic.data(), kMagic.size()) != 0) {
        throw FormatError(path, "not an f32img file (bad magic)");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    const std::uint32_t h = get_u32(p + 8);
    const std::uint32_t w = get_u32(p + 12);
    const std::uint64_t expected = 16 + 4ULL * h * w;
    if (raw.size() != expected) {
        throw FormatError(path, "f32img size mismatch: header says " + std::to_string(h) + "x" +
                                    std::to_string(w) + ", file has " +
                                    std::to_string(raw.size()) + " bytes");
    }
    Image img(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < img.size(); ++i) {
        img.data()[i] = std::bit_cast<float>(get_u32(p + 16 + 4 * i));
    }
    return img;
}

PngScale write_png16(const std::filesystem::path& path, const Image& img) {
    if (img.empty()) {
        throw std::invalid_argument("write_png16: empty image");
    }
    PngScale scale{min_value(img), max_value(img)};
    const double span = scale.max > scale.min ? scale.max - scale.min : 1.0;

    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!fp) {
        throw IoError(path, "cannot open for writing");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path, "libpng write failed");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
                 static_cast<png_uint_32>(img.height()), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width()) * 2);
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < img.width(); ++c) {
            const double unit = std::clamp((img(r, c) - scale.min) / span, 0.0, 1.0);
            const auto v = static_cast<std::uint16_t>(std::lround(unit * 65535.0));
            row[2 * c] = static_cast<unsigned char>(v >> 8);
            row[2 * c + 1] = static_cast<unsigned char>(v & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);

    nlohmann::json sidecar = {{"min", scale.min}, {"max", scale.max}, {"bit_depth", 16},
                              {"mapping", "value = min + (max - min) * pixel / 65535"}};
    std::filesystem::path side = path;
    side += ".json";
    write_file_atomic(side, sidecar.dump(2) + "\n");
    return scale;
}

} // namespace resmatch
