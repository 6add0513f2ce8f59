#include "fosp/image_io.hpp"

#include "fosp/error.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

namespace fosp {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
    auto* where = static_cast<std::string*>(png_get_error_ptr(png));
    if (where) *where = message;
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image8 read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw RuntimeError("cannot open " + path.string());
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw RuntimeError("libpng init failed");
    }
    Image8 image;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw RuntimeError("unreadable png " + path.string() + ": " + error);
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    image.channels = png_get_channels(png, info);
    if (image.channels != 1 && image.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw RuntimeError("unsupported channel layout in " + path.string());
    }
    image.pixels.resize(static_cast<std::size_t>(image.width) * image.height * image.channels);
    rows.resize(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            image.pixels.data() + static_cast<std::size_t>(y) * image.width * image.channels;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3) throw ValidationError("write_png: channels must be 1 or 3");
    if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
        throw ValidationError("write_png: pixel buffer size mismatch");
    }
    std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        FilePtr file(std::fopen(tmp.c_str(), "wb"));
        if (!file) throw RuntimeError("cannot write " + tmp.string());
        std::string error;
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw RuntimeError("libpng init failed");
        }
        std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw RuntimeError("png write failed for " + path.string() + ": " + error);
        }
        png_init_io(png, file.get());
        png_set_compression_level(png, 6);
        png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                     image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < image.height; ++y) {
            rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
                image.pixels.data() + static_cast<std::size_t>(y) * image.width * image.channels);
        }
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

Tensor to_tensor(const Image8& image) {
    const Shape s{1, image.channels, image.height, image.width};
    std::vector<double> values(s.numel());
    for (int c = 0; c < image.channels; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p)
            values[static_cast<std::size_t>(c) * s.plane() + p] =
                image.pixels[p * static_cast<std::size_t>(image.channels) + c] / 255.0;
    return Tensor::from(s, std::move(values));
}

Image8 to_image8(const Tensor& tensor, int index) {
    const Shape& s = tensor.shape();
    if (s.c != 1 && s.c != 3) throw ValidationError("to_image8: expected 1 or 3 channels, got " + s.str());
    if (index < 0 || index >= s.n) throw ValidationError("to_image8: batch index out of range");
    Image8 image{s.w, s.h, s.c, std::vector<std::uint8_t>(static_cast<std::size_t>(s.c) * s.plane())};
    auto v = tensor.data();
    const std::size_t base = static_cast<std::size_t>(index) * s.c * s.plane();
    for (int c = 0; c < s.c; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p) {
            double q = std::nearbyint(v[base + static_cast<std::size_t>(c) * s.plane() + p] * 255.0);
            q = std::fmin(255.0, std::fmax(0.0, q));
            image.pixels[p * static_cast<std::size_t>(s.c) + c] = static_cast<std::uint8_t>(q);
        }
    return image;
}

Tensor mask_from_image(const Image8& image) {
    if (image.channels != 1) throw ValidationError("mask images must be single-channel");
    const Shape s{1, 1, image.height, image.width};
    std::vector<double> values(s.numel());
    for (std::size_t p = 0; p < values.size(); ++p) values[p] = image.pixels[p] > 127 ? 1.0 : 0.0;
    return Tensor::from(s, std::move(values));
}

}  // namespace fosp
