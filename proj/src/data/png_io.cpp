#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <vector>

#include "pdp/data/png_io.hpp"

namespace pdp::data {
namespace {

struct FileCloser {
    std::FILE* fp = nullptr;
    ~FileCloser() {
        if (fp) std::fclose(fp);
    }
};

png_byte to_byte(real v) {
    const real c = std::clamp(v, real(0), real(1));
    return static_cast<png_byte>(std::lround(c * 255.0));
}

// Writes one 8-bit image; rows are pre-rendered so no C++ objects live in the
// setjmp scope.
void write_rows(const std::string& path, int w, int h, int color_type,
                const std::vector<std::vector<png_byte>>& rows) {
    FileCloser file;
    file.fp = std::fopen(path.c_str(), "wb");
    if (!file.fp) throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, file.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
        png_write_row(png, const_cast<png_bytep>(rows[static_cast<size_t>(y)].data()));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads any 8/16-bit PNG normalized to 8-bit RGB rows.
std::vector<std::vector<png_byte>> read_rows(const std::string& path, int& w, int& h) {
    FileCloser file;
    file.fp = std::fopen(path.c_str(), "rb");
    if (!file.fp) throw IoError("cannot open for reading: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, file.fp) != 8 || png_sig_cmp(header, 0, 8)) {
        throw IoError("not a png file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png allocation failed");
    }

    std::vector<std::vector<png_byte>> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, file.fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    rows.assign(static_cast<size_t>(h), std::vector<png_byte>(static_cast<size_t>(w) * 3));
    for (int y = 0; y < h; ++y) {
        png_read_row(png, rows[static_cast<size_t>(y)].data(), nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return rows;
}

}  // namespace

void write_png_rgb(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw InputError("write_png_rgb expects a (3, h, w) tensor");
    }
    const int h = image.dim(1), w = image.dim(2);
    std::vector<std::vector<png_byte>> rows(static_cast<size_t>(h),
                                            std::vector<png_byte>(static_cast<size_t>(w) * 3));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                rows[static_cast<size_t>(y)][static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
                    to_byte(image[(static_cast<std::int64_t>(c) * h + y) * w + x]);
            }
    write_rows(path, w, h, PNG_COLOR_TYPE_RGB, rows);
}

Tensor read_png_rgb(const std::string& path) {
    int w = 0, h = 0;
    const std::vector<std::vector<png_byte>> rows = read_rows(path, w, h);
    Tensor image({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                image[(static_cast<std::int64_t>(c) * h + y) * w + x] =
                    static_cast<real>(
                        rows[static_cast<size_t>(y)][static_cast<size_t>(x) * 3 +
                                                     static_cast<size_t>(c)]) /
                    255.0;
            }
    return image;
}

void write_png_mask(const std::string& path, const Tensor& mask) {
    if (mask.ndim() != 2) throw InputError("write_png_mask expects a (h, w) tensor");
    const int h = mask.dim(0), w = mask.dim(1);
    std::vector<std::vector<png_byte>> rows(static_cast<size_t>(h),
                                            std::vector<png_byte>(static_cast<size_t>(w)));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const real v = mask[static_cast<std::int64_t>(y) * w + x];
            if (v != 0.0 && v != 1.0) throw InputError("write_png_mask expects {0,1} values");
            rows[static_cast<size_t>(y)][static_cast<size_t>(x)] = v == 1.0 ? 255 : 0;
        }
    write_rows(path, w, h, PNG_COLOR_TYPE_GRAY, rows);
}

Tensor read_png_mask(const std::string& path) {
    int w = 0, h = 0;
    const std::vector<std::vector<png_byte>> rows = read_rows(path, w, h);
    Tensor mask({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            mask[static_cast<std::int64_t>(y) * w + x] =
                rows[static_cast<size_t>(y)][static_cast<size_t>(x) * 3] >= 128 ? 1.0 : 0.0;
        }
    return mask;
}

}  // namespace pdp::data
