#include "thumbqc/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "thumbqc/errors.hpp"

namespace thumbqc {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void png_error_fn(png_structp png, png_const_charp msg) {
    (void)png;
    throw IoError(std::string("png: ") + msg);
}

void png_warn_fn(png_structp, png_const_charp) {}

RasterImage load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path.string());

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }

    RasterImage img;
    try {
        png_init_io(png, fp.get());
        png_read_info(png, info);

        png_set_strip_16(png);
        png_set_palette_to_rgb(png);
        png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
        png_set_strip_alpha(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        png_read_update_info(png, info);

        const png_uint_32 w = png_get_image_width(png, info);
        const png_uint_32 h = png_get_image_height(png, info);
        if (w == 0 || h == 0) throw IoError("png: zero-dimension image in " + path.string());
        if (png_get_channels(png, info) != 3) {
            throw IoError("png: unexpected channel count in " + path.string());
        }

        std::vector<png_byte> row(static_cast<size_t>(w) * 3);
        img = RasterImage(static_cast<int>(h), static_cast<int>(w));
        for (png_uint_32 r = 0; r < h; ++r) {
            png_read_row(png, row.data(), nullptr);
            float* dst = &img.at(static_cast<int>(r), 0, 0);
            for (size_t i = 0; i < row.size(); ++i) dst[i] = row[i] / 255.0f;
        }
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// Skips whitespace and '#' comments between PPM header tokens.
int ppm_next_int(std::istream& in, const std::filesystem::path& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) throw IoError("ppm: malformed header in " + path.string());
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = in.get();
    }
    return v;
}

RasterImage load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '6') {
        throw IoError("ppm: not a P6 file: " + path.string());
    }
    const int w = ppm_next_int(in, path);
    const int h = ppm_next_int(in, path);
    const int maxval = ppm_next_int(in, path);
    if (w <= 0 || h <= 0 || maxval != 255) {
        throw IoError("ppm: unsupported dims or maxval in " + path.string());
    }
    // Exactly one whitespace byte separates the header from the payload;
    // ppm_next_int already consumed it.
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size()) {
        throw IoError("ppm: truncated payload in " + path.string());
    }
    RasterImage img(h, w);
    for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
    return img;
}

std::vector<unsigned char> quantize(const RasterImage& img) {
    std::vector<unsigned char> out(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        float v = img.data[i];
        if (v < 0.0f) v = 0.0f;
        if (v > 1.0f) v = 1.0f;
        out[i] = static_cast<unsigned char>(v * 255.0f + 0.5f);
    }
    return out;
}

}  // namespace

RasterImage load_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open " + path.string());
    unsigned char sig[8] = {0};
    probe.read(reinterpret_cast<char*>(sig), 8);
    probe.close();
    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (std::memcmp(sig, png_sig, 8) == 0) return load_png(path);
    if (sig[0] == 'P' && sig[1] == '6') return load_ppm(path);
    throw IoError("unrecognized image format: " + path.string());
}

void save_png(const RasterImage& img, const std::filesystem::path& path) {
    if (img.height <= 0 || img.width <= 0) throw InvalidInput("save_png: empty image");
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open for write: " + path.string());

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    try {
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        auto bytes = quantize(img);
        for (int r = 0; r < img.height; ++r) {
            png_write_row(png, bytes.data() + static_cast<size_t>(r) * img.width * 3);
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

void save_ppm(const RasterImage& img, const std::filesystem::path& path) {
    if (img.height <= 0 || img.width <= 0) throw InvalidInput("save_ppm: empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    auto bytes = quantize(img);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

void save_image(const RasterImage& img, const std::filesystem::path& path) {
    if (path.extension() == ".ppm") {
        save_ppm(img, path);
    } else {
        save_png(img, path);
    }
}

}  // namespace thumbqc
