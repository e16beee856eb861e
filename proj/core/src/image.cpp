#include "thumbqc/image.hpp"

#include <algorithm>
#include <cmath>

#include "thumbqc/errors.hpp"

namespace thumbqc {

RasterImage::RasterImage(int h, int w, float fill)
    : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {}

namespace {

const std::vector<ScaleConfig> kScales = {
    {"XS", 224, 224, 1, 1},
    {"S", 224, 448, 1, 2},
    {"M", 448, 896, 2, 4},
    {"L", 896, 1792, 4, 8},
};

void check_valid(const RasterImage& img, const char* op) {
    if (img.height <= 0 || img.width <= 0) {
        throw InvalidInput(std::string(op) + ": zero-dimension image");
    }
    if (img.data.size() != img.pixel_count() * 3) {
        throw InvalidInput(std::string(op) + ": data length does not match dims");
    }
}

}  // namespace

const ScaleConfig& scale_by_name(const std::string& name) {
    for (const auto& s : kScales) {
        if (s.name == name) return s;
    }
    throw InvalidInput("unknown scale name: " + name);
}

const std::vector<ScaleConfig>& all_scales() { return kScales; }

RasterImage orient_landscape(const RasterImage& img) {
    check_valid(img, "orient_landscape");
    if (img.width >= img.height) return img;
    // 90 degree clockwise rotation: out(r, c) = in(H - 1 - c, r).
    RasterImage out(img.width, img.height);
    for (int r = 0; r < out.height; ++r) {
        for (int c = 0; c < out.width; ++c) {
            const int sr = img.height - 1 - c;
            const int sc = r;
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
        }
    }
    return out;
}

RasterImage resize_bilinear(const RasterImage& img, int out_h, int out_w) {
    check_valid(img, "resize_bilinear");
    if (out_h <= 0 || out_w <= 0) throw InvalidInput("resize_bilinear: bad target dims");
    if (out_h == img.height && out_w == img.width) return img;

    RasterImage out(out_h, out_w);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int r = 0; r < out_h; ++r) {
        double fy = (r + 0.5) * sy - 0.5;
        if (fy < 0.0) fy = 0.0;
        if (fy > img.height - 1) fy = img.height - 1;
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int c = 0; c < out_w; ++c) {
            double fx = (c + 0.5) * sx - 0.5;
            if (fx < 0.0) fx = 0.0;
            if (fx > img.width - 1) fx = img.width - 1;
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                const double top = (1.0 - wx) * img.at(y0, x0, ch) + wx * img.at(y0, x1, ch);
                const double bot = (1.0 - wx) * img.at(y1, x0, ch) + wx * img.at(y1, x1, ch);
                out.at(r, c, ch) = static_cast<float>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

RasterImage stretch_to_canonical(const RasterImage& img) {
    check_valid(img, "stretch_to_canonical");
    if (img.width < img.height) {
        throw InvalidInput("stretch_to_canonical: input must be landscape-oriented");
    }
    return resize_bilinear(img, kCanonicalHeight, kCanonicalWidth);
}

RasterImage resize_to_scale(const RasterImage& img, const ScaleConfig& scale) {
    check_valid(img, "resize_to_scale");
    if (img.height != kCanonicalHeight || img.width != kCanonicalWidth) {
        throw InvalidInput("resize_to_scale: input must be the 896x1792 canonical image");
    }
    return resize_bilinear(img, scale.target_height, scale.target_width);
}

TileBatch tile(const RasterImage& img, const ScaleConfig& scale) {
    check_valid(img, "tile");
    if (img.height != scale.target_height || img.width != scale.target_width) {
        throw InvalidInput("tile: image dims do not match scale " + scale.name);
    }
    TileBatch batch;
    batch.grid_rows = scale.grid_rows;
    batch.grid_cols = scale.grid_cols;
    batch.tiles.reserve(scale.tile_count());
    for (int gr = 0; gr < scale.grid_rows; ++gr) {
        for (int gc = 0; gc < scale.grid_cols; ++gc) {
            RasterImage t(kTileSide, kTileSide);
            for (int r = 0; r < kTileSide; ++r) {
                const float* src = &img.at(gr * kTileSide + r, gc * kTileSide, 0);
                float* dst = &t.at(r, 0, 0);
                std::copy(src, src + kTileSide * 3, dst);
            }
            batch.tiles.push_back(std::move(t));
        }
    }
    return batch;
}

nn::Tensor normalize(const RasterImage& img, const std::array<double, 3>& mean,
                     const std::array<double, 3>& stdev) {
    check_valid(img, "normalize");
    for (double s : stdev) {
        if (s <= 0.0) throw InvalidInput("normalize: std must be > 0 per channel");
    }
    nn::Tensor out({img.height, img.width, 3});
    const double inv[3] = {1.0 / stdev[0], 1.0 / stdev[1], 1.0 / stdev[2]};
    for (size_t i = 0; i < img.data.size(); i += 3) {
        out[i] = (img.data[i] - mean[0]) * inv[0];
        out[i + 1] = (img.data[i + 1] - mean[1]) * inv[1];
        out[i + 2] = (img.data[i + 2] - mean[2]) * inv[2];
    }
    return out;
}

RasterImage stitch(const TileBatch& batch) {
    if (batch.tiles.empty() ||
        batch.tiles.size() != static_cast<size_t>(batch.grid_rows) * batch.grid_cols) {
        throw InvalidInput("stitch: tile count does not match grid");
    }
    RasterImage out(batch.grid_rows * kTileSide, batch.grid_cols * kTileSide);
    for (int gr = 0; gr < batch.grid_rows; ++gr) {
        for (int gc = 0; gc < batch.grid_cols; ++gc) {
            const RasterImage& t = batch.tiles[static_cast<size_t>(gr) * batch.grid_cols + gc];
            if (t.height != kTileSide || t.width != kTileSide) {
                throw InvalidInput("stitch: tile is not 224x224");
            }
            for (int r = 0; r < kTileSide; ++r) {
                const float* src = &t.at(r, 0, 0);
                float* dst = &out.at(gr * kTileSide + r, gc * kTileSide, 0);
                std::copy(src, src + kTileSide * 3, dst);
            }
        }
    }
    return out;
}

}  // namespace thumbqc
