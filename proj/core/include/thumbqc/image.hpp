#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "thumbqc/nn/tensor.hpp"

namespace thumbqc {

/// 3-channel raster image, row-major, channel-interleaved, intensities in [0,1].
struct RasterImage {
    int height = 0;
    int width = 0;
    static constexpr int channels = 3;
    std::vector<float> data;  // height * width * 3

    RasterImage() = default;
    RasterImage(int h, int w, float fill = 0.0f);

    size_t pixel_count() const { return static_cast<size_t>(height) * width; }
    float& at(int r, int c, int ch) {
        return data[(static_cast<size_t>(r) * width + c) * 3 + ch];
    }
    const float& at(int r, int c, int ch) const {
        return data[(static_cast<size_t>(r) * width + c) * 3 + ch];
    }
    bool same_dims(const RasterImage& o) const {
        return height == o.height && width == o.width;
    }
};

/// One of the four thumbnail working resolutions and its tile grid.
struct ScaleConfig {
    std::string name;
    int target_height = 0;
    int target_width = 0;
    int grid_rows = 0;
    int grid_cols = 0;

    int tile_count() const { return grid_rows * grid_cols; }
};

inline constexpr int kTileSide = 224;
inline constexpr int kCanonicalHeight = 896;
inline constexpr int kCanonicalWidth = 1792;

/// Named scales XS/S/M/L: 224x224 (1x1), 224x448 (1x2), 448x896 (2x4), 896x1792 (4x8).
const ScaleConfig& scale_by_name(const std::string& name);
const std::vector<ScaleConfig>& all_scales();

/// Ordered row-major set of 224x224 tiles plus the grid they came from.
struct TileBatch {
    std::vector<RasterImage> tiles;  // row-major
    int grid_rows = 0;
    int grid_cols = 0;
};

/// Rotates portrait inputs 90 degrees clockwise so width >= height.
/// Square inputs count as landscape and pass through unchanged.
RasterImage orient_landscape(const RasterImage& img);

/// Anisotropic bilinear resample of a landscape image to 896x1792.
RasterImage stretch_to_canonical(const RasterImage& img);

/// Bilinear resample of the 896x1792 canonical image to the scale's target dims.
/// Resizing to L is the identity.
RasterImage resize_to_scale(const RasterImage& img, const ScaleConfig& scale);

/// General bilinear resize, half-pixel-center mapping, borders clamped.
RasterImage resize_bilinear(const RasterImage& img, int out_h, int out_w);

/// Splits an image whose dims equal the scale's target dims into
/// grid_rows x grid_cols non-overlapping 224x224 tiles, row-major.
TileBatch tile(const RasterImage& img, const ScaleConfig& scale);

/// Exact inverse of tile(): reassembles the tiles into one image.
RasterImage stitch(const TileBatch& batch);

/// Per-channel (x - mean) / std, widened to the graph's scalar type.
/// Output shape [height, width, 3]. Throws on std <= 0.
nn::Tensor normalize(const RasterImage& img, const std::array<double, 3>& mean,
                     const std::array<double, 3>& stdev);

}  // namespace thumbqc
