#pragma once

#include <filesystem>
#include <string>

#include "thumbqc/image.hpp"

namespace thumbqc {

/// Loads a PNG or PPM (P6) thumbnail, sniffing the format from the file's
/// magic bytes. 8-bit samples are mapped to [0,1] by dividing by 255;
/// 16-bit PNGs are reduced to 8 bits first, grayscale is expanded to RGB
/// and alpha is dropped. Throws IoError on unreadable or malformed files.
///
/// Ingestion contract for upstream exporters: supply the WSI's stored
/// auxiliary thumbnail or, if none exists, the lowest pyramid level resized
/// so that its longest side is 1,920 px. This library never opens WSI
/// containers itself.
RasterImage load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; intensities are clamped to [0,1] and scaled by 255.
void save_png(const RasterImage& img, const std::filesystem::path& path);

/// Writes a binary PPM (P6), same quantization as save_png.
void save_ppm(const RasterImage& img, const std::filesystem::path& path);

/// Dispatches on the extension: ".ppm" -> PPM, anything else -> PNG.
void save_image(const RasterImage& img, const std::filesystem::path& path);

}  // namespace thumbqc
