#pragma once

#include <cstdint>
#include <filesystem>

#include "thumbqc/image.hpp"
#include "thumbqc/manifest.hpp"

namespace thumbqc {

/// Seeded generator of two visually distinct thumbnail classes for
/// self-tests, demos and the latency bench:
///   FFPE (label 1): smooth low-frequency texture on a pinkish base.
///   FS (label 0): the same base overlaid with high-frequency speckle and
///   dark tearing streaks.
struct SyntheticSpec {
    int n_train = 16;
    int n_val = 8;
    int n_test = 16;
    uint64_t seed = 7;
    int min_height = 410;
    int max_height = 520;
    /// Every 5th image is emitted portrait to exercise orientation.
    bool mix_orientations = true;
};

/// One thumbnail, deterministic in (seed, label). Dims are h x w; pass 0,0
/// to let the generator pick a size from the seed.
RasterImage synthetic_thumbnail(uint64_t seed, int label, int h = 0, int w = 0);

/// Writes PPM thumbnails plus manifest.csv under dir; returns the manifest
/// (dataset name "synthetic", class-balanced splits of the requested sizes).
Manifest write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace thumbqc
