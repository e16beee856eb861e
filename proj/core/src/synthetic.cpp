#include "thumbqc/synthetic.hpp"

#include <cmath>
#include <random>

#include "thumbqc/errors.hpp"
#include "thumbqc/image_io.hpp"

namespace thumbqc {

namespace {

uint32_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t x = seed * 0x9e3779b97f4a7c15ull + salt * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull;
    x ^= x >> 31;
    x *= 0xd6e8feb86659fd93ull;
    x ^= x >> 27;
    return static_cast<uint32_t>(x);
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

RasterImage synthetic_thumbnail(uint64_t seed, int label, int h, int w) {
    if (label != 0 && label != 1) throw InvalidInput("synthetic_thumbnail: label must be 0 or 1");
    std::mt19937 rng(mix_seed(seed, static_cast<uint64_t>(label) + 101));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    if (h <= 0 || w <= 0) {
        h = 410 + static_cast<int>(rng() % 111);
        w = 2 * h + static_cast<int>(rng() % 64);
    }
    RasterImage img(h, w);

    // Smooth low-frequency base shared by both classes; FFPE leans pink,
    // FS slightly gray-blue.
    const double base[3] = {label == 1 ? 0.86 : 0.80, label == 1 ? 0.70 : 0.76,
                            label == 1 ? 0.82 : 0.84};
    struct Wave {
        double fy, fx, phase, amp;
    };
    Wave waves[3];
    for (auto& wv : waves) {
        wv.fy = 0.5 + 2.0 * u01(rng);
        wv.fx = 0.5 + 2.0 * u01(rng);
        wv.phase = 2.0 * M_PI * u01(rng);
        wv.amp = 0.04 + 0.05 * u01(rng);
    }
    const double tint[3] = {0.02 * (u01(rng) - 0.5), 0.02 * (u01(rng) - 0.5),
                            0.02 * (u01(rng) - 0.5)};

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double field = 0.0;
            for (const auto& wv : waves) {
                field += wv.amp * std::sin(2.0 * M_PI * (wv.fy * r / h + wv.fx * c / w) + wv.phase);
            }
            for (int ch = 0; ch < 3; ++ch) {
                img.at(r, c, ch) = clamp01(base[ch] + tint[ch] + field);
            }
        }
    }

    if (label == 0) {
        // Freezing artefacts: per-pixel speckle plus dark tearing streaks.
        std::uniform_real_distribution<double> noise(-0.28, 0.28);
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                const double nse = noise(rng);
                for (int ch = 0; ch < 3; ++ch) {
                    img.at(r, c, ch) = clamp01(img.at(r, c, ch) + nse);
                }
            }
        }
        const int n_streaks = 8 + static_cast<int>(rng() % 9);
        for (int s = 0; s < n_streaks; ++s) {
            const bool vertical = u01(rng) < 0.7;
            const double darken = 0.45 + 0.25 * u01(rng);
            const int width = 2 + static_cast<int>(rng() % 4);
            if (vertical) {
                const int c0 = static_cast<int>(rng() % std::max(1, w - width));
                for (int r = 0; r < h; ++r)
                    for (int c = c0; c < c0 + width; ++c)
                        for (int ch = 0; ch < 3; ++ch)
                            img.at(r, c, ch) = static_cast<float>(img.at(r, c, ch) * darken);
            } else {
                const int r0 = static_cast<int>(rng() % std::max(1, h - width));
                for (int r = r0; r < r0 + width; ++r)
                    for (int c = 0; c < w; ++c)
                        for (int ch = 0; ch < 3; ++ch)
                            img.at(r, c, ch) = static_cast<float>(img.at(r, c, ch) * darken);
            }
        }
    }
    return img;
}

Manifest write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const int total = spec.n_train + spec.n_val + spec.n_test;
    if (total < 2) throw InvalidInput("write_synthetic_dataset: too few slides");

    Manifest m;
    int index = 0;
    auto emit = [&](const char* split, int count) {
        for (int i = 0; i < count; ++i, ++index) {
            const int label = index % 2;  // class-balanced, alternating
            RasterImage img = synthetic_thumbnail(mix_seed(spec.seed, index), label);
            if (spec.mix_orientations && index % 5 == 4) {
                // Emit portrait: transpose so the loader must re-orient.
                RasterImage p(img.width, img.height);
                for (int r = 0; r < p.height; ++r)
                    for (int c = 0; c < p.width; ++c)
                        for (int ch = 0; ch < 3; ++ch) p.at(r, c, ch) = img.at(c, r, ch);
                img = std::move(p);
            }
            char name[64];
            std::snprintf(name, sizeof(name), "syn_%03d", index);
            const std::filesystem::path path = dir / (std::string(name) + ".ppm");
            save_ppm(img, path);
            m.records.push_back({name, path.string(), label, "synthetic", split});
        }
    };
    emit("train", spec.n_train);
    emit("val", spec.n_val);
    emit("test", spec.n_test);
    m.validate();
    save_manifest_csv(m, dir / "manifest.csv");
    return m;
}

}  // namespace thumbqc
