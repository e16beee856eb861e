#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace thumbqc {

inline constexpr int kLabelFS = 0;
inline constexpr int kLabelFFPE = 1;  // positive class

/// One slide record. label is -1 for unlabeled rows (inference-only
/// manifests); split may be empty.
struct ManifestRecord {
    std::string slide_id;
    std::string path;
    int label = -1;
    std::string dataset;
    std::string split;
};

struct Manifest {
    std::vector<ManifestRecord> records;

    std::vector<const ManifestRecord*> split(const std::string& name) const;
    /// slide_ids unique, splits in {train,val,test,""}, labels in {-1,0,1}.
    void validate() const;
};

int label_from_string(const std::string& s);  // FFPE/FS/1/0, case-insensitive
std::string label_to_string(int label);

/// CSV with header "slide_id,path,label,dataset,split"; .jsonl files carry
/// one object per line with identical keys. Dispatch is by extension.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest_csv(const Manifest& m, const std::filesystem::path& path);

/// Stratified split: per class, a seeded shuffle (Fisher-Yates over
/// mt19937, modulo draw) followed by floor/remainder allocation across
/// (train, val, test) in that order.
Manifest split_dataset(std::vector<ManifestRecord> records, const std::array<double, 3>& fractions,
                       uint64_t seed);

}  // namespace thumbqc
