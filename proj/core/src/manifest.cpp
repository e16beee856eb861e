#include "thumbqc/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "thumbqc/errors.hpp"

namespace thumbqc {

using nlohmann::json;

std::vector<const ManifestRecord*> Manifest::split(const std::string& name) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records) {
        if (r.split == name) out.push_back(&r);
    }
    return out;
}

void Manifest::validate() const {
    std::set<std::string> ids;
    for (const auto& r : records) {
        if (r.slide_id.empty()) throw InvalidInput("manifest: empty slide_id");
        if (!ids.insert(r.slide_id).second) {
            throw InvalidInput("manifest: duplicate slide_id " + r.slide_id);
        }
        if (r.label < -1 || r.label > 1) throw InvalidInput("manifest: bad label for " + r.slide_id);
        if (!r.split.empty() && r.split != "train" && r.split != "val" && r.split != "test") {
            throw InvalidInput("manifest: bad split '" + r.split + "' for " + r.slide_id);
        }
    }
}

int label_from_string(const std::string& s) {
    std::string u;
    for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (u.empty()) return -1;
    if (u == "FFPE" || u == "1") return kLabelFFPE;
    if (u == "FS" || u == "0") return kLabelFS;
    throw InvalidInput("manifest: unknown label '" + s + "'");
}

std::string label_to_string(int label) {
    if (label == kLabelFFPE) return "FFPE";
    if (label == kLabelFS) return "FS";
    return "";
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

Manifest load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("manifest: empty file " + path.string());
    auto header = split_csv_line(line);
    const std::vector<std::string> expected = {"slide_id", "path", "label", "dataset", "split"};
    if (header != expected) {
        throw IoError("manifest: header must be 'slide_id,path,label,dataset,split' in " +
                      path.string());
    }
    Manifest m;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv_line(line);
        if (f.size() != 5) {
            throw IoError("manifest: line " + std::to_string(lineno) + " has " +
                          std::to_string(f.size()) + " fields, expected 5");
        }
        m.records.push_back({f[0], f[1], label_from_string(f[2]), f[3], f[4]});
    }
    m.validate();
    return m;
}

Manifest load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    Manifest m;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            ManifestRecord r;
            r.slide_id = j.at("slide_id").get<std::string>();
            r.path = j.at("path").get<std::string>();
            if (j.at("label").is_string()) {
                r.label = label_from_string(j["label"].get<std::string>());
            } else {
                r.label = j.at("label").get<int>();
            }
            r.dataset = j.at("dataset").get<std::string>();
            r.split = j.at("split").get<std::string>();
            m.records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw IoError("manifest: line " + std::to_string(lineno) + " of " + path.string() +
                          ": " + e.what());
        }
    }
    m.validate();
    return m;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
    if (path.extension() == ".jsonl") return load_jsonl(path);
    return load_csv(path);
}

void save_manifest_csv(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << "slide_id,path,label,dataset,split\n";
    for (const auto& r : m.records) {
        out << r.slide_id << ',' << r.path << ',' << label_to_string(r.label) << ',' << r.dataset
            << ',' << r.split << '\n';
    }
}

Manifest split_dataset(std::vector<ManifestRecord> records, const std::array<double, 3>& fractions,
                       uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("split_dataset: fractions must sum to 1");
    for (double f : fractions) {
        if (f < 0.0) throw InvalidInput("split_dataset: negative fraction");
    }

    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < records.size(); ++i) {
        if (records[i].label != 0 && records[i].label != 1) {
            throw InvalidInput("split_dataset: unlabeled record " + records[i].slide_id);
        }
        by_class[records[i].label].push_back(i);
    }
    if (by_class.size() < 2) throw InvalidInput("split_dataset: a class is absent");

    const char* names[3] = {"train", "val", "test"};
    std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
    for (auto& [label, idx] : by_class) {
        // Explicit Fisher-Yates with modulo draws so the assignment is
        // reproducible independent of the standard library.
        for (size_t i = idx.size(); i > 1; --i) {
            const size_t j = rng() % i;
            std::swap(idx[i - 1], idx[j]);
        }
        const size_t n = idx.size();
        std::array<size_t, 3> counts;
        size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            counts[s] = static_cast<size_t>(std::floor(fractions[s] * n));
            assigned += counts[s];
        }
        for (int s = 0; assigned < n; s = (s + 1) % 3) {
            if (fractions[s] > 0.0) {
                ++counts[s];
                ++assigned;
            }
        }
        size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            for (size_t k = 0; k < counts[s]; ++k) records[idx[pos++]].split = names[s];
        }
    }
    Manifest m;
    m.records = std::move(records);
    m.validate();
    return m;
}

}  // namespace thumbqc
