#include "thumbqc/weights.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "thumbqc/errors.hpp"

namespace thumbqc {

namespace {

constexpr char kMagic[4] = {'T', 'Q', 'W', 'B'};
constexpr uint32_t kVersion = 1;

using nlohmann::json;

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace

void save_weights(const nn::ParamSet& params, const std::filesystem::path& path, WeightDtype dtype,
                  const std::map<std::string, std::string>& meta) {
    json header;
    header["version"] = kVersion;
    header["meta"] = meta;
    json tensors = json::array();
    for (const nn::Parameter* p : params.all()) {
        json t;
        t["name"] = p->name;
        t["shape"] = p->value.shape();
        t["dtype"] = dtype == WeightDtype::f32 ? "f32" : "f64";
        t["buffer"] = p->buffer;
        t["decay"] = p->weight_decay;
        tensors.push_back(std::move(t));
    }
    header["tensors"] = std::move(tensors);
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out.write(kMagic, 4);
    uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    for (const nn::Parameter* p : params.all()) {
        if (dtype == WeightDtype::f32) {
            std::vector<float> buf(p->value.size());
            for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p->value[i]);
            out.write(reinterpret_cast<const char*>(buf.data()),
                      static_cast<std::streamsize>(buf.size() * sizeof(float)));
        } else {
            out.write(reinterpret_cast<const char*>(p->value.data()),
                      static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

WeightFile load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw SchemaError("not a weight container (bad magic): " + path.string());
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kVersion) {
        throw SchemaError("unsupported weight container version " + std::to_string(version) +
                          " in " + path.string());
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || hlen == 0 || hlen > (64u << 20)) {
        throw SchemaError("corrupt header length in " + path.string());
    }
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (static_cast<uint64_t>(in.gcount()) != hlen) {
        throw SchemaError("truncated header in " + path.string());
    }

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw SchemaError("malformed header JSON in " + path.string() + ": " + e.what());
    }

    WeightFile wf;
    try {
        for (const auto& [k, v] : header.at("meta").items()) {
            wf.meta[k] = v.get<std::string>();
        }
        for (const auto& t : header.at("tensors")) {
            const std::string name = t.at("name").get<std::string>();
            const std::vector<int> shape = t.at("shape").get<std::vector<int>>();
            const std::string dt = t.at("dtype").get<std::string>();
            if (dt != "f32" && dt != "f64") {
                throw SchemaError("tensor " + name + ": unsupported dtype " + dt);
            }
            nn::Parameter& p = wf.params.add(name, shape);
            p.buffer = t.value("buffer", false);
            p.trainable = !p.buffer;
            p.weight_decay = t.value("decay", false);
            const size_t count = p.value.size();
            if (dt == "f32") {
                std::vector<float> buf(count);
                in.read(reinterpret_cast<char*>(buf.data()),
                        static_cast<std::streamsize>(count * sizeof(float)));
                if (static_cast<size_t>(in.gcount()) != count * sizeof(float)) {
                    throw SchemaError("truncated payload for tensor " + name + " in " +
                                      path.string());
                }
                for (size_t i = 0; i < count; ++i) p.value[i] = buf[i];
            } else {
                in.read(reinterpret_cast<char*>(p.value.data()),
                        static_cast<std::streamsize>(count * sizeof(double)));
                if (static_cast<size_t>(in.gcount()) != count * sizeof(double)) {
                    throw SchemaError("truncated payload for tensor " + name + " in " +
                                      path.string());
                }
            }
        }
    } catch (const json::exception& e) {
        throw SchemaError("malformed tensor entry in " + path.string() + ": " + e.what());
    }
    return wf;
}

void apply_weights(nn::ParamSet& dst, const WeightFile& src) {
    for (nn::Parameter* p : dst.all()) {
        if (!src.params.has(p->name)) {
            throw SchemaError("weight container is missing tensor " + p->name);
        }
        const nn::Parameter& s = src.params.get(p->name);
        if (s.value.shape() != p->value.shape()) {
            throw SchemaError("tensor " + p->name + " has shape " + shape_str(s.value.shape()) +
                              ", expected " + shape_str(p->value.shape()));
        }
        p->value = s.value;
    }
}

}  // namespace thumbqc
