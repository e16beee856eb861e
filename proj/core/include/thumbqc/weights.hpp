#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "thumbqc/nn/params.hpp"

namespace thumbqc {

/// Payload precision of the weight container. f32 is the interchange
/// default; f64 preserves trained state bit-exactly.
enum class WeightDtype { f32, f64 };

/// Versioned binary tensor container:
///   magic "TQWB" | u32 version | u64 header length | JSON header | payloads.
/// The header lists tensor names, shapes, dtypes and flags plus a free-form
/// metadata map (seed provenance and the like). Payloads are raw
/// little-endian scalars in header order.
struct WeightFile {
    nn::ParamSet params;
    std::map<std::string, std::string> meta;
};

void save_weights(const nn::ParamSet& params, const std::filesystem::path& path,
                  WeightDtype dtype = WeightDtype::f64,
                  const std::map<std::string, std::string>& meta = {});

WeightFile load_weights(const std::filesystem::path& path);

/// Copies loaded tensors into an existing schema, checking that every
/// destination parameter is present with a matching shape. Throws
/// SchemaError naming the offending tensor.
void apply_weights(nn::ParamSet& dst, const WeightFile& src);

}  // namespace thumbqc
