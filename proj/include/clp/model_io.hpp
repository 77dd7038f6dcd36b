#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clp/model_graph.hpp"

namespace clp {

// CLPW weight file:
//   bytes 0..3   magic "CLPW"
//   bytes 4..7   format version, u32 little-endian (currently 1)
//   bytes 8..11  manifest length in bytes, u32 little-endian
//   manifest     UTF-8 text, one record per line (see docs/clpw-format.md)
//   blobs        raw little-endian float32 tensors, in manifest order
// Nothing may follow the last blob.
inline constexpr char kClpwMagic[4] = {'C', 'L', 'P', 'W'};
inline constexpr std::uint32_t kClpwVersion = 1;

std::vector<std::uint8_t> serialize_model(const ModelGraph& model);
ModelGraph deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

// The text manifest alone, for diagnostics.
std::string model_manifest(const ModelGraph& model);

}  // namespace clp
