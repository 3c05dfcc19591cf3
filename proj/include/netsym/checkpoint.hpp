#pragma once

#include "netsym/network.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>

namespace netsym {

// NNCK v1 layout:
//   "NNCK" | u32 version | u64 header length | JSON header | f64 blobs (LE)
// The header carries the spec, dtype tag and per-tensor byte offsets relative
// to the start of the blob section.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Network& net, const nlohmann::json& metadata = {});
Network decode_checkpoint(std::string_view bytes, nlohmann::json* metadata = nullptr);

void save_checkpoint(const Network& net, const std::string& path,
                     const nlohmann::json& metadata = {});
Network load_checkpoint(const std::string& path, nlohmann::json* metadata = nullptr);

}  // namespace netsym
