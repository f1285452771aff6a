#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "spi/detector.hpp"

namespace spi {

// Binary layout:
//   "SPICNN01"                      8 bytes
//   header length                   uint32 little-endian
//   header                          UTF-8 JSON {config, iteration, seed,
//                                   optimizer_state, layers:[{name, weights, bias}]}
//   blobs                           float32 little-endian: weights then bias
//                                   per layer in manifest order, followed by
//                                   the velocity buffers in the same order
//                                   when optimizer_state is true
inline constexpr char kCheckpointMagic[9] = "SPICNN01";

std::vector<std::uint8_t> serialize_checkpoint(const Model& model, bool include_optimizer_state = true);
Model deserialize_checkpoint(std::span<const std::uint8_t> bytes);

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const Model& model, const std::filesystem::path& path, bool include_optimizer_state = true);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace spi
