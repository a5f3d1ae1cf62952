#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "sr3/training.hpp"

namespace sr3 {

/// Binary checkpoint layout (all integers little-endian):
///
///   magic "SR3CKPT\0" | u32 version
///   u32 header_len | header text: "key=value\n" lines, including "step"
///   schedule: u8 kind | u32 T | T x f64 beta
///   u32 rng_count | per generator: u32 len | state text
///   u32 tensor_count | per tensor: u32 name_len | name | u32 rank |
///                      rank x u32 extent | extent-product x f32 value
///   u32 CRC-32 of every preceding byte
///
/// Tensor names carry a group prefix: "param/", "ema/", "adam_m/", "adam_v/".
inline constexpr std::string_view kCheckpointMagic{"SR3CKPT\0", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const TrainState<T>& state);

template <typename T>
TrainState<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                const std::string& source = "<memory>");

template <typename T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path);

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path);

/// Value of a header key; throws FormatError when missing.
std::string header_value(const std::vector<std::pair<std::string, std::string>>& header,
                         const std::string& key);

}  // namespace sr3
