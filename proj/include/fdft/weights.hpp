#pragma once

// FDWT weights container.
//
//   bytes 0-3   magic "FDWT"
//   u16         version (1)
//   u16         flags (0)
//   u32         tensor count
//   per tensor  u16 name length, UTF-8 name, u8 dtype, u8 rank, rank x u32
//               dims, row-major payload
//   u32         CRC-32 of every preceding byte
//
// All integers and floats are little-endian. dtype 0 is IEEE-754 float32;
// dtype 255 is raw bytes and is used for the "__config__" JSON header.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fdft {

inline constexpr std::uint16_t kWeightsVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeRaw = 255;
inline constexpr const char* kConfigTensorName = "__config__";

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct WeightsFile {
  std::string config_json;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_weights(const WeightsFile& file);
/// Throws FormatError (with byte offset) on any structural problem.
WeightsFile decode_weights(std::span<const std::uint8_t> bytes);

void write_weights(const std::filesystem::path& path, const WeightsFile& file);
WeightsFile read_weights(const std::filesystem::path& path);

}  // namespace fdft
