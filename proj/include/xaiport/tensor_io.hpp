#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "xaiport/tensor.hpp"

namespace xaiport {

// XTEN wire format, bit-exact: magic "XTEN1", little-endian u32 rank,
// rank x little-endian u32 extents, then the raw little-endian f32 payload.
std::vector<std::byte> to_xten(const Tensor& t);
Tensor from_xten(std::span<const std::byte> bytes);

void save_xten(const std::filesystem::path& path, const Tensor& t);
Tensor load_xten(const std::filesystem::path& path);

// Raw payload section only (little-endian f32, row-major); the /v1/score wire
// protocol ships this next to an explicit shape field.
std::vector<std::byte> xten_payload(const Tensor& t);
Tensor tensor_from_payload(std::span<const std::byte> payload, std::vector<uint32_t> dims);

}  // namespace xaiport
