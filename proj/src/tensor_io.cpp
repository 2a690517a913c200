#include "xaiport/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "xaiport/error.hpp"

namespace xaiport {

namespace {

constexpr char kMagic[5] = {'X', 'T', 'E', 'N', '1'};

void put_u32_le(std::vector<std::byte>& out, uint32_t v) {
  out.push_back(std::byte(v & 0xff));
  out.push_back(std::byte((v >> 8) & 0xff));
  out.push_back(std::byte((v >> 16) & 0xff));
  out.push_back(std::byte((v >> 24) & 0xff));
}

uint32_t get_u32_le(std::span<const std::byte> b, std::size_t off) {
  return uint32_t(b[off]) | uint32_t(b[off + 1]) << 8 | uint32_t(b[off + 2]) << 16 |
         uint32_t(b[off + 3]) << 24;
}

}  // namespace

std::vector<std::byte> xten_payload(const Tensor& t) {
  std::vector<std::byte> out;
  out.reserve(t.size() * 4);
  for (float f : t.data()) {
    uint32_t bits = std::bit_cast<uint32_t>(f);
    put_u32_le(out, bits);
  }
  return out;
}

Tensor tensor_from_payload(std::span<const std::byte> payload, std::vector<uint32_t> dims) {
  std::size_t n = 1;
  for (uint32_t d : dims) n *= d;
  if (payload.size() != n * 4) {
    throw Error(errc::protocol_malformed, "payload has " + std::to_string(payload.size()) +
                                              " bytes, shape needs " + std::to_string(n * 4));
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<float>(get_u32_le(payload, i * 4));
  }
  return Tensor(std::move(dims), std::move(data));
}

std::vector<std::byte> to_xten(const Tensor& t) {
  std::vector<std::byte> out;
  out.reserve(5 + 4 + t.dims().size() * 4 + t.size() * 4);
  for (char c : kMagic) out.push_back(std::byte(c));
  put_u32_le(out, uint32_t(t.dims().size()));
  for (uint32_t d : t.dims()) put_u32_le(out, d);
  auto payload = xten_payload(t);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Tensor from_xten(std::span<const std::byte> bytes) {
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 5) != 0) {
    throw Error(errc::protocol_malformed, "not an XTEN blob");
  }
  uint32_t rank = get_u32_le(bytes, 5);
  if (rank == 0 || bytes.size() < 9 + std::size_t(rank) * 4) {
    throw Error(errc::protocol_malformed, "truncated XTEN header");
  }
  std::vector<uint32_t> dims(rank);
  for (uint32_t i = 0; i < rank; ++i) dims[i] = get_u32_le(bytes, 9 + std::size_t(i) * 4);
  return tensor_from_payload(bytes.subspan(9 + std::size_t(rank) * 4), std::move(dims));
}

void save_xten(const std::filesystem::path& path, const Tensor& t) {
  auto bytes = to_xten(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(errc::storage_io, "cannot open " + path.string() + " for write");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw Error(errc::storage_io, "short write to " + path.string());
}

Tensor load_xten(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(errc::storage_io, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_xten(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace xaiport
