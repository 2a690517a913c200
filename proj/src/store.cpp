#include "xaiport/store.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <fstream>

#include "xaiport/error.hpp"

namespace xaiport {

std::string sha256_hex(std::span<const std::byte> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(errc::storage_io, "SHA-256 digest failed");
  }
  static const char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

ArtifactStore::ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

std::string ArtifactStore::put(std::span<const std::byte> bytes) {
  const std::string id = sha256_hex(bytes);
  const auto path = root_ / id;
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) return id;

  // Unique temp name per writer, then rename: concurrent equal writes race
  // benignly to the same final content.
  static std::atomic<uint64_t> counter{0};
  const auto tmp = root_ / (id + ".tmp." + std::to_string(counter++));
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(errc::storage_io, "cannot open " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw Error(errc::storage_io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    if (!std::filesystem::exists(path)) {
      throw Error(errc::storage_io, "cannot store artifact " + id + ": " + ec.message());
    }
  }
  return id;
}

std::string ArtifactStore::put(std::string_view text) {
  return put(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::vector<std::byte> ArtifactStore::get(const std::string& id) const {
  std::ifstream f(root_ / id, std::ios::binary);
  if (!f) throw Error(errc::storage_io, "artifact not found: " + id);
  std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const std::byte*>(raw.data());
  return {p, p + raw.size()};
}

bool ArtifactStore::contains(const std::string& id) const {
  return std::filesystem::exists(root_ / id);
}

}  // namespace xaiport
