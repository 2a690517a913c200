#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xaiport {

std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);

// Content-addressed blob store: id = lowercase hex SHA-256 of the bytes.
// Writes go through a temp file and rename, so concurrent writers of equal
// content are idempotent.
class ArtifactStore {
public:
  explicit ArtifactStore(std::filesystem::path root);

  std::string put(std::span<const std::byte> bytes);
  std::string put(std::string_view text);
  std::vector<std::byte> get(const std::string& id) const;
  bool contains(const std::string& id) const;

  const std::filesystem::path& root() const { return root_; }

private:
  std::filesystem::path root_;
};

}  // namespace xaiport
