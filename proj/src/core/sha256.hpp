#pragma once

#include <span>
#include <string>
#include <vector>

namespace bvo {

// Lowercase hex SHA-256 digests (OpenSSL EVP underneath).
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);  // streams; Err::Io if unreadable

}  // namespace bvo
