#pragma once

#include <string>
#include <string_view>

namespace segadv {

/// Lowercase hex SHA-256 (OpenSSL EVP).
std::string sha256_hex(std::string_view bytes);

}  // namespace segadv
