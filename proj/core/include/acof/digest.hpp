#pragma once

#include <string>
#include <string_view>

namespace acof {

/// Lowercase hex SHA-256 of the input.
std::string sha256_hex(std::string_view data);

}  // namespace acof
