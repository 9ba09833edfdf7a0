#pragma once

#include <string>
#include <string_view>

namespace harness {

// SHA-256 of the input, lowercase hex.
std::string sha256_hex(std::string_view data);

// The 64-character all-zero digest used as the chain anchor.
const std::string& zero_digest();

}  // namespace harness
