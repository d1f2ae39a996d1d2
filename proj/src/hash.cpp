#include "ordermerge/hash.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include "ordermerge/errors.hpp"

namespace ordermerge {

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw StorageError("SHA-256 digest failed");
    }
    std::string hex;
    hex.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

} // namespace ordermerge
