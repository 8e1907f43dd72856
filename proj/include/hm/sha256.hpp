#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace hm {

// FIPS-180 SHA-256, streaming. Used for artifact checksums in run
// manifests and for weight-file integrity checks.
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    // finalizes and returns the lowercase hex digest; object must not be reused
    std::string hex_digest();

    static std::string of_bytes(const void* data, std::size_t len);
    static std::string of_string(const std::string& s);
    static std::string of_file(const std::string& path);  // throws DataError

private:
    void process_block(const std::uint8_t* block);

    std::uint32_t state_[8];
    std::uint64_t total_len_ = 0;
    std::uint8_t buffer_[64];
    std::size_t buffer_len_ = 0;
};

} // namespace hm
