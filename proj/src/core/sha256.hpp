#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace plab {

// Streaming SHA-256; used to fingerprint checkpoint files and artifacts so
// downstream commands can refuse mismatched inputs.
class Sha256 {
  public:
    Sha256();
    void update(const void* data, size_t len);
    std::array<uint8_t, 32> finish();

  private:
    void process_block(const uint8_t* block);

    std::array<uint32_t, 8> state_;
    uint64_t total_len_ = 0;
    std::array<uint8_t, 64> buffer_{};
    size_t buffer_len_ = 0;
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

}  // namespace plab
