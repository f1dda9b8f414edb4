#pragma once

#include <string>

namespace plab {

// write-temp-then-rename so readers never observe a partial file
void write_file_atomic(const std::string& path, const std::string& bytes);

std::string read_file_bytes(const std::string& path);

void ensure_dir(const std::string& path);

bool file_exists(const std::string& path);

}  // namespace plab
