#include "fsio.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "common.hpp"

namespace plab {

void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        check(out.good(), errc::io, "cannot open for writing: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        check(out.good(), errc::io, "write failed: " + tmp);
    }
    check(std::rename(tmp.c_str(), path.c_str()) == 0, errc::io, "rename failed: " + path);
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), errc::io, "cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    check(!in.bad(), errc::io, "read failed: " + path);
    return bytes;
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    check(!ec, errc::io, "cannot create directory: " + path + " (" + ec.message() + ")");
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec) && !ec;
}

}  // namespace plab
