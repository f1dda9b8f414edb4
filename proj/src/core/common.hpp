#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace plab {

// Error categories; the C API maps these 1:1 onto status codes.
enum class errc {
    invalid_argument = 1,
    dim_mismatch     = 2,
    io               = 3,
    format           = 4,
    numeric          = 5,
    eval             = 6,
};

class Error : public std::runtime_error {
  public:
    Error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    errc code() const { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) {
    throw Error(code, msg);
}

inline void check(bool cond, errc code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

// Counter-based deterministic generator (splitmix64). Unlike the std
// distributions, every draw is bit-reproducible across platforms.
struct Rng {
    uint64_t state;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) {
        return next_u64() % n;
    }

    // standard normal via Box-Muller (fresh pair every call, second value dropped
    // to keep draws independent of call history)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // derive an independent stream, e.g. per tensor or per example
    Rng fork(uint64_t salt) {
        uint64_t s = next_u64();
        return Rng(s ^ (salt * 0x9e3779b97f4a7c15ull + 0x165667b19e3779f9ull));
    }
};

// FNV-1a over arbitrary bytes; used for split assignment hashing.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace plab
