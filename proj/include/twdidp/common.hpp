#ifndef TWDIDP_COMMON_HPP
#define TWDIDP_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace twdidp {

// Thrown when a partialled-out design has no usable variation left
// (relative singular value below threshold and no ridge requested).
struct SingularDesignError : std::runtime_error {
    explicit SingularDesignError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown by estimating-equation solvers when the stacked linear system is
// inconsistent or numerically unusable.
struct SingularSystemError : std::runtime_error {
    explicit SingularSystemError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InsufficientDataError : std::runtime_error {
    explicit InsufficientDataError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64: cheap, well-mixed 64-bit hash used to derive independent
// RNG streams from a master seed plus stream tags.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t tag) {
    return splitmix64(splitmix64(master) ^ splitmix64(tag * 0x9e3779b97f4a7c15ULL + 1));
}

inline uint64_t derive_seed(uint64_t master, uint64_t tag1, uint64_t tag2) {
    return derive_seed(derive_seed(master, tag1), tag2);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(splitmix64(seed)); }

// FNV-1a over a string; used for config digests.
inline std::string fnv1a_hex(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace twdidp

#endif
