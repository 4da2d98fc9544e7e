#pragma once

#include <cstdint>
#include <string_view>

namespace bridgerag {

// Fixed, platform-independent 64-bit hashing. Every value that ends up on
// disk or in a regression vector goes through these functions, so they must
// never change without bumping the index format version.

inline constexpr uint64_t kHashSeed = 0x2545f4914f6cdd1dULL;

/// MurmurHash3 64-bit finalizer.
constexpr uint64_t fmix64(uint64_t k) noexcept {
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 33;
    k *= 0xc4ceb9fe1a85ec53ULL;
    k ^= k >> 33;
    return k;
}

constexpr uint64_t fnv1a64(std::string_view bytes) noexcept {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Full 64-bit hash of a byte string: FNV-1a folded through fmix64.
constexpr uint64_t hash_bytes(std::string_view bytes, uint64_t seed = kHashSeed) noexcept {
    return fmix64(fnv1a64(bytes) ^ seed);
}

constexpr uint64_t hash_u64(uint64_t v, uint64_t seed = kHashSeed) noexcept {
    return fmix64(v + seed);
}

}  // namespace bridgerag
