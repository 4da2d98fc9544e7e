#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>

#include <json.hpp>

namespace bridgerag {

/// Build and query parameters. Persisted with every index file.
struct Config {
    uint32_t chunk_len = 128;
    uint32_t embed_dim = 256;
    uint32_t k = 5;
    uint32_t max_depth = 3;
    uint32_t min_entity_count = 2;
    uint32_t initial_buckets = 1024;
    uint32_t max_kicks = 500;
    uint64_t rng_seed = 0x5eed;
    std::string embed_provider = "hash";

    bool operator==(const Config&) const = default;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
        if (chunk_len < 16) fail("chunk_len must be >= 16");
        if (embed_dim == 0) fail("embed_dim must be >= 1");
        if (k < 1) fail("k must be >= 1");
        if (max_depth < 1 || max_depth > 3) fail("max_depth must be in 1..3");
        if (min_entity_count < 1) fail("min_entity_count must be >= 1");
        if (initial_buckets == 0 || (initial_buckets & (initial_buckets - 1)) != 0)
            fail("initial_buckets must be a power of two");
        if (max_kicks < 1) fail("max_kicks must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const Config& c) {
    j = nlohmann::json{{"chunk_len", c.chunk_len},
                       {"embed_dim", c.embed_dim},
                       {"k", c.k},
                       {"max_depth", c.max_depth},
                       {"min_entity_count", c.min_entity_count},
                       {"initial_buckets", c.initial_buckets},
                       {"max_kicks", c.max_kicks},
                       {"rng_seed", c.rng_seed},
                       {"embed_provider", c.embed_provider}};
}

inline void from_json(const nlohmann::json& j, Config& c) {
    Config d;
    c.chunk_len = j.value("chunk_len", d.chunk_len);
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.k = j.value("k", d.k);
    c.max_depth = j.value("max_depth", d.max_depth);
    c.min_entity_count = j.value("min_entity_count", d.min_entity_count);
    c.initial_buckets = j.value("initial_buckets", d.initial_buckets);
    c.max_kicks = j.value("max_kicks", d.max_kicks);
    c.rng_seed = j.value("rng_seed", d.rng_seed);
    c.embed_provider = j.value("embed_provider", d.embed_provider);
}

inline constexpr const char* kEnvPrefix = "BRIDGERAG_";

/// Applies BRIDGERAG_<FIELD> overrides (e.g. BRIDGERAG_CHUNK_LEN=256).
/// `getenv` is injectable for tests.
inline void apply_env_overrides(Config& c,
                                const std::function<const char*(const char*)>& getenv = [](const char* n) {
                                    return std::getenv(n);
                                }) {
    auto num = [&](const char* field, auto& target) {
        const std::string name = std::string(kEnvPrefix) + field;
        const char* v = getenv(name.c_str());
        if (!v) return;
        char* end = nullptr;
        errno = 0;
        const unsigned long long parsed = std::strtoull(v, &end, 0);
        if (*v == '\0' || *end != '\0' || errno != 0 || *v == '-')
            throw std::invalid_argument(name + ": not an unsigned integer: " + v);
        using T = std::remove_reference_t<decltype(target)>;
        if (parsed > std::numeric_limits<T>::max()) throw std::invalid_argument(name + ": out of range");
        target = static_cast<T>(parsed);
    };
    num("CHUNK_LEN", c.chunk_len);
    num("EMBED_DIM", c.embed_dim);
    num("K", c.k);
    num("MAX_DEPTH", c.max_depth);
    num("MIN_ENTITY_COUNT", c.min_entity_count);
    num("INITIAL_BUCKETS", c.initial_buckets);
    num("MAX_KICKS", c.max_kicks);
    num("RNG_SEED", c.rng_seed);
    const std::string provider_var = std::string(kEnvPrefix) + "EMBED_PROVIDER";
    if (const char* p = getenv(provider_var.c_str())) c.embed_provider = p;
}

}  // namespace bridgerag
