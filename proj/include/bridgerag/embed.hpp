#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bridgerag/hash.hpp"
#include "bridgerag/text.hpp"

namespace bridgerag {

inline constexpr size_t kDefaultEmbeddingDim = 256;

/// Raised by embedding providers. Transport failures and server overload are
/// retryable; malformed responses are not.
class EmbeddingError : public std::runtime_error {
public:
    EmbeddingError(const std::string& what, bool retryable) : std::runtime_error(what), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

/// Scales `v` to unit L2 norm. A zero (or non-finite) vector becomes e0.
inline void normalize_or_basis(std::vector<float>& v) {
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    if (!(sq > 0.0) || !std::isfinite(sq)) {
        std::fill(v.begin(), v.end(), 0.0f);
        if (!v.empty()) v[0] = 1.0f;
        return;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (float& x : v) x = static_cast<float>(x * inv);
}

/// Text -> unit vector of a fixed dimension. Implementations are stateless
/// from the caller's point of view and safe to share across threads.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual size_t dimension() const = 0;
    virtual std::vector<float> embed(std::string_view text) const = 0;
    virtual std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) const {
        std::vector<std::vector<float>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed(t));
        return out;
    }
    /// Provider name persisted with an index, e.g. "hash".
    virtual std::string provider() const = 0;
};

/// Signed feature hashing of lowercased word tokens into `dim` buckets.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(size_t dim = kDefaultEmbeddingDim, uint64_t seed = 0x9e3779b97f4a7c15ULL)
        : dim_(dim), seed_(seed) {
        if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
    }

    size_t dimension() const override { return dim_; }
    std::string provider() const override { return "hash"; }

    std::vector<float> embed(std::string_view s) const override {
        std::vector<float> v(dim_, 0.0f);
        for (const auto& tok : text::word_tokens(s)) {
            const uint64_t h = hash_bytes(tok, seed_);
            v[h % dim_] += (h >> 63) ? -1.0f : 1.0f;
        }
        normalize_or_basis(v);
        return v;
    }

private:
    size_t dim_;
    uint64_t seed_;
};

using EmbedderFactory = std::function<std::shared_ptr<const Embedder>(const std::string& provider, size_t dim)>;

/// Factory for in-process providers. Remote providers live in embed_http.hpp.
inline std::shared_ptr<const Embedder> make_local_embedder(const std::string& provider, size_t dim) {
    if (provider.empty() || provider == "hash") return std::make_shared<HashingEmbedder>(dim);
    throw std::invalid_argument("unsupported embedding provider: " + provider);
}

/// Plain dot product accumulated in double.
inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
    double acc = 0.0;
    const size_t n = std::min(a.size(), b.size());
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

/// q·c / (|q| |c|). Zero vectors score 0.
inline double cosine_similarity(std::span<const float> q, std::span<const float> c) {
    if (q.size() != c.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    double qq = 0.0, cc = 0.0, qc = 0.0;
    for (size_t i = 0; i < q.size(); ++i) {
        qq += static_cast<double>(q[i]) * q[i];
        cc += static_cast<double>(c[i]) * c[i];
        qc += static_cast<double>(q[i]) * c[i];
    }
    if (qq == 0.0 || cc == 0.0) return 0.0;
    return qc / (std::sqrt(qq) * std::sqrt(cc));
}

}  // namespace bridgerag
