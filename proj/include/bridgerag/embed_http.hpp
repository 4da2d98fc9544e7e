#pragma once

#include <chrono>
#include <memory>
#include <semaphore>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "bridgerag/embed.hpp"

namespace bridgerag {

/// Remote embedding service speaking
///   POST <path>  {"texts": [str, ...]}  ->  {"vectors": [[f32, ...], ...]}
/// Returned vectors are checked for dimension and finiteness, then
/// L2-normalized. At most `max_in_flight` requests run at once.
class HttpEmbedder final : public Embedder {
public:
    /// `url` is "http://host:port/path".
    HttpEmbedder(std::string url, size_t dim, std::ptrdiff_t max_in_flight = 4,
                 std::chrono::milliseconds timeout = std::chrono::seconds(30))
        : url_(std::move(url)), dim_(dim), timeout_(timeout),
          slots_(std::make_unique<std::counting_semaphore<>>(max_in_flight)) {
        if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
        if (max_in_flight < 1) throw std::invalid_argument("max_in_flight must be >= 1");
        if (url_.rfind("http://", 0) != 0) throw std::invalid_argument("embedder url must start with http://: " + url_);
        const auto path = url_.find('/', 7);
        origin_ = url_.substr(0, path);
        path_ = path == std::string::npos ? "/" : url_.substr(path);
    }

    size_t dimension() const override { return dim_; }
    std::string provider() const override { return url_; }

    std::vector<float> embed(std::string_view text) const override {
        std::vector<std::string> one{std::string(text)};
        return embed_batch(one).front();
    }

    std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) const override {
        nlohmann::json body;
        body["texts"] = std::vector<std::string>(texts.begin(), texts.end());

        httplib::Result res;
        {
            struct Permit {
                std::counting_semaphore<>& s;
                explicit Permit(std::counting_semaphore<>& sem) : s(sem) { s.acquire(); }
                ~Permit() { s.release(); }
            } permit(*slots_);
            httplib::Client client(origin_);
            client.set_connection_timeout(timeout_);
            client.set_read_timeout(timeout_);
            res = client.Post(path_, body.dump(), "application/json");
        }

        if (!res) throw EmbeddingError("embedding request failed: " + httplib::to_string(res.error()), true);
        if (res->status == 429 || res->status >= 500)
            throw EmbeddingError("embedding service returned " + std::to_string(res->status), true);
        if (res->status != 200)
            throw EmbeddingError("embedding service returned " + std::to_string(res->status), false);

        std::vector<std::vector<float>> out;
        try {
            auto reply = nlohmann::json::parse(res->body);
            out = reply.at("vectors").get<std::vector<std::vector<float>>>();
        } catch (const nlohmann::json::exception& e) {
            throw EmbeddingError(std::string("malformed embedding response: ") + e.what(), false);
        }
        if (out.size() != texts.size()) throw EmbeddingError("embedding response has wrong vector count", false);
        for (auto& v : out) {
            if (v.size() != dim_) throw EmbeddingError("embedding response has wrong dimension", false);
            for (float x : v)
                if (!std::isfinite(x)) throw EmbeddingError("embedding response has non-finite values", false);
            normalize_or_basis(v);
        }
        return out;
    }

private:
    std::string url_;
    std::string origin_;
    std::string path_;
    size_t dim_;
    std::chrono::milliseconds timeout_;
    std::unique_ptr<std::counting_semaphore<>> slots_;
};

/// "hash" or an http:// URL.
inline std::shared_ptr<const Embedder> make_embedder(const std::string& provider, size_t dim) {
    if (provider.rfind("http://", 0) == 0) return std::make_shared<HttpEmbedder>(provider, dim);
    return make_local_embedder(provider, dim);
}

}  // namespace bridgerag
