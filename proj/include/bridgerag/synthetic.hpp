#pragma once

// Synthetic corpora with planted entities and relations, plus query
// workloads over them. Every sentence is exactly eight whitespace tokens and
// every non-entity word is in the default stoplist, so the planted entities
// are the only concepts the default extractor can find.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "bridgerag/abstract_forest.hpp"
#include "bridgerag/ingest.hpp"

namespace bridgerag {

struct SyntheticOptions {
    size_t documents = 1000;
    size_t chunks_per_doc = 5;
    size_t entities = 700;
    /// With the default chunk_len of 128, 16 eight-token sentences fill a chunk exactly.
    size_t sentences_per_chunk = 16;
    uint64_t seed = 0x5eed;
};

struct SyntheticCorpus {
    std::vector<CorpusDocument> docs;
    std::vector<std::string> entities;
    /// Planted explicit-pattern relations (child -> parent).
    std::vector<RelationEdge> relations;
};

inline constexpr size_t kSyntheticGroupSize = 7;

/// Distinct pseudo-words that are not stopwords.
inline std::vector<std::string> pseudo_words(size_t n, std::mt19937_64& rng) {
    static const char* syllables[] = {"ba", "ke", "lo", "mi", "nu", "ra", "se", "ti", "vo", "zu", "da", "fe",
                                      "go", "hi", "ju", "pa", "ri", "so", "ta", "ve", "xo", "ku", "ze", "mo"};
    constexpr size_t kSyl = std::size(syllables);
    std::set<std::string> seen;
    std::vector<std::string> out;
    while (out.size() < n) {
        std::string w;
        const size_t parts = 3 + rng() % 2;
        for (size_t i = 0; i < parts; ++i) w += syllables[rng() % kSyl];
        w += "nrx"[rng() % 3];
        if (default_stoplist().count(w) || !seen.insert(w).second) continue;
        out.push_back(std::move(w));
    }
    return out;
}

/// Entities come in groups of seven arranged as a binary tree (member 0 is
/// the root, members 2j+1 and 2j+2 are children of member j). Document d
/// talks only about group d mod G, mixing association sentences, the
/// group's planted relations and filler.
inline SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& o) {
    if (o.entities < 2) throw std::invalid_argument("synthetic corpus needs at least 2 entities");
    std::mt19937_64 rng(o.seed);
    SyntheticCorpus out;
    out.entities = pseudo_words(o.entities, rng);

    const size_t groups = (o.entities + kSyntheticGroupSize - 1) / kSyntheticGroupSize;
    auto member = [&](size_t g, size_t j) -> const std::string& { return out.entities[g * kSyntheticGroupSize + j]; };
    auto group_size = [&](size_t g) { return std::min(kSyntheticGroupSize, o.entities - g * kSyntheticGroupSize); };

    std::vector<std::vector<std::pair<size_t, size_t>>> tree_edges(groups);  // (child, parent) member indices
    for (size_t g = 0; g < groups; ++g)
        for (size_t c = 1; c < group_size(g); ++c) {
            tree_edges[g].push_back({c, (c - 1) / 2});
            out.relations.push_back({member(g, c), member(g, (c - 1) / 2), RelationKind::belongs_to, 2});
        }

    const size_t sentences = o.chunks_per_doc * o.sentences_per_chunk;
    for (size_t d = 0; d < o.documents; ++d) {
        const size_t g = d % groups;
        const size_t size = group_size(g);
        auto pick = [&] { return member(g, rng() % size); };
        auto pick_other = [&](const std::string& not_this) {
            if (size == 1) return not_this;
            for (;;) {
                const auto& e = pick();
                if (e != not_this) return e;
            }
        };
        std::string doc;
        for (size_t s = 0; s < sentences; ++s) {
            if (!doc.empty()) doc.push_back(' ');
            const uint64_t kind = rng() % 8;
            if ((kind == 0 || kind == 1) && !tree_edges[g].empty()) {
                const auto [c, p] = tree_edges[g][rng() % tree_edges[g].size()];
                const auto& child = member(g, c);
                const auto& parent = member(g, p);
                if (kind == 0) {
                    doc += "The " + child + " belongs to the " + parent + " as reported.";
                } else {
                    doc += "The " + child + " is dependent on the " + parent + " here.";
                }
            } else if (kind == 2 && size >= 3) {
                // Both children of one parent, joined by a conjunction.
                const size_t p = rng() % ((size - 1) / 2);
                doc += "The " + member(g, p) + " contains the " + member(g, 2 * p + 1) + " and the " +
                       member(g, 2 * p + 2) + ".";
            } else if (kind == 3) {
                doc += "Further details were described in the previous work.";
            } else if (kind == 4 || kind == 5) {
                const auto& a = pick();
                doc += "The " + a + " is often related to the " + pick_other(a) + ".";
            } else if (kind == 6) {
                const auto& a = pick();
                doc += "This study observed the " + a + " with the " + pick_other(a) + ".";
            } else {
                const auto& a = pick();
                doc += "The " + a + " was also studied with the " + pick_other(a) + ".";
            }
        }
        out.docs.push_back({"doc-" + std::to_string(d), std::move(doc)});
    }
    return out;
}

/// Zipf(s) sampler over ranks 0..n-1.
class ZipfSampler {
public:
    ZipfSampler(size_t n, double s) : cdf_(n) {
        double acc = 0.0;
        for (size_t r = 0; r < n; ++r) cdf_[r] = acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
        for (auto& c : cdf_) c /= acc;
    }
    size_t operator()(std::mt19937_64& rng) const {
        const double u = std::generate_canonical<double, 53>(rng);
        return static_cast<size_t>(std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin()) % cdf_.size();
    }

private:
    std::vector<double> cdf_;
};

/// Questions naming `per_query` entities drawn Zipf(s) from a seeded
/// permutation of `entities`.
inline std::vector<std::string> zipf_queries(const std::vector<std::string>& entities, size_t count, double s,
                                             uint64_t seed, size_t per_query = 2) {
    if (entities.empty()) throw std::invalid_argument("zipf_queries: no entities");
    std::mt19937_64 rng(seed);
    std::vector<std::string> ranked = entities;
    std::shuffle(ranked.begin(), ranked.end(), rng);
    ZipfSampler zipf(ranked.size(), s);
    std::vector<std::string> out;
    out.reserve(count);
    for (size_t q = 0; q < count; ++q) {
        std::string query = "What is known about the " + ranked[zipf(rng)];
        for (size_t i = 1; i < per_query; ++i) query += " and the " + ranked[zipf(rng)];
        out.push_back(query + "?");
    }
    return out;
}

/// Questions with uniformly drawn entities.
inline std::vector<std::string> uniform_queries(const std::vector<std::string>& entities, size_t count, uint64_t seed,
                                                size_t per_query = 2) {
    if (entities.empty()) throw std::invalid_argument("uniform_queries: no entities");
    std::mt19937_64 rng(seed);
    std::vector<std::string> out;
    for (size_t q = 0; q < count; ++q) {
        std::string query = "What is known about the " + entities[rng() % entities.size()];
        for (size_t i = 1; i < per_query; ++i) query += " and the " + entities[rng() % entities.size()];
        out.push_back(query + "?");
    }
    return out;
}

}  // namespace bridgerag
