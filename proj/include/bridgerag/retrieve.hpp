#pragma once

#include <algorithm>
#include <chrono>
#include <mutex>
#include <numeric>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "bridgerag/embed.hpp"
#include "bridgerag/ingest.hpp"

namespace bridgerag {

struct ScoredChunk {
    ChunkId id = 0;
    double score = 0.0;
    friend bool operator==(const ScoredChunk&, const ScoredChunk&) = default;
};

/// Score descending, then chunk id ascending.
inline bool ranks_before(const ScoredChunk& a, const ScoredChunk& b) noexcept {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
}

/// The k best candidates by cosine similarity to `q`, in rank order.
inline std::vector<ScoredChunk> select_top_k(std::span<const ChunkId> candidates, std::span<const float> q, size_t k,
                                             const ChunkStore& store) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    std::vector<ScoredChunk> scored;
    scored.reserve(candidates.size());
    for (ChunkId c : candidates) scored.push_back({c, cosine_similarity(q, store.vector(c))});
    const size_t keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), ranks_before);
    scored.resize(keep);
    return scored;
}

/// Longest-match, non-overlapping dictionary entities in query order,
/// each reported once.
inline std::vector<std::string> recognize_query_entities(std::string_view query, const EntityDictionary& dict) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (auto& e : dict.match_text(query))
        if (seen.insert(e).second) out.push_back(std::move(e));
    return out;
}

struct RetrievalTiming {
    double embed = 0, recognize = 0, lookup = 0, expand = 0, select = 0, prompt = 0, resort = 0, total = 0;  // µs
};

struct ContextResult {
    std::string query;
    bool fallback = false;
    std::vector<std::string> entities;
    std::vector<PairId> initial_abstracts;   // ascending
    std::vector<PairId> expanded_abstracts;  // ascending
    std::vector<ChunkId> candidate_chunks;   // ascending
    std::vector<ScoredChunk> chunks;         // rank order
    std::vector<PairId> selected_abstracts;  // ascending
    std::string prompt;
    RetrievalTiming timing;
};

struct RetrieveOptions {
    size_t k = 5;
    uint32_t max_depth = 3;
    /// Resort dirty filter buckets after the query. Off for ablation runs.
    bool resort = true;
};

inline constexpr const char* kSystemLine = "System: Answer the question using the provided information.";

/// System line, then Information (chunk texts in rank order), Abstracts
/// (summaries of selected abstracts by pair id) and Question blocks,
/// separated by blank lines.
inline std::string assemble_prompt(const ContextResult& result, std::string_view query, const ChunkStore& chunks,
                                   const AbstractForest& forest) {
    std::string p = kSystemLine;
    p += "\n\nInformation:\n";
    for (const auto& c : result.chunks) p += chunks.texts.at(c.id) + "\n";
    p += "\nAbstracts:\n";
    for (PairId a : result.selected_abstracts) p += forest.at(a).summary + "\n";
    p += "\nQuestion:\n";
    p.append(query);
    p += "\n";
    return p;
}

inline RetrieveOptions default_retrieve_options(const Config& c) { return {c.k, c.max_depth, true}; }

/// Query embedding, entity recognition, filter lookup and temperature
/// bump, hierarchy expansion, abstract-to-chunk bridge, top-k selection and
/// prompt assembly. Falls back to scoring every chunk when no entity maps to
/// an abstract. Safe to call concurrently on one bundle.
inline ContextResult retrieve_context(std::string_view query, const RetrieveOptions& opts, const IndexBundle& bundle) {
    if (opts.k < 1) throw std::invalid_argument("k must be >= 1");
    if (opts.max_depth < 1 || opts.max_depth > 3) throw std::invalid_argument("max_depth must be in 1..3");
    using clock = std::chrono::steady_clock;
    auto us = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::micro>(b - a).count();
    };
    ContextResult r;
    r.query = std::string(query);
    const auto t0 = clock::now();
    const auto q = bundle.embedder->embed(query);
    const auto t1 = clock::now();
    r.entities = recognize_query_entities(query, bundle.dictionary);
    const auto t2 = clock::now();

    bool bumped = false;
    {
        std::shared_lock lock(*bundle.filter_mutex);
        std::vector<PairId> ids;
        // Temperature counters are atomic, so the bump runs under the shared lock.
        auto& filter = bundle.filter;
        for (const auto& e : r.entities) {
            const auto key = EntityKey::of(e);
            if (!filter.lookup_into(key, ids)) continue;
            r.initial_abstracts.insert(r.initial_abstracts.end(), ids.begin(), ids.end());
            filter.increment_temperature(key);
            bumped = true;
        }
    }
    std::sort(r.initial_abstracts.begin(), r.initial_abstracts.end());
    r.initial_abstracts.erase(std::unique(r.initial_abstracts.begin(), r.initial_abstracts.end()),
                              r.initial_abstracts.end());
    const auto t3 = clock::now();

    if (r.initial_abstracts.empty()) {
        r.fallback = true;
        r.candidate_chunks.resize(bundle.chunks.size());
        std::iota(r.candidate_chunks.begin(), r.candidate_chunks.end(), ChunkId{0});
    } else {
        r.expanded_abstracts = bundle.forest.expand_hierarchy(r.initial_abstracts, opts.max_depth);
        r.candidate_chunks = bundle.forest.chunks_of(r.expanded_abstracts);
    }
    const auto t4 = clock::now();

    r.chunks = select_top_k(r.candidate_chunks, q, opts.k, bundle.chunks);
    for (const auto& c : r.chunks) r.selected_abstracts.push_back(abstract_of_chunk(c.id));
    std::sort(r.selected_abstracts.begin(), r.selected_abstracts.end());
    r.selected_abstracts.erase(std::unique(r.selected_abstracts.begin(), r.selected_abstracts.end()),
                               r.selected_abstracts.end());
    const auto t5 = clock::now();

    r.prompt = assemble_prompt(r, query, bundle.chunks, bundle.forest);
    const auto t6 = clock::now();

    if (opts.resort && bumped) {
        std::unique_lock lock(*bundle.filter_mutex);
        bundle.filter.resort_dirty_buckets();
    }
    const auto t7 = clock::now();

    r.timing = {us(t0, t1), us(t1, t2), us(t2, t3), us(t3, t4), us(t4, t5), us(t5, t6), us(t6, t7), us(t0, t7)};
    return r;
}

inline nlohmann::json to_json(const ContextResult& r) {
    nlohmann::json chunks = nlohmann::json::array();
    for (const auto& c : r.chunks) chunks.push_back({{"id", c.id}, {"score", c.score}});
    return {{"query", r.query},
            {"fallback", r.fallback},
            {"entities", r.entities},
            {"initial_abstracts", r.initial_abstracts},
            {"expanded_abstracts", r.expanded_abstracts},
            {"candidate_count", r.candidate_chunks.size()},
            {"chunks", chunks},
            {"selected_abstracts", r.selected_abstracts},
            {"prompt", r.prompt},
            {"timing_us",
             {{"embed", r.timing.embed},
              {"recognize", r.timing.recognize},
              {"lookup", r.timing.lookup},
              {"expand", r.timing.expand},
              {"select", r.timing.select},
              {"prompt", r.timing.prompt},
              {"resort", r.timing.resort},
              {"total", r.timing.total}}}};
}

}  // namespace bridgerag
