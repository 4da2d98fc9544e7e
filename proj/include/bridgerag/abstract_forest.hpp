#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bridgerag/cuckoo_index.hpp"
#include "bridgerag/text.hpp"

namespace bridgerag {

using ChunkId = uint32_t;

inline constexpr uint32_t kChunksPerAbstract = 5;

struct Chunk {
    ChunkId id = 0;
    std::string text;
    std::vector<float> embedding;
};

constexpr PairId abstract_of_chunk(ChunkId c) noexcept { return c / kChunksPerAbstract; }

/// Inclusive chunk span [first, last] of abstract `pair_id` in a corpus of
/// `chunk_count` chunks. The tail abstract is clamped at chunk_count - 1.
struct ChunkSpan {
    ChunkId first = 0;
    ChunkId last = 0;
    friend constexpr bool operator==(const ChunkSpan&, const ChunkSpan&) = default;
};

constexpr ChunkSpan span_of(PairId pair_id, size_t chunk_count) noexcept {
    const auto first = static_cast<ChunkId>(pair_id * kChunksPerAbstract);
    const auto last = static_cast<ChunkId>(std::min<size_t>(first + kChunksPerAbstract - 1, chunk_count - 1));
    return {first, last};
}

constexpr size_t abstract_count_for(size_t chunk_count) noexcept {
    return (chunk_count + kChunksPerAbstract - 1) / kChunksPerAbstract;
}

struct Abstract {
    PairId pair_id = 0;
    std::string summary;
    std::optional<PairId> parent;
    std::vector<PairId> children;  // ascending
    ChunkId first_chunk = 0;
    ChunkId last_chunk = 0;
};

using Summarizer = std::function<std::string(std::span<const Chunk>)>;

/// Lead sentence of every constituent chunk, joined by spaces.
inline std::string extractive_summary(std::span<const Chunk> chunks) {
    std::string out;
    for (const auto& c : chunks) {
        auto lead = text::first_sentence(c.text);
        if (lead.empty()) continue;
        if (!out.empty()) out.push_back(' ');
        out.append(lead);
    }
    return out;
}

inline std::vector<Abstract> build_abstracts(std::span<const Chunk> chunks,
                                             const Summarizer& summarize = extractive_summary) {
    std::vector<Abstract> out;
    const size_t n = chunks.size();
    out.reserve(abstract_count_for(n));
    for (size_t i = 0; i < abstract_count_for(n); ++i) {
        const auto span = span_of(static_cast<PairId>(i), n);
        Abstract a;
        a.pair_id = static_cast<PairId>(i);
        a.first_chunk = span.first;
        a.last_chunk = span.last;
        a.summary = summarize(chunks.subspan(span.first, span.last - span.first + 1));
        out.push_back(std::move(a));
    }
    return out;
}

enum class RelationKind { belongs_to, contains, depends_on, modifier };

inline std::string_view to_string(RelationKind k) {
    switch (k) {
        case RelationKind::belongs_to: return "belongs_to";
        case RelationKind::contains: return "contains";
        case RelationKind::depends_on: return "depends_on";
        case RelationKind::modifier: return "modifier";
    }
    return "modifier";
}

inline std::optional<RelationKind> relation_kind_from(std::string_view s) {
    if (s == "belongs_to") return RelationKind::belongs_to;
    if (s == "contains") return RelationKind::contains;
    if (s == "depends_on") return RelationKind::depends_on;
    if (s == "modifier") return RelationKind::modifier;
    return std::nullopt;
}

/// Directed child -> parent concept relation. Higher confidence wins conflicts.
struct RelationEdge {
    std::string child;
    std::string parent;
    RelationKind kind = RelationKind::belongs_to;
    int confidence = 0;

    friend bool operator==(const RelationEdge&, const RelationEdge&) = default;
};

namespace detail {

// Dense node ids for concept strings, in first-seen order.
class ConceptIds {
public:
    uint32_t id(const std::string& s) {
        auto [it, inserted] = ids_.try_emplace(s, static_cast<uint32_t>(ids_.size()));
        return it->second;
    }
    size_t size() const { return ids_.size(); }

private:
    std::unordered_map<std::string, uint32_t> ids_;
};

inline bool reaches(const std::vector<std::vector<uint32_t>>& adj, uint32_t from, uint32_t to,
                    std::optional<std::pair<uint32_t, uint32_t>> skip = std::nullopt) {
    std::vector<char> seen(adj.size(), 0);
    std::vector<uint32_t> stack{from};
    seen[from] = 1;
    while (!stack.empty()) {
        uint32_t u = stack.back();
        stack.pop_back();
        for (uint32_t v : adj[u]) {
            if (skip && skip->first == u && skip->second == v) continue;
            if (v == to) return true;
            if (!seen[v]) {
                seen[v] = 1;
                stack.push_back(v);
            }
        }
    }
    return false;
}

}  // namespace detail

/// Cleans extracted relations into a forest of concept edges:
///  - self edges dropped; duplicate (child, parent) pairs collapse to one;
///  - edges are admitted by descending confidence (ties: input order) and
///    any edge that would close a cycle is dropped, which keeps the
///    stronger edge of every 2-cycle;
///  - the surviving DAG is transitively reduced;
///  - each child keeps a single parent (highest confidence, then earliest).
/// Output preserves input order.
inline std::vector<RelationEdge> filter_relations(std::span<const RelationEdge> edges) {
    detail::ConceptIds ids;
    struct Candidate {
        size_t index;
        uint32_t child;
        uint32_t parent;
    };
    std::vector<Candidate> candidates;
    std::map<std::pair<uint32_t, uint32_t>, size_t> best;  // (child, parent) -> slot in candidates
    for (size_t i = 0; i < edges.size(); ++i) {
        const auto& e = edges[i];
        if (e.child == e.parent) continue;
        const uint32_t c = ids.id(e.child);
        const uint32_t p = ids.id(e.parent);
        auto [it, inserted] = best.try_emplace({c, p}, candidates.size());
        if (inserted) {
            candidates.push_back({i, c, p});
        } else if (e.confidence > edges[candidates[it->second].index].confidence) {
            candidates[it->second].index = i;
        }
    }

    std::vector<size_t> order(candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const auto& ea = edges[candidates[a].index];
        const auto& eb = edges[candidates[b].index];
        if (ea.confidence != eb.confidence) return ea.confidence > eb.confidence;
        return candidates[a].index < candidates[b].index;
    });

    std::vector<std::vector<uint32_t>> adj(ids.size());
    std::vector<size_t> accepted;
    for (size_t k : order) {
        const auto& c = candidates[k];
        if (detail::reaches(adj, c.parent, c.child)) continue;
        adj[c.child].push_back(c.parent);
        accepted.push_back(k);
    }

    std::vector<size_t> reduced;
    for (size_t k : accepted) {
        const auto& c = candidates[k];
        if (!detail::reaches(adj, c.child, c.parent, std::pair{c.child, c.parent})) reduced.push_back(k);
    }

    std::map<uint32_t, size_t> parent_of;  // child -> candidate
    for (size_t k : reduced) {
        const auto& c = candidates[k];
        auto [it, inserted] = parent_of.try_emplace(c.child, k);
        if (inserted) continue;
        const auto& cur = edges[candidates[it->second].index];
        const auto& alt = edges[c.index];
        if (alt.confidence > cur.confidence ||
            (alt.confidence == cur.confidence && c.index < candidates[it->second].index))
            it->second = k;
    }

    std::vector<size_t> kept;
    for (const auto& [child, k] : parent_of) kept.push_back(candidates[k].index);
    std::sort(kept.begin(), kept.end());
    std::vector<RelationEdge> out;
    out.reserve(kept.size());
    for (size_t i : kept) out.push_back(edges[i]);
    return out;
}

struct ForestBuildReport {
    size_t installed = 0;
    size_t skipped_unmapped = 0;
    size_t rejected_cycles = 0;
    size_t rejected_multi_parent = 0;
    size_t skipped_self = 0;
    size_t skipped_duplicate = 0;
};

struct ForestShape {
    size_t node_count = 0;
    size_t roots = 0;
    size_t max_depth = 0;  // in nodes; a lone root has depth 1
};

/// Immutable abstract forest over a chunk corpus. All reads are safe to run
/// concurrently.
class AbstractForest {
public:
    AbstractForest() = default;

    /// Adopts abstracts whose parent/child links are already installed.
    /// Throws std::invalid_argument when spans, ids or links are inconsistent.
    AbstractForest(std::vector<Abstract> abstracts, size_t chunk_count)
        : abstracts_(std::move(abstracts)), chunk_count_(chunk_count) {
        validate();
    }

    size_t size() const noexcept { return abstracts_.size(); }
    size_t chunk_count() const noexcept { return chunk_count_; }
    std::span<const Abstract> abstracts() const noexcept { return abstracts_; }

    const Abstract& at(PairId id) const {
        if (id >= abstracts_.size()) throw std::invalid_argument("unknown pair id " + std::to_string(id));
        return abstracts_[id];
    }

    /// initial ∪ ancestors within `depth` steps ∪ descendants within `depth`
    /// levels, for every member of `initial`. Sorted, unique.
    std::vector<PairId> expand_hierarchy(std::span<const PairId> initial, uint32_t depth) const {
        std::vector<PairId> out;
        std::vector<PairId> frontier;
        std::vector<PairId> next;
        for (PairId a : initial) {
            const Abstract& node = at(a);
            out.push_back(a);
            const Abstract* cur = &node;
            for (uint32_t d = 0; d < depth && cur->parent; ++d) {
                out.push_back(*cur->parent);
                cur = &abstracts_[*cur->parent];
            }
            frontier.assign(1, a);
            for (uint32_t d = 0; d < depth && !frontier.empty(); ++d) {
                next.clear();
                for (PairId f : frontier) {
                    for (PairId c : abstracts_[f].children) {
                        out.push_back(c);
                        next.push_back(c);
                    }
                }
                frontier.swap(next);
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    /// Union of the chunk spans of `ids`, ascending.
    std::vector<ChunkId> chunks_of(std::span<const PairId> ids) const {
        std::vector<PairId> sorted_ids(ids.begin(), ids.end());
        std::sort(sorted_ids.begin(), sorted_ids.end());
        sorted_ids.erase(std::unique(sorted_ids.begin(), sorted_ids.end()), sorted_ids.end());
        std::vector<ChunkId> out;
        out.reserve(sorted_ids.size() * kChunksPerAbstract);
        for (PairId id : sorted_ids) {
            const Abstract& a = at(id);
            for (ChunkId c = a.first_chunk; c <= a.last_chunk; ++c) out.push_back(c);
        }
        return out;
    }

    ForestShape shape() const {
        ForestShape s;
        s.node_count = abstracts_.size();
        std::vector<size_t> depth(abstracts_.size(), 0);
        for (const auto& a : abstracts_) {
            if (!a.parent) ++s.roots;
        }
        // Each abstract's depth follows its parent chain; memoize along the way.
        for (size_t i = 0; i < abstracts_.size(); ++i) {
            std::vector<PairId> chain;
            PairId cur = static_cast<PairId>(i);
            while (depth[cur] == 0) {
                chain.push_back(cur);
                if (!abstracts_[cur].parent) break;
                cur = *abstracts_[cur].parent;
            }
            size_t d = depth[cur];
            for (auto it = chain.rbegin(); it != chain.rend(); ++it) depth[*it] = ++d;
            s.max_depth = std::max(s.max_depth, depth[i]);
        }
        return s;
    }

private:
    void validate() const {
        if (abstracts_.size() != abstract_count_for(chunk_count_))
            throw std::invalid_argument("abstract count does not cover the chunk corpus");
        for (size_t i = 0; i < abstracts_.size(); ++i) {
            const auto& a = abstracts_[i];
            const auto span = span_of(static_cast<PairId>(i), chunk_count_);
            if (a.pair_id != i || a.first_chunk != span.first || a.last_chunk != span.last)
                throw std::invalid_argument("abstract " + std::to_string(i) + " has an inconsistent span");
            if (a.parent) {
                if (*a.parent >= abstracts_.size()) throw std::invalid_argument("parent out of range");
                const auto& siblings = abstracts_[*a.parent].children;
                if (!std::binary_search(siblings.begin(), siblings.end(), a.pair_id))
                    throw std::invalid_argument("parent/child links disagree");
            }
            for (PairId c : a.children) {
                if (c >= abstracts_.size() || abstracts_[c].parent != a.pair_id)
                    throw std::invalid_argument("parent/child links disagree");
            }
            if (!std::is_sorted(a.children.begin(), a.children.end()))
                throw std::invalid_argument("children must be ascending");
        }
        // Parent walks must terminate.
        for (size_t i = 0; i < abstracts_.size(); ++i) {
            size_t steps = 0;
            for (auto cur = abstracts_[i].parent; cur; cur = abstracts_[*cur].parent) {
                if (++steps > abstracts_.size()) throw std::invalid_argument("abstract forest contains a cycle");
            }
        }
    }

    std::vector<Abstract> abstracts_;
    size_t chunk_count_ = 0;
};

struct AssembledForest {
    AbstractForest forest;
    ForestBuildReport report;
};

/// Installs concept edges as abstract parent links. Edges whose endpoints
/// are unmapped, collapse onto one abstract, would give a child a second
/// parent, or would close a cycle are skipped and counted.
inline AssembledForest assemble_forest(std::vector<Abstract> abstracts, size_t chunk_count,
                                       std::span<const RelationEdge> concept_edges,
                                       const std::map<std::string, PairId, std::less<>>& concept_to_abstract) {
    ForestBuildReport report;
    for (auto& a : abstracts) {
        a.parent.reset();
        a.children.clear();
    }
    auto mapped = [&](const std::string& c) -> std::optional<PairId> {
        auto it = concept_to_abstract.find(c);
        if (it == concept_to_abstract.end() || it->second >= abstracts.size()) return std::nullopt;
        return it->second;
    };
    for (const auto& e : concept_edges) {
        auto child = mapped(e.child);
        auto parent = mapped(e.parent);
        if (!child || !parent) {
            ++report.skipped_unmapped;
            continue;
        }
        if (*child == *parent) {
            ++report.skipped_self;
            continue;
        }
        auto& node = abstracts[*child];
        if (node.parent) {
            if (*node.parent == *parent) ++report.skipped_duplicate;
            else ++report.rejected_multi_parent;
            continue;
        }
        bool cycle = false;
        for (std::optional<PairId> cur = *parent; cur; cur = abstracts[*cur].parent) {
            if (*cur == *child) {
                cycle = true;
                break;
            }
        }
        if (cycle) {
            ++report.rejected_cycles;
            continue;
        }
        node.parent = *parent;
        auto& kids = abstracts[*parent].children;
        kids.insert(std::upper_bound(kids.begin(), kids.end(), *child), *child);
        ++report.installed;
    }
    return {AbstractForest(std::move(abstracts), chunk_count), report};
}

}  // namespace bridgerag
