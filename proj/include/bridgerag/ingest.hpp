#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bridgerag/abstract_forest.hpp"
#include "bridgerag/config.hpp"
#include "bridgerag/cuckoo_index.hpp"
#include "bridgerag/embed.hpp"
#include "bridgerag/text.hpp"

namespace bridgerag {

// ---------------------------------------------------------------------------
// Errors

/// File could not be opened, read or written.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input record. `line` is 1-based.
struct InputError : std::runtime_error {
    InputError(const std::string& source, size_t line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line(line) {}
    size_t line;
};

/// The filter could not place an entity even after growing.
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Corpus input

struct CorpusDocument {
    std::string doc_id;
    std::string text;
};

/// Control characters become spaces, whitespace runs collapse, ends are trimmed.
inline std::string cleanse_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x20 || u == 0x7f || text::is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

/// Reads {"doc_id": str, "text": str} per line. Blank lines are ignored and
/// documents whose text is empty after cleansing are dropped (counted in
/// `dropped` when given).
inline std::vector<CorpusDocument> parse_corpus_jsonl(std::istream& in, const std::string& source = "<corpus>",
                                                      size_t* dropped = nullptr) {
    std::vector<CorpusDocument> docs;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (cleanse_text(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(source, lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) throw InputError(source, lineno, "expected a JSON object");
        auto id = j.find("doc_id");
        auto txt = j.find("text");
        if (id == j.end() || !id->is_string()) throw InputError(source, lineno, "missing string field \"doc_id\"");
        if (txt == j.end() || !txt->is_string()) throw InputError(source, lineno, "missing string field \"text\"");
        CorpusDocument d{id->get<std::string>(), cleanse_text(txt->get_ref<const std::string&>())};
        if (d.text.empty()) {
            if (dropped) ++*dropped;
            continue;
        }
        docs.push_back(std::move(d));
    }
    if (in.bad()) throw IoError("read failed: " + source);
    return docs;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return in;
}

inline std::vector<CorpusDocument> read_corpus_jsonl(const std::string& path, size_t* dropped = nullptr) {
    auto in = open_input(path);
    return parse_corpus_jsonl(in, path, dropped);
}

// ---------------------------------------------------------------------------
// Chunking

/// Greedy sentence packing: sentences are appended to the current chunk
/// until the next one would push it past `target_len` whitespace tokens.
/// A sentence longer than `target_len` becomes a chunk of its own.
inline std::vector<std::string> chunk_document(std::string_view text, size_t target_len) {
    if (target_len < 16) throw std::invalid_argument("chunk target length must be >= 16 tokens");
    std::vector<std::string> chunks;
    std::string cur;
    size_t cur_tokens = 0;
    for (auto sentence : text::split_sentences(text)) {
        const size_t n = text::count_tokens(sentence);
        if (cur_tokens > 0 && cur_tokens + n > target_len) {
            chunks.push_back(std::move(cur));
            cur.clear();
            cur_tokens = 0;
        }
        if (!cur.empty()) cur.push_back(' ');
        cur.append(sentence);
        cur_tokens += n;
    }
    if (!cur.empty()) chunks.push_back(std::move(cur));
    return chunks;
}

// ---------------------------------------------------------------------------
// Entity dictionary

struct EntityMatch {
    size_t begin = 0;  // token range [begin, end)
    size_t end = 0;
    std::string entity;
};

/// Canonical concept strings with occurrence counts, plus a longest-match
/// recognizer over word tokens.
class EntityDictionary {
public:
    using Map = std::map<std::string, uint64_t, std::less<>>;

    /// `entity` is canonicalized first; empty results are rejected.
    void add(std::string_view entity, uint64_t count) {
        auto canon = text::canonical_entity(entity);
        if (canon.empty()) throw std::invalid_argument("empty entity");
        const size_t words = static_cast<size_t>(std::count(canon.begin(), canon.end(), ' ')) + 1;
        max_tokens_ = std::max(max_tokens_, words);
        heads_.insert(canon.substr(0, canon.find(' ')));
        entries_[std::move(canon)] += count;
    }

    bool contains(std::string_view canonical) const { return entries_.find(canonical) != entries_.end(); }
    uint64_t count(std::string_view canonical) const {
        auto it = entries_.find(canonical);
        return it == entries_.end() ? 0 : it->second;
    }
    size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    size_t max_tokens() const noexcept { return max_tokens_; }
    const Map& entries() const noexcept { return entries_; }

    /// Left-to-right, longest-first, non-overlapping matches. Tokens must
    /// already be lowercased; single-character punctuation tokens never match.
    std::vector<EntityMatch> match(std::span<const std::string> tokens) const {
        std::vector<EntityMatch> out;
        std::string key;
        size_t i = 0;
        while (i < tokens.size()) {
            if (!heads_.count(tokens[i])) {
                ++i;
                continue;
            }
            const size_t longest = std::min(max_tokens_, tokens.size() - i);
            size_t hit = 0;
            for (size_t n = longest; n >= 1 && !hit; --n) {
                key.clear();
                bool ok = true;
                for (size_t t = i; t < i + n; ++t) {
                    if (text::is_clause_punct(tokens[t])) {
                        ok = false;
                        break;
                    }
                    if (t > i) key.push_back(' ');
                    key += tokens[t];
                }
                if (ok && entries_.find(key) != entries_.end()) hit = n;
            }
            if (hit) {
                out.push_back({i, i + hit, key});
                i += hit;
            } else {
                ++i;
            }
        }
        return out;
    }

    /// Matched entities in text order. Matches never cross a sentence
    /// boundary or clause punctuation.
    std::vector<std::string> match_text(std::string_view s) const {
        std::vector<std::string> out;
        for (auto sentence : text::split_sentences(s)) {
            const auto toks = text::clause_tokens(sentence);
            for (auto& m : match(toks)) out.push_back(std::move(m.entity));
        }
        return out;
    }

private:
    Map entries_;
    std::unordered_set<std::string> heads_;
    size_t max_tokens_ = 0;
};

// ---------------------------------------------------------------------------
// Entity extraction

using StopList = std::unordered_set<std::string>;

/// English function words, relation cue words and generic research filler.
inline const StopList& default_stoplist() {
    static const StopList words = {
        "a", "about", "above", "after", "again", "against", "all", "also", "although", "am", "among", "an",
        "analysis", "and", "another", "any", "are", "as", "at", "be", "because", "been", "before", "being",
        "belong", "belongs", "below", "between", "both", "but", "by", "can", "cannot", "contain", "contains",
        "could", "data", "depend", "dependent", "depends", "described", "details", "did", "do", "does", "doing",
        "during", "each", "either", "etc", "even", "ever", "every", "few", "for", "found", "from", "further",
        "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his", "how", "however", "i", "if",
        "in", "into", "is", "it", "its", "itself", "just", "known", "least", "less", "like", "many", "may",
        "me", "might", "more", "most", "much", "must", "my", "near", "neither", "no", "nor", "not", "now",
        "observed", "of", "off", "often", "on", "once", "one", "only", "or", "other", "others", "our", "ours",
        "out", "over", "own", "part", "per", "previous", "related", "reported", "results", "same", "sample",
        "several", "she", "should", "shown", "since", "so", "some", "still", "studied", "study", "such",
        "than", "that", "the", "their", "theirs", "them", "then", "there", "therefore", "these", "they",
        "this", "those", "though", "through", "thus", "to", "together", "too", "two", "under", "until", "up",
        "upon", "us", "used", "using", "very", "via", "was", "we", "were", "what", "when", "where", "whether",
        "which", "while", "who", "whom", "whose", "why", "will", "with", "within", "without", "work", "would",
        "yet", "you", "your"};
    return words;
}

namespace detail {

inline bool noun_like(const std::string& tok, const StopList& stop) {
    if (tok.size() < 2 || text::is_clause_punct(tok) || stop.count(tok)) return false;
    bool letter = false;
    for (char c : tok) letter |= (std::isalpha(static_cast<unsigned char>(c)) != 0) || static_cast<unsigned char>(c) >= 0x80;
    if (!letter) return false;
    return !(tok.size() > 4 && tok.ends_with("ly"));
}

inline bool capitalized(const std::string& raw) { return !raw.empty() && raw[0] >= 'A' && raw[0] <= 'Z'; }

}  // namespace detail

/// Default concept extractor.
///
/// Candidates are (a) runs of 2-4 capitalized non-stopword tokens, (b)
/// adjacent pairs of noun-like tokens and (c) single noun-like tokens.
/// A bigram is kept when it reaches `min_count` and accounts for at least
/// half the occurrences of its rarer word. A unigram is kept when its
/// occurrences outside kept bigrams still reach `min_count`, so words that
/// only ever appear inside a longer concept are not duplicated.
inline EntityDictionary extract_entities(std::span<const CorpusDocument> corpus, uint64_t min_count,
                                         const StopList& stoplist = default_stoplist()) {
    std::unordered_map<std::string, uint64_t> uni, bi, caps;
    for (const auto& doc : corpus) {
        for (auto sentence : text::split_sentences(doc.text)) {
            const auto raw = text::raw_clause_tokens(sentence);
            std::vector<std::string> low(raw.size());
            std::vector<char> noun(raw.size());
            for (size_t i = 0; i < raw.size(); ++i) {
                low[i] = text::canonicalize(raw[i]);
                noun[i] = detail::noun_like(low[i], stoplist);
                if (noun[i]) ++uni[low[i]];
                if (i > 0 && noun[i] && noun[i - 1]) ++bi[low[i - 1] + ' ' + low[i]];
            }
            for (size_t i = 0; i < raw.size();) {
                size_t j = i;
                while (j < raw.size() && noun[j] && detail::capitalized(raw[j])) ++j;
                if (j - i >= 2 && j - i <= 4) {
                    std::string span;
                    for (size_t t = i; t < j; ++t) span += (t > i ? " " : "") + low[t];
                    ++caps[span];
                }
                i = j > i ? j : i + 1;
            }
        }
    }

    EntityDictionary dict;
    std::unordered_map<std::string, uint64_t> inside;
    for (const auto& [span, n] : caps)
        if (n >= min_count) dict.add(span, n);
    for (const auto& [pair, n] : bi) {
        if (n < min_count) continue;
        const auto sp = pair.find(' ');
        const std::string a = pair.substr(0, sp), b = pair.substr(sp + 1);
        const uint64_t rarer = std::min(uni[a], uni[b]);
        if (2 * n < rarer) continue;
        if (!dict.contains(pair)) dict.add(pair, n);
        inside[a] += n;
        if (b != a) inside[b] += n;
    }
    for (const auto& [w, n] : uni) {
        const uint64_t in_bigrams = inside.count(w) ? inside[w] : 0;
        const uint64_t alone = n > in_bigrams ? n - in_bigrams : 0;
        if (alone >= min_count) dict.add(w, alone);
    }
    return dict;
}

/// entities.jsonl sidecar: one {"entity": str} per line.
inline std::vector<std::string> parse_entity_sidecar(std::istream& in, const std::string& source = "<entities>") {
    std::vector<std::string> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (cleanse_text(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(source, lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object() || !j.contains("entity") || !j["entity"].is_string())
            throw InputError(source, lineno, "missing string field \"entity\"");
        auto canon = text::canonical_entity(j["entity"].get<std::string>());
        if (canon.empty()) throw InputError(source, lineno, "empty entity");
        out.push_back(std::move(canon));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Relation extraction

namespace detail {

struct SentenceItem {
    std::string text;    // word or punctuation token, or the entity
    bool entity = false;
};

inline bool is_determiner(std::string_view w) { return w == "the" || w == "a" || w == "an"; }

/// Entity list "X", "X and Y", "X, Y, and Z" starting at items[i].
inline std::vector<std::string> parse_entity_list(const std::vector<SentenceItem>& items, size_t& i) {
    std::vector<std::string> out;
    if (i >= items.size() || !items[i].entity) return out;
    out.push_back(items[i++].text);
    while (i < items.size()) {
        size_t j = i;
        if (j < items.size() && items[j].text == ",") ++j;
        if (j < items.size() && (items[j].text == "and" || items[j].text == "or")) ++j;
        if (j == i || j >= items.size() || !items[j].entity) break;
        out.push_back(items[j].text);
        i = j + 1;
    }
    return out;
}

inline bool words_at(const std::vector<SentenceItem>& items, size_t i, std::initializer_list<std::string_view> ws) {
    for (auto w : ws) {
        if (i >= items.size() || items[i].entity || items[i].text != w) return false;
        ++i;
    }
    return true;
}

}  // namespace detail

inline constexpr int kVerbPatternConfidence = 2;
inline constexpr int kModifierConfidence = 1;

/// Rule-based relation extraction over sentences mentioning at least two
/// dictionary entities:
///   X belongs to Y, X is dependent on Y, X depends on Y   -> X -> Y
///   Y contains X                                          -> X -> Y
///   adjacent mentions "Y X" (Y modifies X)                -> X -> Y
/// Entity lists joined by commas and "and"/"or" expand to one edge per member.
inline std::vector<RelationEdge> extract_relations_from_sentence(std::string_view sentence,
                                                                 const EntityDictionary& dict) {
    std::vector<RelationEdge> out;
    const auto toks = text::clause_tokens(sentence);
    const auto matches = dict.match(toks);
    if (matches.size() < 2) return out;

    std::vector<detail::SentenceItem> items;
    size_t m = 0;
    for (size_t t = 0; t < toks.size();) {
        if (m < matches.size() && matches[m].begin == t) {
            if (!items.empty() && items.back().entity && m > 0 && matches[m - 1].end == t)
                out.push_back({matches[m].entity, matches[m - 1].entity, RelationKind::modifier, kModifierConfidence});
            items.push_back({matches[m].entity, true});
            t = matches[m++].end;
            continue;
        }
        if (!detail::is_determiner(toks[t])) items.push_back({toks[t], false});
        ++t;
    }

    auto emit = [&](const std::vector<std::string>& children, const std::vector<std::string>& parents,
                    RelationKind kind) {
        for (const auto& c : children)
            for (const auto& p : parents) out.push_back({c, p, kind, kVerbPatternConfidence});
    };
    for (size_t i = 0; i < items.size();) {
        if (!items[i].entity) {
            ++i;
            continue;
        }
        size_t j = i;
        const auto subjects = detail::parse_entity_list(items, j);
        size_t k = j;
        std::optional<RelationKind> kind;
        bool subject_is_child = true;
        if (detail::words_at(items, j, {"belongs", "to"}) || detail::words_at(items, j, {"belong", "to"})) {
            kind = RelationKind::belongs_to;
            k = j + 2;
        } else if (detail::words_at(items, j, {"is", "dependent", "on"}) ||
                   detail::words_at(items, j, {"are", "dependent", "on"})) {
            kind = RelationKind::depends_on;
            k = j + 3;
        } else if (detail::words_at(items, j, {"depends", "on"}) || detail::words_at(items, j, {"depend", "on"})) {
            kind = RelationKind::depends_on;
            k = j + 2;
        } else if (detail::words_at(items, j, {"contains"}) || detail::words_at(items, j, {"contain"})) {
            kind = RelationKind::contains;
            subject_is_child = false;
            k = j + 1;
        }
        if (!kind) {
            i = j;
            continue;
        }
        const auto objects = detail::parse_entity_list(items, k);
        if (!objects.empty()) {
            if (subject_is_child) emit(subjects, objects, *kind);
            else emit(objects, subjects, *kind);
        }
        i = std::max(k, j);
    }
    return out;
}

inline std::vector<RelationEdge> extract_relations(std::span<const CorpusDocument> corpus,
                                                   const EntityDictionary& dict) {
    std::vector<RelationEdge> out;
    for (const auto& doc : corpus)
        for (auto sentence : text::split_sentences(doc.text)) {
            auto edges = extract_relations_from_sentence(sentence, dict);
            out.insert(out.end(), std::make_move_iterator(edges.begin()), std::make_move_iterator(edges.end()));
        }
    return out;
}

/// relations.tsv: child, parent, kind, confidence. A header row starting
/// with "child" and lines starting with '#' are skipped.
inline std::vector<RelationEdge> parse_relations_tsv(std::istream& in, const std::string& source = "<relations>") {
    std::vector<RelationEdge> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (cleanse_text(line).empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        size_t start = 0;
        for (size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
            cols.push_back(line.substr(start, tab - start));
        cols.push_back(line.substr(start));
        if (lineno == 1 && cols[0] == "child") continue;
        if (cols.size() != 4) throw InputError(source, lineno, "expected 4 tab-separated columns");
        auto kind = relation_kind_from(cols[2]);
        if (!kind) throw InputError(source, lineno, "unknown relation kind: " + cols[2]);
        int confidence = 0;
        try {
            size_t used = 0;
            confidence = std::stoi(cols[3], &used);
            if (used != cols[3].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw InputError(source, lineno, "confidence is not an integer: " + cols[3]);
        }
        RelationEdge e{text::canonical_entity(cols[0]), text::canonical_entity(cols[1]), *kind, confidence};
        if (e.child.empty() || e.parent.empty()) throw InputError(source, lineno, "empty concept");
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Index bundle

/// Chunk texts with their embeddings stored contiguously.
struct ChunkStore {
    size_t dim = 0;
    std::vector<std::string> texts;
    std::vector<float> vectors;  // texts.size() * dim

    size_t size() const noexcept { return texts.size(); }
    std::span<const float> vector(ChunkId id) const { return {vectors.data() + static_cast<size_t>(id) * dim, dim}; }
};

/// Everything a query needs. The forest, chunks and dictionary are
/// immutable after build; the filter is guarded by `filter_mutex` (shared
/// for lookups and temperature bumps, exclusive for resorting).
struct IndexBundle {
    Config config;
    ChunkStore chunks;
    AbstractForest forest;
    mutable CuckooIndex filter;
    EntityDictionary dictionary;
    std::shared_ptr<const Embedder> embedder;
    std::unique_ptr<std::shared_mutex> filter_mutex = std::make_unique<std::shared_mutex>();
};

struct BuildReport {
    size_t documents = 0;
    size_t chunks = 0;
    size_t tokens = 0;
    size_t abstracts = 0;
    size_t entities = 0;
    size_t entities_dropped = 0;  // dictionary entries with no whole-word occurrence
    size_t relations_extracted = 0;
    size_t relations_kept = 0;
    size_t mapping_pairs = 0;
    ForestBuildReport forest;
    ForestShape shape;
    FilterStats filter;
    double build_ms = 0.0;
};

inline nlohmann::json to_json(const FilterStats& s) {
    return {{"bucket_count", s.bucket_count},
            {"occupied_slots", s.occupied_slots},
            {"load_factor", s.load_factor},
            {"kick_count", s.kick_count},
            {"resize_count", s.resize_count},
            {"failed_insert_count", s.failed_insert_count},
            {"stash_size", s.stash_size},
            {"block_nodes", s.block_nodes},
            {"load_factor_at_first_resize", s.load_factor_at_first_resize}};
}

inline nlohmann::json to_json(const ForestShape& s) {
    return {{"node_count", s.node_count}, {"roots", s.roots}, {"max_depth", s.max_depth}};
}

inline nlohmann::json to_json(const BuildReport& r) {
    return {{"documents", r.documents},
            {"chunks", r.chunks},
            {"tokens", r.tokens},
            {"abstracts", r.abstracts},
            {"entities", r.entities},
            {"entities_dropped", r.entities_dropped},
            {"relations_extracted", r.relations_extracted},
            {"relations_kept", r.relations_kept},
            {"mapping_pairs", r.mapping_pairs},
            {"forest",
             {{"installed", r.forest.installed},
              {"skipped_unmapped", r.forest.skipped_unmapped},
              {"rejected_cycles", r.forest.rejected_cycles},
              {"rejected_multi_parent", r.forest.rejected_multi_parent},
              {"skipped_self", r.forest.skipped_self},
              {"skipped_duplicate", r.forest.skipped_duplicate}}},
            {"shape", to_json(r.shape)},
            {"filter", to_json(r.filter)},
            {"build_ms", r.build_ms}};
}

struct BuildOptions {
    /// Defaults to make_local_embedder(config.embed_provider, config.embed_dim).
    std::shared_ptr<const Embedder> embedder;
    /// Replace the built-in extractors (sidecar input).
    std::optional<std::vector<std::string>> entities;
    std::optional<std::vector<RelationEdge>> relations;
    Summarizer summarizer = extractive_summary;
    const StopList* stoplist = nullptr;
};

struct BuildResult {
    IndexBundle bundle;
    BuildReport report;
};

/// Which abstracts each entity occurs in, by whole-word longest match.
struct EntityOccurrences {
    std::vector<std::string> entities;                   // dictionary order
    std::vector<std::vector<std::pair<PairId, uint32_t>>> per_abstract;  // (pair_id, mentions), ascending
};

inline EntityOccurrences scan_occurrences(const std::vector<std::string>& chunk_texts, const EntityDictionary& dict) {
    EntityOccurrences occ;
    std::unordered_map<std::string, uint32_t> index;
    for (const auto& [e, n] : dict.entries()) {
        index.emplace(e, static_cast<uint32_t>(occ.entities.size()));
        occ.entities.push_back(e);
    }
    occ.per_abstract.resize(occ.entities.size());
    for (size_t c = 0; c < chunk_texts.size(); ++c) {
        const PairId pair = abstract_of_chunk(static_cast<ChunkId>(c));
        for (const auto& e : dict.match_text(chunk_texts[c])) {
            auto& list = occ.per_abstract[index.at(e)];
            if (!list.empty() && list.back().first == pair) ++list.back().second;
            else list.push_back({pair, 1});
        }
    }
    return occ;
}

/// Chunking, embedding, abstract grouping, entity and relation extraction,
/// relation filtering, forest assembly and filter population.
/// Throws CapacityError if the filter rejects an insert.
inline BuildResult build_index(std::span<const CorpusDocument> corpus, const Config& config,
                               BuildOptions opts = {}) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    BuildResult result;
    auto& b = result.bundle;
    auto& r = result.report;
    b.config = config;
    b.embedder = opts.embedder ? opts.embedder : make_local_embedder(config.embed_provider, config.embed_dim);
    if (b.embedder->dimension() != config.embed_dim)
        throw std::invalid_argument("embedder dimension does not match config.embed_dim");
    r.documents = corpus.size();

    b.chunks.dim = config.embed_dim;
    for (const auto& doc : corpus) {
        for (auto& c : chunk_document(doc.text, config.chunk_len)) {
            r.tokens += text::count_tokens(c);
            b.chunks.texts.push_back(std::move(c));
        }
    }
    const size_t n = b.chunks.size();
    r.chunks = n;
    b.chunks.vectors.reserve(n * config.embed_dim);
    constexpr size_t kBatch = 256;
    for (size_t i = 0; i < n; i += kBatch) {
        const std::span<const std::string> batch(b.chunks.texts.data() + i, std::min(kBatch, n - i));
        for (const auto& v : b.embedder->embed_batch(batch)) b.chunks.vectors.insert(b.chunks.vectors.end(), v.begin(), v.end());
    }

    std::vector<Abstract> abstracts;
    {
        std::vector<Chunk> chunks(n);
        for (size_t i = 0; i < n; ++i) chunks[i] = {static_cast<ChunkId>(i), b.chunks.texts[i], {}};
        abstracts = build_abstracts(chunks, opts.summarizer);
    }
    r.abstracts = abstracts.size();

    EntityDictionary candidates;
    if (opts.entities) {
        for (const auto& e : *opts.entities) candidates.add(e, 0);
    } else {
        candidates = extract_entities(corpus, config.min_entity_count, opts.stoplist ? *opts.stoplist : default_stoplist());
    }
    auto occ = scan_occurrences(b.chunks.texts, candidates);

    // Keep entities that actually occur; sidecar entries take their counts from the scan.
    std::map<std::string, PairId, std::less<>> concept_to_abstract;
    for (size_t e = 0; e < occ.entities.size(); ++e) {
        const auto& list = occ.per_abstract[e];
        if (list.empty()) {
            ++r.entities_dropped;
            continue;
        }
        uint64_t mentions = 0;
        auto best = list.front();
        for (const auto& p : list) {
            mentions += p.second;
            if (p.second > best.second) best = p;
        }
        b.dictionary.add(occ.entities[e], opts.entities ? mentions : candidates.count(occ.entities[e]));
        concept_to_abstract.emplace(occ.entities[e], best.first);
    }
    r.entities = b.dictionary.size();

    const auto raw_edges = opts.relations ? *opts.relations : extract_relations(corpus, b.dictionary);
    r.relations_extracted = raw_edges.size();
    const auto edges = filter_relations(raw_edges);
    r.relations_kept = edges.size();
    auto assembled = assemble_forest(std::move(abstracts), n, edges, concept_to_abstract);
    b.forest = std::move(assembled.forest);
    r.forest = assembled.report;
    r.shape = b.forest.shape();

    b.filter = CuckooIndex(CuckooOptions{config.initial_buckets, config.max_kicks, config.rng_seed});
    for (size_t e = 0; e < occ.entities.size(); ++e) {
        if (occ.per_abstract[e].empty()) continue;
        const auto key = EntityKey::of(occ.entities[e]);
        for (const auto& [pair, mentions] : occ.per_abstract[e]) {
            if (b.filter.insert(key, pair) == InsertOutcome::failed)
                throw CapacityError("filter insert failed for entity \"" + occ.entities[e] + "\"");
            ++r.mapping_pairs;
        }
    }
    r.filter = b.filter.stats();
    r.build_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace bridgerag
