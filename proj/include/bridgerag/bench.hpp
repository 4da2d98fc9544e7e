#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bridgerag/retrieve.hpp"

namespace bridgerag {

/// Exact top-k over every chunk, same scoring and tie rule as select_top_k.
inline std::vector<ScoredChunk> naive_retrieve(std::string_view query, size_t k, const IndexBundle& bundle) {
    const auto q = bundle.embedder->embed(query);
    std::vector<ChunkId> all(bundle.chunks.size());
    std::iota(all.begin(), all.end(), ChunkId{0});
    return select_top_k(all, q, k, bundle.chunks);
}

// ---------------------------------------------------------------------------
// Latency statistics

struct LatencySummary {
    size_t samples = 0;
    double mean = 0, median = 0, p99 = 0, min = 0, max = 0;  // µs
};

inline LatencySummary summarize(std::vector<double> xs) {
    LatencySummary s;
    s.samples = xs.size();
    if (xs.empty()) return s;
    std::sort(xs.begin(), xs.end());
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const size_t n = xs.size();
    s.median = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
    // Nearest-rank percentile.
    s.p99 = xs[static_cast<size_t>(std::ceil(0.99 * static_cast<double>(n))) - 1];
    s.min = xs.front();
    s.max = xs.back();
    return s;
}

inline nlohmann::json to_json(const LatencySummary& s) {
    return {{"samples", s.samples}, {"mean_us", s.mean}, {"median_us", s.median},
            {"p99_us", s.p99},      {"min_us", s.min},   {"max_us", s.max}};
}

namespace detail {
inline double elapsed_us(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - since).count();
}

inline std::string fmt(double v, int prec = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

/// Left-aligned first column, right-aligned others.
inline std::string table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> width;
    for (const auto& r : rows)
        for (size_t i = 0; i < r.size(); ++i) {
            if (width.size() <= i) width.push_back(0);
            width[i] = std::max(width[i], r[i].size());
        }
    std::string out;
    for (const auto& r : rows) {
        for (size_t i = 0; i < r.size(); ++i) {
            const std::string pad(width[i] - r[i].size(), ' ');
            if (i) out += "  ";
            out += i == 0 ? r[i] + pad : pad + r[i];
        }
        out += "\n";
    }
    return out;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// False-positive rate

struct FprReport {
    size_t members = 0;
    size_t non_members = 0;
    double fingerprint_fpr = 0;  // fingerprint seen in one of the two buckets
    double payload_fpr = 0;      // fingerprint and full hash both match
    size_t false_negatives = 0;
    double load_factor = 0;
    uint32_t bucket_count = 0;
};

inline FprReport measure_fpr(const CuckooIndex& filter, std::span<const std::string> members,
                             std::span<const std::string> non_members) {
    FprReport r;
    r.members = members.size();
    r.non_members = non_members.size();
    for (const auto& m : members)
        if (!filter.contains(m)) ++r.false_negatives;
    size_t fp = 0, payload = 0;
    for (const auto& x : non_members) {
        const auto key = EntityKey::of(x);
        fp += filter.fingerprint_match(key);
        payload += filter.contains(x);
    }
    if (!non_members.empty()) {
        r.fingerprint_fpr = static_cast<double>(fp) / static_cast<double>(non_members.size());
        r.payload_fpr = static_cast<double>(payload) / static_cast<double>(non_members.size());
    }
    const auto st = filter.stats();
    r.load_factor = st.load_factor;
    r.bucket_count = st.bucket_count;
    return r;
}

inline nlohmann::json to_json(const FprReport& r) {
    return {{"mode", "fpr"},
            {"members", r.members},
            {"non_members", r.non_members},
            {"fingerprint_fpr", r.fingerprint_fpr},
            {"payload_fpr", r.payload_fpr},
            {"false_negatives", r.false_negatives},
            {"load_factor", r.load_factor},
            {"bucket_count", r.bucket_count}};
}

inline std::string format_table(const FprReport& r) {
    return detail::table({{"metric", "value"},
                          {"members", std::to_string(r.members)},
                          {"non_members", std::to_string(r.non_members)},
                          {"fingerprint_fpr", detail::fmt(r.fingerprint_fpr, 6)},
                          {"payload_fpr", detail::fmt(r.payload_fpr, 6)},
                          {"false_negatives", std::to_string(r.false_negatives)},
                          {"load_factor", detail::fmt(r.load_factor, 4)},
                          {"bucket_count", std::to_string(r.bucket_count)}});
}

// ---------------------------------------------------------------------------
// Temperature-sorting ablation

struct RoundStats {
    size_t round = 0;  // 1-based
    LatencySummary latency;
    double lookup_mean_us = 0;
};

struct AblationReport {
    bool sorting = true;
    size_t queries = 0;
    std::vector<RoundStats> rounds;
    /// Retrieved chunks of the last round, one list per query.
    std::vector<std::vector<ScoredChunk>> results;

    double later_rounds_mean() const {
        if (rounds.size() < 2) return 0;
        double s = 0;
        for (size_t i = 1; i < rounds.size(); ++i) s += rounds[i].latency.mean;
        return s / static_cast<double>(rounds.size() - 1);
    }
};

/// Replays `queries` for `rounds` rounds. With sorting off the end-of-query
/// resort is suppressed; temperatures still count.
inline AblationReport run_ablation(std::span<const std::string> queries, size_t rounds, const IndexBundle& bundle,
                                   bool sorting, RetrieveOptions opts = {}) {
    if (rounds < 2) throw std::invalid_argument("ablation needs at least 2 rounds");
    opts.resort = sorting;
    AblationReport rep;
    rep.sorting = sorting;
    rep.queries = queries.size();
    for (size_t round = 1; round <= rounds; ++round) {
        std::vector<double> lat;
        double lookup = 0;
        const bool last = round == rounds;
        for (const auto& q : queries) {
            const auto t0 = std::chrono::steady_clock::now();
            auto res = retrieve_context(q, opts, bundle);
            lat.push_back(detail::elapsed_us(t0));
            lookup += res.timing.lookup;
            if (last) rep.results.push_back(std::move(res.chunks));
        }
        RoundStats rs;
        rs.round = round;
        rs.latency = summarize(std::move(lat));
        rs.lookup_mean_us = queries.empty() ? 0 : lookup / static_cast<double>(queries.size());
        rep.rounds.push_back(rs);
    }
    return rep;
}

inline nlohmann::json to_json(const AblationReport& r) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& x : r.rounds) {
        auto j = to_json(x.latency);
        j["round"] = x.round;
        j["lookup_mean_us"] = x.lookup_mean_us;
        rounds.push_back(j);
    }
    return {{"mode", "ablation"},
            {"sorting", r.sorting},
            {"queries", r.queries},
            {"rounds", rounds},
            {"first_round_mean_us", r.rounds.empty() ? 0.0 : r.rounds.front().latency.mean},
            {"later_rounds_mean_us", r.later_rounds_mean()}};
}

inline std::string format_table(const AblationReport& r) {
    std::vector<std::vector<std::string>> rows{{"round", "mean_us", "median_us", "p99_us", "lookup_us"}};
    for (const auto& x : r.rounds)
        rows.push_back({std::to_string(x.round), detail::fmt(x.latency.mean), detail::fmt(x.latency.median),
                        detail::fmt(x.latency.p99), detail::fmt(x.lookup_mean_us, 3)});
    return std::string("sorting ") + (r.sorting ? "on" : "off") + "\n" + detail::table(rows);
}

/// round,mean_us,median_us,p99_us,lookup_mean_us
inline std::string ablation_csv(const AblationReport& r) {
    std::ostringstream out;
    out << "round,mean_us,median_us,p99_us,lookup_mean_us\n";
    for (const auto& x : r.rounds)
        out << x.round << ',' << x.latency.mean << ',' << x.latency.median << ',' << x.latency.p99 << ','
            << x.lookup_mean_us << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Speed comparison against the full scan

struct SpeedReport {
    size_t queries = 0;
    size_t iterations = 0;
    size_t warmups = 0;
    size_t chunk_count = 0;
    LatencySummary bridge;
    LatencySummary naive;
    double speedup = 0;         // naive mean / bridge mean
    double median_speedup = 0;  // naive median / bridge median
    LatencySummary pool;        // candidate pool sizes (chunks), not µs
    size_t fallback_queries = 0;
};

inline constexpr size_t kMinSpeedQueries = 100;

/// Times retrieve_context against naive_retrieve on the same queries,
/// interleaved per query. `warmups` untimed passes precede `iterations`
/// timed ones.
inline SpeedReport run_speed_comparison(std::span<const std::string> queries, size_t k, uint32_t max_depth,
                                        const IndexBundle& bundle, size_t iterations = 10, size_t warmups = 2) {
    if (queries.size() < kMinSpeedQueries)
        throw std::invalid_argument("speed comparison needs at least " + std::to_string(kMinSpeedQueries) + " queries");
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    SpeedReport rep;
    rep.queries = queries.size();
    rep.iterations = iterations;
    rep.warmups = warmups;
    rep.chunk_count = bundle.chunks.size();
    RetrieveOptions opts{k, max_depth, true};
    std::vector<double> bridge, naive, pool;
    for (size_t it = 0; it < warmups + iterations; ++it) {
        const bool timed = it >= warmups;
        for (const auto& q : queries) {
            auto t0 = std::chrono::steady_clock::now();
            auto res = retrieve_context(q, opts, bundle);
            const double b_us = detail::elapsed_us(t0);
            t0 = std::chrono::steady_clock::now();
            auto full = naive_retrieve(q, k, bundle);
            const double n_us = detail::elapsed_us(t0);
            if (!timed) continue;
            bridge.push_back(b_us);
            naive.push_back(n_us);
            if (it == warmups) {
                pool.push_back(static_cast<double>(res.candidate_chunks.size()));
                rep.fallback_queries += res.fallback;
            }
        }
    }
    rep.bridge = summarize(std::move(bridge));
    rep.naive = summarize(std::move(naive));
    rep.pool = summarize(std::move(pool));
    rep.speedup = rep.bridge.mean > 0 ? rep.naive.mean / rep.bridge.mean : 0;
    rep.median_speedup = rep.bridge.median > 0 ? rep.naive.median / rep.bridge.median : 0;
    return rep;
}

inline nlohmann::json to_json(const SpeedReport& r) {
    return {{"mode", "speed"},
            {"queries", r.queries},
            {"iterations", r.iterations},
            {"warmups", r.warmups},
            {"chunk_count", r.chunk_count},
            {"bridge", to_json(r.bridge)},
            {"naive", to_json(r.naive)},
            {"speedup", r.speedup},
            {"median_speedup", r.median_speedup},
            {"pool",
             {{"mean", r.pool.mean}, {"median", r.pool.median}, {"p99", r.pool.p99}, {"max", r.pool.max}}},
            {"fallback_queries", r.fallback_queries}};
}

inline std::string format_table(const SpeedReport& r) {
    std::string out = detail::table(
        {{"method", "mean_us", "median_us", "p99_us"},
         {"bridge", detail::fmt(r.bridge.mean), detail::fmt(r.bridge.median), detail::fmt(r.bridge.p99)},
         {"naive", detail::fmt(r.naive.mean), detail::fmt(r.naive.median), detail::fmt(r.naive.p99)}});
    out += "speedup (mean) " + detail::fmt(r.speedup) + "x, (median) " + detail::fmt(r.median_speedup) + "x\n";
    out += "candidate pool mean " + detail::fmt(r.pool.mean, 1) + " of " + std::to_string(r.chunk_count) +
           " chunks, fallback queries " + std::to_string(r.fallback_queries) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Multi-threaded replay

struct ThroughputReport {
    size_t threads = 0;
    size_t queries = 0;
    double seconds = 0;
    double queries_per_second = 0;
};

/// Every thread replays the whole query list against the shared bundle.
inline ThroughputReport run_throughput(std::span<const std::string> queries, const RetrieveOptions& opts,
                                       const IndexBundle& bundle, size_t threads) {
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::thread> pool;
    std::atomic<size_t> done{0};
    for (size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (const auto& q : queries) {
                retrieve_context(q, opts, bundle);
                done.fetch_add(1, std::memory_order_relaxed);
            }
        });
    for (auto& th : pool) th.join();
    ThroughputReport r;
    r.threads = threads;
    r.queries = done.load();
    r.seconds = detail::elapsed_us(t0) / 1e6;
    r.queries_per_second = r.seconds > 0 ? static_cast<double>(r.queries) / r.seconds : 0;
    return r;
}

inline nlohmann::json to_json(const ThroughputReport& r) {
    return {{"mode", "throughput"},
            {"threads", r.threads},
            {"queries", r.queries},
            {"seconds", r.seconds},
            {"queries_per_second", r.queries_per_second}};
}

}  // namespace bridgerag
