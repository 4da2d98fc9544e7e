// bridgerag command-line tool: build, query, bench, stats, synth.
//
// Exit codes: 0 ok, 1 I/O or embedding service failure, 2 malformed input,
// 3 filter capacity exhausted, 4 corrupt index, 5 asserted bench property
// failed, 64 usage error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bridgerag/bench.hpp"
#include "bridgerag/embed_http.hpp"
#include "bridgerag/persist.hpp"
#include "bridgerag/synthetic.hpp"

namespace br = bridgerag;

namespace {

enum Exit : int { kOk = 0, kIo = 1, kInput = 2, kCapacity = 3, kCorrupt = 4, kProperty = 5, kUsage = 64 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void emit(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

std::vector<std::string> read_lines(const std::string& path) {
    auto in = br::open_input(path);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!br::cleanse_text(line).empty()) out.push_back(line);
    }
    return out;
}

struct ConfigFlags {
    std::string config_file;
    std::optional<uint32_t> chunk_len, embed_dim, k, max_depth, min_entity_count, initial_buckets, max_kicks;
    std::optional<uint64_t> seed;
    std::optional<std::string> provider;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON config file");
        cmd->add_option("--chunk-len", chunk_len, "target chunk length in tokens");
        cmd->add_option("--embed-dim", embed_dim, "embedding dimension");
        cmd->add_option("--k", k, "default top-k stored in the index");
        cmd->add_option("--max-depth", max_depth, "default expansion depth stored in the index");
        cmd->add_option("--min-entity-count", min_entity_count, "minimum frequency for extracted entities");
        cmd->add_option("--initial-buckets", initial_buckets, "initial filter bucket count (power of two)");
        cmd->add_option("--max-kicks", max_kicks, "eviction budget per insert");
        cmd->add_option("--seed", seed, "RNG seed");
        cmd->add_option("--embed-provider", provider, "\"hash\" or an http:// embedding endpoint");
    }

    // defaults < config file < environment < flags
    br::Config resolve() const {
        br::Config c;
        if (!config_file.empty()) {
            auto in = br::open_input(config_file);
            try {
                c = nlohmann::json::parse(in).get<br::Config>();
            } catch (const nlohmann::json::exception& e) {
                throw br::InputError(config_file, 0, e.what());
            }
        }
        br::apply_env_overrides(c);
        if (chunk_len) c.chunk_len = *chunk_len;
        if (embed_dim) c.embed_dim = *embed_dim;
        if (k) c.k = *k;
        if (max_depth) c.max_depth = *max_depth;
        if (min_entity_count) c.min_entity_count = *min_entity_count;
        if (initial_buckets) c.initial_buckets = *initial_buckets;
        if (max_kicks) c.max_kicks = *max_kicks;
        if (seed) c.rng_seed = *seed;
        if (provider) c.embed_provider = *provider;
        c.validate();
        return c;
    }
};

int cmd_build(const std::string& corpus_path, const std::string& out_path, const ConfigFlags& flags,
              const std::string& entities_path, const std::string& relations_path) {
    const auto config = flags.resolve();
    size_t dropped = 0;
    const auto docs = br::read_corpus_jsonl(corpus_path, &dropped);
    if (dropped) std::cerr << "warning: dropped " << dropped << " document(s) with empty text\n";
    br::BuildOptions opts;
    opts.embedder = br::make_embedder(config.embed_provider, config.embed_dim);
    if (!entities_path.empty()) {
        auto in = br::open_input(entities_path);
        opts.entities = br::parse_entity_sidecar(in, entities_path);
    }
    if (!relations_path.empty()) {
        auto in = br::open_input(relations_path);
        opts.relations = br::parse_relations_tsv(in, relations_path);
    }
    auto [bundle, report] = br::build_index(docs, config, std::move(opts));
    br::save_index(bundle, out_path);
    auto j = br::to_json(report);
    j["index"] = out_path;
    emit(j);
    return kOk;
}

struct QueryParams {
    std::optional<uint32_t> k, depth;
};

br::RetrieveOptions retrieve_options(const br::IndexBundle& b, const QueryParams& p) {
    br::Config c = b.config;
    br::apply_env_overrides(c);
    br::RetrieveOptions o = br::default_retrieve_options(c);
    if (p.k) o.k = *p.k;
    if (p.depth) o.max_depth = *p.depth;
    if (o.k < 1) throw UsageError("k must be >= 1");
    if (o.max_depth < 1 || o.max_depth > 3) throw UsageError("depth must be in 1..3");
    return o;
}

int cmd_query(const std::string& index_path, const std::string& query, const QueryParams& p) {
    const auto bundle = br::load_index(index_path, br::make_embedder);
    emit(br::to_json(br::retrieve_context(query, retrieve_options(bundle, p), bundle)));
    return kOk;
}

struct BenchParams {
    std::string mode = "speed";
    size_t rounds = 5;
    size_t iterations = 10;
    size_t warmups = 2;
    size_t threads = 0;
    size_t non_members = 100000;
    std::string csv_path;
    bool no_sorting = false;
    QueryParams query;
};

int cmd_bench(const std::string& index_path, const std::string& queries_path, const BenchParams& p, bool json) {
    auto bundle = br::load_index(index_path, br::make_embedder);
    const auto opts = retrieve_options(bundle, p.query);
    int status = kOk;
    nlohmann::json out;
    std::string table;

    std::vector<std::string> queries;
    if (p.mode != "fpr" || p.threads) {
        if (queries_path.empty()) throw UsageError("mode " + p.mode + " needs a queries file");
        queries = read_lines(queries_path);
        if (queries.empty()) throw br::InputError(queries_path, 0, "no queries");
    }

    if (p.mode == "fpr") {
        std::vector<std::string> members, non_members;
        for (const auto& [e, n] : bundle.dictionary.entries())
            if (bundle.filter.contains(e)) members.push_back(e);
        for (size_t i = 0; non_members.size() < p.non_members; ++i) {
            auto x = "absent entity " + std::to_string(i);
            if (!bundle.dictionary.contains(x)) non_members.push_back(std::move(x));
        }
        const auto r = br::measure_fpr(bundle.filter, members, non_members);
        if (r.false_negatives) {
            std::cerr << "property failed: " << r.false_negatives << " false negative(s)\n";
            status = kProperty;
        }
        out = br::to_json(r);
        table = br::format_table(r);
    } else if (p.mode == "ablation") {
        if (p.rounds < 2) throw UsageError("--rounds must be >= 2");
        const auto r = br::run_ablation(queries, p.rounds, bundle, !p.no_sorting, opts);
        // Re-run with the opposite setting on a fresh copy; results must agree.
        auto other = br::load_index(index_path, br::make_embedder);
        const auto o = br::run_ablation(queries, 2, other, p.no_sorting, opts);
        if (o.results != r.results) {
            std::cerr << "property failed: sorting changed retrieval results\n";
            status = kProperty;
        }
        if (!p.csv_path.empty()) br::write_file_atomically(p.csv_path, br::ablation_csv(r));
        out = br::to_json(r);
        out["results_match_other_setting"] = o.results == r.results;
        table = br::format_table(r);
    } else {
        if (queries.size() < br::kMinSpeedQueries) {
            std::cerr << "note: cycling " << queries.size() << " queries up to " << br::kMinSpeedQueries << "\n";
            const size_t n = queries.size();
            for (size_t i = n; i < br::kMinSpeedQueries; ++i) queries.push_back(queries[i % n]);
        }
        const auto r = br::run_speed_comparison(queries, opts.k, opts.max_depth, bundle, p.iterations, p.warmups);
        out = br::to_json(r);
        table = br::format_table(r);
    }

    if (p.threads) {
        const auto t = br::run_throughput(queries, opts, bundle, p.threads);
        out["throughput"] = br::to_json(t);
        table += "throughput " + br::detail::fmt(t.queries_per_second, 1) + " queries/s on " +
                 std::to_string(t.threads) + " thread(s)\n";
    }
    if (json) emit(out);
    else std::cout << table;
    return status;
}

int cmd_stats(const std::string& index_path, bool json) {
    const auto b = br::load_index(index_path, br::make_embedder);
    const auto filter = b.filter.stats();
    const auto shape = b.forest.shape();
    if (json) {
        emit({{"chunks", b.chunks.size()},
              {"abstracts", b.forest.size()},
              {"entities", b.dictionary.size()},
              {"filter", br::to_json(filter)},
              {"forest", br::to_json(shape)},
              {"config", nlohmann::json(b.config)}});
        return kOk;
    }
    using br::detail::fmt;
    std::cout << br::detail::table({{"stat", "value"},
                                    {"chunks", std::to_string(b.chunks.size())},
                                    {"abstracts", std::to_string(b.forest.size())},
                                    {"entities", std::to_string(b.dictionary.size())},
                                    {"bucket_count", std::to_string(filter.bucket_count)},
                                    {"occupied_slots", std::to_string(filter.occupied_slots)},
                                    {"load_factor", fmt(filter.load_factor, 4)},
                                    {"stash_size", std::to_string(filter.stash_size)},
                                    {"block_nodes", std::to_string(filter.block_nodes)},
                                    {"forest_nodes", std::to_string(shape.node_count)},
                                    {"forest_roots", std::to_string(shape.roots)},
                                    {"forest_max_depth", std::to_string(shape.max_depth)}});
    return kOk;
}

struct SynthParams {
    br::SyntheticOptions corpus;
    std::string out, entities_out, relations_out, queries_out;
    size_t queries = 200;
    double zipf = 1.1;
};

int cmd_synth(const SynthParams& p) {
    const auto corpus = br::make_synthetic_corpus(p.corpus);
    std::string docs;
    for (const auto& d : corpus.docs) docs += nlohmann::json{{"doc_id", d.doc_id}, {"text", d.text}}.dump() + "\n";
    br::write_file_atomically(p.out, docs);
    if (!p.entities_out.empty()) {
        std::string s;
        for (const auto& e : corpus.entities) s += nlohmann::json{{"entity", e}}.dump() + "\n";
        br::write_file_atomically(p.entities_out, s);
    }
    if (!p.relations_out.empty()) {
        std::string s = "child\tparent\tkind\tconfidence\n";
        for (const auto& r : corpus.relations)
            s += r.child + "\t" + r.parent + "\t" + std::string(br::to_string(r.kind)) + "\t" +
                 std::to_string(r.confidence) + "\n";
        br::write_file_atomically(p.relations_out, s);
    }
    if (!p.queries_out.empty()) {
        std::string s;
        for (const auto& q : br::zipf_queries(corpus.entities, p.queries, p.zipf, p.corpus.seed)) s += q + "\n";
        br::write_file_atomically(p.queries_out, s);
    }
    emit({{"documents", corpus.docs.size()},
          {"entities", corpus.entities.size()},
          {"relations", corpus.relations.size()},
          {"corpus", p.out}});
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entity-bridged hierarchical retrieval index"};
    app.require_subcommand(1);
    bool json = false;
    app.add_flag("--json", json, "JSON output for every command");

    ConfigFlags config_flags;
    std::string corpus_path, index_path, entities_path, relations_path, query, queries_path;
    auto* build = app.add_subcommand("build", "build an index file from a JSONL corpus");
    build->add_option("corpus", corpus_path, "corpus.jsonl with {doc_id, text} per line")->required();
    build->add_option("out", index_path, "index file to write")->required();
    build->add_option("--entities", entities_path, "entities.jsonl sidecar replacing extraction");
    build->add_option("--relations", relations_path, "relations.tsv sidecar replacing extraction");
    config_flags.attach(build);

    QueryParams qp;
    auto* query_cmd = app.add_subcommand("query", "retrieve context for one query");
    query_cmd->add_option("index", index_path, "index file")->required();
    query_cmd->add_option("query", query, "query text")->required();
    query_cmd->add_option("--k", qp.k, "chunks to select")->check(CLI::PositiveNumber);
    query_cmd->add_option("--depth", qp.depth, "hierarchy expansion depth")->check(CLI::Range(1, 3));

    BenchParams bp;
    auto* bench = app.add_subcommand("bench", "latency, ablation and false-positive benchmarks");
    bench->add_option("index", index_path, "index file")->required();
    bench->add_option("queries", queries_path, "queries file, one per line");
    bench->add_option("--mode", bp.mode, "speed, ablation or fpr")->check(CLI::IsMember({"speed", "ablation", "fpr"}));
    bench->add_option("--rounds", bp.rounds, "ablation rounds")->check(CLI::Range(size_t{2}, size_t{1000}));
    bench->add_flag("--no-sorting", bp.no_sorting, "ablation with temperature sorting suppressed");
    bench->add_option("--iterations", bp.iterations, "timed speed iterations")->check(CLI::PositiveNumber);
    bench->add_option("--warmups", bp.warmups, "untimed speed iterations");
    bench->add_option("--threads", bp.threads, "also replay queries on N threads for throughput");
    bench->add_option("--non-members", bp.non_members, "fpr probe count");
    bench->add_option("--csv", bp.csv_path, "write per-round ablation latencies as CSV");
    bench->add_option("--k", bp.query.k, "chunks to select")->check(CLI::PositiveNumber);
    bench->add_option("--depth", bp.query.depth, "hierarchy expansion depth")->check(CLI::Range(1, 3));

    auto* stats = app.add_subcommand("stats", "filter, forest and chunk statistics of an index");
    stats->add_option("index", index_path, "index file")->required();

    SynthParams sp;
    auto* synth = app.add_subcommand("synth", "write a synthetic corpus with sidecars and queries");
    synth->add_option("out", sp.out, "corpus.jsonl to write")->required();
    synth->add_option("--documents", sp.corpus.documents);
    synth->add_option("--chunks-per-doc", sp.corpus.chunks_per_doc);
    synth->add_option("--entities", sp.corpus.entities);
    synth->add_option("--sentences-per-chunk", sp.corpus.sentences_per_chunk);
    synth->add_option("--seed", sp.corpus.seed);
    synth->add_option("--entities-out", sp.entities_out);
    synth->add_option("--relations-out", sp.relations_out);
    synth->add_option("--queries-out", sp.queries_out);
    synth->add_option("--queries", sp.queries, "queries to generate");
    synth->add_option("--zipf", sp.zipf, "Zipf exponent of the query entity skew");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*build) return cmd_build(corpus_path, index_path, config_flags, entities_path, relations_path);
        if (*query_cmd) return cmd_query(index_path, query, qp);
        if (*bench) return cmd_bench(index_path, queries_path, bp, json);
        if (*stats) return cmd_stats(index_path, json);
        if (*synth) return cmd_synth(sp);
    } catch (const UsageError& e) {
        std::cerr << "usage: " << e.what() << "\n";
        return kUsage;
    } catch (const br::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInput;
    } catch (const br::CapacityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kCapacity;
    } catch (const br::CorruptIndexError& e) {
        std::cerr << "error: corrupt index: " << e.what() << "\n";
        return kCorrupt;
    } catch (const br::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const br::EmbeddingError& e) {
        std::cerr << "error: embedding: " << e.what() << "\n";
        return kIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    }
    return kUsage;
}
