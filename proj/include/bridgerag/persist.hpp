#pragma once

// Index file layout (little-endian throughout):
//
//   "BRGX" | version u16 | segment*
//   segment = tag[4] | payload length u64 | payload | crc32(payload) u32
//
// Segments appear in the order CONF, CHNK, FRST, FLTR, DICT.
//   CONF  config as JSON text (u32 length + bytes)
//   CHNK  count u32, dim u32, count x (u32 length + text), count*dim f32
//   FRST  chunk_count u64, count u32, count x {pair_id u32, parent i64 (-1 none),
//         child_count u32, children u32[], summary u32 length + bytes}
//   FLTR  "BRGF", version u16, bucket_count u32, bucket_count*4 x slot record,
//         stash flag u8, optional slot record
//         slot record = fingerprint u16, temperature u32, entity_hash u64,
//                       pair_id_count u32, pair_ids u32[]
//   DICT  count u32, count x {u32 length + entity, occurrences u64}

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>

#include <zlib.h>

#include <json.hpp>

#include "bridgerag/ingest.hpp"

namespace bridgerag {

/// Bad magic, unsupported version, CRC mismatch or inconsistent contents.
struct CorruptIndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 4> kIndexMagic{'B', 'R', 'G', 'X'};
inline constexpr std::array<char, 4> kFilterMagic{'B', 'R', 'G', 'F'};
inline constexpr uint16_t kIndexFormatVersion = 1;
inline constexpr uint16_t kFilterFormatVersion = 1;

inline uint32_t crc32_of(std::string_view bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes a uInt length; feed large payloads in pieces.
    size_t off = 0;
    while (off < bytes.size()) {
        const size_t n = std::min<size_t>(bytes.size() - off, 1u << 30);
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(n));
        off += n;
    }
    return static_cast<uint32_t>(crc);
}

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) { le(v, 2); }
    void u32(uint32_t v) { le(v, 4); }
    void u64(uint64_t v) { le(v, 8); }
    void i64(int64_t v) { le(static_cast<uint64_t>(v), 8); }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void bytes(std::string_view s) { buf_.append(s); }
    void str(std::string_view s) {
        if (s.size() > UINT32_MAX) throw std::length_error("string too long to serialize");
        u32(static_cast<uint32_t>(s.size()));
        bytes(s);
    }
    std::string& buffer() noexcept { return buf_; }

private:
    void le(uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    uint8_t u8() { return static_cast<uint8_t>(le(1)); }
    uint16_t u16() { return static_cast<uint16_t>(le(2)); }
    uint32_t u32() { return static_cast<uint32_t>(le(4)); }
    uint64_t u64() { return le(8); }
    int64_t i64() { return static_cast<int64_t>(le(8)); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string_view bytes(size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() { return std::string(bytes(u32())); }
    /// Guards count fields against absurd values before allocating.
    size_t count(size_t min_bytes_each) {
        const uint32_t n = u32();
        if (min_bytes_each && static_cast<uint64_t>(n) * min_bytes_each > remaining()) fail("count exceeds payload");
        return n;
    }
    size_t remaining() const noexcept { return data_.size() - pos_; }
    bool done() const noexcept { return pos_ == data_.size(); }
    [[noreturn]] void fail(const std::string& m) const { throw CorruptIndexError(what_ + ": " + m); }

private:
    void need(size_t n) const {
        if (remaining() < n) fail("truncated");
    }
    uint64_t le(int n) {
        need(static_cast<size_t>(n));
        uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<size_t>(n);
        return v;
    }
    std::string_view data_;
    size_t pos_ = 0;
    std::string what_;
};

namespace detail {

inline void put_slot(ByteWriter& w, const SlotRecord& r) {
    w.u16(r.fingerprint);
    w.u32(r.temperature);
    w.u64(r.entity_hash);
    w.u32(static_cast<uint32_t>(r.pair_ids.size()));
    for (PairId p : r.pair_ids) w.u32(p);
}

inline SlotRecord get_slot(ByteReader& r) {
    SlotRecord s;
    s.fingerprint = r.u16();
    s.temperature = r.u32();
    s.entity_hash = r.u64();
    s.pair_ids.resize(r.count(4));
    for (auto& p : s.pair_ids) p = r.u32();
    if (s.fingerprint == 0 && !s.pair_ids.empty()) r.fail("empty slot carries pair ids");
    return s;
}

inline void put_segment(ByteWriter& out, const char (&tag)[5], std::string_view payload) {
    out.bytes(std::string_view(tag, 4));
    out.u64(payload.size());
    out.bytes(payload);
    out.u32(crc32_of(payload));
}

}  // namespace detail

/// The filter segment on its own (also used by tests).
inline std::string serialize_filter(const CuckooIndex& f) {
    ByteWriter w;
    w.bytes(std::string_view(kFilterMagic.data(), 4));
    w.u16(kFilterFormatVersion);
    w.u32(f.bucket_count());
    for (uint32_t b = 0; b < f.bucket_count(); ++b)
        for (size_t s = 0; s < Bucket::kSlots; ++s) detail::put_slot(w, f.record(b, s));
    const auto stash = f.stash_record();
    w.u8(stash ? 1 : 0);
    if (stash) detail::put_slot(w, *stash);
    return std::move(w.buffer());
}

inline CuckooIndex deserialize_filter(std::string_view payload, CuckooOptions options) {
    ByteReader r(payload, "filter segment");
    if (r.bytes(4) != std::string_view(kFilterMagic.data(), 4)) r.fail("bad magic");
    if (r.u16() != kFilterFormatVersion) r.fail("unsupported version");
    const uint32_t buckets = r.u32();
    if (buckets == 0 || !std::has_single_bit(buckets)) r.fail("bucket count is not a power of two");
    if (static_cast<uint64_t>(buckets) * Bucket::kSlots * 18 > r.remaining()) r.fail("truncated");
    std::vector<SlotRecord> records;
    records.reserve(static_cast<size_t>(buckets) * Bucket::kSlots);
    for (size_t i = 0; i < static_cast<size_t>(buckets) * Bucket::kSlots; ++i) records.push_back(detail::get_slot(r));
    std::optional<SlotRecord> stash;
    const uint8_t has_stash = r.u8();
    if (has_stash > 1) r.fail("bad stash flag");
    if (has_stash) stash = detail::get_slot(r);
    if (!r.done()) r.fail("trailing bytes");
    try {
        return CuckooIndex::from_records(options, buckets, records, stash);
    } catch (const std::exception& e) {
        throw CorruptIndexError(std::string("filter segment: ") + e.what());
    }
}

inline std::string serialize_index(const IndexBundle& b) {
    ByteWriter out;
    out.bytes(std::string_view(kIndexMagic.data(), 4));
    out.u16(kIndexFormatVersion);

    {
        ByteWriter w;
        w.str(nlohmann::json(b.config).dump());
        detail::put_segment(out, "CONF", w.buffer());
    }
    {
        ByteWriter w;
        w.u32(static_cast<uint32_t>(b.chunks.size()));
        w.u32(static_cast<uint32_t>(b.chunks.dim));
        for (const auto& t : b.chunks.texts) w.str(t);
        for (float x : b.chunks.vectors) w.f32(x);
        detail::put_segment(out, "CHNK", w.buffer());
    }
    {
        ByteWriter w;
        w.u64(b.forest.chunk_count());
        w.u32(static_cast<uint32_t>(b.forest.size()));
        for (const auto& a : b.forest.abstracts()) {
            w.u32(a.pair_id);
            w.i64(a.parent ? static_cast<int64_t>(*a.parent) : -1);
            w.u32(static_cast<uint32_t>(a.children.size()));
            for (PairId c : a.children) w.u32(c);
            w.str(a.summary);
        }
        detail::put_segment(out, "FRST", w.buffer());
    }
    {
        std::shared_lock lock(*b.filter_mutex);
        detail::put_segment(out, "FLTR", serialize_filter(b.filter));
    }
    {
        ByteWriter w;
        w.u32(static_cast<uint32_t>(b.dictionary.size()));
        for (const auto& [e, n] : b.dictionary.entries()) {
            w.str(e);
            w.u64(n);
        }
        detail::put_segment(out, "DICT", w.buffer());
    }
    return std::move(out.buffer());
}

/// Parses an index image. `make` rebuilds the embedder named in the config.
inline IndexBundle deserialize_index(std::string_view image, const EmbedderFactory& make = make_local_embedder) {
    ByteReader in(image, "index");
    if (in.remaining() < 6 || in.bytes(4) != std::string_view(kIndexMagic.data(), 4)) in.fail("bad magic");
    if (const auto v = in.u16(); v != kIndexFormatVersion) in.fail("unsupported format version " + std::to_string(v));

    auto segment = [&](const char (&tag)[5]) {
        if (in.remaining() < 12) in.fail(std::string("missing segment ") + tag);
        if (in.bytes(4) != std::string_view(tag, 4)) in.fail(std::string("expected segment ") + tag);
        const uint64_t len = in.u64();
        if (len > in.remaining() || in.remaining() - len < 4) in.fail(std::string("truncated segment ") + tag);
        const auto payload = in.bytes(static_cast<size_t>(len));
        if (in.u32() != crc32_of(payload)) in.fail(std::string("CRC mismatch in segment ") + tag);
        return payload;
    };

    IndexBundle b;
    {
        ByteReader r(segment("CONF"), "CONF");
        try {
            b.config = nlohmann::json::parse(r.str()).get<Config>();
            b.config.validate();
        } catch (const std::exception& e) {
            r.fail(e.what());
        }
        if (!r.done()) r.fail("trailing bytes");
    }
    {
        ByteReader r(segment("CHNK"), "CHNK");
        const size_t n = r.count(4);
        b.chunks.dim = r.u32();
        if (b.chunks.dim != b.config.embed_dim) r.fail("dimension differs from config");
        b.chunks.texts.reserve(n);
        for (size_t i = 0; i < n; ++i) b.chunks.texts.push_back(r.str());
        if (r.remaining() != n * b.chunks.dim * 4) r.fail("vector block has wrong size");
        b.chunks.vectors.resize(n * b.chunks.dim);
        for (auto& x : b.chunks.vectors) x = r.f32();
    }
    {
        ByteReader r(segment("FRST"), "FRST");
        const uint64_t chunk_count = r.u64();
        if (chunk_count != b.chunks.size()) r.fail("chunk count differs from chunk store");
        const size_t n = r.count(20);
        std::vector<Abstract> abstracts(n);
        for (auto& a : abstracts) {
            a.pair_id = r.u32();
            const int64_t parent = r.i64();
            if (parent < -1 || parent >= static_cast<int64_t>(n)) r.fail("parent out of range");
            if (parent >= 0) a.parent = static_cast<PairId>(parent);
            a.children.resize(r.count(4));
            for (auto& c : a.children) c = r.u32();
            a.summary = r.str();
            if (a.pair_id < n) {
                const auto span = span_of(a.pair_id, chunk_count);
                a.first_chunk = span.first;
                a.last_chunk = span.last;
            }
        }
        if (!r.done()) r.fail("trailing bytes");
        try {
            b.forest = AbstractForest(std::move(abstracts), chunk_count);
        } catch (const std::invalid_argument& e) {
            r.fail(e.what());
        }
    }
    b.filter = deserialize_filter(segment("FLTR"),
                                  CuckooOptions{b.config.initial_buckets, b.config.max_kicks, b.config.rng_seed});
    {
        ByteReader r(segment("DICT"), "DICT");
        const size_t n = r.count(12);
        for (size_t i = 0; i < n; ++i) {
            auto e = r.str();
            const uint64_t count = r.u64();
            if (text::canonical_entity(e) != e || e.empty()) r.fail("entity is not canonical: " + e);
            b.dictionary.add(e, count);
        }
        if (b.dictionary.size() != n) r.fail("duplicate entities");
    }
    if (!in.done()) in.fail("trailing bytes after last segment");
    b.embedder = make(b.config.embed_provider, b.config.embed_dim);
    return b;
}

inline void write_file_atomically(const std::string& path, std::string_view bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return data;
}

inline void save_index(const IndexBundle& b, const std::string& path) { write_file_atomically(path, serialize_index(b)); }

inline IndexBundle load_index(const std::string& path, const EmbedderFactory& make = make_local_embedder) {
    return deserialize_index(read_file(path), make);
}

}  // namespace bridgerag
