#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "bridgerag/hash.hpp"

namespace bridgerag {

/// Abstract identifier. Abstract i owns chunks 5i..5i+4.
using PairId = uint32_t;

inline constexpr uint32_t kNoNode = std::numeric_limits<uint32_t>::max();
inline constexpr PairId kNoPair = std::numeric_limits<PairId>::max();

/// 12-bit entity fingerprint. The value 0 is reserved for empty slots.
class Fingerprint {
public:
    static constexpr unsigned kBits = 12;
    static constexpr uint16_t kMask = (1u << kBits) - 1;

    constexpr Fingerprint() = default;

    /// Low 12 bits of a raw hash, with 0 remapped to 1.
    static constexpr Fingerprint from_hash_bits(uint64_t raw) noexcept {
        auto v = static_cast<uint16_t>(raw & kMask);
        return Fingerprint(v == 0 ? uint16_t{1} : v);
    }

    /// Rehydrates a stored value; 0 yields the empty fingerprint.
    static Fingerprint from_stored(uint16_t v) {
        if (v > kMask) throw std::invalid_argument("fingerprint exceeds 12 bits");
        return Fingerprint(v);
    }

    constexpr uint16_t value() const noexcept { return value_; }
    constexpr bool empty() const noexcept { return value_ == 0; }
    friend constexpr bool operator==(Fingerprint, Fingerprint) = default;

private:
    explicit constexpr Fingerprint(uint16_t v) noexcept : value_(v) {}
    uint16_t value_ = 0;
};

namespace detail {
inline constexpr uint64_t kFingerprintSalt = 0x6a09e667f3bcc909ULL;
inline constexpr uint64_t kAltIndexSalt = 0xbb67ae8584caa73bULL;
}  // namespace detail

constexpr uint64_t entity_hash(std::string_view entity) noexcept { return hash_bytes(entity); }

// The fingerprint is taken from a second mix of the entity hash. Taking it
// from the same low bits that select i1 would make every entity stored at
// its primary bucket share its low log2(B) fingerprint bits with the probe.
constexpr Fingerprint fingerprint_from_hash(uint64_t h) noexcept {
    return Fingerprint::from_hash_bits(fmix64(h ^ detail::kFingerprintSalt));
}

inline Fingerprint fingerprint_of(std::string_view entity) {
    if (entity.empty()) throw std::invalid_argument("fingerprint_of: empty entity");
    return fingerprint_from_hash(entity_hash(entity));
}

constexpr bool is_power_of_two(uint64_t v) noexcept { return v != 0 && (v & (v - 1)) == 0; }

struct BucketPair {
    uint32_t i1 = 0;
    uint32_t i2 = 0;
    friend constexpr bool operator==(const BucketPair&, const BucketPair&) = default;
};

/// i -> i XOR (h(f) mod B). Applying it twice returns i.
constexpr uint32_t alternate_bucket(uint32_t i, Fingerprint fp, uint32_t bucket_count) noexcept {
    const auto mask = static_cast<uint64_t>(bucket_count) - 1;
    return static_cast<uint32_t>((i ^ hash_u64(fp.value(), detail::kAltIndexSalt)) & mask);
}

constexpr BucketPair bucket_indices_from_hash(uint64_t h, Fingerprint fp, uint32_t bucket_count) noexcept {
    const auto i1 = static_cast<uint32_t>(h & (static_cast<uint64_t>(bucket_count) - 1));
    return {i1, alternate_bucket(i1, fp, bucket_count)};
}

inline BucketPair bucket_indices(std::string_view entity, uint32_t bucket_count) {
    if (!is_power_of_two(bucket_count)) throw std::invalid_argument("bucket_count must be a power of two");
    const uint64_t h = entity_hash(entity);
    return bucket_indices_from_hash(h, fingerprint_of(entity), bucket_count);
}

/// Precomputed hash and fingerprint of an entity, so callers that touch the
/// same entity several times in one query only hash it once.
struct EntityKey {
    uint64_t hash = 0;
    Fingerprint fp;

    static EntityKey of(std::string_view entity) {
        if (entity.empty()) throw std::invalid_argument("empty entity");
        const uint64_t h = entity_hash(entity);
        return {h, fingerprint_from_hash(h)};
    }
};

/// One node of an entity's block linked list. Occupied slots are contiguous
/// from index 0; unused slots hold kNoPair.
struct BlockNode {
    static constexpr size_t kCapacity = 3;
    std::array<PairId, kCapacity> pair_ids{kNoPair, kNoPair, kNoPair};
    uint32_t next = kNoNode;
};

/// Slot payload housed alongside the fingerprint: the list head region.
struct SlotEntry {
    uint64_t entity_hash = 0;
    uint32_t temperature = 0;
    uint32_t head = kNoNode;
    uint32_t tail = kNoNode;
    uint32_t size = 0;
    PairId max_pair = 0;
};

struct Bucket {
    static constexpr size_t kSlots = 4;
    std::array<uint16_t, kSlots> fingerprints{};
    std::array<SlotEntry, kSlots> entries{};

    bool occupied(size_t slot) const noexcept { return fingerprints[slot] != 0; }
};

enum class InsertOutcome { created, appended, failed };

struct CuckooOptions {
    uint32_t initial_buckets = 1024;
    uint32_t max_kicks = 500;
    uint64_t seed = 0x5eed;
};

struct FilterStats {
    uint32_t bucket_count = 0;
    uint64_t occupied_slots = 0;
    double load_factor = 0.0;
    uint64_t kick_count = 0;
    uint64_t resize_count = 0;
    uint64_t failed_insert_count = 0;
    uint32_t stash_size = 0;
    uint64_t block_nodes = 0;
    /// Load factor observed just before the first doubling; 0 if none yet.
    double load_factor_at_first_resize = 0.0;
};

/// Serialized form of one slot; block lists are flattened.
struct SlotRecord {
    uint16_t fingerprint = 0;
    uint32_t temperature = 0;
    uint64_t entity_hash = 0;
    std::vector<PairId> pair_ids;
};

/// Cuckoo filter mapping entities to abstract ids.
///
/// Each slot keeps a 12-bit fingerprint, an access temperature, the full
/// 64-bit entity hash and the head of a block linked list of pair ids.
/// Buckets hold four slots and are scanned linearly, so resorting a bucket
/// by temperature moves hot entities to the front of the scan.
///
/// Thread-safety: insert, erase, resize and resort_dirty_buckets need
/// exclusive access. lookup and the other const queries may run
/// concurrently with each other and with increment_temperature.
class CuckooIndex {
public:
    explicit CuckooIndex(CuckooOptions options = {}) : s_(options) {
        if (!is_power_of_two(options.initial_buckets))
            throw std::invalid_argument("initial_buckets must be a power of two");
        s_.buckets.resize(options.initial_buckets);
        s_.dirty.assign(options.initial_buckets, 0);
        s_.rng.seed(options.seed);
    }

    CuckooIndex(const CuckooIndex& other) : s_(other.s_) {}
    CuckooIndex(CuckooIndex&& other) noexcept : s_(std::move(other.s_)) {}
    CuckooIndex& operator=(const CuckooIndex& other) {
        if (this != &other) s_ = other.s_;
        return *this;
    }
    CuckooIndex& operator=(CuckooIndex&& other) noexcept {
        s_ = std::move(other.s_);
        return *this;
    }

    InsertOutcome insert(std::string_view entity, PairId pair_id) {
        return insert(EntityKey::of(entity), pair_id);
    }

    InsertOutcome insert(const EntityKey& key, PairId pair_id) {
        if (pair_id == kNoPair) throw std::invalid_argument("pair id out of range");
        if (auto loc = locate(key)) {
            append(entry_at(*loc), pair_id);
            return InsertOutcome::appended;
        }
        Item item{key.fp.value(), SlotEntry{key.hash, 0, kNoNode, kNoNode, 0, 0}};
        append(item.entry, pair_id);
        ++s_.occupied;

        auto homeless = place(std::move(item), s_.buckets, [this](uint32_t b) { mark_dirty(b); });
        if (!homeless) return InsertOutcome::created;

        // Kicks exhausted: park the last victim and double the table.
        grow({std::move(*homeless)});
        if (s_.stash) {
            ++s_.failed_inserts;
            return InsertOutcome::failed;
        }
        return InsertOutcome::created;
    }

    std::optional<std::vector<PairId>> lookup(std::string_view entity) const {
        if (entity.empty()) return std::nullopt;
        return lookup(EntityKey::of(entity));
    }

    std::optional<std::vector<PairId>> lookup(const EntityKey& key) const {
        std::vector<PairId> out;
        if (!lookup_into(key, out)) return std::nullopt;
        return out;
    }

    /// Appends the entity's pair ids to `out`; false if absent.
    bool lookup_into(const EntityKey& key, std::vector<PairId>& out) const {
        auto loc = locate(key);
        if (!loc) return false;
        const SlotEntry& e = entry_at(*loc);
        for (uint32_t n = e.head; n != kNoNode; n = s_.nodes[n].next) {
            for (PairId p : s_.nodes[n].pair_ids) {
                if (p == kNoPair) break;
                out.push_back(p);
            }
        }
        return true;
    }

    bool contains(std::string_view entity) const {
        return !entity.empty() && locate(EntityKey::of(entity)).has_value();
    }

    /// Fingerprint-only membership, as a plain cuckoo filter would answer.
    bool fingerprint_match(const EntityKey& key) const {
        const auto [i1, i2] = bucket_indices_from_hash(key.hash, key.fp, bucket_count());
        auto in_bucket = [&](uint32_t b) {
            const auto& fps = s_.buckets[b].fingerprints;
            return std::find(fps.begin(), fps.end(), key.fp.value()) != fps.end();
        };
        if (in_bucket(i1) || in_bucket(i2)) return true;
        return s_.stash && s_.stash->fp == key.fp.value();
    }

    /// T(e) <- T(e) + 1, saturating. Marks the owning bucket for resorting.
    void increment_temperature(std::string_view entity) {
        if (entity.empty()) return;
        increment_temperature(EntityKey::of(entity));
    }

    void increment_temperature(const EntityKey& key) {
        auto loc = locate(key);
        if (!loc) return;
        std::atomic_ref<uint32_t> t(entry_at(*loc).temperature);
        uint32_t cur = t.load(std::memory_order_relaxed);
        while (cur != std::numeric_limits<uint32_t>::max() &&
               !t.compare_exchange_weak(cur, cur + 1, std::memory_order_relaxed)) {
        }
        if (!loc->in_stash) mark_dirty(loc->bucket);
    }

    std::optional<uint32_t> temperature(std::string_view entity) const {
        if (entity.empty()) return std::nullopt;
        auto loc = locate(EntityKey::of(entity));
        if (!loc) return std::nullopt;
        return std::atomic_ref<const uint32_t>(entry_at(*loc).temperature).load(std::memory_order_relaxed);
    }

    /// Stable-sorts every dirty bucket by descending temperature, occupied
    /// slots first. Returns the number of buckets visited.
    size_t resort_dirty_buckets() {
        std::vector<uint32_t> pending;
        {
            std::lock_guard lock(dirty_mu_);
            pending.swap(s_.dirty_list);
        }
        for (uint32_t b : pending) {
            sort_bucket(s_.buckets[b]);
            s_.dirty[b] = 0;
        }
        return pending.size();
    }

    bool erase(std::string_view entity) {
        if (entity.empty()) return false;
        auto loc = locate(EntityKey::of(entity));
        if (!loc) return false;
        release_list(entry_at(*loc).head);
        if (loc->in_stash) {
            s_.stash.reset();
        } else {
            auto& bucket = s_.buckets[loc->bucket];
            bucket.fingerprints[loc->slot] = 0;
            bucket.entries[loc->slot] = SlotEntry{};
            mark_dirty(loc->bucket);
        }
        --s_.occupied;
        return true;
    }

    /// Doubles the bucket count and re-places every entity from its stored hash.
    void resize() { grow({}); }

    FilterStats stats() const {
        FilterStats st;
        st.bucket_count = bucket_count();
        st.occupied_slots = s_.occupied;
        st.load_factor = static_cast<double>(s_.occupied) / (Bucket::kSlots * static_cast<double>(bucket_count()));
        st.kick_count = s_.kicks;
        st.resize_count = s_.resizes;
        st.failed_insert_count = s_.failed_inserts;
        st.stash_size = s_.stash ? 1 : 0;
        st.block_nodes = s_.nodes_in_use;
        st.load_factor_at_first_resize = s_.load_at_first_resize;
        return st;
    }

    uint32_t bucket_count() const noexcept { return static_cast<uint32_t>(s_.buckets.size()); }
    const CuckooOptions& options() const noexcept { return s_.options; }
    std::span<const Bucket> buckets() const noexcept { return s_.buckets; }
    uint64_t size() const noexcept { return s_.occupied; }

    std::vector<PairId> list_contents(const SlotEntry& e) const {
        std::vector<PairId> out;
        for (uint32_t n = e.head; n != kNoNode; n = s_.nodes[n].next)
            for (PairId p : s_.nodes[n].pair_ids)
                if (p != kNoPair) out.push_back(p);
        return out;
    }

    size_t list_node_count(const SlotEntry& e) const {
        size_t count = 0;
        for (uint32_t n = e.head; n != kNoNode; n = s_.nodes[n].next) ++count;
        return count;
    }

    /// Block nodes owned by an entity, 0 if absent.
    size_t block_count(std::string_view entity) const {
        if (entity.empty()) return 0;
        auto loc = locate(EntityKey::of(entity));
        return loc ? list_node_count(entry_at(*loc)) : 0;
    }

    SlotRecord record(uint32_t bucket, size_t slot) const {
        const auto& b = s_.buckets.at(bucket);
        if (!b.occupied(slot)) return {};
        const auto& e = b.entries[slot];
        return {b.fingerprints[slot], e.temperature, e.entity_hash, list_contents(e)};
    }

    std::optional<SlotRecord> stash_record() const {
        if (!s_.stash) return std::nullopt;
        const auto& e = s_.stash->entry;
        return SlotRecord{s_.stash->fp, e.temperature, e.entity_hash, list_contents(e)};
    }

    /// Rebuilds a filter slot-for-slot from records in bucket-major order.
    /// Throws std::runtime_error if a record sits in a bucket its hash
    /// cannot reach.
    static CuckooIndex from_records(CuckooOptions options, uint32_t bucket_count,
                                    std::span<const SlotRecord> records,
                                    std::optional<SlotRecord> stash = std::nullopt) {
        options.initial_buckets = bucket_count;
        CuckooIndex idx(options);
        if (records.size() != static_cast<size_t>(bucket_count) * Bucket::kSlots)
            throw std::runtime_error("filter record count does not match bucket count");
        for (uint32_t b = 0; b < bucket_count; ++b) {
            for (size_t s = 0; s < Bucket::kSlots; ++s) {
                const auto& r = records[static_cast<size_t>(b) * Bucket::kSlots + s];
                if (r.fingerprint == 0) continue;
                const auto fp = Fingerprint::from_stored(r.fingerprint);
                const auto [i1, i2] = bucket_indices_from_hash(r.entity_hash, fp, bucket_count);
                if (b != i1 && b != i2) throw std::runtime_error("filter record in unreachable bucket");
                idx.s_.buckets[b].fingerprints[s] = r.fingerprint;
                idx.s_.buckets[b].entries[s] = idx.rebuild_entry(r);
                ++idx.s_.occupied;
            }
        }
        if (stash && stash->fingerprint != 0) {
            idx.s_.stash = Item{stash->fingerprint, idx.rebuild_entry(*stash)};
            ++idx.s_.occupied;
        }
        return idx;
    }

private:
    struct Item {
        uint16_t fp = 0;
        SlotEntry entry;
    };

    struct Location {
        uint32_t bucket = 0;
        uint8_t slot = 0;
        bool in_stash = false;
    };

    struct State {
        explicit State(CuckooOptions o = {}) : options(o) {}
        CuckooOptions options;
        std::vector<Bucket> buckets;
        std::vector<uint8_t> dirty;
        std::vector<uint32_t> dirty_list;
        std::vector<BlockNode> nodes;
        uint32_t free_head = kNoNode;
        uint64_t nodes_in_use = 0;
        std::optional<Item> stash;
        std::mt19937_64 rng;
        uint64_t occupied = 0;
        uint64_t kicks = 0;
        uint64_t resizes = 0;
        uint64_t failed_inserts = 0;
        double load_at_first_resize = 0.0;
    };

    std::optional<Location> locate(const EntityKey& key) const {
        const auto [i1, i2] = bucket_indices_from_hash(key.hash, key.fp, bucket_count());
        const uint16_t fp = key.fp.value();
        // Issue both buckets' loads before scanning so their misses overlap.
        for (uint32_t b : {i1, i2}) {
            const char* p = reinterpret_cast<const char*>(&s_.buckets[b]);
            for (size_t off = 0; off < sizeof(Bucket); off += 64) __builtin_prefetch(p + off);
        }
        auto scan = [&](uint32_t b) -> std::optional<Location> {
            const Bucket& bucket = s_.buckets[b];
            for (uint8_t s = 0; s < Bucket::kSlots; ++s) {
                if (bucket.fingerprints[s] == fp && bucket.entries[s].entity_hash == key.hash)
                    return Location{b, s, false};
            }
            return std::nullopt;
        };
        if (auto loc = scan(i1)) return loc;
        if (i2 != i1) {
            if (auto loc = scan(i2)) return loc;
        }
        if (s_.stash && s_.stash->fp == fp && s_.stash->entry.entity_hash == key.hash)
            return Location{0, 0, true};
        return std::nullopt;
    }

    SlotEntry& entry_at(const Location& loc) {
        return loc.in_stash ? s_.stash->entry : s_.buckets[loc.bucket].entries[loc.slot];
    }
    const SlotEntry& entry_at(const Location& loc) const {
        return loc.in_stash ? s_.stash->entry : s_.buckets[loc.bucket].entries[loc.slot];
    }

    void mark_dirty(uint32_t b) {
        if (std::atomic_ref<uint8_t>(s_.dirty[b]).exchange(1, std::memory_order_relaxed) == 0) {
            std::lock_guard lock(dirty_mu_);
            s_.dirty_list.push_back(b);
        }
    }

    static void sort_bucket(Bucket& b) {
        // Insertion sort: stable, and at most four elements.
        auto before = [&](size_t x, size_t y) {
            if (b.occupied(x) != b.occupied(y)) return b.occupied(x);
            return b.occupied(x) && b.entries[x].temperature > b.entries[y].temperature;
        };
        for (size_t i = 1; i < Bucket::kSlots; ++i) {
            for (size_t j = i; j > 0 && before(j, j - 1); --j) {
                std::swap(b.fingerprints[j], b.fingerprints[j - 1]);
                std::swap(b.entries[j], b.entries[j - 1]);
            }
        }
    }

    uint32_t alloc_node() {
        ++s_.nodes_in_use;
        if (s_.free_head != kNoNode) {
            uint32_t n = s_.free_head;
            s_.free_head = s_.nodes[n].next;
            s_.nodes[n] = BlockNode{};
            return n;
        }
        s_.nodes.emplace_back();
        return static_cast<uint32_t>(s_.nodes.size() - 1);
    }

    void release_list(uint32_t head) {
        while (head != kNoNode) {
            uint32_t next = s_.nodes[head].next;
            s_.nodes[head].next = s_.free_head;
            s_.free_head = head;
            --s_.nodes_in_use;
            head = next;
        }
    }

    /// Appends a pair id unless already present. Lists built in ascending
    /// order skip the duplicate scan.
    bool append(SlotEntry& e, PairId pid) {
        if (e.size > 0 && pid <= e.max_pair) {
            for (uint32_t n = e.head; n != kNoNode; n = s_.nodes[n].next)
                for (PairId p : s_.nodes[n].pair_ids)
                    if (p == pid) return false;
        }
        const size_t offset = e.size % BlockNode::kCapacity;
        if (e.tail == kNoNode || offset == 0) {
            uint32_t n = alloc_node();
            if (e.tail == kNoNode) {
                e.head = n;
            } else {
                s_.nodes[e.tail].next = n;
            }
            e.tail = n;
        }
        s_.nodes[e.tail].pair_ids[offset] = pid;
        ++e.size;
        e.max_pair = std::max(e.max_pair, pid);
        return true;
    }

    SlotEntry rebuild_entry(const SlotRecord& r) {
        SlotEntry e{r.entity_hash, r.temperature, kNoNode, kNoNode, 0, 0};
        for (PairId p : r.pair_ids) {
            if (p == kNoPair) throw std::runtime_error("invalid pair id in filter record");
            append(e, p);
        }
        return e;
    }

    static bool try_empty_slot(Bucket& b, const Item& item) {
        for (size_t s = 0; s < Bucket::kSlots; ++s) {
            if (!b.occupied(s)) {
                b.fingerprints[s] = item.fp;
                b.entries[s] = item.entry;
                return true;
            }
        }
        return false;
    }

    /// Places an item into `table` with random-walk eviction. Every bucket
    /// written to is reported through `touched`. Returns the item left
    /// homeless when the kick budget runs out.
    template <typename OnTouch>
    std::optional<Item> place(Item item, std::vector<Bucket>& table, OnTouch&& touched) {
        const auto count = static_cast<uint32_t>(table.size());
        const auto fp = Fingerprint::from_stored(item.fp);
        const auto [i1, i2] = bucket_indices_from_hash(item.entry.entity_hash, fp, count);
        if (try_empty_slot(table[i1], item)) {
            touched(i1);
            return std::nullopt;
        }
        if (try_empty_slot(table[i2], item)) {
            touched(i2);
            return std::nullopt;
        }

        uint32_t i = (s_.rng() & 1) ? i2 : i1;
        for (uint32_t k = 0; k < s_.options.max_kicks; ++k) {
            const size_t victim = s_.rng() & (Bucket::kSlots - 1);
            std::swap(item.fp, table[i].fingerprints[victim]);
            std::swap(item.entry, table[i].entries[victim]);
            touched(i);
            ++s_.kicks;
            i = alternate_bucket(i, Fingerprint::from_stored(item.fp), count);
            if (try_empty_slot(table[i], item)) {
                touched(i);
                return std::nullopt;
            }
        }
        return item;
    }

    /// Doubles until every item (table, stash and `extra`) fits with at most
    /// one left over for the stash.
    void grow(std::vector<Item> extra) {
        if (s_.resizes == 0) {
            s_.load_at_first_resize = static_cast<double>(s_.occupied) /
                                      (Bucket::kSlots * static_cast<double>(bucket_count()));
        }
        std::vector<Item> items;
        items.reserve(s_.occupied);
        for (const Bucket& b : s_.buckets)
            for (size_t s = 0; s < Bucket::kSlots; ++s)
                if (b.occupied(s)) items.push_back({b.fingerprints[s], b.entries[s]});
        if (s_.stash) items.push_back(*s_.stash);
        for (auto& x : extra) items.push_back(std::move(x));

        uint64_t new_count = static_cast<uint64_t>(bucket_count());
        for (;;) {
            new_count *= 2;
            ++s_.resizes;
            if (new_count > (uint64_t{1} << 31)) throw std::length_error("cuckoo index capacity exhausted");
            std::vector<Bucket> table(new_count);
            std::vector<Item> leftover;
            for (const Item& it : items) {
                if (auto homeless = place(it, table, [](uint32_t) {})) leftover.push_back(std::move(*homeless));
                if (leftover.size() > 1) break;
            }
            if (leftover.size() <= 1) {
                s_.buckets = std::move(table);
                s_.stash = leftover.empty() ? std::nullopt : std::optional<Item>(std::move(leftover.front()));
                s_.dirty.assign(new_count, 0);
                s_.dirty_list.clear();
                for (uint32_t b = 0; b < new_count; ++b) {
                    const auto& fps = s_.buckets[b].fingerprints;
                    if (std::count(fps.begin(), fps.end(), uint16_t{0}) < static_cast<long>(Bucket::kSlots) - 1)
                        mark_dirty(b);
                }
                return;
            }
        }
    }

    State s_;
    mutable std::mutex dirty_mu_;
};

}  // namespace bridgerag
