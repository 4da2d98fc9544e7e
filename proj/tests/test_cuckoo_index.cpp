#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "bridgerag/cuckoo_index.hpp"

namespace bridgerag {
namespace {

std::string name(size_t i) { return "entity-" + std::to_string(i); }

std::vector<PairId> sorted(std::vector<PairId> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// Every occupied slot must live in one of the two buckets its stored hash
// and fingerprint select, and its list must obey the 3-per-node law.
void audit(const CuckooIndex& idx) {
    const auto buckets = idx.buckets();
    for (uint32_t b = 0; b < buckets.size(); ++b) {
        for (size_t s = 0; s < Bucket::kSlots; ++s) {
            if (!buckets[b].occupied(s)) {
                EXPECT_EQ(buckets[b].entries[s].head, kNoNode);
                continue;
            }
            const auto& e = buckets[b].entries[s];
            const auto fp = Fingerprint::from_stored(buckets[b].fingerprints[s]);
            const auto [i1, i2] = bucket_indices_from_hash(e.entity_hash, fp, idx.bucket_count());
            EXPECT_TRUE(b == i1 || b == i2) << "bucket " << b;
            const auto list = idx.list_contents(e);
            EXPECT_EQ(list.size(), e.size);
            EXPECT_EQ(idx.list_node_count(e), (list.size() + 2) / 3);
            EXPECT_EQ(std::set<PairId>(list.begin(), list.end()).size(), list.size());
        }
    }
}

TEST(Fingerprint, DeterministicAndInRange) {
    const auto a = fingerprint_of("mycoplasma");
    EXPECT_EQ(a, fingerprint_of("mycoplasma"));
    EXPECT_GE(a.value(), 1);
    EXPECT_LE(a.value(), 4095);
    for (size_t i = 0; i < 5000; ++i) {
        auto f = fingerprint_of(name(i));
        ASSERT_FALSE(f.empty());
        ASSERT_LE(f.value(), Fingerprint::kMask);
    }
}

TEST(Fingerprint, ZeroLowBitsRemapToOne) {
    EXPECT_EQ(Fingerprint::from_hash_bits(0).value(), 1);
    EXPECT_EQ(Fingerprint::from_hash_bits(0xABC000).value(), 1);
    EXPECT_EQ(Fingerprint::from_hash_bits(0xABC001).value(), 1);
    EXPECT_EQ(Fingerprint::from_hash_bits(0xABCFFF).value(), 0xFFF);
}

TEST(Fingerprint, EmptyEntityRejected) {
    EXPECT_THROW(fingerprint_of(""), std::invalid_argument);
    EXPECT_THROW(Fingerprint::from_stored(4096), std::invalid_argument);
}

struct Vector {
    const char* entity;
    uint64_t hash;
    uint16_t fp;
    uint32_t i1, i2;
};

// Produced by tests/oracles/bucket_vectors.py, an independent Python
// evaluation of the hash and the two-bucket rule at B = 1024.
constexpr Vector kVectors[] = {
    {"mycoplasma", 0xc43259bee0c17f0eULL, 1784, 782, 179},
    {"horner's syndrome", 0xedb6018ef5a8ca96ULL, 225, 662, 48},
    {"iron-sulfur protein", 0x2ababe08f97f8375ULL, 2129, 885, 54},
    {"mitochondria", 0xb1a354559803c7d3ULL, 1041, 979, 771},
    {"cell", 0x8e1163bc3e5b3016ULL, 2764, 22, 721},
    {"ribosomes", 0x7917fdbe69bccb91ULL, 3241, 913, 79},
    {"carotid artery", 0x46ddfa22aa655bc8ULL, 1898, 968, 777},
    {"ptosis", 0x4e01a561a9dfff81ULL, 3389, 897, 817},
    {"krebs cycle", 0x57762c7afa0ac5aeULL, 298, 430, 436},
    {"atp synthase", 0x444f408b2eb1289fULL, 2517, 159, 429},
};

TEST(BucketIndices, FrozenRegressionVectors) {
    for (const auto& v : kVectors) {
        SCOPED_TRACE(v.entity);
        EXPECT_EQ(entity_hash(v.entity), v.hash);
        EXPECT_EQ(fingerprint_of(v.entity).value(), v.fp);
        EXPECT_EQ(bucket_indices(v.entity, 1024), (BucketPair{v.i1, v.i2}));
    }
}

TEST(BucketIndices, PartialKeyInvolution) {
    for (uint32_t b : {1u, 2u, 1024u, 1u << 20}) {
        for (size_t i = 0; i < 2000; ++i) {
            const auto e = name(i);
            const auto [i1, i2] = bucket_indices(e, b);
            ASSERT_LT(i1, b);
            ASSERT_LT(i2, b);
            ASSERT_EQ(alternate_bucket(i2, fingerprint_of(e), b), i1);
        }
    }
    EXPECT_THROW(bucket_indices("x", 1000), std::invalid_argument);
}

TEST(CuckooIndex, FreshFilterStats) {
    CuckooIndex idx;
    const auto st = idx.stats();
    EXPECT_EQ(st.bucket_count, 1024u);
    EXPECT_EQ(st.load_factor, 0.0);
    EXPECT_EQ(st.occupied_slots, 0u);
    EXPECT_THROW(CuckooIndex(CuckooOptions{1000, 500, 1}), std::invalid_argument);
}

TEST(CuckooIndex, FirstInsertCreates) {
    CuckooIndex idx;
    EXPECT_EQ(idx.insert("mycoplasma", 3), InsertOutcome::created);
    EXPECT_DOUBLE_EQ(idx.stats().load_factor, 1.0 / (4 * 1024));
}

TEST(CuckooIndex, LookupRoundTripAndAbsent) {
    CuckooIndex idx;
    EXPECT_FALSE(idx.lookup("never inserted").has_value());
    EXPECT_FALSE(idx.lookup("").has_value());
    idx.insert("e", 7);
    ASSERT_TRUE(idx.lookup("e").has_value());
    EXPECT_EQ(*idx.lookup("e"), std::vector<PairId>{7});
}

TEST(CuckooIndex, DuplicateInsertAppendsToOneSlot) {
    CuckooIndex idx;
    EXPECT_EQ(idx.insert("x", 0), InsertOutcome::created);
    for (PairId p = 1; p <= 6; ++p) EXPECT_EQ(idx.insert("x", p), InsertOutcome::appended);
    EXPECT_EQ(idx.stats().occupied_slots, 1u);
    EXPECT_EQ(idx.block_count("x"), 3u);
    EXPECT_EQ(*idx.lookup("x"), (std::vector<PairId>{0, 1, 2, 3, 4, 5, 6}));

    // Re-inserting known ids, in or out of order, leaves the list alone.
    idx.insert("x", 3);
    idx.insert("x", 6);
    EXPECT_EQ(idx.lookup("x")->size(), 7u);
    idx.insert("x", 100);
    idx.insert("x", 50);
    idx.insert("x", 50);
    EXPECT_EQ(*idx.lookup("x"), (std::vector<PairId>{0, 1, 2, 3, 4, 5, 6, 100, 50}));
    EXPECT_EQ(idx.block_count("x"), 3u);
}

TEST(CuckooIndex, SpaceLaw) {
    CuckooIndex idx;
    for (size_t m = 1; m <= 30; ++m) {
        const auto e = name(m);
        for (PairId p = 0; p < m; ++p) idx.insert(e, static_cast<PairId>(p * 7 % 31));
        EXPECT_EQ(idx.block_count(e), (m + 2) / 3) << "m=" << m;
    }
    EXPECT_EQ(idx.block_count("absent"), 0u);
}

TEST(CuckooIndex, ShadowMapAfterTenThousandInserts) {
    CuckooIndex idx;
    std::map<std::string, std::set<PairId>> shadow;
    std::mt19937_64 rng(11);
    for (size_t i = 0; i < 10000; ++i) {
        const auto e = name(rng() % 4000);
        const auto p = static_cast<PairId>(rng() % 5000);
        idx.insert(e, p);
        shadow[e].insert(p);
    }
    for (const auto& [e, pairs] : shadow) {
        auto got = idx.lookup(e);
        ASSERT_TRUE(got.has_value()) << e;
        EXPECT_EQ(sorted(*got), std::vector<PairId>(pairs.begin(), pairs.end()));
    }
    EXPECT_EQ(idx.stats().occupied_slots, shadow.size());
    audit(idx);
}

TEST(CuckooIndex, FailureTriggersResizeWithoutLoss) {
    CuckooIndex idx(CuckooOptions{16, 500, 3});
    std::vector<std::string> inserted;
    size_t i = 0;
    while (idx.stats().resize_count == 0) {
        inserted.push_back(name(i));
        ASSERT_NE(idx.insert(inserted.back(), static_cast<PairId>(i)), InsertOutcome::failed);
        ++i;
    }
    const auto st = idx.stats();
    EXPECT_EQ(st.resize_count, 1u);
    EXPECT_EQ(st.bucket_count, 32u);
    EXPECT_GT(st.load_factor_at_first_resize, 0.70);
    EXPECT_EQ(st.occupied_slots, inserted.size());
    for (size_t j = 0; j < inserted.size(); ++j) {
        auto got = idx.lookup(inserted[j]);
        ASSERT_TRUE(got.has_value()) << inserted[j];
        EXPECT_EQ(*got, std::vector<PairId>{static_cast<PairId>(j)});
    }
    audit(idx);
}

TEST(CuckooIndex, SingleBucketFilterStillHoldsEverything) {
    CuckooIndex idx(CuckooOptions{1, 20, 9});
    for (size_t i = 0; i < 200; ++i) ASSERT_NE(idx.insert(name(i), 1), InsertOutcome::failed);
    for (size_t i = 0; i < 200; ++i) ASSERT_TRUE(idx.contains(name(i)));
    EXPECT_GE(idx.bucket_count(), 64u);
    audit(idx);
}

TEST(CuckooIndex, ExplicitResize) {
    CuckooIndex empty;
    empty.resize();
    EXPECT_EQ(empty.bucket_count(), 2048u);
    EXPECT_EQ(empty.stats().occupied_slots, 0u);

    CuckooIndex idx;
    for (size_t i = 0; i < 2000; ++i) idx.insert(name(i), static_cast<PairId>(i));
    for (size_t i = 0; i < 50; ++i) idx.increment_temperature(name(i));
    const double before = idx.stats().load_factor;
    idx.resize();
    EXPECT_EQ(idx.bucket_count(), 2048u);
    EXPECT_NEAR(idx.stats().load_factor, before / 2, 1.0 / (4 * 2048));
    idx.resize();
    EXPECT_EQ(idx.bucket_count(), 4096u);
    EXPECT_EQ(idx.stats().resize_count, 2u);
    for (size_t i = 0; i < 2000; ++i) {
        ASSERT_EQ(*idx.lookup(name(i)), std::vector<PairId>{static_cast<PairId>(i)});
        ASSERT_EQ(*idx.temperature(name(i)), i < 50 ? 1u : 0u);
    }
    audit(idx);
}

TEST(CuckooIndex, TemperatureCounting) {
    CuckooIndex idx;
    idx.insert("hot", 1);
    EXPECT_EQ(*idx.temperature("hot"), 0u);
    for (int i = 0; i < 5; ++i) idx.increment_temperature("hot");
    EXPECT_EQ(*idx.temperature("hot"), 5u);
    // Lookups never touch temperature.
    for (int i = 0; i < 5; ++i) idx.lookup("hot");
    EXPECT_EQ(*idx.temperature("hot"), 5u);

    const auto before = idx.stats();
    idx.increment_temperature("cold");
    EXPECT_FALSE(idx.temperature("cold").has_value());
    EXPECT_EQ(idx.stats().occupied_slots, before.occupied_slots);
}

TEST(CuckooIndex, TemperatureSaturates) {
    std::vector<SlotRecord> records(4);
    const auto key = EntityKey::of("x");
    records[0] = SlotRecord{key.fp.value(), std::numeric_limits<uint32_t>::max(), key.hash, {1}};
    auto idx = CuckooIndex::from_records(CuckooOptions{}, 1, records);
    idx.increment_temperature("x");
    EXPECT_EQ(*idx.temperature("x"), std::numeric_limits<uint32_t>::max());
}

uint32_t slot_temperature(const CuckooIndex& idx, size_t slot) {
    return idx.buckets()[0].occupied(slot) ? idx.buckets()[0].entries[slot].temperature : 0;
}

TEST(CuckooIndex, ResortOrdersByTemperature) {
    // With one bucket every entity shares bucket 0.
    CuckooIndex idx(CuckooOptions{1, 500, 1});
    idx.insert("a", 0);
    idx.insert("b", 1);
    idx.insert("c", 2);
    idx.resort_dirty_buckets();
    idx.increment_temperature("a");
    for (int i = 0; i < 9; ++i) idx.increment_temperature("b");
    for (int i = 0; i < 3; ++i) idx.increment_temperature("c");
    EXPECT_EQ(idx.resort_dirty_buckets(), 1u);
    EXPECT_EQ(slot_temperature(idx, 0), 9u);
    EXPECT_EQ(slot_temperature(idx, 1), 3u);
    EXPECT_EQ(slot_temperature(idx, 2), 1u);
    EXPECT_FALSE(idx.buckets()[0].occupied(3));
    EXPECT_EQ(idx.resort_dirty_buckets(), 0u);
    EXPECT_EQ(*idx.lookup("b"), std::vector<PairId>{1});
}

TEST(CuckooIndex, ResortIsStableOnTies) {
    CuckooIndex idx(CuckooOptions{1, 500, 1});
    for (const char* e : {"a", "b", "c", "d"}) idx.insert(e, 0);
    const auto before = idx.buckets()[0].fingerprints;
    for (const char* e : {"a", "b", "c", "d"}) idx.increment_temperature(e);
    idx.resort_dirty_buckets();
    EXPECT_EQ(idx.buckets()[0].fingerprints, before);
}

TEST(CuckooIndex, ResortCompactsAfterErase) {
    CuckooIndex idx(CuckooOptions{1, 500, 1});
    for (const char* e : {"a", "b", "c"}) idx.insert(e, 0);
    idx.erase("a");
    idx.resort_dirty_buckets();
    EXPECT_TRUE(idx.buckets()[0].occupied(0));
    EXPECT_TRUE(idx.buckets()[0].occupied(1));
    EXPECT_FALSE(idx.buckets()[0].occupied(2));
}

TEST(CuckooIndex, SkewedWorkloadMovesHotEntityToFront) {
    CuckooIndex idx(CuckooOptions{256, 500, 5});
    for (size_t i = 0; i < 900; ++i) idx.insert(name(i), static_cast<PairId>(i));
    idx.resort_dirty_buckets();
    std::mt19937_64 rng(2);
    const std::string hot = name(417);
    for (int q = 0; q < 2000; ++q) {
        const auto e = (rng() % 10 < 9) ? hot : name(rng() % 900);
        idx.increment_temperature(e);
        idx.resort_dirty_buckets();
    }
    const auto key = EntityKey::of(hot);
    bool at_front = false;
    for (uint32_t b : {bucket_indices(hot, idx.bucket_count()).i1, bucket_indices(hot, idx.bucket_count()).i2}) {
        const auto& bucket = idx.buckets()[b];
        if (bucket.fingerprints[0] == key.fp.value() && bucket.entries[0].entity_hash == key.hash) at_front = true;
    }
    EXPECT_TRUE(at_front);
    for (const auto& bucket : idx.buckets()) {
        for (size_t s = 1; s < Bucket::kSlots; ++s) {
            if (bucket.occupied(s)) {
                ASSERT_TRUE(bucket.occupied(s - 1));
                ASSERT_GE(bucket.entries[s - 1].temperature, bucket.entries[s].temperature);
            }
        }
    }
}

TEST(CuckooIndex, EraseSemantics) {
    CuckooIndex idx;
    idx.insert("e", 1);
    EXPECT_TRUE(idx.erase("e"));
    EXPECT_FALSE(idx.lookup("e").has_value());
    EXPECT_FALSE(idx.erase("e"));
    EXPECT_FALSE(idx.erase("never"));
    EXPECT_EQ(idx.stats().block_nodes, 0u);
}

TEST(CuckooIndex, EraseHalfKeepsTheRest) {
    CuckooIndex idx;
    for (size_t i = 0; i < 1000; ++i) idx.insert(name(i), static_cast<PairId>(i));
    for (size_t i = 0; i < 1000; i += 2) ASSERT_TRUE(idx.erase(name(i)));
    size_t found = 0;
    for (size_t i = 0; i < 1000; ++i) {
        const bool live = i % 2 == 1;
        ASSERT_EQ(idx.contains(name(i)), live) << i;
        found += live;
    }
    EXPECT_EQ(found, 500u);
    EXPECT_EQ(idx.stats().occupied_slots, 500u);
}

TEST(CuckooIndex, RandomOperationSequencesMatchShadowMap) {
    std::mt19937_64 rng(77);
    for (int round = 0; round < 20; ++round) {
        CuckooIndex idx(CuckooOptions{4, 50, rng()});
        std::map<std::string, std::set<PairId>> shadow;
        for (int step = 0; step < 2000; ++step) {
            const auto e = name(rng() % 300);
            switch (rng() % 4) {
                case 0:
                case 1: {
                    const auto p = static_cast<PairId>(rng() % 40);
                    ASSERT_NE(idx.insert(e, p), InsertOutcome::failed);
                    shadow[e].insert(p);
                    break;
                }
                case 2:
                    ASSERT_EQ(idx.erase(e), shadow.erase(e) == 1);
                    break;
                default: {
                    auto got = idx.lookup(e);
                    auto it = shadow.find(e);
                    ASSERT_EQ(got.has_value(), it != shadow.end());
                    if (got) {
                        ASSERT_EQ(sorted(*got), std::vector<PairId>(it->second.begin(), it->second.end()));
                    }
                }
            }
        }
        EXPECT_EQ(idx.size(), shadow.size());
        audit(idx);
    }
}

TEST(CuckooIndex, RecordsRebuildIdenticalFilter) {
    CuckooIndex idx(CuckooOptions{64, 500, 4});
    for (size_t i = 0; i < 230; ++i)
        for (PairId p = 0; p < i % 5 + 1; ++p) idx.insert(name(i), static_cast<PairId>(i + p));
    idx.increment_temperature(name(3));

    std::vector<SlotRecord> records;
    for (uint32_t b = 0; b < idx.bucket_count(); ++b)
        for (size_t s = 0; s < Bucket::kSlots; ++s) records.push_back(idx.record(b, s));
    auto copy = CuckooIndex::from_records(idx.options(), idx.bucket_count(), records, idx.stash_record());
    for (size_t i = 0; i < 230; ++i) {
        ASSERT_EQ(copy.lookup(name(i)), idx.lookup(name(i)));
        ASSERT_EQ(copy.temperature(name(i)), idx.temperature(name(i)));
    }
    EXPECT_EQ(copy.stats().occupied_slots, idx.stats().occupied_slots);

    // Move one record to a bucket it cannot reach.
    for (size_t r = 0; r < records.size(); ++r) {
        if (records[r].fingerprint == 0) continue;
        const auto [i1, i2] = bucket_indices_from_hash(records[r].entity_hash,
                                                       Fingerprint::from_stored(records[r].fingerprint), 64);
        for (uint32_t b = 0; b < 64; ++b) {
            if (b == i1 || b == i2) continue;
            for (size_t s = 0; s < 4; ++s) {
                if (records[b * 4 + s].fingerprint != 0) continue;
                std::swap(records[b * 4 + s], records[r]);
                EXPECT_THROW(CuckooIndex::from_records(idx.options(), 64, records), std::runtime_error);
                return;
            }
        }
    }
    FAIL() << "no free slot found";
}

TEST(CuckooIndex, ConcurrentLookupsAndIncrements) {
    CuckooIndex idx;
    for (size_t i = 0; i < 500; ++i) idx.insert(name(i), static_cast<PairId>(i));
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&] {
            for (int r = 0; r < 1000; ++r) {
                const auto e = name(r % 10);
                auto got = idx.lookup(e);
                ASSERT_TRUE(got.has_value());
                idx.increment_temperature(e);
            }
        });
    }
    for (auto& th : threads) th.join();
    for (size_t i = 0; i < 10; ++i) EXPECT_EQ(*idx.temperature(name(i)), 400u);
    EXPECT_GE(idx.resort_dirty_buckets(), 1u);
}

}  // namespace
}  // namespace bridgerag
