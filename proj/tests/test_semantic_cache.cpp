#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <thread>

#include "oracles.hpp"
#include "semcache/errors.hpp"
#include "semcache/semantic_cache.hpp"
#include "support.hpp"

using namespace semcache;

namespace {

CacheConfig config(std::optional<std::size_t> capacity, EvictionPolicy policy,
                   double threshold = 0.80) {
  CacheConfig c;
  c.similarity_threshold = threshold;
  c.capacity = capacity;
  c.eviction_policy = policy;
  return c;
}

std::vector<float> basis(std::size_t i, std::size_t dim) {
  std::vector<float> v(dim, 0.0f);
  v[i] = 1.0f;
  return v;
}

// Insert key `k` (one-hot embedding) with fixed token counts.
EntryId put(SemanticCache& c, std::size_t k, std::size_t dim) {
  return c.insert("k" + std::to_string(k), basis(k, dim), "r" + std::to_string(k), 3, 4).entry_id;
}

}  // namespace

TEST_CASE("config validation and policy names") {
  CHECK_THROWS_AS(config(std::nullopt, EvictionPolicy::lru, 1.5).validate(), ValidationError);
  CHECK_THROWS_AS(config(0, EvictionPolicy::lru).validate(), ValidationError);
  CHECK(parse_eviction_policy("LFU") == EvictionPolicy::lfu);
  CHECK(to_string(EvictionPolicy::lru) == "lru");
  CHECK_THROWS_AS(parse_eviction_policy("fifo"), ValidationError);
}

TEST_CASE("lookup outcomes") {
  SemanticCache c(config(std::nullopt, EvictionPolicy::lru), 2);
  auto miss = c.lookup(basis(0, 2));
  CHECK_FALSE(miss.is_hit());
  CHECK_FALSE(miss.matched_entry);
  CHECK_FALSE(miss.score);

  const auto id = c.insert("q", std::vector<float>{1, 0}, "resp", 5, 7).entry_id;
  auto hit = c.lookup(std::vector<float>{1, 0});
  REQUIRE(hit.is_hit());
  CHECK(hit.matched_entry->entry_id == id);
  CHECK(*hit.score == doctest::Approx(1.0));
  CHECK(hit.matched_entry->access_count == 2);

  // Planar rotation to an exact cosine of 0.79.
  const double angle = std::acos(0.79);
  const std::vector<float> rotated{static_cast<float>(std::cos(angle)),
                                   static_cast<float>(std::sin(angle))};
  REQUIRE(std::abs(rotated[0] * 1.0 - 0.79) < 1e-6);
  const auto near = c.lookup(rotated);
  CHECK_FALSE(near.is_hit());
  CHECK(*near.score == doctest::Approx(0.79).epsilon(1e-6));
  CHECK(c.entry(id)->access_count == 2);  // a miss changes nothing

  CHECK_THROWS_AS(c.lookup(std::vector<float>{0, 0}), DegenerateVectorError);
}

TEST_CASE("threshold is inclusive") {
  SemanticCache c(config(std::nullopt, EvictionPolicy::lru, 1.0), 2);
  c.insert("q", std::vector<float>{1, 0}, "r", 1, 1);
  CHECK(c.lookup(std::vector<float>{1, 0}).is_hit());
}

TEST_CASE("raising the threshold never turns a miss into a hit") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<float>> stored;
    for (int i = 0; i < 10; ++i) stored.push_back(testing::random_vector(rng, 6));
    const auto query = testing::random_vector(rng, 6);
    bool was_hit = true;
    for (double t = -1.0; t <= 1.0; t += 0.1) {
      SemanticCache c(config(std::nullopt, EvictionPolicy::lru, t), 6);
      for (const auto& v : stored) c.insert("q", v, "r", 1, 1);
      const auto o = c.lookup(query);
      if (o.is_hit()) {
        CHECK(was_hit);
        CHECK(*o.score >= t);
      }
      was_hit = o.is_hit();
    }
  }
}

TEST_CASE("eviction examples") {
  SUBCASE("LRU without lookups evicts the oldest") {
    SemanticCache c(config(2, EvictionPolicy::lru), 3);
    const auto a = put(c, 0, 3);
    put(c, 1, 3);
    const auto r = c.insert("k2", basis(2, 3), "r", 1, 1);
    CHECK(r.evicted == a);
  }
  SUBCASE("LRU respects a hit") {
    SemanticCache c(config(2, EvictionPolicy::lru), 3);
    put(c, 0, 3);
    const auto b = put(c, 1, 3);
    CHECK(c.lookup(basis(0, 3)).is_hit());
    CHECK(c.insert("k2", basis(2, 3), "r", 1, 1).evicted == b);
  }
  SUBCASE("LFU evicts the least used") {
    SemanticCache c(config(2, EvictionPolicy::lfu), 3);
    put(c, 0, 3);
    c.lookup(basis(0, 3));
    c.lookup(basis(0, 3));
    const auto b = put(c, 1, 3);
    CHECK(c.insert("k2", basis(2, 3), "r", 1, 1).evicted == b);
  }
  SUBCASE("LFU ties fall back to recency") {
    SemanticCache c(config(std::nullopt, EvictionPolicy::lfu), 3);
    const auto a = put(c, 0, 3);
    const auto cc = put(c, 2, 3);
    const auto b = put(c, 1, 3);
    c.lookup(basis(0, 3));
    c.lookup(basis(0, 3));
    (void)a;
    (void)b;
    CHECK(c.evict_one() == cc);
  }
  SUBCASE("single entry goes regardless of policy") {
    for (auto p : {EvictionPolicy::lru, EvictionPolicy::lfu}) {
      SemanticCache c(config(std::nullopt, p), 3);
      const auto a = put(c, 0, 3);
      CHECK(c.evict_one(p) == a);
      CHECK(c.size() == 0);
    }
  }
  SUBCASE("empty cache") {
    SemanticCache c(config(std::nullopt, EvictionPolicy::lru), 3);
    CHECK_THROWS_AS(c.evict_one(), StateError);
  }
}

TEST_CASE("random access strings match the reference simulator") {
  std::mt19937_64 rng(77);
  for (auto policy : {EvictionPolicy::lru, EvictionPolicy::lfu}) {
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t capacity = 10, keys = 25;
      SemanticCache cache(config(capacity, policy), keys);
      oracle::ReferenceCache ref(capacity, policy);
      std::uniform_int_distribution<std::size_t> pick(0, keys - 1);
      std::map<EntryId, std::string> key_of;
      for (int step = 0; step < 100; ++step) {
        const auto k = pick(rng);
        const auto key = "k" + std::to_string(k);
        const auto expect = ref.access(key);
        const auto o = cache.lookup(basis(k, keys));
        REQUIRE(o.is_hit() == expect.hit);
        if (!o.is_hit()) {
          const auto ins = cache.insert(key, basis(k, keys), "r", 1, 1);
          REQUIRE(ins.evicted.has_value() == expect.evicted.has_value());
          if (expect.evicted) {
            CHECK(key_of.at(*ins.evicted) == *expect.evicted);
            CHECK_FALSE(cache.entry(*ins.evicted).has_value());
          }
          key_of[ins.entry_id] = key;
        }
        CHECK(cache.size() <= capacity);
      }
    }
  }
}

TEST_CASE("stats follow a scripted trace") {
  SemanticCache c(config(3, EvictionPolicy::lru), 5);
  CHECK(c.stats() == CacheStats{});
  std::uint64_t hits = 0, misses = 0, evictions = 0, served = 0;
  const int script[] = {0, 1, 0, 2, 3, 1, 4, 0, 0, 2};
  std::vector<int> order;  // recency, oldest first
  for (int k : script) {
    const bool expect_hit = std::find(order.begin(), order.end(), k) != order.end();
    const auto o = c.lookup(basis(k, 5));
    REQUIRE(o.is_hit() == expect_hit);
    if (expect_hit) {
      ++hits;
      served += 7;
      order.erase(std::find(order.begin(), order.end(), k));
      order.push_back(k);
    } else {
      ++misses;
      if (order.size() == 3) {
        order.erase(order.begin());
        ++evictions;
      }
      put(c, static_cast<std::size_t>(k), 5);
      order.push_back(k);
    }
  }
  const auto s = c.stats();
  CHECK(s.hits == hits);
  CHECK(s.misses == misses);
  CHECK(s.evictions == evictions);
  CHECK(s.tokens_served_by_cache == served);
  CHECK(s.size == 3);
  CHECK(hits + misses == 10);
}

TEST_CASE("stores stay coherent") {
  std::mt19937_64 rng(3);
  SemanticCache c(config(7, EvictionPolicy::lfu, 0.95), 8);
  for (int i = 0; i < 300; ++i) {
    const auto v = testing::random_vector(rng, 8);
    if (!c.lookup(v).is_hit()) c.insert("q", v, "r", 1, 2);
    std::vector<EntryId> from_entries;
    for (const auto& e : c.entries()) {
      from_entries.push_back(e.entry_id);
      CHECK(e.access_count >= 1);
    }
    auto from_index = c.indexed_ids();
    std::sort(from_index.begin(), from_index.end());
    std::sort(from_entries.begin(), from_entries.end());
    CHECK(from_entries == from_index);
    CHECK(c.size() <= 7);
  }
}

TEST_CASE("snapshot round trip") {
  testing::TempDir dir;
  SemanticCache c(config(4, EvictionPolicy::lfu, 0.9), 6);
  std::mt19937_64 rng(8);
  std::vector<std::vector<float>> vs;
  for (int i = 0; i < 6; ++i) {
    vs.push_back(testing::random_vector(rng, 6));
    c.insert("query " + std::to_string(i), vs.back(), "answer " + std::to_string(i), i, 2 * i);
  }
  c.lookup(vs[5]);
  c.save_snapshot(dir / "cache.scch");
  const auto back = SemanticCache::load_snapshot(dir / "cache.scch");
  CHECK(back->entries() == c.entries());
  CHECK(back->stats() == c.stats());
  CHECK(back->config().eviction_policy == EvictionPolicy::lfu);
  CHECK(back->config().capacity == std::optional<std::size_t>(4));
  // Same future behaviour.
  const auto next = testing::random_vector(rng, 6);
  const auto e1 = c.insert("n", next, "r", 1, 1);
  const auto e2 = back->insert("n", next, "r", 1, 1);
  CHECK(e1.entry_id == e2.entry_id);
  CHECK(e1.evicted == e2.evicted);
  const auto l1 = c.lookup(vs[3]), l2 = back->lookup(vs[3]);
  CHECK(l1.is_hit() == l2.is_hit());

  testing::write_text(dir / "bad.scch", "nope");
  CHECK_THROWS_AS(SemanticCache::load_snapshot(dir / "bad.scch"), Error);
}

TEST_CASE("concurrent lookups and inserts") {
  SemanticCache c(config(50, EvictionPolicy::lru, 0.99), 16);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&c, t] {
      std::mt19937_64 rng(t);
      for (int i = 0; i < 200; ++i) {
        const auto v = testing::random_vector(rng, 16);
        if (!c.lookup(v).is_hit()) c.insert("q", v, "r", 1, 1);
      }
    });
  }
  for (auto& th : threads) th.join();
  const auto s = c.stats();
  CHECK(s.hits + s.misses == 800);
  CHECK(s.size <= 50);
  CHECK(c.indexed_ids().size() == s.size);
}
