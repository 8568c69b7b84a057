#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "imr/mrbg_store.hpp"
#include "test_util.hpp"

using namespace imr;

namespace {

Chunk make_chunk(const std::string& k2, std::initializer_list<std::pair<uint64_t, std::string>> edges) {
  Chunk c;
  c.k2 = k2;
  for (const auto& [seq, v] : edges) c.edges.push_back(StoredEdge{MapKey{0, seq}, v});
  return c;
}

// Chunk with a payload padded to an exact frame size, for window math tests.
Chunk sized_chunk(const std::string& k2, size_t frame_bytes) {
  // frame = 4 len + 4 klen + k2 + 4 nedges + (16 + vlen) for one edge
  size_t base = 4 + 4 + k2.size() + 4 + 16;
  REQUIRE(frame_bytes >= base);
  Chunk c;
  c.k2 = k2;
  c.edges.push_back(StoredEdge{MapKey{0, 0}, std::string(frame_bytes - base, 'x')});
  return c;
}

StoreOptions tuned(uint64_t gap_t, uint64_t cache) {
  StoreOptions o;
  o.gap_threshold_bytes = gap_t;
  o.read_cache_bytes = cache;
  return o;
}

}  // namespace

TEST_CASE("chunk codec round-trips") {
  Chunk c = make_chunk("word", {{1, "3"}, {7, "1"}, {9, ""}});
  std::string frame = encode_chunk(c);
  size_t end = 0;
  Chunk back = decode_chunk(frame, 0, &end);
  CHECK(back == c);
  CHECK(end == frame.size());
  frame[6] ^= 0x40;  // flip a bit inside the key length
  CHECK_THROWS_AS(decode_chunk(frame, 0), ImrError);
}

TEST_CASE("store round-trips chunks through append and query") {
  auto dir = test_dir("store_basic");
  MrbgStore::init(dir);
  MrbgStore store(dir, StoreOptions{});

  store.begin_append_batch();
  store.append_chunk(make_chunk("alpha", {{0, "1"}, {3, "2"}}));
  store.append_chunk(make_chunk("beta", {{1, "5"}}));
  store.append_chunk(make_chunk("gamma", {{2, "7"}, {4, "8"}, {5, "9"}}));
  store.seal_batch();

  CHECK(store.key_count() == 3);
  CHECK(store.batch_count() == 1);
  CHECK(store.contains("beta"));
  CHECK(!store.contains("delta"));

  auto got = store.get("beta");
  REQUIRE(got.has_value());
  CHECK(*got == make_chunk("beta", {{1, "5"}}));
  CHECK(!store.get("delta").has_value());

  // Ascending order enforced within a batch.
  store.begin_append_batch();
  store.append_chunk(make_chunk("delta", {{9, "1"}}));
  CHECK_THROWS_AS(store.append_chunk(make_chunk("alpha", {{9, "1"}})), ImrError);
}

TEST_CASE("newest batch wins after a re-merge and state survives reopen") {
  auto dir = test_dir("store_remerge");
  MrbgStore::init(dir);
  {
    MrbgStore store(dir, StoreOptions{});
    store.begin_append_batch();
    store.append_chunk(make_chunk("a", {{0, "old"}}));
    store.append_chunk(make_chunk("b", {{1, "keep"}}));
    store.seal_batch();

    store.begin_append_batch();
    store.append_chunk(make_chunk("a", {{0, "new"}, {2, "extra"}}));
    store.drop_key("b");
    store.append_chunk(make_chunk("c", {{5, "fresh"}}));
    store.seal_batch();
  }
  MrbgStore store(dir, StoreOptions{});
  CHECK(store.batch_count() == 2);
  auto a = store.get("a");
  REQUIRE(a.has_value());
  CHECK(a->edges.size() == 2);
  CHECK(a->edges[0].v2 == "new");
  CHECK(!store.get("b").has_value());
  CHECK(store.get("c").has_value());
  CHECK(store.sorted_keys() == std::vector<std::string>{"a", "c"});
}

TEST_CASE("queries during an open append pass see the previous snapshot") {
  auto dir = test_dir("store_snapshot");
  MrbgStore::init(dir);
  MrbgStore store(dir, StoreOptions{});
  store.begin_append_batch();
  store.append_chunk(make_chunk("k", {{0, "v1"}}));
  store.seal_batch();

  store.begin_append_batch();
  store.append_chunk(make_chunk("k", {{0, "v2"}}));
  auto pass = store.begin_query_pass({"k"});
  auto got = pass.get("k");
  REQUIRE(got.has_value());
  CHECK(got->edges[0].v2 == "v1");
  store.seal_batch();
  CHECK(store.get("k")->edges[0].v2 == "v2");
}

// Window growth traces, checked against hand-computed expectations for the
// exact algorithm: starting from the queried chunk, keep absorbing the next
// same-batch chunk while the gap to it is under the threshold and the
// window still fits the read cache; stop otherwise.
TEST_CASE("dynamic window growth matches hand-traced sizes") {
  // Four chunks with exact frame sizes 40/40/2000/40. Passes that skip "c"
  // see its 2000 bytes as a gap between "b" and "d".
  auto dir2 = test_dir("store_window_trace");
  MrbgStore::init(dir2);
  {
    MrbgStore store(dir2, StoreOptions{});
    store.begin_append_batch();
    store.append_chunk(sized_chunk("a", 40));
    store.append_chunk(sized_chunk("b", 40));
    store.append_chunk(sized_chunk("c", 2000));  // becomes the gap
    store.append_chunk(sized_chunk("d", 40));
    store.seal_batch();
  }

  SUBCASE("small threshold stops growth at the gap") {
    MrbgStore store(dir2, tuned(/*gap*/ 1000, /*cache*/ 1 << 20));
    // Query a, b, d: c is not in the pass, so the 2000-byte chunk between b
    // and d is a 2000-byte gap, above the 1000-byte threshold.
    auto pass = store.begin_query_pass({"a", "b", "d"});
    auto a = pass.get("a");
    REQUIRE(a.has_value());
    // Window grew over a and b (gap 0), stopped at the 2000-byte gap to d:
    // one 80-byte read.
    CHECK(store.counters().reads_issued == 1);
    CHECK(store.counters().bytes_read == 80);
    auto b = pass.get("b");
    REQUIRE(b.has_value());
    CHECK(store.counters().window_hits == 1);
    CHECK(store.counters().reads_issued == 1);
    auto d = pass.get("d");
    REQUIRE(d.has_value());
    CHECK(store.counters().reads_issued == 2);
    CHECK(store.counters().bytes_read == 80 + 40);
  }

  SUBCASE("large threshold absorbs the gap") {
    MrbgStore store(dir2, tuned(/*gap*/ 4000, /*cache*/ 1 << 20));
    auto pass = store.begin_query_pass({"a", "b", "d"});
    auto a = pass.get("a");
    REQUIRE(a.has_value());
    // One read spanning a, b, the 2000-byte gap, and d: 40+40+2000+40.
    CHECK(store.counters().reads_issued == 1);
    CHECK(store.counters().bytes_read == 2120);
    pass.get("b");
    pass.get("d");
    CHECK(store.counters().reads_issued == 1);
    CHECK(store.counters().window_hits == 2);
  }

  SUBCASE("read cache bounds the window") {
    MrbgStore store(dir2, tuned(/*gap*/ 4000, /*cache*/ 100));
    auto pass = store.begin_query_pass({"a", "b", "d"});
    pass.get("a");
    // a(40) + b(40) fit in 100; absorbing the gap would blow the cache.
    CHECK(store.counters().bytes_read == 80);
    pass.get("b");
    CHECK(store.counters().window_hits == 1);
    pass.get("d");
    CHECK(store.counters().reads_issued == 2);
  }

  SUBCASE("oversized chunk is read whole despite the cache") {
    MrbgStore store(dir2, tuned(1000, /*cache*/ 64));
    auto pass = store.begin_query_pass({"c"});
    auto c = pass.get("c");
    REQUIRE(c.has_value());
    CHECK(store.counters().reads_issued == 1);
    CHECK(store.counters().bytes_read == 2000);
  }
}

TEST_CASE("multi-batch passes keep one window per batch") {
  auto dir = test_dir("store_multibatch");
  MrbgStore::init(dir);
  MrbgStore store(dir, tuned(100 * 1024, 1 << 20));

  // Batch 0: even keys; batch 1: odd keys. Key order interleaves batches,
  // so a batch-blind window would thrash.
  store.begin_append_batch();
  for (int i = 0; i < 10; i += 2) {
    char k[16];
    std::snprintf(k, sizeof k, "k%02d", i);
    store.append_chunk(sized_chunk(k, 64));
  }
  store.seal_batch();
  store.begin_append_batch();
  for (int i = 1; i < 10; i += 2) {
    char k[16];
    std::snprintf(k, sizeof k, "k%02d", i);
    store.append_chunk(sized_chunk(k, 64));
  }
  store.seal_batch();

  std::vector<std::string> keys;
  for (int i = 0; i < 10; i++) {
    char k[16];
    std::snprintf(k, sizeof k, "k%02d", i);
    keys.push_back(k);
  }
  auto pass = store.begin_query_pass(keys);
  for (const auto& k : keys) {
    auto c = pass.get(k);
    REQUIRE(c.has_value());
    CHECK(c->k2 == k);
  }
  // Two reads total: one window per batch, every later query a window hit.
  CHECK(store.counters().reads_issued == 2);
  CHECK(store.counters().window_hits == 8);
}

TEST_CASE("query policies agree on content, differ in I/O") {
  auto dir = test_dir("store_policies");
  MrbgStore::init(dir);
  {
    MrbgStore store(dir, StoreOptions{});
    store.begin_append_batch();
    for (int i = 0; i < 200; i++) {
      char k[16];
      std::snprintf(k, sizeof k, "k%04d", i);
      store.append_chunk(sized_chunk(k, 128));
    }
    store.seal_batch();
  }
  std::vector<std::string> keys;
  for (int i = 0; i < 200; i += 2) {
    char k[16];
    std::snprintf(k, sizeof k, "k%04d", i);
    keys.push_back(k);
  }

  std::map<std::string, Chunk> reference;
  uint64_t reads_index_only = 0;
  {
    MrbgStore store(dir, StoreOptions{});
    auto pass = store.begin_query_pass(keys, QueryPolicy::kIndexOnly);
    for (const auto& k : keys) reference[k] = *pass.get(k);
    reads_index_only = store.counters().reads_issued;
    CHECK(reads_index_only == keys.size());
  }
  {
    MrbgStore store(dir, tuned(100 * 1024, 4096));
    auto pass = store.begin_query_pass(keys, QueryPolicy::kMultiDynamicWindow);
    for (const auto& k : keys) {
      CHECK(*pass.get(k) == reference[k]);
    }
    CHECK(store.counters().reads_issued < reads_index_only);
  }
  {
    MrbgStore store(dir, tuned(100 * 1024, 4096));
    auto pass = store.begin_query_pass(keys, QueryPolicy::kSingleFixedWindow);
    for (const auto& k : keys) {
      CHECK(*pass.get(k) == reference[k]);
    }
  }
}

TEST_CASE("store query results match an in-memory reference across merges") {
  auto dir = test_dir("store_reference");
  MrbgStore::init(dir);
  MrbgStore store(dir, StoreOptions{});
  std::map<std::string, Chunk> model;

  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> key_dist(0, 60);
  std::uniform_int_distribution<int> count_dist(1, 5);
  std::uniform_int_distribution<uint64_t> seq_dist(0, 1000);

  for (int round = 0; round < 8; round++) {
    std::map<std::string, Chunk> updates;
    int touched = key_dist(rng) / 3 + 1;
    for (int i = 0; i < touched; i++) {
      char k[16];
      std::snprintf(k, sizeof k, "key%03d", key_dist(rng));
      Chunk c;
      c.k2 = k;
      int edges = count_dist(rng);
      std::set<uint64_t> seqs;
      while (static_cast<int>(seqs.size()) < edges) seqs.insert(seq_dist(rng));
      for (uint64_t s : seqs) {
        c.edges.push_back(StoredEdge{MapKey{0, s}, random_token(rng, 12)});
      }
      updates[k] = c;
    }
    store.begin_append_batch();
    for (const auto& [k, c] : updates) {
      store.append_chunk(c);
      model[k] = c;
    }
    store.seal_batch();

    std::vector<std::string> keys = store.sorted_keys();
    auto pass = store.begin_query_pass(keys);
    for (const auto& k : keys) {
      auto got = pass.get(k);
      REQUIRE(got.has_value());
      CHECK(*got == model[k]);
    }
  }
}

TEST_CASE("compaction rewrites to one batch and preserves content") {
  auto dir = test_dir("store_compact");
  MrbgStore::init(dir);
  MrbgStore store(dir, StoreOptions{});
  std::map<std::string, Chunk> model;
  for (int round = 0; round < 5; round++) {
    store.begin_append_batch();
    for (int i = round; i < 40; i += round + 1) {
      char k[16];
      std::snprintf(k, sizeof k, "key%03d", i);
      Chunk c = make_chunk(k, {{static_cast<uint64_t>(round), std::to_string(round)}});
      store.append_chunk(c);
      model[k] = c;
    }
    store.seal_batch();
  }
  uint64_t before = store.data_file_bytes();
  store.compact();
  CHECK(store.batch_count() == 1);
  CHECK(store.data_file_bytes() < before);
  CHECK(store.generation() == 1);
  for (const auto& [k, c] : model) {
    auto got = store.get(k);
    REQUIRE(got.has_value());
    CHECK(*got == c);
  }
  // Reopen and re-verify.
  MrbgStore again(dir, StoreOptions{});
  CHECK(again.key_count() == model.size());
  CHECK(again.get("key003")->edges[0].v2 == model["key003"].edges[0].v2);
}

TEST_CASE("crash before the index swap leaves the old store intact") {
  auto dir = test_dir("store_crash_pre");
  MrbgStore::init(dir);
  std::map<std::string, Chunk> model;
  {
    MrbgStore store(dir, StoreOptions{});
    for (int round = 0; round < 3; round++) {
      store.begin_append_batch();
      char k[16];
      std::snprintf(k, sizeof k, "key%03d", round);
      Chunk c = make_chunk(k, {{0, "v" + std::to_string(round)}});
      store.append_chunk(c);
      model[k] = c;
      store.seal_batch();
    }
    CHECK_THROWS_AS(store.compact(CompactionCrashPoint::kAfterDataFile), CrashInjected);
  }
  MrbgStore store(dir, StoreOptions{});
  CHECK(store.generation() == 0);
  CHECK(store.batch_count() == 3);
  for (const auto& [k, c] : model) CHECK(*store.get(k) == c);
  CHECK(!std::filesystem::exists(dir / "mrbg.dat.new"));
}

TEST_CASE("crash after the index swap completes the compaction on reopen") {
  auto dir = test_dir("store_crash_post");
  MrbgStore::init(dir);
  std::map<std::string, Chunk> model;
  {
    MrbgStore store(dir, StoreOptions{});
    for (int round = 0; round < 3; round++) {
      store.begin_append_batch();
      char k[16];
      std::snprintf(k, sizeof k, "key%03d", round);
      Chunk c = make_chunk(k, {{0, "v" + std::to_string(round)}});
      store.append_chunk(c);
      model[k] = c;
      store.seal_batch();
    }
    CHECK_THROWS_AS(store.compact(CompactionCrashPoint::kAfterIndexSwap), CrashInjected);
  }
  MrbgStore store(dir, StoreOptions{});
  CHECK(store.generation() == 1);
  CHECK(store.batch_count() == 1);
  for (const auto& [k, c] : model) CHECK(*store.get(k) == c);
  CHECK(!std::filesystem::exists(dir / "mrbg.dat.new"));
}
