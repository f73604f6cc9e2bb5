// Workload harness: payload stamps, the shadow oracle, generators, trace
// parsing, replay, and run determinism. Expected values are recomputed here
// from first principles wherever the harness exposes a checkable quantity.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <vector>

#include "zlraid/volume.h"
#include "zlraid/workload.h"

using namespace zlraid;

namespace {

constexpr uint64_t kFnvBasis = 0xcbf29ce484222325ull;

DeviceGeometry small_geo() {
  DeviceGeometry g;
  g.num_zones = 16;
  g.zone_capacity_blocks = 128;
  return g;
}

VolumeParams small_params(uint64_t logical_blocks) {
  VolumeParams p;
  p.scheme = RaidScheme::Raid5;
  p.drives = 4;
  p.logical_bytes = logical_blocks * kBlockSize;
  p.group_size = 8;
  return p;
}

Result<std::vector<TraceRecord>> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_trace(in);
}

}  // namespace

TEST_CASE("block stamps round-trip and tampering is detected") {
  std::vector<uint8_t> block(kBlockSize);
  stamp_block(40960, 17, 99, block);
  uint64_t lba = 0, version = 0;
  CHECK(classify_block(block, 99, &lba, &version) == BlockVerdict::Stamp);
  CHECK(lba == 40960);
  CHECK(version == 17);
  // The tail past the header is zero so trimmed images stay small.
  for (size_t i = 64; i < kBlockSize; ++i) REQUIRE(block[i] == 0);

  SUBCASE("any corrupted byte demotes the stamp to garbage") {
    for (size_t i : {size_t{0}, size_t{7}, size_t{20}, size_t{31}}) {
      auto bad = block;
      bad[i] ^= 0x40;
      CHECK(classify_block(bad, 99, &lba, &version) == BlockVerdict::Garbage);
    }
  }
  SUBCASE("a stamp only verifies under its own seed") {
    CHECK(classify_block(block, 100, &lba, &version) == BlockVerdict::Garbage);
  }
  SUBCASE("all zeros is its own verdict") {
    std::vector<uint8_t> zeros(kBlockSize, 0);
    CHECK(classify_block(zeros, 99, &lba, &version) == BlockVerdict::Zero);
  }
  SUBCASE("distinct (lba, version) pairs give distinct headers") {
    std::vector<uint8_t> other(kBlockSize);
    stamp_block(40960, 18, 99, other);
    CHECK(other != block);
    stamp_block(45056, 17, 99, other);
    CHECK(other != block);
  }
}

TEST_CASE("fnv1a matches the published test vectors") {
  auto hash_str = [](const char* s) {
    return fnv1a(std::span<const uint8_t>(
                     reinterpret_cast<const uint8_t*>(s), strlen(s)),
                 kFnvBasis);
  };
  CHECK(hash_str("") == kFnvBasis);
  CHECK(hash_str("a") == 0xaf63dc4c8601ec8cull);
  CHECK(hash_str("foobar") == 0x85944171f73967e8ull);
  // Chaining: hashing "foo" then "bar" equals hashing "foobar".
  uint64_t h = fnv1a(std::span<const uint8_t>(
                         reinterpret_cast<const uint8_t*>("foo"), 3),
                     kFnvBasis);
  h = fnv1a(std::span<const uint8_t>(
                reinterpret_cast<const uint8_t*>("bar"), 3),
            h);
  CHECK(h == 0x85944171f73967e8ull);
}

TEST_CASE("the shadow model enforces the read contract") {
  ShadowModel shadow(8, 42);
  std::vector<uint8_t> zeros(kBlockSize, 0);
  std::vector<uint8_t> block(kBlockSize);

  // Nothing submitted: zeros are the only acceptable content.
  CHECK(shadow.check_read(3, zeros, 0).empty());
  stamp_block(3 * kBlockSize, 1, 42, block);
  CHECK_FALSE(shadow.check_read(3, block, 0).empty());  // v1 never submitted

  uint64_t v1 = shadow.alloc_version();
  REQUIRE(v1 == 1);
  shadow.note_submit(3, v1);
  // Submitted but unacked: zeros or v1 both legal.
  CHECK(shadow.check_read(3, zeros, 0).empty());
  CHECK(shadow.check_read(3, block, 0).empty());
  CHECK(shadow.newest_submitted(3) == 1);
  CHECK(shadow.newest_acked(3) == 0);

  shadow.note_ack(3, v1);
  CHECK(shadow.newest_acked(3) == 1);
  // Acked: zeros are no longer acceptable once the floor is v1.
  CHECK_FALSE(shadow.check_read(3, zeros, v1).empty());
  CHECK(shadow.check_read(3, block, v1).empty());

  uint64_t v2 = shadow.alloc_version();
  shadow.note_submit(3, v2);
  std::vector<uint8_t> block2(kBlockSize);
  stamp_block(3 * kBlockSize, v2, 42, block2);
  // Read raced with the in-flight v2: either version passes with floor v1.
  CHECK(shadow.check_read(3, block, v1).empty());
  CHECK(shadow.check_read(3, block2, v1).empty());
  shadow.note_ack(3, v2);
  // Floor advanced: v1 is now stale.
  CHECK_FALSE(shadow.check_read(3, block, v2).empty());

  SUBCASE("a stamp for some other address never passes") {
    std::vector<uint8_t> alien(kBlockSize);
    stamp_block(5 * kBlockSize, v2, 42, alien);
    CHECK_FALSE(shadow.check_read(3, alien, 0).empty());
  }
  SUBCASE("versions from the future are rejected") {
    std::vector<uint8_t> future(kBlockSize);
    stamp_block(3 * kBlockSize, 57, 42, future);
    CHECK_FALSE(shadow.check_read(3, future, 0).empty());
  }
  SUBCASE("crash reads accept the [acked, submitted] window") {
    uint64_t v3 = shadow.alloc_version();
    shadow.note_submit(3, v3);  // in flight at the crash
    std::vector<uint8_t> b3(kBlockSize);
    stamp_block(3 * kBlockSize, v3, 42, b3);
    CHECK(shadow.check_crash_read(3, block2).empty());  // acked survivor
    CHECK(shadow.check_crash_read(3, b3).empty());      // torn-but-landed
    CHECK_FALSE(shadow.check_crash_read(3, block).empty());  // rollback
    CHECK_FALSE(shadow.check_crash_read(3, zeros).empty());  // lost ack
  }
  SUBCASE("touched lists exactly the submitted blocks") {
    shadow.note_submit(6, shadow.alloc_version());
    auto t = shadow.touched();
    REQUIRE(t.size() == 2);
    CHECK(t[0] == 3);
    CHECK(t[1] == 6);
  }
}

TEST_CASE("quiescent digest equals an independent recomputation") {
  ShadowModel shadow(4, 7);
  uint64_t v = shadow.alloc_version();
  shadow.note_submit(2, v);
  shadow.note_ack(2, v);
  // Submitted-not-acked content must not contribute: quiescence means the
  // write either completed (and would be acked) or never happened.
  uint64_t vu = shadow.alloc_version();
  shadow.note_submit(1, vu);
  shadow.note_ack(1, vu);

  // Independent restatement of the per-block digest: FNV-1a over the payload,
  // xored with a golden-ratio spread of the block index, then pushed through
  // the splitmix64 output finalizer (xor-shift / multiply, no increment).
  auto fmix = [](uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  };
  auto block_digest = [&](uint64_t b, const uint8_t* data) {
    uint64_t h =
        fnv1a(std::span<const uint8_t>(data, kBlockSize), kFnvBasis);
    return fmix(h ^ b * 0x9e3779b97f4a7c15ull);
  };
  std::vector<uint8_t> zero(kBlockSize, 0), scratch(kBlockSize);
  uint64_t expect = 0;
  for (uint64_t b = 0; b < 4; ++b) {
    if (b == 1 || b == 2) {
      stamp_block(b * kBlockSize, b == 1 ? vu : v, 7, scratch);
      expect += block_digest(b, scratch.data());
    } else {
      expect += block_digest(b, zero.data());
    }
  }
  CHECK(shadow.quiescent_digest() == expect);
}

TEST_CASE("zipf sampling follows the analytic head probability") {
  const uint64_t n = 1000;
  const double theta = 0.99;
  double zetan = 0;
  for (uint64_t i = 1; i <= n; ++i)
    zetan += 1.0 / std::pow(static_cast<double>(i), theta);
  ZipfGenerator zg(n, theta);
  std::mt19937_64 rng(12345);
  const int draws = 200000;
  uint64_t hits0 = 0, first_decade = 0, last_decade = 0;
  for (int i = 0; i < draws; ++i) {
    uint64_t v = zg.next(rng);
    REQUIRE(v < n);
    if (v == 0) ++hits0;
    if (v < n / 10) ++first_decade;
    if (v >= n - n / 10) ++last_decade;
  }
  double p0 = static_cast<double>(hits0) / draws;
  CHECK(p0 == doctest::Approx(1.0 / zetan).epsilon(0.2));
  // Rank 0 is hottest and mass decays toward high ranks.
  CHECK(first_decade > 10 * last_decade);
}

TEST_CASE("op streams cover, wrap, and respect the byte budget") {
  SUBCASE("sequential single-block coverage and wraparound") {
    WorkloadSpec spec;
    spec.pattern = AccessPattern::Sequential;
    spec.total_bytes = 96 * kBlockSize;  // 1.5 laps over 64 blocks
    spec.seed = 3;
    OpStream s(spec, 64);
    std::vector<int> count(64, 0);
    uint64_t expect = 0, ops = 0;
    while (auto op = s.next()) {
      CHECK(op->block == expect % 64);
      CHECK(op->nblocks == 1);
      CHECK_FALSE(op->is_read);
      ++count[op->block];
      ++expect;
      ++ops;
    }
    CHECK(ops == 96);
    for (int b = 0; b < 64; ++b) CHECK(count[b] == (b < 32 ? 2 : 1));
  }
  SUBCASE("sequential multi-block ops restart rather than straddle the end") {
    WorkloadSpec spec;
    spec.pattern = AccessPattern::Sequential;
    spec.sizes = {{3, 1.0}};
    spec.total_bytes = 30 * kBlockSize;
    OpStream s(spec, 8);  // 8 % 3 != 0 forces the wrap path
    while (auto op = s.next()) {
      CHECK(op->block + op->nblocks <= 8);
      CHECK(op->block % 3 == 0);  // cursor resets to zero at the boundary
    }
  }
  SUBCASE("total bytes land within one op of the request") {
    WorkloadSpec spec;
    spec.pattern = AccessPattern::Random;
    spec.sizes = WorkloadSpec::mix_4k_16k();
    spec.total_bytes = 1000 * kBlockSize;
    spec.seed = 11;
    OpStream s(spec, 512);
    uint64_t bytes = 0;
    while (auto op = s.next()) {
      REQUIRE(op->block + op->nblocks <= 512);
      bytes += static_cast<uint64_t>(op->nblocks) * kBlockSize;
    }
    CHECK(bytes >= spec.total_bytes);
    CHECK(bytes < spec.total_bytes + 4 * kBlockSize);
  }
  SUBCASE("size mix and read fraction match their weights") {
    WorkloadSpec spec;
    spec.pattern = AccessPattern::Random;
    spec.sizes = WorkloadSpec::mix_4k_16k();
    spec.read_fraction = 0.3;
    spec.total_bytes = 60000 * kBlockSize;
    spec.seed = 5;
    OpStream s(spec, 4096);
    uint64_t small = 0, large = 0, reads = 0, ops = 0;
    while (auto op = s.next()) {
      ++ops;
      if (op->nblocks == 1) ++small;
      else if (op->nblocks == 4) ++large;
      else FAIL("unexpected op size");
      if (op->is_read) ++reads;
    }
    CHECK(static_cast<double>(small) / ops == doctest::Approx(0.75).epsilon(0.03));
    CHECK(static_cast<double>(large) / ops == doctest::Approx(0.25).epsilon(0.03));
    CHECK(static_cast<double>(reads) / ops == doctest::Approx(0.30).epsilon(0.05));
  }
  SUBCASE("identical specs yield identical streams") {
    WorkloadSpec spec;
    spec.pattern = AccessPattern::Zipf;
    spec.sizes = WorkloadSpec::mix_4k_16k();
    spec.read_fraction = 0.5;
    spec.total_bytes = 2000 * kBlockSize;
    spec.seed = 77;
    OpStream a(spec, 1024), b(spec, 1024);
    while (true) {
      auto oa = a.next(), ob = b.next();
      REQUIRE(oa.has_value() == ob.has_value());
      if (!oa) break;
      CHECK(oa->block == ob->block);
      CHECK(oa->nblocks == ob->nblocks);
      CHECK(oa->is_read == ob->is_read);
    }
  }
}

TEST_CASE("workload validation rejects malformed specs") {
  const uint64_t logical = 1024 * kBlockSize;
  WorkloadSpec ok;
  CHECK(ok.validate(logical).ok());
  auto mix = WorkloadSpec::mix_4k_16k();
  REQUIRE(mix.size() == 2);
  CHECK(mix[0].blocks == 1);
  CHECK(mix[0].weight == 0.75);
  CHECK(mix[1].blocks == 4);
  CHECK(mix[1].weight == 0.25);

  WorkloadSpec s = ok;
  s.sizes.clear();
  CHECK_FALSE(s.validate(logical).ok());
  s = ok;
  s.sizes = {{0, 1.0}};
  CHECK_FALSE(s.validate(logical).ok());
  s = ok;
  s.sizes = {{1, 0.6}, {4, 0.6}};  // weights must sum to one
  CHECK_FALSE(s.validate(logical).ok());
  s = ok;
  s.read_fraction = 1.5;
  CHECK_FALSE(s.validate(logical).ok());
  s = ok;
  s.queue_depth = 0;
  CHECK_FALSE(s.validate(logical).ok());
  s = ok;
  s.pattern = AccessPattern::Zipf;
  s.zipf_theta = 1.0;  // the sampler needs theta strictly inside (0,1)
  CHECK_FALSE(s.validate(logical).ok());
  s = ok;
  s.sizes = {{2048, 1.0}};  // request larger than the volume
  CHECK_FALSE(s.validate(logical).ok());
}

TEST_CASE("access pattern names round-trip") {
  for (auto p : {AccessPattern::Random, AccessPattern::Sequential,
                 AccessPattern::Zipf}) {
    auto back = access_pattern_from_name(access_pattern_name(p));
    REQUIRE(back.ok());
    CHECK(*back == p);
  }
  CHECK(access_pattern_from_name("uniform").ok());  // alias
  CHECK_FALSE(access_pattern_from_name("pareto").ok());
}

TEST_CASE("trace parsing accepts the documented grammar only") {
  SUBCASE("well-formed traces parse field by field") {
    auto r = parse(
        "time_us,op,offset,length\n"
        "0,W,0,4096\n"
        "10,w,8192,16384\n"
        "10,R,4096,4096\n"
        "250,r,0,8192\n");
    REQUIRE(r.ok());
    REQUIRE(r->size() == 4);
    CHECK((*r)[0].time_us == 0);
    CHECK_FALSE((*r)[0].is_read);
    CHECK((*r)[1].offset == 8192);
    CHECK((*r)[1].length == 16384);
    CHECK((*r)[2].is_read);
    CHECK((*r)[3].time_us == 250);
  }
  SUBCASE("blank lines and CRLF are tolerated") {
    auto r = parse("time_us,op,offset,length\r\n\n5,W,0,4096\r\n");
    REQUIRE(r.ok());
    CHECK(r->size() == 1);
  }
  auto expect_error = [](const std::string& text, const char* line_tag,
                         const char* fragment) {
    std::istringstream in(text);
    auto r = parse_trace(in);
    REQUIRE_FALSE(r.ok());
    CHECK(r.status.code == Errc::TraceParseError);
    CHECK(r.status.message.find(line_tag) != std::string::npos);
    CHECK(r.status.message.find(fragment) != std::string::npos);
  };
  SUBCASE("errors carry the offending line number") {
    expect_error("", "line 1", "header");
    expect_error("offset,length\n", "line 1", "header");
    expect_error("time_us,op,offset,length\n0,X,0,4096\n", "line 2",
                 "op must be R or W");
    expect_error("time_us,op,offset,length\n0,W,0,4096\n5,W,100,4096\n",
                 "line 3", "multiples of 4096");
    expect_error("time_us,op,offset,length\n0,W,0,0\n", "line 2",
                 "multiples of 4096");
    expect_error("time_us,op,offset,length\n9,W,0,4096\n3,W,0,4096\n",
                 "line 3", "non-decreasing");
    expect_error("time_us,op,offset,length\n0,W,4096\n", "line 2",
                 "4 comma-separated fields");
    expect_error("time_us,op,offset,length\n0,W,0,4096,9\n", "line 2",
                 "4 comma-separated fields");
    expect_error("time_us,op,offset,length\nabc,W,0,4096\n", "line 2",
                 "bad time_us");
    expect_error("time_us,op,offset,length\n0,W,x,4096\n", "line 2",
                 "bad offset");
  }
  SUBCASE("a missing file is a parse error, not a crash") {
    auto r = parse_trace_file("/nonexistent/trace.csv");
    REQUIRE_FALSE(r.ok());
    CHECK(r.status.code == Errc::TraceParseError);
  }
}

TEST_CASE("replay reaches the same final image open- or closed-loop") {
  // The trace content is identical; only pacing differs, so after draining,
  // both runs must hold the same bytes.
  std::string text = "time_us,op,offset,length\n";
  std::mt19937_64 rng(404);
  uint64_t t = 0;
  for (int i = 0; i < 120; ++i) {
    t += rng() % 50;
    uint64_t block = rng() % 250;
    bool read = i > 20 && rng() % 4 == 0;
    text += std::to_string(t) + (read ? ",R," : ",W,") +
            std::to_string(block * kBlockSize) + ",4096\n";
  }
  auto trace = parse(text);
  REQUIRE(trace.ok());

  auto run = [&](bool closed) {
    auto sim = make_sim(small_geo(), small_params(256));
    REQUIRE(sim.ok());
    ReplayOptions ro;
    ro.closed_loop = closed;
    ro.queue_depth = 8;
    ro.seed = 21;
    ro.final_readback = true;
    auto r = run_replay(sim->volume.get(), *trace, ro);
    REQUIRE(r.ok());
    CHECK(r->verify_failures == 0);
    CHECK(r->readback_checked);
    return r->readback_digest;
  };
  uint64_t open_digest = run(false);
  uint64_t closed_digest = run(true);
  CHECK(open_digest == closed_digest);

  SUBCASE("records past the logical capacity are refused up front") {
    auto sim = make_sim(small_geo(), small_params(16));
    REQUIRE(sim.ok());
    auto r = run_replay(sim->volume.get(), *trace, {});
    CHECK_FALSE(r.ok());
  }
}

TEST_CASE("bench runs are deterministic from the seed") {
  WorkloadSpec spec;
  spec.pattern = AccessPattern::Zipf;
  spec.sizes = WorkloadSpec::mix_4k_16k();
  spec.read_fraction = 0.3;
  spec.queue_depth = 16;
  spec.total_bytes = 3 * 1024 * 1024;
  spec.seed = 31;
  auto run = [&]() {
    auto sim = make_sim(small_geo(), small_params(512));
    REQUIRE(sim.ok());
    BenchOptions bo;
    bo.final_readback = true;
    auto r = run_bench(sim->volume.get(), spec, bo);
    REQUIRE(r.ok());
    CHECK(r->verify_failures == 0);
    return r->csv();
  };
  std::string a = run(), b = run();
  CHECK(a == b);
  // And a different seed actually changes the run.
  spec.seed = 32;
  CHECK(run() != a);
}

TEST_CASE("capacity helpers match hand arithmetic") {
  // 16 zones of 128 blocks, chunk 1: S = 126 (1 header + 126 data rows +
  // ceil(126/204)=1 footer), k = 3 of 4 drives carry data.
  auto cap = data_capacity_blocks(small_geo(), small_params(256));
  REQUIRE(cap.ok());
  CHECK(*cap == 16ull * 126 * 3);

  // Reserving r of the capacity leaves logical = capacity / (1 + r).
  CHECK(logical_bytes_for_reserved(6048, 1.0) == 3024ull * kBlockSize);
  CHECK(logical_bytes_for_reserved(6048, 0.5) == 4032ull * kBlockSize);
  CHECK(logical_bytes_for_reserved(6048, 0.2) == 5040ull * kBlockSize);
  CHECK(logical_bytes_for_reserved(6048, 0.0) == 6048ull * kBlockSize);
}
