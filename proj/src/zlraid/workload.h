#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "zlraid/common.h"
#include "zlraid/metrics.h"
#include "zlraid/sim.h"
#include "zlraid/volume.h"
#include "zlraid/zns_device.h"

// Workload generation, trace replay, shadow-model verification, and the
// crash/rebuild harnesses. Everything here drives a Volume through its public
// asynchronous interface with the simulated clock as the only time source, so
// a (seed, config, workload) triple always produces the same run.

namespace zlraid {

// ---------------------------------------------------------------------------
// Self-describing block payloads.
//
// Every written block carries a deterministic stamp derived from
// (lba, version, seed): a 32-byte header followed by zeros. The zero tail
// keeps simulated drives cheap to hold in memory (they trim trailing zeros)
// and lets a verifier reconstruct the expected bytes of any block from three
// integers instead of retaining payload copies.

inline constexpr uint64_t kStampMagic = 0x4b4c422d44524c5aull;  // "ZLRD-BLK"

// Fills out[0..4095] with the stamp for (lba, version, seed).
void stamp_block(uint64_t lba, uint64_t version, uint64_t seed,
                 std::span<uint8_t> out);

enum class BlockVerdict : uint8_t {
  Zero,    // all 4096 bytes are zero (never written, or explicit zero fill)
  Stamp,   // well-formed stamp; lba/version reported
  Garbage  // anything else
};

BlockVerdict classify_block(std::span<const uint8_t> block, uint64_t seed,
                            uint64_t* lba_out, uint64_t* version_out);

// ---------------------------------------------------------------------------
// Shadow model: the harness's correctness oracle. A flat map from LBA to the
// version history the engine is allowed to serve. Versions are global op
// sequence numbers, so "newer" is a total order per LBA.
//
// Read contract (engine acks a write only once it is durable and indexed, and
// a later-submitted write always wins the mapping):
//   a read of `lba` submitted at a moment when `a` was the newest acked
//   version must return some submitted version v >= a; if no version was
//   acked yet it may also return zeros.
// After a crash the same rule applies with `a` taken at the crash point.
class ShadowModel {
 public:
  ShadowModel(uint64_t logical_blocks, uint64_t seed);

  uint64_t logical_blocks() const { return logical_blocks_; }
  uint64_t seed() const { return seed_; }

  // Version numbers are allocated here so phases sharing one shadow keep a
  // single monotonic sequence.
  uint64_t alloc_version() { return next_version_++; }

  // Write lifecycle. `version` must come from alloc_version().
  void note_submit(uint64_t block, uint64_t version);
  void note_ack(uint64_t block, uint64_t version);

  uint64_t newest_acked(uint64_t block) const { return acked_[block]; }
  uint64_t newest_submitted(uint64_t block) const { return submitted_[block]; }

  // Checks one block read against the contract. `floor_version` is the newest
  // acked version captured when the read was submitted (0 = none).
  // Returns empty on success, else a description of the mismatch.
  std::string check_read(uint64_t block, std::span<const uint8_t> data,
                         uint64_t floor_version) const;

  // Post-crash check: data must be zeros (if nothing was ever acked) or a
  // valid stamp with version in [newest_acked, newest_submitted].
  std::string check_crash_read(uint64_t block,
                               std::span<const uint8_t> data) const;

  // Expected exact content digest once the volume is quiescent (every
  // submitted write acked): FNV-1a over all logical blocks in order.
  uint64_t quiescent_digest() const;

  // Blocks that have ever been submitted to, ascending.
  std::vector<uint64_t> touched() const;

 private:
  uint64_t logical_blocks_;
  uint64_t seed_;
  uint64_t next_version_ = 1;
  std::vector<uint64_t> acked_;      // newest acked version, 0 = none
  std::vector<uint64_t> submitted_;  // newest submitted version, 0 = none
};

// Digest helper shared by the readback verifier (FNV-1a 64).
uint64_t fnv1a(std::span<const uint8_t> bytes, uint64_t h);

// ---------------------------------------------------------------------------
// Workload specification.

enum class AccessPattern : uint8_t { Random, Sequential, Zipf };

const char* access_pattern_name(AccessPattern p);
Result<AccessPattern> access_pattern_from_name(const std::string& name);

struct SizeClass {
  uint32_t blocks = 1;   // request size in 4-KiB blocks
  double weight = 1.0;   // fraction of requests
};

struct WorkloadSpec {
  AccessPattern pattern = AccessPattern::Random;
  double zipf_theta = 0.99;
  std::vector<SizeClass> sizes = {{1, 1.0}};
  double read_fraction = 0.0;  // 0 = write-only
  uint32_t queue_depth = 16;
  uint64_t total_bytes = 0;
  uint64_t seed = 1;

  // "75/25" style mix used by the hybrid experiments: 75% 4-KiB, 25% 16-KiB.
  static std::vector<SizeClass> mix_4k_16k();

  Status validate(uint64_t logical_bytes) const;
};

// Zipf(theta) over [0, n): rank 0 is the hottest item and ranks map to items
// directly, so low addresses are the hot set. Standard bounded Zipfian
// rejection-free sampler with precomputed zeta(n).
class ZipfGenerator {
 public:
  ZipfGenerator(uint64_t n, double theta);
  uint64_t next(std::mt19937_64& rng);

 private:
  uint64_t n_;
  double theta_;
  double zetan_;
  double zeta2_;
  double alpha_;
  double eta_;
};

// Deterministic op stream for a WorkloadSpec (offsets, sizes, read/write).
class OpStream {
 public:
  OpStream(const WorkloadSpec& spec, uint64_t logical_blocks);

  struct Op {
    bool is_read = false;
    uint64_t block = 0;     // first logical block
    uint32_t nblocks = 1;
  };

  // Next op, or nullopt once total_bytes worth of ops were produced.
  std::optional<Op> next();

 private:
  WorkloadSpec spec_;
  uint64_t logical_blocks_;
  uint64_t bytes_left_;
  uint64_t seq_cursor_ = 0;
  std::mt19937_64 rng_;
  std::unique_ptr<ZipfGenerator> zipf_;
};

// ---------------------------------------------------------------------------
// Bench: closed-loop runner at a fixed queue depth.

struct BenchResult {
  MetricsSnapshot snap;
  double throughput_mibs = 0.0;   // user bytes moved / simulated seconds
  double write_p50_us = 0.0, write_p95_us = 0.0;
  double read_p50_us = 0.0, read_p95_us = 0.0;
  double degraded_p50_us = 0.0, degraded_p95_us = 0.0;
  uint64_t ops = 0, write_ops = 0, read_ops = 0;
  uint64_t bytes_written = 0, bytes_read = 0;
  uint64_t verify_failures = 0;
  uint64_t readback_digest = 0;   // full-volume digest when verification ran
  bool readback_checked = false;

  // Deterministic key,value CSV (metrics_csv plus the derived rows above).
  std::string csv() const;
};

struct BenchOptions {
  bool verify_reads = true;       // check every read against the shadow model
  bool final_readback = false;    // full-volume digest + shadow comparison
  ShadowModel* shadow = nullptr;  // external shadow (multi-phase runs); else owned
};

// Runs `spec` against the volume, drains it, and reports metrics. Any shadow
// mismatch lands in verify_failures (and the first few on stderr).
Result<BenchResult> run_bench(Volume* vol, const WorkloadSpec& spec,
                              const BenchOptions& opts = {});

// Full-volume readback: digest of all logical blocks; when `shadow` is given
// also verifies every block's content. Returns the digest.
Result<uint64_t> readback_digest(Volume* vol, const ShadowModel* shadow,
                                 uint64_t* mismatches);

// ---------------------------------------------------------------------------
// Trace replay. CSV with header `time_us,op,offset,length`; op is R or W;
// offset/length are bytes, 4-KiB aligned; times non-decreasing.

struct TraceRecord {
  uint64_t time_us = 0;
  bool is_read = false;
  uint64_t offset = 0;
  uint64_t length = 0;
};

Result<std::vector<TraceRecord>> parse_trace(std::istream& in);
Result<std::vector<TraceRecord>> parse_trace_file(const std::string& path);

struct ReplayOptions {
  bool closed_loop = false;  // ignore arrival times, saturate the queue
  uint32_t queue_depth = 16;
  uint64_t seed = 1;         // stamp seed
  bool verify_reads = true;
  bool final_readback = false;
};

Result<BenchResult> run_replay(Volume* vol, const std::vector<TraceRecord>& trace,
                               const ReplayOptions& opts);

// ---------------------------------------------------------------------------
// Crash testing. Each crash point re-runs the same deterministic workload in
// a fresh simulation, snapshots the durable state of every drive at the n-th
// applied device command, recovers from the snapshots, and verifies every
// acknowledged write per the shadow contract.

struct CrashTestConfig {
  DeviceGeometry geometry;
  VolumeParams params;
  WorkloadSpec workload;
  std::vector<uint64_t> points;     // explicit applied-command indices
  uint32_t random_points = 0;       // additional random points
  bool exhaustive = false;          // every boundary 0..N
  bool mid_gc_points = false;       // draw the random points from GC windows
  uint64_t schedule_seed = 1;
  bool check_idempotent = false;    // recover twice, compare state digests
};

struct CrashPointResult {
  uint64_t point = 0;          // applied-command index (0 = before anything)
  bool during_gc = false;
  bool pass = false;
  uint64_t acked_writes = 0;   // acked user write versions at the crash
  uint64_t blocks_checked = 0;
  std::string detail;          // first failure description
};

struct CrashTestReport {
  uint64_t total_commands = 0;  // applied commands in the undisturbed run
  std::vector<CrashPointResult> points;
  uint64_t failures = 0;
  std::string csv() const;      // point,during_gc,pass,acked,checked,detail
};

Result<CrashTestReport> run_crashtest(const CrashTestConfig& cfg);

// ---------------------------------------------------------------------------
// Rebuild scenario: fill, drain, fail drive(s), rebuild, byte-compare the
// replacement against the pre-failure image.

struct RebuildScenario {
  DeviceGeometry geometry;
  VolumeParams params;
  WorkloadSpec fill;
  std::vector<uint32_t> fail_drives = {0};
  bool verify_images = true;      // serialize + compare replacement vs original
  bool verify_readback = true;    // full-volume shadow verification afterwards
};

struct RebuildResult {
  SimTime fill_ns = 0;
  SimTime rebuild_ns = 0;         // simulated time spent in rebuild_drive
  uint64_t stored_user_blocks = 0;
  bool images_equal = false;
  bool images_checked = false;
  uint64_t readback_mismatches = 0;
  BenchResult fill_result;
};

Result<RebuildResult> run_rebuild(const RebuildScenario& sc);

// ---------------------------------------------------------------------------
// Shared scaffolding: build a simulation (clock + drives + volume) from a
// geometry and params. Used by the CLI and the test suites.

struct SimSetup {
  std::unique_ptr<SimClock> clock;
  std::vector<std::unique_ptr<ZnsDevice>> drives;
  std::unique_ptr<Volume> volume;

  std::vector<ZnsDevice*> device_ptrs() const;
};

Result<SimSetup> make_sim(const DeviceGeometry& geo, const VolumeParams& params);

// Data capacity (in 4-KiB blocks) the segment layout can store for the given
// geometry and params: data slots across all zones, headers/footers/parity
// excluded. The usable logical space must stay below this.
Result<uint64_t> data_capacity_blocks(const DeviceGeometry& geo,
                                      const VolumeParams& params);

// Logical size for a reserved-space fraction: logical = capacity / (1 + r).
uint64_t logical_bytes_for_reserved(uint64_t capacity_blocks, double reserved);

}  // namespace zlraid
