#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "zlraid/common.h"
#include "zlraid/config.h"
#include "zlraid/erasure.h"
#include "zlraid/l2p.h"
#include "zlraid/layout.h"
#include "zlraid/metrics.h"
#include "zlraid/sim.h"
#include "zlraid/zns_device.h"

namespace zlraid {

// How stripes are written. Zapraid mixes zone-append small-write segments
// (group barrier, group_size > 1) with zone-write segments; the other two
// modes force every segment to one command type for comparison runs.
enum class EngineMode : uint8_t { Zapraid, ZoneWriteOnly, ZoneAppendOnly };

const char* engine_mode_name(EngineMode m);
Result<EngineMode> engine_mode_from_name(const std::string& name);

struct VolumeParams {
  RaidScheme scheme = RaidScheme::Raid5;
  uint32_t drives = 4;
  EngineMode mode = EngineMode::Zapraid;
  uint32_t chunk_small_blocks = 1;   // C for small-write segments
  uint32_t chunk_large_blocks = 4;   // C for large-write segments
  uint32_t n_small = 1;              // concurrently open small segments
  uint32_t n_large = 0;              // concurrently open large segments
  uint32_t group_size = 256;         // G for append segments
  uint64_t logical_bytes = 0;        // exported LBA space
  uint64_t l2p_cap_bytes = 0;        // 0 = mapping table fully resident
  SimTime fill_timeout_ns = 100'000;     // pad a partial stripe after this
  double gc_free_threshold = 0.20;       // run GC below this free-zone share
  uint32_t gc_inflight_blocks = 64;      // GC relocation window
  uint64_t cst_scan_ps_per_entry = 1302; // table scan cost, picoseconds/entry

  static Result<VolumeParams> from_config(KvConfig& cfg);
  Status validate(const DeviceGeometry& geo) const;
};

enum class SegState : uint8_t { Opening, Ready, Sealing, Sealed, Cleaning };

struct InflightStripe;

// One live segment: k+m zones (one per drive) written in lockstep.
struct SegmentRuntime {
  SegmentDescriptor desc;
  SegmentGeometry geo;
  SegState state = SegState::Opening;

  uint32_t next_sid = 0;          // next stripe sequence number to assign
  uint32_t assigned = 0;          // stripes assigned to this segment
  uint32_t quota = 0;             // stripes this segment can still ever hold
  uint32_t stripes_durable = 0;   // fully completed stripes
  uint32_t inflight_chunks = 0;   // outstanding stripe chunk commands
  uint32_t opening_cmds = 0;
  uint32_t sealing_cmds = 0;
  bool padded_for_seal = false;   // crash recovery closed it with zero fill

  CompactStripeTable cst;
  std::deque<InflightStripe*> issue_queue;  // finalized, waiting on barrier

  // Per drive: metas of every data-region block, in offset order; feeds the
  // footer and is dropped once sealed.
  std::vector<std::vector<BlockMeta>> zone_metas;
  // Per-column durability, indexed [drive * stripes + col]. The OOB alone
  // cannot tell an in-flight column apart: a parity block's timestamp lane is
  // coded over the data timestamps and can legitimately be zero.
  std::vector<uint8_t> col_done;
  // Per drive: columns a table scan must skip (holes and discarded partial
  // stripes left behind by a crash). Almost always empty.
  std::vector<std::set<uint32_t>> dead_cols;

  // Liveness of data-region blocks, index = drive * (S*C) + (offset - C).
  std::vector<bool> valid;
  uint64_t valid_count = 0;
  uint64_t stale_count = 0;  // written payload blocks that are dead

  uint32_t chain = 0;  // index within chains_[class]
  bool accepts_stripes() const {
    return state == SegState::Ready && assigned < quota;
  }
};

// A stripe being filled, encoded, or written.
struct InflightStripe {
  uint64_t id = 0;
  SegClass cls = SegClass::Small;
  uint32_t k = 0, m = 0, chunk_blocks = 0;

  struct Origin {
    enum class Kind : uint8_t { User, Padding, GcUser, Mapping, GcMapping } kind =
        Kind::Padding;
    uint64_t lba = kInvalidLba;
    void* op = nullptr;               // WriteOp for user blocks
    uint32_t old_pba = kUnmappedPba;  // GC relocations
    uint64_t mapping_group = ~0ull;   // GcMapping
    std::function<void(Status, uint32_t, uint64_t)> mapping_cb;  // eviction
  };

  std::vector<uint8_t> data;      // k*C blocks
  std::vector<uint8_t> parity;    // m*C blocks
  std::vector<BlockMeta> metas;   // k*C data-block metas
  std::vector<BlockMeta> parity_metas;  // m*C, built when issued
  std::vector<Origin> origins;    // k*C
  std::vector<uint32_t> data_pba; // filled as chunk completions arrive

  uint32_t filled = 0;
  SegmentRuntime* seg = nullptr;
  uint32_t sid = 0;
  bool issued = false;
  bool failed = false;
  uint32_t chunks_done = 0;
  uint32_t blocks_unindexed = 0;
  SimTime created_at = 0;
  SimClock::EventId timeout_event{};
  bool timeout_armed = false;

  uint32_t data_blocks() const { return k * chunk_blocks; }
};

struct RecoveryReport {
  bool performed = false;
  uint64_t segments_found = 0;
  uint64_t segments_sealed_found = 0;
  uint64_t segments_open_kept = 0;
  uint64_t segments_discarded = 0;     // header incomplete, zones reset
  uint64_t zones_reset = 0;
  uint64_t complete_stripes = 0;
  uint64_t partial_stripes_discarded = 0;
  uint64_t blocks_relocated = 0;       // live blocks rewritten out of partials
  uint64_t segments_sealed_early = 0;  // closed with zero fill after a crash
  uint64_t l2p_entries = 0;
  uint64_t directory_groups = 0;
  uint64_t max_timestamp = 0;
  SimTime elapsed_ns = 0;
};

// The RAID volume: accepts 4-KiB-aligned reads/writes, forms stripes, spreads
// them over the member drives, and keeps the mapping/validity state needed
// for reads, garbage collection, degraded operation, and crash recovery.
class Volume final : public MappingStore {
 public:
  // Formats the drives (writes headers for the initial open segments) and
  // runs the clock until the volume is ready.
  static Result<std::unique_ptr<Volume>> create(SimClock* clock,
                                                std::vector<ZnsDevice*> devices,
                                                const VolumeParams& params);
  // Rebuilds volume state from the durable contents of the drives after a
  // crash: discards half-written segments, indexes every live block, rewrites
  // live data out of partial stripes, and reopens write segments.
  static Result<std::unique_ptr<Volume>> recover(SimClock* clock,
                                                 std::vector<ZnsDevice*> devices,
                                                 const VolumeParams& params,
                                                 RecoveryReport* report);
  ~Volume() override;

  // Byte interface; offset and length must be 4-KiB aligned. Callbacks fire
  // once the data is durable and indexed (writes) or assembled (reads).
  void write(uint64_t offset, std::span<const uint8_t> data,
             std::function<void(Status)> cb);
  void read(uint64_t offset, uint64_t length,
            std::function<void(Status, std::vector<uint8_t>)> cb);

  // Runs the clock until all internal work (stripes, GC, evictions) is done.
  void drain();
  bool quiescent() const;

  // Reconstructs the failed drive's content onto `replacement` (same
  // geometry/drive id, all zones empty) and swaps it in. Synchronous: drives
  // the clock; the volume must be drained first.
  Status rebuild_drive(uint32_t drive, ZnsDevice* replacement);

  MetricsSnapshot metrics() const;
  const LatencyRecorder& write_latency() const { return write_lat_; }
  const LatencyRecorder& read_latency() const { return read_lat_; }
  const LatencyRecorder& degraded_read_latency() const { return degraded_lat_; }

  const VolumeParams& params() const { return params_; }
  SimClock* clock() { return clock_; }
  L2PIndex& l2p() { return *l2p_; }
  const PbaCodec& pba_codec() const { return pba_; }

  // Deterministic digest of user-visible state (mapping + directory), used by
  // crash tests to compare pre-crash and post-recovery views.
  uint64_t state_digest() const { return l2p_->state_digest(); }

  // MappingStore (used by the L2P index for offloaded mapping groups).
  void read_mapping_block(uint32_t pba,
                          std::function<void(Status, std::span<const uint8_t>)>
                              cb) override;
  void write_mapping_block(uint64_t mapping_lba, std::vector<uint8_t> block,
                           std::function<void(Status, uint32_t, uint64_t)> cb)
      override;
  void mapping_block_stale(uint32_t old_pba) override;

  // Test introspection.
  uint64_t free_zone_count(uint32_t drive) const;
  uint64_t min_free_zones() const;
  const std::map<uint64_t, std::unique_ptr<SegmentRuntime>>& segments() const {
    return segments_;
  }
  SegmentRuntime* segment_of_zone(uint32_t drive, uint32_t zone) const;
  uint64_t next_timestamp() const { return next_ts_; }
  bool gc_active() const { return gc_run_ != nullptr; }
  const Status& first_error() const { return first_error_; }
  // Recount validity from the mapping state; returns mismatch description or
  // success. Test oracle for the incremental valid/stale bookkeeping.
  Status audit_validity();

 private:
  friend struct GcRun;
  Volume(SimClock* clock, std::vector<ZnsDevice*> devices,
         const VolumeParams& params);
  Status init_structures();

  struct WriteOp {
    std::function<void(Status)> cb;
    uint32_t blocks_left = 0;
    SimTime submitted_at = 0;
    bool failed = false;
    Status status;
  };
  struct ReadOp {
    std::function<void(Status, std::vector<uint8_t>)> cb;
    std::vector<uint8_t> buf;
    uint32_t blocks_left = 0;
    SimTime submitted_at = 0;
    bool degraded = false;
    bool failed = false;
    Status status;
  };

  // --- write path ---
  void stage_block(SegClass cls, const InflightStripe::Origin& origin,
                   uint64_t meta_lba, uint64_t ts,
                   std::span<const uint8_t> payload);
  InflightStripe* new_fill_stripe(SegClass cls);
  void fill_timeout(uint64_t stripe_id, SegClass cls);
  void finalize_stripe(InflightStripe* st);
  void pump_pending(SegClass cls);
  SegmentRuntime* pick_segment(SegClass cls);
  void assign_stripe(InflightStripe* st, SegmentRuntime* seg);
  void try_issue(SegmentRuntime* seg);
  void issue_stripe(SegmentRuntime* seg, InflightStripe* st);
  void chunk_completed(uint64_t stripe_id, uint32_t position,
                       const Completion& comp);
  void stripe_durable(SegmentRuntime* seg, InflightStripe* st);
  void block_indexed(uint64_t stripe_id);
  void finish_op_block(WriteOp* op, Status st);

  // --- segment lifecycle ---
  Result<SegmentRuntime*> allocate_segment(SegClass cls, SegMode mode,
                                           uint32_t group_size);
  SegMode mode_for_chain(SegClass cls, uint32_t chain_idx) const;
  uint32_t group_size_for(SegClass cls, SegMode mode) const;
  void segment_ready(SegmentRuntime* seg);
  void ensure_successor(SegmentRuntime* seg);
  void seal_segment(SegmentRuntime* seg);
  void sealed(SegmentRuntime* seg);
  void refill_chains();

  // --- read path ---
  void read_block_at(uint32_t pba, uint8_t* dest, bool count_user,
                     std::function<void(Status)> done);
  void degraded_read(uint32_t pba, uint8_t* dest,
                     std::function<void(Status)> done);

  // --- validity ---
  void mark_valid(uint32_t pba);
  void mark_stale_pba(uint32_t pba);
  void release_inflight_lba(uint64_t lba);
  void born_stale(SegmentRuntime* seg, uint32_t drive, uint32_t data_idx);

  // --- gc (gc.cc) ---
  void maybe_start_gc();
  void gc_pump();
  void gc_note_progress();

  // --- helpers ---
  const SegmentGeometry& geom(SegClass cls) const {
    return cls == SegClass::Small ? small_geo_ : large_geo_;
  }
  const SchemeShape& shape() const { return shape_; }
  uint32_t width() const { return shape_.k + shape_.m; }
  void fatal(const Status& st);
  void count_device_write(uint64_t blocks) { counters_.device_write_blocks += blocks; }
  void note_read_start(uint32_t drive, uint32_t zone);
  void note_read_end(uint32_t drive, uint32_t zone);
  bool zone_quiet(uint32_t drive, uint32_t zone) const;

  // recovery internals (recovery.cc)
  struct RecoveryCtx;
  Status recover_impl(RecoveryReport* report);
  Status sync_write(ZnsDevice* dev, uint32_t zone, uint32_t offset,
                    std::span<const uint8_t> data,
                    std::span<const uint8_t> oob);

  SimClock* clock_;
  std::vector<ZnsDevice*> devices_;
  VolumeParams params_;
  SchemeShape shape_;
  SegmentGeometry small_geo_;
  SegmentGeometry large_geo_;  // valid when n_large > 0
  PbaCodec pba_;
  uint64_t logical_blocks_ = 0;

  std::unique_ptr<L2PIndex> l2p_;
  uint64_t next_ts_ = 1;
  uint64_t next_segment_id_ = 1;
  uint64_t next_stripe_handle_ = 1;

  std::map<uint64_t, std::unique_ptr<SegmentRuntime>> segments_;  // by id
  std::vector<std::vector<SegmentRuntime*>> zone_map_;  // [drive][zone]
  std::vector<std::set<uint32_t>> free_zones_;          // [drive]
  // Open-segment chains per class: chains_[class][i] holds segment ids, front
  // is the active one. Small chain 0 may be the append segment in hybrid mode.
  std::vector<std::vector<std::deque<uint64_t>>> chains_;
  uint32_t large_rr_ = 0;
  uint32_t small_rr_ = 0;

  std::array<uint64_t, 2> fills_{0, 0};  // stripe id being filled per class
  std::array<std::deque<uint64_t>, 2> pending_;  // finalized, unassigned
  std::map<uint64_t, std::unique_ptr<InflightStripe>> stripes_;

  // Per-LBA state while user writes to it are in flight. A durable copy is
  // indexed unless a *newer* copy has already been indexed; acking strictly
  // after indexing keeps reads monotone even when overlapping writes to the
  // same LBA complete out of order.
  struct InflightLba {
    uint64_t newest_ts = 0;   // newest staged version
    uint64_t indexed_ts = 0;  // newest version already sent to the mapping
    uint32_t count = 0;       // staged-but-unindexed writes
  };
  std::unordered_map<uint64_t, InflightLba> inflight_newest_;
  std::vector<std::vector<uint32_t>> zone_reads_;  // outstanding per zone

  struct GcRun* gc_run_ = nullptr;
  SegClass gc_class_ = SegClass::Small;

  VolumeCounters counters_;
  LatencyRecorder write_lat_;
  LatencyRecorder read_lat_;
  LatencyRecorder degraded_lat_;
  Status first_error_;
  uint64_t live_ops_ = 0;  // user ops not yet acked
};

}  // namespace zlraid
