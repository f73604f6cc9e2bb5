#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "zlraid/common.h"
#include "zlraid/layout.h"

namespace zlraid {

// Backing store for offloaded L2P entry groups. Implemented by the engine:
// reads are single-block device reads, writes go through the normal stripe
// path (a mapping block is just another block in a stripe, flagged by bit 0
// of its OOB lba). Callbacks fire on the simulation clock.
class MappingStore {
 public:
  virtual ~MappingStore() = default;
  virtual void read_mapping_block(
      uint32_t pba, std::function<void(Status, std::span<const uint8_t>)> cb) = 0;
  // Persists `block` (4 KiB) with OOB lba `mapping_lba`; reports the new
  // physical address and the logical timestamp stamped on the block.
  virtual void write_mapping_block(
      uint64_t mapping_lba, std::vector<uint8_t> block,
      std::function<void(Status, uint32_t new_pba, uint64_t ts)> cb) = 0;
  // Old copy superseded (stale for the cleaner).
  virtual void mapping_block_stale(uint32_t old_pba) = 0;
};

struct L2pStats {
  uint64_t lookups = 0;
  uint64_t updates = 0;
  uint64_t group_faults = 0;
  uint64_t mapping_block_reads = 0;
  uint64_t mapping_block_writes = 0;
  uint64_t clean_drops = 0;
  uint64_t resident_groups = 0;
  uint64_t resident_bytes = 0;
};

// Logical-to-physical table. Entries are 4-byte packed PBAs in groups of 1024
// (one 4-KiB mapping block per group). Groups not resident in memory live on
// device; MappingBlockDirectory below tracks the latest on-device copy per
// group. Eviction is CLOCK second-chance over resident groups; only eviction
// writes back (dirty groups), faults read exactly one block.
class L2PIndex {
 public:
  L2PIndex(uint64_t memory_cap_bytes, MappingStore* store);

  // cb receives the packed PBA or kUnmappedPba. May fire after a fault read.
  void lookup(uint64_t lblk, std::function<void(uint32_t)> cb);
  // cb receives the previous PBA (kUnmappedPba if none).
  void update(uint64_t lblk, uint32_t new_pba, std::function<void(uint32_t)> cb);
  // GC/relocation: applies only when the entry still equals expected_old.
  void update_if(uint64_t lblk, uint32_t expected_old, uint32_t new_pba,
                 std::function<void(bool applied)> cb);

  // Called when garbage collection relocated the on-device mapping block of
  // `group` (identical contents, original timestamp kept). The directory entry
  // is moved iff it still points at `old_pba`; returns whether it did.
  bool remap_mapping_block(uint64_t group, uint32_t old_pba, uint32_t new_pba);

  void enforce_cap();
  uint64_t cap_groups() const { return cap_groups_; }
  const L2pStats& stats() const { return stats_; }
  uint64_t resident_group_count() const { return resident_.size(); }
  uint64_t directory_group_count() const { return directory_.size(); }

  // Recovery plumbing.
  void attach_resident(uint64_t group, std::vector<uint32_t> entries, bool dirty);
  void attach_directory(uint64_t group, uint32_t pba, uint64_t ts);
  // Deterministic digest of the full logical view (resident entries by value,
  // offloaded groups by their mapping-block address).
  uint64_t state_digest() const;
  // Iterates every mapped entry currently resident or via `peek` for
  // offloaded groups (test/verification use; no timing).
  void for_each_directory(
      const std::function<void(uint64_t group, uint32_t pba)>& fn) const;
  void for_each_resident(
      const std::function<void(uint64_t group, const std::vector<uint32_t>&)>& fn)
      const;

 private:
  enum class GState : uint8_t { Faulting, Resident };
  struct Group {
    GState state = GState::Resident;
    bool ref = false;
    bool dirty = false;
    bool evicting = false;
    bool redirtied = false;  // updated while eviction write in flight
    std::vector<uint32_t> entries;
    std::deque<std::function<void()>> parked;
  };
  struct DirEntry {
    uint32_t pba = kUnmappedPba;
    uint64_t ts = 0;
  };

  uint64_t cap_groups_;
  MappingStore* store_;
  std::map<uint64_t, Group> resident_;
  std::map<uint64_t, DirEntry> directory_;
  uint64_t clock_hand_ = 0;
  L2pStats stats_;

  Group& materialize_fresh(uint64_t group);
  void fault_in(uint64_t group);
  void with_group(uint64_t lblk, bool create_if_absent,
                  std::function<void()> absent_action,
                  std::function<void(Group&)> action);
  void finish_fault(uint64_t group, Status st, std::span<const uint8_t> block);
  void evict_one();
  void start_eviction(uint64_t group, Group& g);
  uint64_t evictable_count() const;
};

}  // namespace zlraid
