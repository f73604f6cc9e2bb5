#include "zlraid/l2p.h"

#include <cassert>
#include <cstring>

namespace zlraid {

L2PIndex::L2PIndex(uint64_t memory_cap_bytes, MappingStore* store) : store_(store) {
  if (memory_cap_bytes == 0) {
    cap_groups_ = ~0ull;  // unlimited
  } else {
    cap_groups_ = memory_cap_bytes / kBlockSize;
    if (cap_groups_ == 0) cap_groups_ = 1;
  }
}

L2PIndex::Group& L2PIndex::materialize_fresh(uint64_t group) {
  Group& g = resident_[group];
  g.state = GState::Resident;
  g.entries.assign(kL2pGroupEntries, kUnmappedPba);
  stats_.resident_groups = resident_.size();
  return g;
}

void L2PIndex::fault_in(uint64_t group) {
  auto dir = directory_.find(group);
  assert(dir != directory_.end());
  Group& g = resident_[group];
  g.state = GState::Faulting;
  stats_.group_faults++;
  stats_.mapping_block_reads++;
  stats_.resident_groups = resident_.size();
  uint32_t pba = dir->second.pba;
  store_->read_mapping_block(pba, [this, group](Status st, std::span<const uint8_t> block) {
    finish_fault(group, st, block);
  });
}

void L2PIndex::finish_fault(uint64_t group, Status st, std::span<const uint8_t> block) {
  auto it = resident_.find(group);
  assert(it != resident_.end() && it->second.state == GState::Faulting);
  Group& g = it->second;
  // A failed mapping-block read would lose the group; the engine retries via
  // the degraded path before reporting, so treat failure as fatal here.
  assert(st.ok() && block.size() == kBlockSize);
  (void)st;
  g.entries.resize(kL2pGroupEntries);
  for (uint32_t i = 0; i < kL2pGroupEntries; ++i) {
    g.entries[i] = get_u32(block.data() + 4 * i);
  }
  g.state = GState::Resident;
  g.ref = true;
  while (!g.parked.empty()) {
    auto fn = std::move(g.parked.front());
    g.parked.pop_front();
    fn();  // may re-enter lookup/update on a now-resident group
  }
  enforce_cap();
}

void L2PIndex::with_group(uint64_t lblk, bool create_if_absent,
                          std::function<void()> absent_action,
                          std::function<void(Group&)> action) {
  uint64_t group = lblk / kL2pGroupEntries;
  auto it = resident_.find(group);
  if (it != resident_.end()) {
    if (it->second.state == GState::Faulting) {
      it->second.parked.push_back(
          [this, lblk, create_if_absent, absent_action = std::move(absent_action),
           action = std::move(action)]() mutable {
            with_group(lblk, create_if_absent, std::move(absent_action),
                       std::move(action));
          });
      return;
    }
    action(it->second);
    return;
  }
  if (directory_.count(group)) {
    fault_in(group);
    resident_[group].parked.push_back(
        [this, lblk, create_if_absent, absent_action = std::move(absent_action),
         action = std::move(action)]() mutable {
          with_group(lblk, create_if_absent, std::move(absent_action),
                     std::move(action));
        });
    return;
  }
  if (!create_if_absent) {
    absent_action();
    return;
  }
  Group& g = materialize_fresh(group);
  action(g);
  enforce_cap();
}

void L2PIndex::lookup(uint64_t lblk, std::function<void(uint32_t)> cb) {
  stats_.lookups++;
  with_group(
      lblk, /*create_if_absent=*/false, [cb]() { cb(kUnmappedPba); },
      [lblk, cb](Group& g) {
        g.ref = true;
        cb(g.entries[lblk % kL2pGroupEntries]);
      });
}

void L2PIndex::update(uint64_t lblk, uint32_t new_pba, std::function<void(uint32_t)> cb) {
  stats_.updates++;
  with_group(
      lblk, /*create_if_absent=*/true, []() { assert(false); },
      [lblk, new_pba, cb](Group& g) {
        uint32_t& slot = g.entries[lblk % kL2pGroupEntries];
        uint32_t old = slot;
        slot = new_pba;
        g.ref = true;
        g.dirty = true;
        if (g.evicting) g.redirtied = true;
        cb(old);
      });
}

void L2PIndex::update_if(uint64_t lblk, uint32_t expected_old, uint32_t new_pba,
                         std::function<void(bool)> cb) {
  stats_.updates++;
  with_group(
      lblk, /*create_if_absent=*/true, []() { assert(false); },
      [lblk, expected_old, new_pba, cb](Group& g) {
        uint32_t& slot = g.entries[lblk % kL2pGroupEntries];
        g.ref = true;
        if (slot != expected_old) {
          cb(false);
          return;
        }
        slot = new_pba;
        g.dirty = true;
        if (g.evicting) g.redirtied = true;
        cb(true);
      });
}

bool L2PIndex::remap_mapping_block(uint64_t group, uint32_t old_pba,
                                   uint32_t new_pba) {
  auto it = directory_.find(group);
  if (it == directory_.end() || it->second.pba != old_pba) return false;
  it->second.pba = new_pba;
  return true;
}

uint64_t L2PIndex::evictable_count() const {
  uint64_t n = 0;
  for (const auto& [id, g] : resident_) {
    (void)id;
    if (g.state == GState::Resident && !g.evicting) ++n;
  }
  return n;
}

void L2PIndex::enforce_cap() {
  while (resident_.size() > cap_groups_ && evictable_count() > 0) {
    evict_one();
  }
  stats_.resident_groups = resident_.size();
  stats_.resident_bytes = resident_.size() * kBlockSize;
}

void L2PIndex::evict_one() {
  // CLOCK second chance: sweep from the hand, clearing reference bits;
  // faulting/evicting groups are pinned and skipped.
  for (int sweep = 0; sweep < 3; ++sweep) {
    auto it = resident_.lower_bound(clock_hand_);
    while (it != resident_.end()) {
      Group& g = it->second;
      uint64_t id = it->first;
      if (g.state == GState::Resident && !g.evicting) {
        if (g.ref) {
          g.ref = false;
        } else {
          clock_hand_ = id + 1;
          start_eviction(id, g);
          return;
        }
      }
      ++it;
    }
    clock_hand_ = 0;  // wrap
  }
}

void L2PIndex::start_eviction(uint64_t group, Group& g) {
  if (!g.dirty) {
    // Latest copy is already on device (or the group was all-unmapped and
    // never persisted -- nothing to find later either way).
    stats_.clean_drops++;
    resident_.erase(group);
    return;
  }
  g.evicting = true;
  g.redirtied = false;
  std::vector<uint8_t> block(kBlockSize);
  for (uint32_t i = 0; i < kL2pGroupEntries; ++i) {
    put_u32(block.data() + 4 * i, g.entries[i]);
  }
  stats_.mapping_block_writes++;
  store_->write_mapping_block(
      mapping_block_lba(group), std::move(block),
      [this, group](Status st, uint32_t new_pba, uint64_t ts) {
        assert(st.ok());
        (void)st;
        auto it = resident_.find(group);
        assert(it != resident_.end());
        Group& gg = it->second;
        auto dir = directory_.find(group);
        if (dir != directory_.end() && dir->second.pba != new_pba) {
          store_->mapping_block_stale(dir->second.pba);
        }
        directory_[group] = DirEntry{new_pba, ts};
        gg.evicting = false;
        if (gg.redirtied) {
          // Raced with an update; keep it resident and dirty, a later pass
          // will write the newer contents.
          gg.dirty = true;
          gg.redirtied = false;
        } else {
          gg.dirty = false;
          if (!gg.parked.empty()) {
            // Parked work arrived while the write was in flight; serve it
            // from the still-resident copy.
            return;
          }
          resident_.erase(it);
        }
        stats_.resident_groups = resident_.size();
        stats_.resident_bytes = resident_.size() * kBlockSize;
      });
}

void L2PIndex::attach_resident(uint64_t group, std::vector<uint32_t> entries, bool dirty) {
  assert(entries.size() == kL2pGroupEntries);
  Group& g = resident_[group];
  g.state = GState::Resident;
  g.entries = std::move(entries);
  g.dirty = dirty;
  stats_.resident_groups = resident_.size();
  stats_.resident_bytes = resident_.size() * kBlockSize;
}

void L2PIndex::attach_directory(uint64_t group, uint32_t pba, uint64_t ts) {
  directory_[group] = DirEntry{pba, ts};
}

uint64_t L2PIndex::state_digest() const {
  uint64_t h = 0x9ae16a3b2f90404full;
  for (const auto& [id, g] : resident_) {
    if (g.state != GState::Resident) continue;
    h = mix64(h ^ id);
    for (uint32_t i = 0; i < kL2pGroupEntries; ++i) {
      if (g.entries[i] != kUnmappedPba) h = mix64(h ^ (uint64_t(g.entries[i]) << 10) ^ i);
    }
  }
  for (const auto& [id, d] : directory_) {
    if (resident_.count(id)) continue;  // resident copy is authoritative
    h = mix64(h ^ (id * 0x10001) ^ d.pba);
  }
  return h;
}

void L2PIndex::for_each_directory(
    const std::function<void(uint64_t, uint32_t)>& fn) const {
  for (const auto& [id, d] : directory_) fn(id, d.pba);
}

void L2PIndex::for_each_resident(
    const std::function<void(uint64_t, const std::vector<uint32_t>&)>& fn) const {
  for (const auto& [id, g] : resident_) {
    if (g.state == GState::Resident) fn(id, g.entries);
  }
}

}  // namespace zlraid
