// Garbage collection: picks the sealed segment with the most dead blocks,
// relocates its live blocks through the normal write path, then resets the
// zones. Runs one victim at a time with a bounded relocation window so it
// shares device bandwidth with foreground traffic instead of flooding it.
#include <cassert>

#include "zlraid/volume.h"

namespace zlraid {

struct GcRun {
  SegmentRuntime* victim = nullptr;
  std::vector<std::vector<BlockMeta>> metas;  // [drive][data_idx]
  uint32_t footer_reads_left = 0;
  bool scan_ready = false;
  uint32_t cur_drive = 0;
  uint32_t cur_idx = 0;
  bool cursor_done = false;
  uint32_t inflight = 0;  // blocks read but not yet re-indexed
  // Live user blocks that have a foreground overwrite in flight: relocating
  // them now could let the stale payload win at crash recovery, so they are
  // parked until the overwrite lands (which normally kills them anyway).
  std::deque<std::pair<uint32_t, uint32_t>> deferred;
  bool resetting = false;
};

void Volume::maybe_start_gc() {
  if (gc_run_ || !first_error_.ok()) return;
  for (ZnsDevice* d : devices_)
    if (d->is_failed()) return;
  uint64_t zones = devices_[0]->geometry().num_zones;
  if (static_cast<double>(min_free_zones()) / static_cast<double>(zones) >=
      params_.gc_free_threshold)
    return;
  SegmentRuntime* victim = nullptr;
  for (auto& [id, seg] : segments_) {
    (void)id;
    if (seg->state != SegState::Sealed || seg->stale_count == 0) continue;
    if (!victim || seg->stale_count > victim->stale_count) victim = seg.get();
  }
  if (!victim) return;

  counters_.gc_runs++;
  victim->state = SegState::Cleaning;
  GcRun* r = new GcRun();
  gc_run_ = r;
  r->victim = victim;
  r->metas.assign(width(), {});
  r->footer_reads_left = width();
  const SegmentGeometry& geo = victim->geo;
  uint64_t seg_id = victim->desc.segment_id;
  for (uint32_t d = 0; d < params_.drives; ++d) {
    uint32_t zone = victim->desc.zones[d];
    counters_.device_read_blocks += geo.footer_blocks;
    note_read_start(d, zone);
    auto res = devices_[d]->submit_read(
        zone, geo.footer_start(), geo.footer_blocks,
        [this, d, zone, seg_id](const Completion& c) {
          note_read_end(d, zone);
          GcRun* run = gc_run_;
          if (!run || run->victim->desc.segment_id != seg_id) return;
          if (c.status != Errc::Ok) {
            fatal(Status::error(c.status, "GC footer read failed"));
            return;
          }
          std::vector<BlockMeta>& out = run->metas[d];
          for (uint32_t b = 0; b < c.num_blocks; ++b) {
            Status ps = parse_footer_block(
                std::span<const uint8_t>(c.blocks[b].payload.data(), kBlockSize),
                b, out);
            if (!ps.ok()) {
              fatal(ps);
              return;
            }
          }
          out.resize(run->victim->geo.data_blocks());
          if (--run->footer_reads_left == 0) {
            run->scan_ready = true;
            gc_pump();
          }
        });
    if (!res.ok()) fatal(res.status);
  }
}

void Volume::gc_note_progress() {
  if (gc_run_ && gc_run_->inflight > 0) {
    gc_run_->inflight--;
    gc_pump();
  }
}

void Volume::gc_pump() {
  GcRun* r = gc_run_;
  if (!r || !r->scan_ready || r->resetting || !first_error_.ok()) return;
  SegmentRuntime* victim = r->victim;
  const uint32_t data_blocks = victim->geo.data_blocks();

  auto issue_relocation = [this, r, victim](uint32_t d, uint32_t idx) {
    const BlockMeta meta = r->metas[d][idx];
    uint32_t zone = victim->desc.zones[d];
    uint32_t off = victim->geo.data_start() + idx;
    uint32_t old_pba = pba_.pack(Pba{d, zone, off});
    r->inflight++;
    counters_.device_read_blocks++;
    note_read_start(d, zone);
    auto res = devices_[d]->submit_read(
        zone, off, 1,
        [this, d, zone, meta, old_pba](const Completion& c) {
          note_read_end(d, zone);
          if (c.status != Errc::Ok) {
            fatal(Status::error(c.status, "GC block read failed"));
            gc_note_progress();
            return;
          }
          InflightStripe::Origin o;
          o.lba = meta.lba;
          o.old_pba = old_pba;
          if (meta.is_mapping_block()) {
            // Relocated mapping blocks keep their original timestamp: the
            // contents are a snapshot of the mapping as of that time, and a
            // fresh stamp could make stale entries outrank newer user blocks
            // after a crash.
            o.kind = InflightStripe::Origin::Kind::GcMapping;
            o.mapping_group = mapping_block_group(meta.lba);
            stage_block(gc_class_, o, meta.lba, meta.timestamp,
                        std::span<const uint8_t>(c.blocks[0].payload.data(),
                                                 kBlockSize));
          } else {
            // User blocks get a fresh timestamp so the relocated copy beats
            // the original (whose zone is about to be reset) during recovery.
            o.kind = InflightStripe::Origin::Kind::GcUser;
            stage_block(gc_class_, o, meta.lba, next_ts_++,
                        std::span<const uint8_t>(c.blocks[0].payload.data(),
                                                 kBlockSize));
          }
        });
    if (!res.ok()) {
      fatal(res.status);
      gc_note_progress();
    }
  };

  // Parked blocks: relocate once their overwrite landed (usually they just
  // turned stale and drop out).
  for (size_t i = 0; i < r->deferred.size() && r->inflight < params_.gc_inflight_blocks;) {
    auto [d, idx] = r->deferred[i];
    if (!victim->valid[static_cast<size_t>(d) * data_blocks + idx]) {
      r->deferred.erase(r->deferred.begin() + static_cast<long>(i));
      continue;
    }
    if (inflight_newest_.count(r->metas[d][idx].lba)) {
      ++i;
      continue;
    }
    r->deferred.erase(r->deferred.begin() + static_cast<long>(i));
    issue_relocation(d, idx);
  }

  while (!r->cursor_done && r->inflight < params_.gc_inflight_blocks) {
    if (r->cur_drive >= width()) {
      r->cursor_done = true;
      break;
    }
    uint32_t d = r->cur_drive;
    uint32_t idx = r->cur_idx;
    if (++r->cur_idx >= data_blocks) {
      r->cur_idx = 0;
      r->cur_drive++;
    }
    if (!victim->valid[static_cast<size_t>(d) * data_blocks + idx]) continue;
    const BlockMeta& meta = r->metas[d][idx];
    if (!meta.is_mapping_block() && inflight_newest_.count(meta.lba)) {
      r->deferred.push_back({d, idx});
      continue;
    }
    issue_relocation(d, idx);
  }

  if (!r->cursor_done || !r->deferred.empty()) return;
  if (r->inflight > 0) {
    // Only staged relocations remain; close the fill stripe now instead of
    // waiting out the timeout.
    uint64_t f = fills_[static_cast<int>(gc_class_)];
    if (f != 0) fill_timeout(f, gc_class_);
    return;
  }

  // Everything is relocated and indexed; wait for readers, then reclaim.
  for (uint32_t d = 0; d < params_.drives; ++d)
    if (!zone_quiet(d, victim->desc.zones[d])) return;

  r->resetting = true;
  uint64_t victim_id = victim->desc.segment_id;
  for (uint32_t d = 0; d < params_.drives; ++d) {
    uint32_t zone = victim->desc.zones[d];
    Status rs = devices_[d]->reset_zone(zone);
    if (!rs.ok()) {
      fatal(rs);
      return;
    }
    zone_map_[d][zone] = nullptr;
    free_zones_[d].insert(zone);
    counters_.gc_reset_zones++;
  }
  segments_.erase(victim_id);
  delete r;
  gc_run_ = nullptr;
  refill_chains();
  pump_pending(SegClass::Small);
  pump_pending(SegClass::Large);
  maybe_start_gc();
}

}  // namespace zlraid
