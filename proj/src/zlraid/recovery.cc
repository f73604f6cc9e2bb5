// Crash recovery and failed-drive rebuild.
//
// Recovery walks the durable image in phases: read every zone's header block
// and group zones into segments (a segment whose header never landed on some
// drive is discarded whole); read sealed footers and scan open data regions;
// resolve the newest copy of every logical block and mapping block by
// timestamp; then rewrite live blocks stranded in partial stripes, close open
// segments that were damaged by the crash, and reopen clean write segments.
// Running recovery twice on the same image converges to the same state.
#include <algorithm>
#include <cassert>
#include <cstring>
#include <map>

#include "zlraid/volume.h"

namespace zlraid {

namespace {

struct SegScan {
  SegmentDescriptor desc;
  bool sealed = false;
  std::vector<uint32_t> wps;                   // per drive
  std::vector<std::vector<BlockMeta>> metas;   // [drive][data_idx]
  std::vector<std::vector<uint8_t>> col_present;  // [drive][col]
  std::vector<std::vector<uint8_t>> payloads;  // open segments only, raw bytes
  std::map<uint32_t, uint32_t> sid_cols;       // stripe id -> chunks present
};

struct Reloc {
  uint64_t lba = 0;
  uint64_t ts = 0;
  uint32_t pba = 0;
  bool mapping = false;
  std::vector<uint8_t> payload;
};

}  // namespace

Result<std::unique_ptr<Volume>> Volume::recover(SimClock* clock,
                                                std::vector<ZnsDevice*> devices,
                                                const VolumeParams& params,
                                                RecoveryReport* report) {
  if (devices.empty() || devices.size() != params.drives)
    return Status::error(Errc::ConfigError,
                                                "drive count mismatch");
  Status vs = params.validate(devices[0]->geometry());
  if (!vs.ok()) return vs;
  std::unique_ptr<Volume> v(new Volume(clock, std::move(devices), params));
  Status is = v->init_structures();
  if (!is.ok()) return is;
  RecoveryReport local;
  Status rs = v->recover_impl(report ? report : &local);
  if (!rs.ok()) return rs;
  if (!v->first_error_.ok())
    return v->first_error_;
  return v;
}

Status Volume::recover_impl(RecoveryReport* report) {
  const SimTime t0 = clock_->now();
  const DeviceGeometry& geo = devices_[0]->geometry();
  report->performed = true;

  // ---- Phase A: headers ----------------------------------------------------
  struct HeaderRead {
    uint32_t drive, zone;
    uint32_t wp;
    Status status = Status::success();
    std::vector<uint8_t> block;
  };
  std::vector<HeaderRead> hdr_reads;
  for (uint32_t d = 0; d < params_.drives; ++d) {
    for (uint32_t z = 0; z < geo.num_zones; ++z) {
      ZoneInfo zi = devices_[d]->zone_info(z);
      if (zi.write_pointer == 0) {
        if (zi.state == ZoneState::Open) {
          Status st = devices_[d]->reset_zone(z);
          if (!st.ok()) return st;
          report->zones_reset++;
        }
        continue;
      }
      hdr_reads.push_back(HeaderRead{d, z, zi.write_pointer, Status::success(), {}});
    }
  }
  for (size_t i = 0; i < hdr_reads.size(); ++i) {
    HeaderRead* hr = &hdr_reads[i];
    counters_.device_read_blocks++;
    auto res = devices_[hr->drive]->submit_read(
        hr->zone, 0, 1, [hr](const Completion& c) {
          if (c.status != Errc::Ok)
            hr->status = Status::error(c.status, "header read failed");
          else
            hr->block = c.blocks[0].payload;
        });
    if (!res.ok()) return res.status;
  }
  clock_->run_until_idle();

  std::map<uint64_t, SegScan> scans;
  for (const HeaderRead& hr : hdr_reads) {
    if (!hr.status.ok()) return hr.status;
    auto pr = parse_header_block(
        std::span<const uint8_t>(hr.block.data(), hr.block.size()));
    if (!pr.ok())
      return Status::error(Errc::UnrecoverableCorruption,
                           "zone " + std::to_string(hr.zone) + " on drive " +
                               std::to_string(hr.drive) +
                               " has data but no valid header: " +
                               pr.status.message);
    SegmentDescriptor d = *pr.value;
    if (d.scheme != params_.scheme || d.zones.size() != params_.drives)
      return Status::error(Errc::ConfigError,
                           "on-device segment does not match the configuration");
    if (d.zones[hr.drive] != hr.zone)
      return Status::error(Errc::UnrecoverableCorruption,
                           "segment header does not own the zone it sits in");
    auto [it, fresh] = scans.try_emplace(d.segment_id);
    if (fresh) {
      it->second.desc = d;
      it->second.wps.assign(params_.drives, 0);
    }
    it->second.wps[hr.drive] = hr.wp;
  }
  report->segments_found = scans.size();

  // Discard segments whose header chunk is not durable everywhere: stripes
  // only start once every header has landed, so nothing user-visible is lost.
  for (auto it = scans.begin(); it != scans.end();) {
    SegScan& s = it->second;
    bool complete = true;
    for (uint32_t d = 0; d < params_.drives; ++d) {
      uint32_t z = s.desc.zones[d];
      uint32_t wp = devices_[d]->zone_info(z).write_pointer;
      s.wps[d] = wp;
      if (wp < s.desc.chunk_blocks) complete = false;
    }
    if (complete) {
      ++it;
      continue;
    }
    for (uint32_t d = 0; d < params_.drives; ++d) {
      uint32_t z = s.desc.zones[d];
      if (devices_[d]->zone_info(z).state != ZoneState::Empty) {
        Status st = devices_[d]->reset_zone(z);
        if (!st.ok()) return st;
        report->zones_reset++;
      }
    }
    report->segments_discarded++;
    it = scans.erase(it);
  }

  // ---- Phase B: footers and open-region scans ------------------------------
  uint64_t max_ts = 0;
  uint64_t max_seg_id = 0;
  for (auto& [id, s] : scans) {
    max_seg_id = std::max(max_seg_id, id);
    auto gr = compute_segment_geometry(geo.zone_capacity_blocks,
                                       s.desc.chunk_blocks);
    if (!gr.ok()) return gr.status;
    const SegmentGeometry& sg = *gr.value;
    if (sg.stripes != s.desc.stripes)
      return Status::error(Errc::UnrecoverableCorruption,
                           "segment geometry mismatch");
    bool sealed = true;
    for (uint32_t d = 0; d < params_.drives; ++d) {
      ZoneInfo zi = devices_[d]->zone_info(s.desc.zones[d]);
      if (!(zi.state == ZoneState::Full && s.wps[d] == sg.used_blocks()))
        sealed = false;
      uint32_t data_wp = std::min(s.wps[d], sg.footer_start());
      if ((data_wp - sg.header_blocks) % s.desc.chunk_blocks != 0)
        return Status::error(Errc::UnrecoverableCorruption,
                             "zone write pointer not chunk aligned");
    }
    s.sealed = sealed;
    if (sealed) report->segments_sealed_found++;
    s.metas.assign(params_.drives, std::vector<BlockMeta>(sg.data_blocks()));
    s.col_present.assign(params_.drives,
                         std::vector<uint8_t>(sg.stripes, 0));

    struct Pending {
      Status status = Status::success();
      std::vector<ReadBlockOut> blocks;
      bool done = false;
    };
    std::vector<Pending> pend(params_.drives);
    for (uint32_t d = 0; d < params_.drives; ++d) {
      Pending* p = &pend[d];
      uint32_t zone = s.desc.zones[d];
      if (sealed) {
        counters_.device_read_blocks += sg.footer_blocks;
        auto res = devices_[d]->submit_read(
            zone, sg.footer_start(), sg.footer_blocks,
            [p](const Completion& c) {
              p->done = true;
              if (c.status != Errc::Ok)
                p->status = Status::error(c.status, "footer read failed");
              else
                p->blocks = c.blocks;
            });
        if (!res.ok()) return res.status;
      } else {
        uint32_t data_wp = std::min(s.wps[d], sg.footer_start());
        uint32_t nblocks = data_wp - sg.header_blocks;
        if (nblocks == 0) {
          p->done = true;
          continue;
        }
        counters_.device_read_blocks += nblocks;
        auto res = devices_[d]->submit_read(
            zone, sg.header_blocks, nblocks, [p](const Completion& c) {
              p->done = true;
              if (c.status != Errc::Ok)
                p->status = Status::error(c.status, "data scan read failed");
              else
                p->blocks = c.blocks;
            });
        if (!res.ok()) return res.status;
      }
    }
    clock_->run_until_idle();
    if (!sealed) s.payloads.assign(params_.drives, {});
    for (uint32_t d = 0; d < params_.drives; ++d) {
      if (!pend[d].status.ok()) return pend[d].status;
      if (sealed) {
        std::vector<BlockMeta> entries;
        for (uint32_t b = 0; b < pend[d].blocks.size(); ++b) {
          Status ps = parse_footer_block(
              std::span<const uint8_t>(pend[d].blocks[b].payload.data(),
                                       kBlockSize),
              b, entries);
          if (!ps.ok()) return ps;
        }
        entries.resize(sg.data_blocks());
        s.metas[d] = std::move(entries);
        // A sealed footer records crash-dead columns under a reserved stripe
        // id; every other column of a sealed segment is durable.
        for (uint32_t col = 0; col < sg.stripes; ++col)
          s.col_present[d][col] =
              s.metas[d][static_cast<size_t>(col) * s.desc.chunk_blocks]
                  .stripe_id != kDeadStripeId;
      } else {
        auto& blocks = pend[d].blocks;
        s.payloads[d].assign(static_cast<size_t>(sg.data_blocks()) * kBlockSize,
                             0);
        for (size_t b = 0; b < blocks.size(); ++b) {
          s.metas[d][b] = parse_block_meta(
              std::span<const uint8_t>(blocks[b].oob.data(), kOobSize));
          // A column is durable when its first block carries the stripe
          // marker; holes read back all-zero OOB.
          if (b % s.desc.chunk_blocks == 0)
            s.col_present[d][b / s.desc.chunk_blocks] = oob_present(
                std::span<const uint8_t>(blocks[b].oob.data(), kOobSize));
          std::memcpy(s.payloads[d].data() + b * kBlockSize,
                      blocks[b].payload.data(), kBlockSize);
        }
      }
    }
    for (uint32_t d = 0; d < params_.drives; ++d) {
      for (uint32_t col = 0; col < sg.stripes; ++col) {
        if (!s.col_present[d][col]) continue;
        s.sid_cols[s.metas[d][static_cast<size_t>(col) * s.desc.chunk_blocks]
                       .stripe_id]++;
      }
    }
  }

  // ---- Phase C: rebuild mapping, tables, and validity ----------------------
  std::map<uint64_t, std::pair<uint64_t, uint32_t>> users;  // lba -> (ts, pba)
  std::map<uint64_t, std::pair<uint64_t, uint32_t>> mbs;    // group -> (ts, pba)
  std::vector<Reloc> relocs;

  for (auto& [id, s] : scans) {
    auto gr = compute_segment_geometry(geo.zone_capacity_blocks,
                                       s.desc.chunk_blocks);
    const SegmentGeometry& sg = *gr.value;
    const uint32_t C = s.desc.chunk_blocks;
    auto shape_r = scheme_shape(s.desc.scheme, params_.drives);
    if (!shape_r.ok()) return shape_r.status;

    auto seg = std::make_unique<SegmentRuntime>();
    SegmentRuntime* rt = seg.get();
    rt->desc = s.desc;
    rt->geo = sg;
    rt->cst.init(width(), sg.stripes, s.desc.group_size);
    rt->dead_cols.resize(width());
    rt->valid.assign(static_cast<size_t>(width()) * sg.data_blocks(), false);
    for (uint32_t d = 0; d < params_.drives; ++d) {
      uint32_t z = s.desc.zones[d];
      free_zones_[d].erase(z);
      zone_map_[d][z] = rt;
    }

    uint32_t complete_max_sid = 0;
    bool any_complete = false;
    for (uint32_t d = 0; d < params_.drives; ++d) {
      uint32_t cols_in_wp =
          (std::min(s.wps[d], sg.footer_start()) - sg.header_blocks) / C;
      for (uint32_t col = 0; col < cols_in_wp; ++col) {
        const BlockMeta& m0 = s.metas[d][static_cast<size_t>(col) * C];
        bool complete =
            s.col_present[d][col] && s.sid_cols[m0.stripe_id] == width();
        if (!complete) {
          rt->dead_cols[d].insert(col);
          continue;
        }
        uint32_t sid = m0.stripe_id;
        any_complete = true;
        complete_max_sid = std::max(complete_max_sid, sid);
        if (rt->cst.enabled())
          rt->cst.set(d, col, sid % s.desc.group_size);
        uint32_t pos = position_for_drive(s.desc.scheme, shape_, sid, d);
        if (pos >= shape_.k) continue;  // parity chunk: lane metadata only
        for (uint32_t i = 0; i < C; ++i) {
          const BlockMeta& m = s.metas[d][static_cast<size_t>(col) * C + i];
          max_ts = std::max(max_ts, m.timestamp);
          uint32_t pba = pba_.pack(
              Pba{d, s.desc.zones[d], sg.header_blocks + col * C + i});
          if (m.is_user_block()) {
            auto& slot = users[m.lba];
            if (m.timestamp > slot.first ||
                (m.timestamp == slot.first && pba > slot.second))
              slot = {m.timestamp, pba};
          } else if (m.is_mapping_block()) {
            auto& slot = mbs[mapping_block_group(m.lba)];
            if (m.timestamp > slot.first ||
                (m.timestamp == slot.first && pba > slot.second))
              slot = {m.timestamp, pba};
          }
        }
      }
    }

    // Live blocks stranded in partial stripes of open segments are rewrite
    // candidates (the later filter keeps only those still referenced).
    if (!s.sealed) {
      std::map<uint32_t, uint32_t> partials;
      for (const auto& [sid, cols] : s.sid_cols)
        if (cols < width()) partials[sid] = cols;
      report->partial_stripes_discarded += partials.size();
      for (uint32_t d = 0; d < params_.drives && !partials.empty(); ++d) {
        uint32_t cols_in_wp =
            (std::min(s.wps[d], sg.footer_start()) - sg.header_blocks) / C;
        for (uint32_t col = 0; col < cols_in_wp; ++col) {
          const BlockMeta& m0 = s.metas[d][static_cast<size_t>(col) * C];
          if (!s.col_present[d][col] || !partials.count(m0.stripe_id)) continue;
          uint32_t pos =
              position_for_drive(s.desc.scheme, shape_, m0.stripe_id, d);
          if (pos >= shape_.k) continue;
          for (uint32_t i = 0; i < C; ++i) {
            const BlockMeta& m = s.metas[d][static_cast<size_t>(col) * C + i];
            max_ts = std::max(max_ts, m.timestamp);
            if (!m.is_user_block() && !m.is_mapping_block()) continue;
            Reloc r;
            r.lba = m.lba;
            r.ts = m.timestamp;
            r.mapping = m.is_mapping_block();
            r.pba = pba_.pack(
                Pba{d, s.desc.zones[d], sg.header_blocks + col * C + i});
            r.payload.assign(
                s.payloads[d].begin() +
                    static_cast<size_t>(col * C + i) * kBlockSize,
                s.payloads[d].begin() +
                    static_cast<size_t>(col * C + i + 1) * kBlockSize);
            relocs.push_back(std::move(r));
          }
        }
      }
    }

    // Runtime counters for the kept segment.
    rt->quota = sg.stripes;
    rt->next_sid = any_complete ? complete_max_sid + 1 : 0;
    rt->assigned = rt->next_sid;
    rt->stripes_durable = rt->next_sid;
    rt->state = SegState::Ready;
    bool has_dead = false;
    for (auto& dc : rt->dead_cols)
      if (!dc.empty()) has_dead = true;
    if (s.sealed) {
      rt->state = SegState::Sealed;
      rt->assigned = rt->quota;
      rt->next_sid = rt->quota;
      rt->stripes_durable = rt->quota;
    } else {
      rt->zone_metas = s.metas;  // becomes the footer when it seals
      rt->col_done.assign(static_cast<size_t>(width()) * sg.stripes, 0);
      for (uint32_t d = 0; d < params_.drives; ++d) {
        for (uint32_t col = 0; col < sg.stripes; ++col) {
          if (s.col_present[d][col]) {
            rt->col_done[static_cast<size_t>(d) * sg.stripes + col] = 1;
            continue;
          }
          // Absent columns (crash holes, orphaned partial-stripe chunks, and
          // anything past the crash write pointer) go into the eventual
          // footer under the reserved id so later recoveries and GC do not
          // mistake them for live chunks -- in particular for chunks of
          // stripe 0, whose real id is also zero.
          for (uint32_t i = 0; i < C; ++i)
            rt->zone_metas[d][static_cast<size_t>(col) * C + i] =
                BlockMeta{kInvalidLba, 0, kDeadStripeId};
        }
      }
      if (has_dead) {
        // Damaged by the crash: no new stripes go here, it gets padded shut.
        rt->quota = rt->assigned;
      }
    }
    for (const auto& [sid, cols] : s.sid_cols) {
      (void)sid;
      if (cols == width()) report->complete_stripes++;
    }
    segments_.emplace(id, std::move(seg));
  }
  for (const auto& [lba, v] : users) {
    (void)lba;
    max_ts = std::max(max_ts, v.first);
  }
  next_ts_ = max_ts + 1;
  next_segment_id_ = max_seg_id + 1;
  report->max_timestamp = max_ts;
  report->l2p_entries = users.size();
  report->directory_groups = mbs.size();

  // Group-by-group: keep the group offloaded when its on-device mapping block
  // is at least as new as every rebuilt entry (then the contents provably
  // match); otherwise attach the rebuilt entries as a dirty resident group.
  {
    auto uit = users.begin();
    std::set<uint64_t> groups;
    for (const auto& [lba, v] : users) {
      (void)v;
      groups.insert((lba / kBlockSize) / kL2pGroupEntries);
    }
    for (const auto& [g, v] : mbs) {
      (void)v;
      groups.insert(g);
    }
    for (uint64_t g : groups) {
      uint64_t lo = g * kL2pGroupEntries;
      std::vector<uint32_t> entries(kL2pGroupEntries, kUnmappedPba);
      uint64_t group_max = 0;
      bool any_entry = false;
      while (uit != users.end() && (uit->first / kBlockSize) < lo) ++uit;
      auto it2 = uit;
      while (it2 != users.end() &&
             (it2->first / kBlockSize) < lo + kL2pGroupEntries) {
        entries[(it2->first / kBlockSize) - lo] = it2->second.second;
        group_max = std::max(group_max, it2->second.first);
        any_entry = true;
        ++it2;
      }
      auto mb = mbs.find(g);
      bool offload = mb != mbs.end() && (!any_entry || mb->second.first >= group_max);
      if (offload) {
        l2p_->attach_directory(g, mb->second.second, mb->second.first);
      } else if (any_entry) {
        l2p_->attach_resident(g, entries, /*dirty=*/true);
        if (mb != mbs.end())
          l2p_->attach_directory(g, mb->second.second, mb->second.first);
      }
      // Validity: final user entries plus the latest on-device mapping block.
      for (uint32_t i = 0; i < kL2pGroupEntries; ++i)
        if (entries[i] != kUnmappedPba) mark_valid(entries[i]);
      if (mb != mbs.end()) mark_valid(mb->second.second);
    }
  }

  // Stale counts: written or burned blocks that are not live. Whole dead
  // columns count as garbage; parity chunks of complete stripes do not.
  for (auto& [id, segp] : segments_) {
    (void)id;
    SegmentRuntime* rt = segp.get();
    const SegScan& s = scans.at(rt->desc.segment_id);
    const uint32_t C = rt->desc.chunk_blocks;
    uint64_t stale = 0;
    for (uint32_t d = 0; d < params_.drives; ++d) {
      uint32_t cols_in_wp =
          (std::min(s.wps[d], rt->geo.footer_start()) - rt->geo.header_blocks) /
          C;
      for (uint32_t col = 0; col < cols_in_wp; ++col) {
        if (rt->dead_cols[d].count(col)) {
          stale += C;
          continue;
        }
        const BlockMeta& m0 = s.metas[d][static_cast<size_t>(col) * C];
        uint32_t pos =
            position_for_drive(rt->desc.scheme, shape_, m0.stripe_id, d);
        if (pos >= shape_.k) continue;
        for (uint32_t i = 0; i < C; ++i) {
          size_t vb = static_cast<size_t>(d) * rt->geo.data_blocks() +
                      static_cast<size_t>(col) * C + i;
          if (!rt->valid[vb]) stale++;
        }
      }
    }
    rt->stale_count = stale;
  }

  // ---- Phase D: repair writes ---------------------------------------------
  // Reopen write segments (reusing clean open segments where possible).
  {
    std::vector<std::vector<uint64_t>> open_by_mode(2);
    for (auto& [id, segp] : segments_) {
      SegmentRuntime* rt = segp.get();
      if (rt->state != SegState::Ready) continue;
      bool has_dead = false;
      for (auto& dc : rt->dead_cols)
        if (!dc.empty()) has_dead = true;
      if (has_dead || rt->assigned == rt->geo.stripes) continue;  // will seal
      open_by_mode[rt->desc.mode == SegMode::Append ? 0 : 1].push_back(id);
      report->segments_open_kept++;
    }
    std::array<size_t, 2> next{0, 0};
    for (int cls_idx = 0; cls_idx < 2; ++cls_idx) {
      SegClass cls = static_cast<SegClass>(cls_idx);
      for (uint32_t i = 0; i < chains_[cls_idx].size(); ++i) {
        SegMode want = mode_for_chain(cls, i);
        int mi = want == SegMode::Append ? 0 : 1;
        while (next[mi] < open_by_mode[mi].size()) {
          uint64_t id = open_by_mode[mi][next[mi]];
          SegmentRuntime* rt = segments_.at(id).get();
          if (rt->desc.seg_class != cls ||
              rt->desc.chunk_blocks != geom(cls).chunk_blocks) {
            next[mi]++;
            continue;
          }
          rt->chain = i;
          chains_[cls_idx][i].push_back(id);
          next[mi]++;
          break;
        }
      }
    }
    refill_chains();
    clock_->run_until_idle();
  }

  // Rewrite live blocks out of discarded partial stripes, with fresh
  // timestamps for user data (the stranded copy loses all future races) and
  // preserved timestamps for mapping blocks.
  for (Reloc& r : relocs) {
    bool referenced;
    if (r.mapping) {
      auto it = mbs.find(mapping_block_group(r.lba));
      referenced = it != mbs.end() && it->second.second == r.pba;
    } else {
      auto it = users.find(r.lba);
      referenced = it != users.end() && it->second.second == r.pba;
    }
    if (!referenced) continue;
    report->blocks_relocated++;
    InflightStripe::Origin o;
    o.lba = r.lba;
    o.old_pba = r.pba;
    if (r.mapping) {
      o.kind = InflightStripe::Origin::Kind::GcMapping;
      o.mapping_group = mapping_block_group(r.lba);
      stage_block(gc_class_, o, r.lba, r.ts,
                  std::span<const uint8_t>(r.payload.data(), kBlockSize));
    } else {
      o.kind = InflightStripe::Origin::Kind::GcUser;
      stage_block(gc_class_, o, r.lba, next_ts_++,
                  std::span<const uint8_t>(r.payload.data(), kBlockSize));
    }
  }

  // Close crash-damaged segments (zero-fill to the footer, then seal) and
  // seal segments whose data region is already full.
  for (auto& [id, segp] : segments_) {
    (void)id;
    SegmentRuntime* rt = segp.get();
    if (rt->state != SegState::Ready) continue;
    bool has_dead = false;
    for (auto& dc : rt->dead_cols)
      if (!dc.empty()) has_dead = true;
    bool data_full = rt->assigned == rt->geo.stripes;
    if (!has_dead && !data_full) continue;
    if (has_dead) {
      report->segments_sealed_early++;
      rt->padded_for_seal = true;
      auto pads = std::make_shared<uint32_t>(0);
      SegmentRuntime* rtc = rt;
      for (uint32_t d = 0; d < params_.drives; ++d) {
        const SegScan& s = scans.at(rt->desc.segment_id);
        uint32_t wp = std::min(s.wps[d], rt->geo.footer_start());
        uint32_t pad = rt->geo.footer_start() - wp;
        rt->stale_count += pad;  // burned space; matches a future re-scan
        if (pad == 0) continue;
        (*pads)++;
        counters_.padding_blocks += pad;
        count_device_write(pad);
        std::vector<uint8_t> zeros(static_cast<size_t>(pad) * kBlockSize, 0);
        std::vector<uint8_t> zoob(static_cast<size_t>(pad) * kOobSize, 0);
        auto res = devices_[d]->submit_write(
            rt->desc.zones[d], wp, zeros, zoob,
            [this, rtc, pads](const Completion& c) {
              if (c.status != Errc::Ok)
                fatal(Status::error(c.status, "recovery zero fill failed"));
              if (--(*pads) == 0) seal_segment(rtc);
            });
        if (!res.ok()) return res.status;
      }
      if (*pads == 0) seal_segment(rt);
    } else {
      seal_segment(rt);
    }
  }

  clock_->run_until_idle();
  drain();
  if (!first_error_.ok()) return first_error_;
  report->elapsed_ns = clock_->now() - t0;
  return Status::success();
}

// ---------------------------------------------------------------------------
// Failed-drive rebuild
// ---------------------------------------------------------------------------

Status Volume::rebuild_drive(uint32_t drive, ZnsDevice* replacement) {
  if (drive >= params_.drives || replacement == nullptr)
    return Status::error(Errc::InvalidArgument, "bad rebuild arguments");
  if (shape_.m == 0)
    return Status::error(Errc::DriveFailed,
                         "no redundancy; the drive cannot be rebuilt");
  if (!quiescent())
    return Status::error(Errc::InvalidArgument,
                         "volume must be drained before rebuilding");
  const DeviceGeometry& geo = devices_[0]->geometry();
  if (replacement->geometry().num_zones != geo.num_zones ||
      replacement->geometry().zone_capacity_blocks != geo.zone_capacity_blocks)
    return Status::error(Errc::ConfigError, "replacement geometry mismatch");
  // Drives unavailable as sources: the one being replaced plus any other
  // failed member. An MDS scheme tolerates up to m of them; mirror layouts are
  // checked per column below (the partner read fails if it too is gone).
  uint32_t unavailable = 1;
  for (uint32_t d = 0; d < params_.drives; ++d) {
    if (d == drive) continue;
    if (devices_[d]->is_failed()) ++unavailable;
  }
  if (unavailable > shape_.m && params_.scheme != RaidScheme::Raid01)
    return Status::error(Errc::DriveFailed,
                         "too many failed drives to rebuild from");

  for (auto& [id, segp] : segments_) {
    (void)id;
    SegmentRuntime* rt = segp.get();
    const SegmentGeometry& sg = rt->geo;
    const uint32_t C = rt->desc.chunk_blocks;
    uint32_t zone = rt->desc.zones[drive];
    bool sealed =
        rt->state == SegState::Sealed || rt->state == SegState::Cleaning;
    uint32_t cols = sealed ? sg.stripes : rt->next_sid;

    // Header chunk (descriptor + zero padding, zero OOB).
    {
      std::vector<uint8_t> hdr(static_cast<size_t>(sg.header_blocks) * kBlockSize,
                               0);
      serialize_header_block(rt->desc,
                             std::span<uint8_t>(hdr.data(), kBlockSize));
      std::vector<uint8_t> oob(static_cast<size_t>(sg.header_blocks) * kOobSize,
                               0);
      Status st = sync_write(replacement, zone, 0, hdr, oob);
      if (!st.ok()) return st;
    }

    // Per column: decode from k survivors (or copy the mirror) and replay.
    std::vector<BlockMeta> zmetas(sg.data_blocks());
    // Column of stripe `sid` on a given drive, per group, derived from the
    // in-memory stripe table.
    auto col_of = [&](uint32_t d, uint32_t sid) -> int64_t {
      if (!rt->cst.enabled()) return sid;
      uint32_t g = sid / rt->desc.group_size;
      uint32_t want = sid % rt->desc.group_size;
      uint32_t first = group_first_stripe(g, rt->desc.group_size);
      uint32_t cnt = group_stripe_count(g, rt->desc.group_size, sg.stripes);
      for (uint32_t c = first; c < first + cnt && c < cols; ++c) {
        if (rt->dead_cols[d].count(c)) continue;
        if (!rt->col_done.empty() &&
            !rt->col_done[static_cast<size_t>(d) * sg.stripes + c])
          continue;
        if (rt->cst.get(d, c) == want) return c;
      }
      return -1;
    };
    for (uint32_t col = 0; col < cols; ++col) {
      std::vector<uint8_t> payload(static_cast<size_t>(C) * kBlockSize, 0);
      std::vector<uint8_t> oob(static_cast<size_t>(C) * kOobSize, 0);
      bool dead = rt->dead_cols[drive].count(col) > 0 ||
                  (!rt->col_done.empty() &&
                   !rt->col_done[static_cast<size_t>(drive) * sg.stripes + col]);
      if (dead)
        for (uint32_t b = 0; b < C; ++b)
          zmetas[static_cast<size_t>(col) * C + b] =
              BlockMeta{kInvalidLba, 0, kDeadStripeId};
      if (!dead) {
        uint32_t sid = rt->cst.enabled()
                           ? (col / rt->desc.group_size) * rt->desc.group_size +
                                 rt->cst.get(drive, col)
                           : col;
        uint32_t my_pos = position_for_drive(rt->desc.scheme, shape_, sid, drive);
        // Gather survivor chunks.
        std::vector<uint32_t> sdrives;
        if (rt->desc.scheme == RaidScheme::Raid01) {
          uint32_t partner =
              my_pos < shape_.k ? shape_.k + my_pos : my_pos - shape_.k;
          sdrives.push_back(
              drive_for_position(rt->desc.scheme, shape_, sid, partner));
        } else {
          for (uint32_t d = 0; d < params_.drives && sdrives.size() < shape_.k;
               ++d)
            if (d != drive && !devices_[d]->is_failed()) sdrives.push_back(d);
          if (sdrives.size() < shape_.k)
            return Status::error(Errc::DriveFailed,
                                 "too many failed drives to rebuild from");
        }
        std::vector<std::vector<ReadBlockOut>> got(sdrives.size());
        std::vector<Status> rst(sdrives.size(), Status::success());
        for (size_t i = 0; i < sdrives.size(); ++i) {
          uint32_t d = sdrives[i];
          int64_t c = col_of(d, sid);
          if (c < 0)
            return Status::error(Errc::UnrecoverableCorruption,
                                 "survivor chunk missing during rebuild");
          auto* slot = &got[i];
          auto* stp = &rst[i];
          counters_.device_read_blocks += C;
          auto res = devices_[d]->submit_read(
              rt->desc.zones[d], sg.header_blocks + static_cast<uint32_t>(c) * C,
              C, [slot, stp](const Completion& cc) {
                if (cc.status != Errc::Ok)
                  *stp = Status::error(cc.status, "rebuild read failed");
                else
                  *slot = cc.blocks;
              });
          if (!res.ok()) return res.status;
        }
        clock_->run_until_idle();
        for (const Status& st : rst)
          if (!st.ok()) return st;
        // Decode payload chunk and per-block metadata lanes.
        std::vector<std::vector<uint8_t>> chunk_bytes(sdrives.size());
        std::vector<AvailChunk> avail;
        for (size_t i = 0; i < sdrives.size(); ++i) {
          chunk_bytes[i].resize(static_cast<size_t>(C) * kBlockSize);
          for (uint32_t b = 0; b < C; ++b)
            std::memcpy(chunk_bytes[i].data() + static_cast<size_t>(b) * kBlockSize,
                        got[i][b].payload.data(), kBlockSize);
          avail.push_back(AvailChunk{
              position_for_drive(rt->desc.scheme, shape_, sid, sdrives[i]),
              chunk_bytes[i].data()});
        }
        Status ds = decode_chunk(rt->desc.scheme, shape_, avail, my_pos,
                                 payload.data(), payload.size());
        if (!ds.ok()) return ds;
        for (uint32_t b = 0; b < C; ++b) {
          std::vector<AvailLane> lba_lanes, ts_lanes;
          uint32_t sid_rep = 0;
          for (size_t i = 0; i < sdrives.size(); ++i) {
            BlockMeta m = parse_block_meta(std::span<const uint8_t>(
                got[i][b].oob.data(), kOobSize));
            uint32_t pos =
                position_for_drive(rt->desc.scheme, shape_, sid, sdrives[i]);
            lba_lanes.push_back(AvailLane{pos, m.lba});
            ts_lanes.push_back(AvailLane{pos, m.timestamp});
            sid_rep = m.stripe_id;
          }
          BlockMeta mine;
          Status l1 = decode_meta_lane(rt->desc.scheme, shape_, lba_lanes,
                                       my_pos, &mine.lba);
          Status l2 = decode_meta_lane(rt->desc.scheme, shape_, ts_lanes,
                                       my_pos, &mine.timestamp);
          if (!l1.ok() || !l2.ok())
            return !l1.ok() ? l1 : l2;
          mine.stripe_id = sid_rep;
          serialize_block_meta(
              mine, std::span<uint8_t>(oob.data() + static_cast<size_t>(b) * kOobSize,
                                       kOobSize));
          zmetas[static_cast<size_t>(col) * C + b] = mine;
        }
      }
      Status ws = sync_write(replacement, zone, sg.header_blocks + col * C,
                             payload, oob);
      if (!ws.ok()) return ws;
    }

    if (sealed) {
      std::vector<uint8_t> blocks(
          static_cast<size_t>(sg.footer_blocks) * kBlockSize, 0);
      for (uint32_t b = 0; b < sg.footer_blocks; ++b) {
        size_t first = static_cast<size_t>(b) * kMetaPerBlock;
        size_t n = std::min<size_t>(kMetaPerBlock, zmetas.size() - first);
        serialize_footer_block(
            std::span<const BlockMeta>(zmetas.data() + first, n), b,
            std::span<uint8_t>(blocks.data() + static_cast<size_t>(b) * kBlockSize,
                               kBlockSize));
      }
      std::vector<uint8_t> zoob(static_cast<size_t>(sg.footer_blocks) * kOobSize,
                                0);
      Status st =
          sync_write(replacement, zone, sg.footer_start(), blocks, zoob);
      if (!st.ok()) return st;
      Status fs = replacement->finish_zone(zone);
      if (!fs.ok()) return fs;
    }
  }

  devices_[drive] = replacement;
  return Status::success();
}

Status Volume::sync_write(ZnsDevice* dev, uint32_t zone, uint32_t offset,
                          std::span<const uint8_t> data,
                          std::span<const uint8_t> oob) {
  Status out = Status::success();
  bool done = false;
  count_device_write(data.size() / kBlockSize);
  auto res = dev->submit_write(zone, offset, data, oob,
                               [&out, &done](const Completion& c) {
                                 done = true;
                                 if (c.status != Errc::Ok)
                                   out = Status::error(c.status, "write failed");
                               });
  if (!res.ok()) return res.status;
  clock_->run_until_idle();
  if (!done)
    return Status::error(Errc::VerifyFailed, "write did not complete");
  return out;
}

}  // namespace zlraid
