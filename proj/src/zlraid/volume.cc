#include "zlraid/volume.h"

#include <algorithm>
#include <cassert>
#include <cstring>
#include <memory>

namespace zlraid {

const char* engine_mode_name(EngineMode m) {
  switch (m) {
    case EngineMode::Zapraid: return "zapraid";
    case EngineMode::ZoneWriteOnly: return "zone-write";
    case EngineMode::ZoneAppendOnly: return "zone-append";
  }
  return "?";
}

Result<EngineMode> engine_mode_from_name(const std::string& name) {
  if (name == "zapraid") return EngineMode::Zapraid;
  if (name == "zone-write") return EngineMode::ZoneWriteOnly;
  if (name == "zone-append")
    return EngineMode::ZoneAppendOnly;
  return Status::error(Errc::ConfigError,
                                 "unknown mode '" + name + "'");
}

Result<VolumeParams> VolumeParams::from_config(KvConfig& cfg) {
  VolumeParams p;
  std::string scheme = cfg.get_string("scheme", "raid5");
  auto sr = scheme_from_name(scheme);
  if (!sr.ok()) return sr.status;
  p.scheme = *sr.value;
  p.drives = static_cast<uint32_t>(cfg.get_u64("drives", 4));
  std::string mode = cfg.get_string("mode", "zapraid");
  auto mr = engine_mode_from_name(mode);
  if (!mr.ok()) return mr.status;
  p.mode = *mr.value;
  p.chunk_small_blocks = static_cast<uint32_t>(cfg.get_u64("chunk_small", 1));
  p.chunk_large_blocks = static_cast<uint32_t>(cfg.get_u64("chunk_large", 4));
  p.n_small = static_cast<uint32_t>(cfg.get_u64("n_small", 1));
  p.n_large = static_cast<uint32_t>(cfg.get_u64("n_large", 0));
  p.group_size = static_cast<uint32_t>(cfg.get_u64("group_size", 256));
  p.logical_bytes = cfg.get_size("logical_capacity", 64ull << 20);
  p.l2p_cap_bytes = cfg.get_size("l2p_cap", 0);
  p.fill_timeout_ns = cfg.get_u64("fill_timeout_ns", 100'000);
  p.gc_free_threshold = cfg.get_double("gc_free_threshold", 0.20);
  p.gc_inflight_blocks =
      static_cast<uint32_t>(cfg.get_u64("gc_inflight_blocks", 64));
  p.cst_scan_ps_per_entry = cfg.get_u64("cst_scan_ps_per_entry", 1302);
  Status cs = cfg.finish(/*strict=*/false);
  if (!cs.ok()) return cs;
  return p;
}

Status VolumeParams::validate(const DeviceGeometry& geo) const {
  auto sr = scheme_shape(scheme, drives);
  if (!sr.ok()) return sr.status;
  if (chunk_small_blocks == 0 || chunk_large_blocks == 0)
    return Status::error(Errc::ConfigError, "chunk size must be >= 1 block");
  if (n_small == 0)
    return Status::error(Errc::ConfigError, "need at least one small segment");
  if (group_size == 0)
    return Status::error(Errc::ConfigError, "group_size must be >= 1");
  if (logical_bytes == 0 || logical_bytes % kBlockSize != 0)
    return Status::error(Errc::ConfigError,
                         "logical_capacity must be a positive block multiple");
  if (gc_free_threshold < 0.0 || gc_free_threshold > 0.9)
    return Status::error(Errc::ConfigError, "gc_free_threshold out of range");
  if (gc_inflight_blocks == 0)
    return Status::error(Errc::ConfigError, "gc_inflight_blocks must be >= 1");
  auto g1 = compute_segment_geometry(geo.zone_capacity_blocks, chunk_small_blocks);
  if (!g1.ok()) return g1.status;
  if (n_large > 0) {
    auto g2 =
        compute_segment_geometry(geo.zone_capacity_blocks, chunk_large_blocks);
    if (!g2.ok()) return g2.status;
  }
  if (n_small + n_large + 2 > geo.max_open_zones)
    return Status::error(Errc::ConfigError,
                         "open segment count exceeds the drive's open zone limit");
  return Status::success();
}

Volume::Volume(SimClock* clock, std::vector<ZnsDevice*> devices,
               const VolumeParams& params)
    : clock_(clock), devices_(std::move(devices)), params_(params) {}

Volume::~Volume() = default;

Result<std::unique_ptr<Volume>> Volume::create(SimClock* clock,
                                               std::vector<ZnsDevice*> devices,
                                               const VolumeParams& params) {
  if (devices.empty() || devices.size() != params.drives)
    return Status::error(Errc::ConfigError,
                                                "drive count mismatch");
  const DeviceGeometry& geo = devices[0]->geometry();
  Status vs = params.validate(geo);
  if (!vs.ok()) return vs;

  std::unique_ptr<Volume> v(new Volume(clock, std::move(devices), params));
  Status is = v->init_structures();
  if (!is.ok()) return is;

  // Open the initial segments and wait for their headers to land.
  v->refill_chains();
  clock->run_until_idle();
  for (int cls_idx = 0; cls_idx < 2; ++cls_idx) {
    for (auto& chain : v->chains_[cls_idx]) {
      bool ok = false;
      for (uint64_t id : chain) {
        SegmentRuntime* s = v->segments_.at(id).get();
        if (s->state == SegState::Ready) ok = true;
      }
      if (!ok)
        return Status::error(
            Errc::NoFreeZones, "could not open initial segments");
    }
  }
  if (!v->first_error_.ok())
    return v->first_error_;
  return v;
}

Status Volume::init_structures() {
  auto sr = scheme_shape(params_.scheme, params_.drives);
  if (!sr.ok()) return sr.status;
  shape_ = *sr.value;
  const DeviceGeometry& geo = devices_[0]->geometry();
  for (ZnsDevice* d : devices_) {
    if (d->geometry().num_zones != geo.num_zones ||
        d->geometry().zone_capacity_blocks != geo.zone_capacity_blocks)
      return Status::error(Errc::ConfigError, "heterogeneous drive geometry");
  }
  auto sg = compute_segment_geometry(geo.zone_capacity_blocks,
                                     params_.chunk_small_blocks);
  if (!sg.ok()) return sg.status;
  small_geo_ = *sg.value;
  if (params_.n_large > 0) {
    auto lg = compute_segment_geometry(geo.zone_capacity_blocks,
                                       params_.chunk_large_blocks);
    if (!lg.ok()) return lg.status;
    large_geo_ = *lg.value;
  }
  auto pc = PbaCodec::create(params_.drives, geo.num_zones,
                             geo.zone_capacity_blocks);
  if (!pc.ok()) return pc.status;
  pba_ = *pc.value;
  logical_blocks_ = params_.logical_bytes / kBlockSize;
  l2p_ = std::make_unique<L2PIndex>(params_.l2p_cap_bytes, this);
  zone_map_.assign(params_.drives,
                   std::vector<SegmentRuntime*>(geo.num_zones, nullptr));
  zone_reads_.assign(params_.drives, std::vector<uint32_t>(geo.num_zones, 0));
  free_zones_.resize(params_.drives);
  for (uint32_t d = 0; d < params_.drives; ++d)
    for (uint32_t z = 0; z < geo.num_zones; ++z) free_zones_[d].insert(z);
  chains_.resize(2);
  chains_[0].resize(params_.n_small);
  chains_[1].resize(params_.n_large);
  gc_class_ = params_.n_large > 0 ? SegClass::Large : SegClass::Small;
  return Status::success();
}

SegMode Volume::mode_for_chain(SegClass cls, uint32_t chain_idx) const {
  switch (params_.mode) {
    case EngineMode::ZoneWriteOnly: return SegMode::ZoneWrite;
    case EngineMode::ZoneAppendOnly: return SegMode::Append;
    case EngineMode::Zapraid:
      if (cls == SegClass::Small && chain_idx == 0) return SegMode::Append;
      return SegMode::ZoneWrite;
  }
  return SegMode::ZoneWrite;
}

uint32_t Volume::group_size_for(SegClass cls, SegMode mode) const {
  if (mode == SegMode::ZoneWrite) return 1;
  uint32_t stripes = geom(cls).stripes;
  if (params_.mode == EngineMode::ZoneAppendOnly) return stripes;
  return std::min(params_.group_size, stripes);
}

// ---------------------------------------------------------------------------
// Segment lifecycle
// ---------------------------------------------------------------------------

Result<SegmentRuntime*> Volume::allocate_segment(SegClass cls, SegMode mode,
                                                 uint32_t group_size) {
  for (uint32_t d = 0; d < params_.drives; ++d) {
    if (free_zones_[d].empty())
      return Status::error(Errc::NoFreeZones, "no free zones");
    if (devices_[d]->is_failed())
      return Status::error(Errc::DriveFailed,
                                          "drive failed; cannot open segment");
  }
  const SegmentGeometry& geo = geom(cls);
  auto seg = std::make_unique<SegmentRuntime>();
  SegmentRuntime* s = seg.get();
  s->desc.segment_id = next_segment_id_++;
  s->desc.scheme = params_.scheme;
  s->desc.mode = mode;
  s->desc.seg_class = cls;
  s->desc.k = static_cast<uint16_t>(shape_.k);
  s->desc.m = static_cast<uint16_t>(shape_.m);
  s->desc.chunk_blocks = geo.chunk_blocks;
  s->desc.group_size = group_size;
  s->desc.stripes = geo.stripes;
  s->desc.created_ts = next_ts_++;
  s->geo = geo;
  s->quota = geo.stripes;
  s->cst.init(width(), geo.stripes, group_size);
  s->zone_metas.assign(width(), std::vector<BlockMeta>(geo.data_blocks()));
  s->col_done.assign(static_cast<size_t>(width()) * geo.stripes, 0);
  s->dead_cols.resize(width());
  s->valid.assign(static_cast<size_t>(width()) * geo.data_blocks(), false);
  s->desc.zones.resize(params_.drives);
  for (uint32_t d = 0; d < params_.drives; ++d) {
    uint32_t z = *free_zones_[d].begin();
    free_zones_[d].erase(free_zones_[d].begin());
    s->desc.zones[d] = z;
    zone_map_[d][z] = s;
  }
  s->state = SegState::Opening;
  s->opening_cmds = width();
  counters_.segments_opened++;

  // Header chunk: descriptor in block 0, zero padding after, all-zero OOB
  // (reconstructible during a drive rebuild).
  std::vector<uint8_t> hdr(static_cast<size_t>(geo.header_blocks) * kBlockSize, 0);
  serialize_header_block(s->desc, std::span<uint8_t>(hdr.data(), kBlockSize));
  std::vector<uint8_t> oob(static_cast<size_t>(geo.header_blocks) * kOobSize, 0);
  uint64_t seg_id = s->desc.segment_id;
  for (uint32_t d = 0; d < params_.drives; ++d) {
    counters_.header_blocks += geo.header_blocks;
    count_device_write(geo.header_blocks);
    auto res = devices_[d]->submit_write(
        s->desc.zones[d], 0, hdr, oob, [this, seg_id](const Completion& c) {
          auto it = segments_.find(seg_id);
          if (it == segments_.end()) return;
          SegmentRuntime* sr = it->second.get();
          if (c.status != Errc::Ok)
            fatal(Status::error(c.status, "segment header write failed"));
          if (--sr->opening_cmds == 0) segment_ready(sr);
        });
    if (!res.ok()) return res.status;
  }
  uint64_t id = s->desc.segment_id;
  segments_.emplace(id, std::move(seg));
  return segments_.at(id).get();
}

void Volume::segment_ready(SegmentRuntime* seg) {
  seg->state = SegState::Ready;
  pump_pending(seg->desc.seg_class);
  try_issue(seg);
}

void Volume::ensure_successor(SegmentRuntime* seg) {
  uint32_t remaining = seg->quota - seg->assigned;
  uint32_t lead = seg->desc.mode == SegMode::Append
                      ? seg->desc.group_size
                      : std::min<uint32_t>(4, seg->quota);
  if (remaining > lead) return;
  int cls_idx = static_cast<int>(seg->desc.seg_class);
  auto& chain = chains_[cls_idx][seg->chain];
  if (!chain.empty() && chain.back() != seg->desc.segment_id)
    return;  // successor already queued
  auto r = allocate_segment(seg->desc.seg_class, seg->desc.mode,
                            seg->desc.group_size);
  if (!r.ok()) {
    maybe_start_gc();
    return;
  }
  (*r.value)->chain = seg->chain;
  chain.push_back((*r.value)->desc.segment_id);
}

void Volume::refill_chains() {
  for (int cls_idx = 0; cls_idx < 2; ++cls_idx) {
    SegClass cls = static_cast<SegClass>(cls_idx);
    for (uint32_t i = 0; i < chains_[cls_idx].size(); ++i) {
      auto& chain = chains_[cls_idx][i];
      while (!chain.empty()) {
        SegmentRuntime* front = segments_.at(chain.front()).get();
        if (front->state == SegState::Sealed ||
            front->state == SegState::Cleaning)
          chain.pop_front();
        else
          break;
      }
      bool has_usable = false;
      for (uint64_t id : chain) {
        SegmentRuntime* s = segments_.at(id).get();
        if (s->accepts_stripes() || s->state == SegState::Opening)
          has_usable = true;
      }
      if (!has_usable) {
        auto r = allocate_segment(cls, mode_for_chain(cls, i),
                                  group_size_for(cls, mode_for_chain(cls, i)));
        if (!r.ok()) {
          maybe_start_gc();
          return;
        }
        (*r.value)->chain = i;
        chain.push_back((*r.value)->desc.segment_id);
      }
    }
  }
}

void Volume::seal_segment(SegmentRuntime* seg) {
  seg->state = SegState::Sealing;
  seg->sealing_cmds = width();
  const SegmentGeometry& geo = seg->geo;
  uint64_t seg_id = seg->desc.segment_id;
  for (uint32_t d = 0; d < params_.drives; ++d) {
    std::vector<uint8_t> blocks(static_cast<size_t>(geo.footer_blocks) * kBlockSize,
                                0);
    const auto& metas = seg->zone_metas[d];
    for (uint32_t b = 0; b < geo.footer_blocks; ++b) {
      size_t first = static_cast<size_t>(b) * kMetaPerBlock;
      size_t n = std::min<size_t>(kMetaPerBlock, metas.size() - first);
      serialize_footer_block(
          std::span<const BlockMeta>(metas.data() + first, n), b,
          std::span<uint8_t>(blocks.data() + static_cast<size_t>(b) * kBlockSize,
                             kBlockSize));
    }
    std::vector<uint8_t> oob(static_cast<size_t>(geo.footer_blocks) * kOobSize, 0);
    counters_.footer_blocks += geo.footer_blocks;
    count_device_write(geo.footer_blocks);
    uint32_t zone = seg->desc.zones[d];
    auto res = devices_[d]->submit_write(
        zone, geo.footer_start(), blocks, oob,
        [this, seg_id, d, zone](const Completion& c) {
          auto it = segments_.find(seg_id);
          if (it == segments_.end()) return;
          SegmentRuntime* sr = it->second.get();
          if (c.status != Errc::Ok) {
            fatal(Status::error(c.status, "footer write failed"));
          } else {
            Status fs = devices_[d]->finish_zone(zone);
            if (!fs.ok()) fatal(fs);
          }
          if (--sr->sealing_cmds == 0) sealed(sr);
        });
    if (!res.ok()) fatal(res.status);
  }
}

void Volume::sealed(SegmentRuntime* seg) {
  seg->state = SegState::Sealed;
  seg->zone_metas.clear();
  seg->zone_metas.shrink_to_fit();
  counters_.segments_sealed++;
  refill_chains();
  pump_pending(seg->desc.seg_class);
  maybe_start_gc();
}

// ---------------------------------------------------------------------------
// Write path
// ---------------------------------------------------------------------------

void Volume::write(uint64_t offset, std::span<const uint8_t> data,
                   std::function<void(Status)> cb) {
  if (data.empty() || data.size() % kBlockSize != 0 || offset % kBlockSize != 0 ||
      offset + data.size() > params_.logical_bytes) {
    cb(Status::error(Errc::InvalidArgument, "unaligned or out-of-range write"));
    return;
  }
  for (ZnsDevice* d : devices_) {
    if (d->is_failed()) {
      cb(Status::error(Errc::DriveFailed,
                       "volume is degraded; writes are rejected"));
      return;
    }
  }
  uint32_t nblocks = static_cast<uint32_t>(data.size() / kBlockSize);
  WriteOp* op = new WriteOp();
  op->cb = std::move(cb);
  op->blocks_left = nblocks;
  op->submitted_at = clock_->now();
  op->status = Status::success();
  live_ops_++;
  counters_.user_write_blocks += nblocks;
  SegClass cls = SegClass::Small;
  if (params_.n_large > 0 &&
      data.size() >= static_cast<uint64_t>(params_.chunk_large_blocks) * kBlockSize)
    cls = SegClass::Large;
  for (uint32_t i = 0; i < nblocks; ++i) {
    InflightStripe::Origin o;
    o.kind = InflightStripe::Origin::Kind::User;
    o.lba = offset + static_cast<uint64_t>(i) * kBlockSize;
    o.op = op;
    stage_block(cls, o, o.lba, next_ts_++,
                data.subspan(static_cast<size_t>(i) * kBlockSize, kBlockSize));
  }
}

InflightStripe* Volume::new_fill_stripe(SegClass cls) {
  auto st = std::make_unique<InflightStripe>();
  InflightStripe* p = st.get();
  p->id = next_stripe_handle_++;
  p->cls = cls;
  p->k = shape_.k;
  p->m = shape_.m;
  p->chunk_blocks = geom(cls).chunk_blocks;
  uint32_t n = p->data_blocks();
  p->data.assign(static_cast<size_t>(n) * kBlockSize, 0);
  p->parity.assign(static_cast<size_t>(p->m) * p->chunk_blocks * kBlockSize, 0);
  p->metas.resize(n);
  p->origins.resize(n);
  p->data_pba.assign(n, kUnmappedPba);
  p->created_at = clock_->now();
  uint64_t id = p->id;
  p->timeout_event =
      clock_->schedule_after(params_.fill_timeout_ns,
                             [this, id, cls]() { fill_timeout(id, cls); });
  p->timeout_armed = true;
  stripes_.emplace(id, std::move(st));
  fills_[static_cast<int>(cls)] = id;
  return p;
}

void Volume::stage_block(SegClass cls, const InflightStripe::Origin& origin,
                         uint64_t meta_lba, uint64_t ts,
                         std::span<const uint8_t> payload) {
  uint64_t cur = fills_[static_cast<int>(cls)];
  InflightStripe* st =
      cur == 0 ? new_fill_stripe(cls) : stripes_.at(cur).get();
  uint32_t i = st->filled++;
  if (!payload.empty())
    std::memcpy(st->data.data() + static_cast<size_t>(i) * kBlockSize,
                payload.data(), std::min<size_t>(payload.size(), kBlockSize));
  st->metas[i] = BlockMeta{meta_lba, ts, 0};
  st->origins[i] = origin;
  if (origin.kind == InflightStripe::Origin::Kind::User) {
    InflightLba& e = inflight_newest_[origin.lba];
    e.newest_ts = ts;
    e.count++;
  }
  if (st->filled == st->data_blocks()) {
    if (st->timeout_armed) {
      clock_->cancel(st->timeout_event);
      st->timeout_armed = false;
    }
    fills_[static_cast<int>(cls)] = 0;
    finalize_stripe(st);
  }
}

void Volume::fill_timeout(uint64_t stripe_id, SegClass cls) {
  if (fills_[static_cast<int>(cls)] != stripe_id) return;  // already full
  InflightStripe* st = stripes_.at(stripe_id).get();
  st->timeout_armed = false;
  uint32_t padded = 0;
  while (st->filled < st->data_blocks()) {
    uint32_t i = st->filled++;
    st->metas[i] = BlockMeta{kInvalidLba, next_ts_++, 0};
    st->origins[i] = InflightStripe::Origin{};  // Padding
    ++padded;
  }
  counters_.fill_timeouts++;
  counters_.padding_blocks += padded;
  fills_[static_cast<int>(cls)] = 0;
  finalize_stripe(st);
}

void Volume::finalize_stripe(InflightStripe* st) {
  pending_[static_cast<int>(st->cls)].push_back(st->id);
  pump_pending(st->cls);
}

void Volume::pump_pending(SegClass cls) {
  auto& q = pending_[static_cast<int>(cls)];
  while (!q.empty()) {
    SegmentRuntime* seg = pick_segment(cls);
    if (!seg) {
      refill_chains();
      seg = pick_segment(cls);
      if (!seg) return;  // wait for a segment to become ready
    }
    InflightStripe* st = stripes_.at(q.front()).get();
    q.pop_front();
    assign_stripe(st, seg);
  }
}

SegmentRuntime* Volume::pick_segment(SegClass cls) {
  int cls_idx = static_cast<int>(cls);
  auto& chains = chains_[cls_idx];
  if (chains.empty()) return nullptr;
  auto active = [this](std::deque<uint64_t>& chain) -> SegmentRuntime* {
    for (uint64_t id : chain) {
      SegmentRuntime* s = segments_.at(id).get();
      if (s->accepts_stripes()) return s;
    }
    return nullptr;
  };
  if (cls == SegClass::Large) {
    uint32_t n = static_cast<uint32_t>(chains.size());
    for (uint32_t j = 0; j < n; ++j) {
      uint32_t c = (large_rr_ + j) % n;
      SegmentRuntime* s = active(chains[c]);
      if (s) {
        large_rr_ = (c + 1) % n;
        return s;
      }
    }
    return nullptr;
  }
  // Small class.
  uint32_t n = static_cast<uint32_t>(chains.size());
  if (params_.mode == EngineMode::Zapraid && n > 1) {
    // Idle zone-write segment first (round robin), else the append segment.
    uint32_t nzw = n - 1;
    for (uint32_t j = 0; j < nzw; ++j) {
      uint32_t c = 1 + (small_rr_ + j) % nzw;
      SegmentRuntime* s = active(chains[c]);
      if (s && s->inflight_chunks == 0 && s->issue_queue.empty()) {
        small_rr_ = (small_rr_ + j + 1) % nzw;
        return s;
      }
    }
    if (SegmentRuntime* s = active(chains[0])) return s;
    for (uint32_t c = 1; c < n; ++c)
      if (SegmentRuntime* s = active(chains[c])) return s;
    return nullptr;
  }
  for (uint32_t j = 0; j < n; ++j) {
    uint32_t c = (small_rr_ + j) % n;
    SegmentRuntime* s = active(chains[c]);
    if (s) {
      small_rr_ = (c + 1) % n;
      return s;
    }
  }
  return nullptr;
}

void Volume::assign_stripe(InflightStripe* st, SegmentRuntime* seg) {
  st->seg = seg;
  st->sid = seg->next_sid++;
  seg->assigned++;
  for (uint32_t i = 0; i < st->data_blocks(); ++i)
    st->metas[i].stripe_id = st->sid;
  // Parity payloads.
  if (st->m > 0) {
    size_t clen = static_cast<size_t>(st->chunk_blocks) * kBlockSize;
    std::vector<const uint8_t*> dptr(st->k);
    std::vector<uint8_t*> pptr(st->m);
    for (uint32_t j = 0; j < st->k; ++j) dptr[j] = st->data.data() + j * clen;
    for (uint32_t r = 0; r < st->m; ++r) pptr[r] = st->parity.data() + r * clen;
    encode_chunks(params_.scheme, shape_, dptr, pptr, clen);
  }
  // Parity metadata lanes.
  st->parity_metas.assign(static_cast<size_t>(st->m) * st->chunk_blocks,
                          BlockMeta{});
  std::vector<uint64_t> lbas(st->k), tss(st->k);
  for (uint32_t i = 0; i < st->chunk_blocks; ++i) {
    for (uint32_t j = 0; j < st->k; ++j) {
      lbas[j] = st->metas[j * st->chunk_blocks + i].lba;
      tss[j] = st->metas[j * st->chunk_blocks + i].timestamp;
    }
    for (uint32_t r = 0; r < st->m; ++r) {
      BlockMeta& pm = st->parity_metas[r * st->chunk_blocks + i];
      pm.lba = encode_meta_lane(params_.scheme, shape_, r, lbas);
      pm.timestamp = encode_meta_lane(params_.scheme, shape_, r, tss);
      pm.stripe_id = st->sid;
    }
  }
  seg->issue_queue.push_back(st);
  ensure_successor(seg);
  try_issue(seg);
}

void Volume::try_issue(SegmentRuntime* seg) {
  while (!seg->issue_queue.empty() && seg->state == SegState::Ready) {
    InflightStripe* st = seg->issue_queue.front();
    uint32_t g = st->sid / seg->desc.group_size;
    // Barrier: group g may only start once groups < g are fully durable.
    if (g > 0 &&
        seg->stripes_durable < static_cast<uint64_t>(g) * seg->desc.group_size)
      return;
    seg->issue_queue.pop_front();
    issue_stripe(seg, st);
  }
}

void Volume::issue_stripe(SegmentRuntime* seg, InflightStripe* st) {
  st->issued = true;
  size_t clen = static_cast<size_t>(st->chunk_blocks) * kBlockSize;
  counters_.parity_blocks += static_cast<uint64_t>(st->m) * st->chunk_blocks;
  for (uint32_t pos = 0; pos < width(); ++pos) {
    uint32_t drive = drive_for_position(params_.scheme, shape_, st->sid, pos);
    uint32_t zone = seg->desc.zones[drive];
    const uint8_t* bytes = pos < st->k
                               ? st->data.data() + static_cast<size_t>(pos) * clen
                               : st->parity.data() +
                                     static_cast<size_t>(pos - st->k) * clen;
    std::vector<uint8_t> oob(static_cast<size_t>(st->chunk_blocks) * kOobSize, 0);
    for (uint32_t i = 0; i < st->chunk_blocks; ++i) {
      const BlockMeta& m = pos < st->k
                               ? st->metas[pos * st->chunk_blocks + i]
                               : st->parity_metas[(pos - st->k) * st->chunk_blocks + i];
      serialize_block_meta(
          m, std::span<uint8_t>(oob.data() + static_cast<size_t>(i) * kOobSize,
                                kOobSize));
    }
    count_device_write(st->chunk_blocks);
    seg->inflight_chunks++;
    uint64_t sid_handle = st->id;
    auto cb = [this, sid_handle, pos](const Completion& c) {
      chunk_completed(sid_handle, pos, c);
    };
    std::span<const uint8_t> data_span(bytes, clen);
    Result<uint64_t> res =
        seg->desc.mode == SegMode::ZoneWrite
            ? devices_[drive]->submit_write(
                  zone, seg->geo.data_start() + st->sid * st->chunk_blocks,
                  data_span, oob, cb)
            : devices_[drive]->submit_append(zone, data_span, oob, cb);
    if (!res.ok()) {
      seg->inflight_chunks--;
      st->failed = true;
      fatal(res.status);
      st->chunks_done++;  // keep the done-count consistent
      if (st->chunks_done == width()) stripe_durable(seg, st);
    }
  }
}

void Volume::chunk_completed(uint64_t stripe_id, uint32_t position,
                             const Completion& comp) {
  auto it = stripes_.find(stripe_id);
  if (it == stripes_.end()) return;
  InflightStripe* st = it->second.get();
  SegmentRuntime* seg = st->seg;
  seg->inflight_chunks--;
  if (comp.status != Errc::Ok) {
    st->failed = true;
    fatal(Status::error(comp.status, "stripe chunk write failed"));
  } else {
    uint32_t drive =
        drive_for_position(params_.scheme, shape_, st->sid, position);
    uint32_t col =
        static_cast<uint32_t>((comp.offset - seg->geo.data_start()) /
                              st->chunk_blocks);
    if (seg->cst.enabled())
      seg->cst.set(drive, col, st->sid % seg->desc.group_size);
    seg->col_done[static_cast<size_t>(drive) * seg->geo.stripes + col] = 1;
    for (uint32_t i = 0; i < st->chunk_blocks; ++i) {
      const BlockMeta& m =
          position < st->k
              ? st->metas[position * st->chunk_blocks + i]
              : st->parity_metas[(position - st->k) * st->chunk_blocks + i];
      seg->zone_metas[drive][static_cast<size_t>(col) * st->chunk_blocks + i] = m;
      if (position < st->k)
        st->data_pba[position * st->chunk_blocks + i] = pba_.pack(
            Pba{drive, seg->desc.zones[drive],
                static_cast<uint32_t>(comp.offset + i)});
    }
  }
  st->chunks_done++;
  if (st->chunks_done == width()) stripe_durable(seg, st);
}

void Volume::stripe_durable(SegmentRuntime* seg, InflightStripe* st) {
  seg->stripes_durable++;
  counters_.stripes_formed++;
  try_issue(seg);  // the barrier may have opened the next group

  uint64_t stripe_id = st->id;
  // +1 sentinel so synchronous index completions cannot free the stripe
  // while this loop is still walking it.
  st->blocks_unindexed = st->data_blocks() + 1;
  for (uint32_t i = 0; i < st->data_blocks(); ++i) {
    InflightStripe::Origin& o = st->origins[i];
    const BlockMeta& meta = st->metas[i];
    uint32_t pba = st->data_pba[i];
    if (st->failed) {
      Status err = Status::error(Errc::DriveFailed, "stripe write failed");
      switch (o.kind) {
        case InflightStripe::Origin::Kind::User:
          release_inflight_lba(o.lba);
          finish_op_block(static_cast<WriteOp*>(o.op), err);
          break;
        case InflightStripe::Origin::Kind::Mapping:
          o.mapping_cb(err, kUnmappedPba, 0);
          break;
        case InflightStripe::Origin::Kind::GcUser:
        case InflightStripe::Origin::Kind::GcMapping:
          gc_note_progress();
          break;
        case InflightStripe::Origin::Kind::Padding:
          break;
      }
      block_indexed(stripe_id);
      continue;
    }
    switch (o.kind) {
      case InflightStripe::Origin::Kind::Padding:
        mark_stale_pba(pba);
        block_indexed(stripe_id);
        break;
      case InflightStripe::Origin::Kind::User: {
        uint64_t lba = o.lba;
        uint64_t ts = meta.timestamp;
        WriteOp* op = static_cast<WriteOp*>(o.op);
        auto itN = inflight_newest_.find(lba);
        assert(itN != inflight_newest_.end());
        if (itN->second.indexed_ts > ts) {
          // A newer write to the same LBA has already been indexed; this copy
          // is dead on arrival but the write itself happened, so it still
          // acknowledges cleanly.
          mark_stale_pba(pba);
          release_inflight_lba(lba);
          finish_op_block(op, Status::success());
          block_indexed(stripe_id);
          break;
        }
        itN->second.indexed_ts = ts;
        l2p_->update(lba / kBlockSize, pba,
                     [this, stripe_id, lba, pba, op](uint32_t old) {
                       if (old != kUnmappedPba) mark_stale_pba(old);
                       mark_valid(pba);
                       release_inflight_lba(lba);
                       finish_op_block(op, Status::success());
                       block_indexed(stripe_id);
                     });
        break;
      }
      case InflightStripe::Origin::Kind::GcUser: {
        uint64_t lba = o.lba;
        uint32_t old_pba = o.old_pba;
        l2p_->update_if(lba / kBlockSize, old_pba, pba,
                        [this, stripe_id, old_pba, pba](bool applied) {
                          if (applied) {
                            mark_stale_pba(old_pba);
                            mark_valid(pba);
                          } else {
                            // Foreground overwrote the block while it was in
                            // flight; the relocated copy is garbage.
                            mark_stale_pba(pba);
                          }
                          counters_.gc_moved_blocks++;
                          gc_note_progress();
                          block_indexed(stripe_id);
                        });
        break;
      }
      case InflightStripe::Origin::Kind::Mapping:
        mark_valid(pba);
        o.mapping_cb(Status::success(), pba, meta.timestamp);
        block_indexed(stripe_id);
        break;
      case InflightStripe::Origin::Kind::GcMapping: {
        bool applied =
            l2p_->remap_mapping_block(o.mapping_group, o.old_pba, pba);
        if (applied) {
          mark_stale_pba(o.old_pba);
          mark_valid(pba);
        } else {
          mark_stale_pba(pba);
        }
        counters_.gc_moved_blocks++;
        gc_note_progress();
        block_indexed(stripe_id);
        break;
      }
    }
  }
  block_indexed(stripe_id);  // release the sentinel

  if (seg->stripes_durable == seg->quota && seg->state == SegState::Ready &&
      seg->issue_queue.empty())
    seal_segment(seg);
  maybe_start_gc();
  gc_pump();
}

void Volume::release_inflight_lba(uint64_t lba) {
  auto it = inflight_newest_.find(lba);
  if (it != inflight_newest_.end() && --it->second.count == 0)
    inflight_newest_.erase(it);
}

void Volume::block_indexed(uint64_t stripe_id) {
  auto it = stripes_.find(stripe_id);
  if (it == stripes_.end()) return;
  InflightStripe* st = it->second.get();
  if (--st->blocks_unindexed == 0) stripes_.erase(it);
}

void Volume::finish_op_block(WriteOp* op, Status st) {
  if (!st.ok() && op->status.ok()) op->status = st;
  if (--op->blocks_left == 0) {
    write_lat_.add(clock_->now() - op->submitted_at);
    live_ops_--;
    op->cb(op->status);
    delete op;
  }
}

// ---------------------------------------------------------------------------
// Read path
// ---------------------------------------------------------------------------

void Volume::read(uint64_t offset, uint64_t length,
                  std::function<void(Status, std::vector<uint8_t>)> cb) {
  if (length == 0 || length % kBlockSize != 0 || offset % kBlockSize != 0 ||
      offset + length > params_.logical_bytes) {
    cb(Status::error(Errc::InvalidArgument, "unaligned or out-of-range read"),
       {});
    return;
  }
  uint32_t nblocks = static_cast<uint32_t>(length / kBlockSize);
  ReadOp* op = new ReadOp();
  op->cb = std::move(cb);
  op->buf.assign(length, 0);
  op->blocks_left = nblocks;
  op->submitted_at = clock_->now();
  op->status = Status::success();
  counters_.user_read_blocks += nblocks;
  auto block_done = [this, op](Status s) {
    if (!s.ok() && op->status.ok()) op->status = s;
    if (--op->blocks_left == 0) {
      (op->degraded ? degraded_lat_ : read_lat_)
          .add(clock_->now() - op->submitted_at);
      op->cb(op->status, std::move(op->buf));
      delete op;
    }
  };
  for (uint32_t i = 0; i < nblocks; ++i) {
    uint64_t lblk = offset / kBlockSize + i;
    uint8_t* dest = op->buf.data() + static_cast<size_t>(i) * kBlockSize;
    l2p_->lookup(lblk, [this, op, dest, block_done](uint32_t pba) {
      if (pba == kUnmappedPba) {
        // Never-written blocks read as zeros, like any block device.
        block_done(Status::success());
        return;
      }
      Pba p = pba_.unpack(pba);
      if (devices_[p.drive]->is_failed()) {
        op->degraded = true;
        degraded_read(pba, dest, block_done);
      } else {
        read_block_at(pba, dest, true, [this, op, pba, dest,
                                        block_done](Status s) {
          if (s.code == Errc::DriveFailed) {
            // The drive failed between lookup and completion.
            op->degraded = true;
            degraded_read(pba, dest, block_done);
            return;
          }
          block_done(s);
        });
      }
    });
  }
}

void Volume::note_read_start(uint32_t drive, uint32_t zone) {
  zone_reads_[drive][zone]++;
}

void Volume::note_read_end(uint32_t drive, uint32_t zone) {
  zone_reads_[drive][zone]--;
  gc_pump();  // a GC run may be waiting for readers to quiesce
}

bool Volume::zone_quiet(uint32_t drive, uint32_t zone) const {
  return zone_reads_[drive][zone] == 0;
}

void Volume::read_block_at(uint32_t pba, uint8_t* dest, bool count_user,
                           std::function<void(Status)> done) {
  Pba p = pba_.unpack(pba);
  if (devices_[p.drive]->is_failed()) {
    degraded_read(pba, dest, std::move(done));
    return;
  }
  counters_.device_read_blocks++;
  (void)count_user;
  note_read_start(p.drive, p.zone);
  auto res = devices_[p.drive]->submit_read(
      p.zone, p.offset, 1,
      [this, p, dest, done = std::move(done)](const Completion& c) {
        note_read_end(p.drive, p.zone);
        if (c.status != Errc::Ok) {
          done(Status::error(c.status, "device read failed"));
          return;
        }
        std::memcpy(dest, c.blocks[0].payload.data(), kBlockSize);
        done(Status::success());
      });
  if (!res.ok()) {
    note_read_end(p.drive, p.zone);
    done(res.status);
  }
}

void Volume::degraded_read(uint32_t pba, uint8_t* dest,
                           std::function<void(Status)> done) {
  Pba p = pba_.unpack(pba);
  SegmentRuntime* seg = zone_map_[p.drive][p.zone];
  if (!seg) {
    done(Status::error(Errc::UnrecoverableCorruption,
                       "mapped block outside any segment"));
    return;
  }
  counters_.degraded_reads++;
  if (shape_.m == 0) {
    done(Status::error(Errc::DriveFailed,
                       "no redundancy; block lost with its drive"));
    return;
  }
  const uint32_t C = seg->desc.chunk_blocks;
  const uint32_t G = seg->desc.group_size;
  uint32_t col = (p.offset - seg->geo.data_start()) / C;
  uint32_t bi = (p.offset - seg->geo.data_start()) % C;

  // Column -> stripe id. Zone-write segments place stripe s at column s; for
  // append segments the Compact Stripe Table gives the within-group id and
  // the group is known from the column range.
  uint64_t inspected = 0;
  uint32_t sid;
  uint32_t g = col / G;
  uint32_t gfirst = group_first_stripe(g, G);
  uint32_t gcount = group_stripe_count(g, G, seg->geo.stripes);
  if (!seg->cst.enabled()) {
    sid = col;
  } else {
    sid = gfirst + seg->cst.get(p.drive, col);
  }
  uint32_t my_pos = position_for_drive(params_.scheme, shape_, sid, p.drive);

  // Find the column holding stripe `sid`'s chunk on drive d. Counts table
  // entries inspected; skips crash-dead columns and columns whose chunk has
  // not completed yet (open segments only).
  auto scan_col = [&](uint32_t d, uint32_t* out_col) -> bool {
    if (!seg->cst.enabled()) {
      *out_col = col;
      return true;
    }
    uint32_t want = sid - gfirst;
    for (uint32_t c = gfirst; c < gfirst + gcount; ++c) {
      ++inspected;
      if (seg->cst.get(d, c) != want) continue;
      if (!seg->dead_cols[d].empty() && seg->dead_cols[d].count(c)) continue;
      if (!seg->col_done.empty() &&
          !seg->col_done[static_cast<size_t>(d) * seg->geo.stripes + c])
        continue;  // chunk still in flight
      *out_col = c;
      return true;
    }
    return false;
  };

  struct Ctx {
    std::vector<AvailChunk> avail;
    std::vector<std::vector<uint8_t>> bufs;
    uint32_t waiting = 0;
    Status status = Status::success();
  };
  auto ctx = std::make_shared<Ctx>();
  std::vector<std::pair<uint32_t, uint32_t>> reads;  // (drive, offset)
  std::vector<uint32_t> read_pos;

  if (params_.scheme == RaidScheme::Raid01) {
    uint32_t partner_pos = my_pos < shape_.k ? shape_.k + my_pos
                                             : my_pos - shape_.k;
    uint32_t pd = drive_for_position(params_.scheme, shape_, sid, partner_pos);
    uint32_t pcol;
    if (devices_[pd]->is_failed() || !scan_col(pd, &pcol)) {
      done(Status::error(Errc::UnrecoverableCorruption,
                         "both copies of the column are unavailable"));
      return;
    }
    reads.push_back({pd, seg->geo.data_start() + pcol * C + bi});
    read_pos.push_back(partner_pos);
  } else {
    for (uint32_t d = 0; d < params_.drives && reads.size() < shape_.k; ++d) {
      if (d == p.drive || devices_[d]->is_failed()) continue;
      uint32_t c;
      if (!scan_col(d, &c)) {
        done(Status::error(Errc::UnrecoverableCorruption,
                           "survivor chunk not found"));
        return;
      }
      reads.push_back({d, seg->geo.data_start() + c * C + bi});
      read_pos.push_back(position_for_drive(params_.scheme, shape_, sid, d));
    }
    if (reads.size() < shape_.k) {
      done(Status::error(Errc::UnrecoverableCorruption,
                         "not enough surviving drives"));
      return;
    }
  }
  counters_.cst_entries_inspected += inspected;
  counters_.cst_entries_inspected_max =
      std::max(counters_.cst_entries_inspected_max, inspected);

  ctx->waiting = static_cast<uint32_t>(reads.size());
  ctx->bufs.resize(reads.size());
  auto issue_reads = [this, reads, read_pos, ctx, seg, dest, my_pos,
                      done = std::move(done)]() mutable {
    auto finish = [this, ctx, dest, my_pos, done](Status s) {
      if (!s.ok()) {
        done(s);
        return;
      }
      Status ds = decode_chunk(params_.scheme, shape_, ctx->avail, my_pos, dest,
                               kBlockSize);
      done(ds);
    };
    for (size_t r = 0; r < reads.size(); ++r) {
      uint32_t d = reads[r].first;
      uint32_t off = reads[r].second;
      uint32_t zone = seg->desc.zones[d];
      counters_.device_read_blocks++;
      note_read_start(d, zone);
      auto res = devices_[d]->submit_read(
          zone, off, 1,
          [this, ctx, r, d, zone, pos = read_pos[r], finish](const Completion& c) {
            note_read_end(d, zone);
            if (c.status != Errc::Ok && ctx->status.ok())
              ctx->status = Status::error(c.status, "survivor read failed");
            if (c.status == Errc::Ok) {
              ctx->bufs[r] = c.blocks[0].payload;
              ctx->avail.push_back(AvailChunk{pos, ctx->bufs[r].data()});
            }
            if (--ctx->waiting == 0) finish(ctx->status);
          });
      if (!res.ok()) {
        note_read_end(d, zone);
        if (ctx->status.ok()) ctx->status = res.status;
        if (--ctx->waiting == 0) finish(ctx->status);
      }
    }
  };
  if (inspected > 0 && params_.cst_scan_ps_per_entry > 0) {
    SimTime delay = inspected * params_.cst_scan_ps_per_entry / 1000;
    clock_->schedule_after(delay, std::move(issue_reads));
  } else {
    issue_reads();
  }
}

// ---------------------------------------------------------------------------
// Validity bookkeeping
// ---------------------------------------------------------------------------

void Volume::mark_valid(uint32_t pba) {
  Pba p = pba_.unpack(pba);
  SegmentRuntime* seg = zone_map_[p.drive][p.zone];
  if (!seg) return;
  size_t idx = static_cast<size_t>(p.drive) * seg->geo.data_blocks() +
               (p.offset - seg->geo.data_start());
  if (!seg->valid[idx]) {
    seg->valid[idx] = true;
    seg->valid_count++;
  }
}

void Volume::mark_stale_pba(uint32_t pba) {
  Pba p = pba_.unpack(pba);
  SegmentRuntime* seg = zone_map_[p.drive][p.zone];
  if (!seg) return;
  size_t idx = static_cast<size_t>(p.drive) * seg->geo.data_blocks() +
               (p.offset - seg->geo.data_start());
  if (seg->valid[idx]) {
    seg->valid[idx] = false;
    seg->valid_count--;
  }
  seg->stale_count++;
  maybe_start_gc();
}

void Volume::born_stale(SegmentRuntime* seg, uint32_t drive, uint32_t data_idx) {
  size_t idx = static_cast<size_t>(drive) * seg->geo.data_blocks() + data_idx;
  (void)idx;
  seg->stale_count++;
}

// ---------------------------------------------------------------------------
// Mapping store (L2P spill)
// ---------------------------------------------------------------------------

void Volume::read_mapping_block(
    uint32_t pba, std::function<void(Status, std::span<const uint8_t>)> cb) {
  auto buf = std::make_shared<std::vector<uint8_t>>(kBlockSize);
  read_block_at(pba, buf->data(), false,
                [buf, cb = std::move(cb)](Status s) {
                  cb(s, std::span<const uint8_t>(buf->data(), buf->size()));
                });
}

void Volume::write_mapping_block(
    uint64_t mapping_lba, std::vector<uint8_t> block,
    std::function<void(Status, uint32_t, uint64_t)> cb) {
  counters_.mapping_blocks++;
  InflightStripe::Origin o;
  o.kind = InflightStripe::Origin::Kind::Mapping;
  o.lba = mapping_lba;
  o.mapping_cb = std::move(cb);
  stage_block(SegClass::Small, o, mapping_lba, next_ts_++,
              std::span<const uint8_t>(block.data(), block.size()));
}

void Volume::mapping_block_stale(uint32_t old_pba) { mark_stale_pba(old_pba); }

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

void Volume::drain() {
  clock_->run_until_idle();
  if (!quiescent() && first_error_.ok())
    fatal(Status::error(Errc::NoFreeZones,
                        "volume stalled: work pending with no runnable events"));
}

bool Volume::quiescent() const {
  if (live_ops_ != 0 || !stripes_.empty() || gc_active()) return false;
  if (fills_[0] != 0 || fills_[1] != 0) return false;
  if (!pending_[0].empty() || !pending_[1].empty()) return false;
  return true;
}

void Volume::fatal(const Status& st) {
  if (first_error_.ok()) first_error_ = st;
}

uint64_t Volume::free_zone_count(uint32_t drive) const {
  return free_zones_[drive].size();
}

uint64_t Volume::min_free_zones() const {
  uint64_t mn = ~0ull;
  for (uint32_t d = 0; d < params_.drives; ++d)
    mn = std::min<uint64_t>(mn, free_zones_[d].size());
  return mn;
}

SegmentRuntime* Volume::segment_of_zone(uint32_t drive, uint32_t zone) const {
  return zone_map_[drive][zone];
}

MetricsSnapshot Volume::metrics() const {
  MetricsSnapshot snap;
  snap.sim_now_ns = clock_->now();
  snap.counters = counters_;
  snap.l2p = l2p_->stats();
  snap.l2p.resident_groups = l2p_->resident_group_count();
  snap.l2p.resident_bytes = snap.l2p.resident_groups * kBlockSize;
  for (const auto& [id, seg] : segments_) {
    (void)id;
    snap.cst_memory_bytes += seg->cst.memory_bytes();
  }
  snap.free_zones_min = min_free_zones();
  if (counters_.user_write_blocks > 0)
    snap.write_amplification =
        static_cast<double>(counters_.device_write_blocks) /
        static_cast<double>(counters_.user_write_blocks);
  return snap;
}

Status Volume::audit_validity() {
  // Reference set: every PBA the mapping state points at.
  std::map<uint64_t, std::set<uint32_t>> expected;  // seg id -> data idx set
  auto note = [&](uint32_t pba) -> Status {
    Pba p = pba_.unpack(pba);
    SegmentRuntime* seg = zone_map_[p.drive][p.zone];
    if (!seg)
      return Status::error(Errc::VerifyFailed, "mapping points outside segments");
    expected[seg->desc.segment_id].insert(
        p.drive * seg->geo.data_blocks() + (p.offset - seg->geo.data_start()));
    return Status::success();
  };
  Status st = Status::success();
  l2p_->for_each_resident([&](uint64_t group, const std::vector<uint32_t>& e) {
    for (uint32_t i = 0; i < kL2pGroupEntries; ++i) {
      (void)group;
      if (e[i] != kUnmappedPba) {
        Status s = note(e[i]);
        if (!s.ok() && st.ok()) st = s;
      }
    }
  });
  l2p_->for_each_directory([&](uint64_t group, uint32_t pba) {
    Status s = note(pba);
    if (!s.ok() && st.ok()) st = s;
    // Offloaded groups: their entries are on the device.
    Pba p = pba_.unpack(pba);
    std::vector<uint8_t> payload(kBlockSize);
    std::vector<uint8_t> oob(kOobSize);
    if (!devices_[p.drive]->debug_peek(p.zone, p.offset, payload, oob)) {
      if (st.ok())
        st = Status::error(Errc::VerifyFailed, "directory block unreadable");
      return;
    }
    uint64_t mg = parse_block_meta(oob).lba;
    (void)mg;
    (void)group;
    for (uint32_t i = 0; i < kL2pGroupEntries; ++i) {
      uint32_t e = get_u32(payload.data() + 4 * i);
      if (e != kUnmappedPba) {
        Status s2 = note(e);
        if (!s2.ok() && st.ok()) st = s2;
      }
    }
  });
  if (!st.ok()) return st;
  for (const auto& [id, seg] : segments_) {
    const auto& exp = expected[id];
    uint64_t exp_valid = exp.size();
    if (exp_valid != seg->valid_count)
      return Status::error(Errc::VerifyFailed,
                           "segment " + std::to_string(id) + " valid_count " +
                               std::to_string(seg->valid_count) + " expected " +
                               std::to_string(exp_valid));
    for (size_t b = 0; b < seg->valid.size(); ++b) {
      bool want = exp.count(static_cast<uint32_t>(b)) > 0;
      if (seg->valid[b] != want)
        return Status::error(Errc::VerifyFailed,
                             "segment " + std::to_string(id) +
                                 " validity bit mismatch at " +
                                 std::to_string(b));
    }
  }
  return Status::success();
}

}  // namespace zlraid
