#include "zlraid/zns_device.h"

#include <algorithm>
#include <cassert>
#include <cstring>
#include <istream>
#include <ostream>

namespace zlraid {

Result<DeviceGeometry> DeviceGeometry::from_config(KvConfig& cfg) {
  DeviceGeometry g;
  g.num_zones = static_cast<uint32_t>(cfg.get_u64("dev_zones", g.num_zones));
  g.zone_capacity_blocks =
      static_cast<uint32_t>(cfg.get_u64("dev_zone_capacity_blocks", g.zone_capacity_blocks));
  g.channels = static_cast<uint32_t>(cfg.get_u64("dev_channels", g.channels));
  g.chips_per_channel =
      static_cast<uint32_t>(cfg.get_u64("dev_chips_per_channel", g.chips_per_channel));
  g.chips_per_zone = static_cast<uint32_t>(cfg.get_u64("dev_chips_per_zone", g.chips_per_zone));
  g.max_open_zones = static_cast<uint32_t>(cfg.get_u64("dev_max_open_zones", g.max_open_zones));
  g.page_write_latency_ns = cfg.get_u64("dev_page_write_latency_ns", g.page_write_latency_ns);
  g.page_read_latency_ns = cfg.get_u64("dev_page_read_latency_ns", g.page_read_latency_ns);
  g.append_penalty_per_open_zone_ns =
      cfg.get_u64("dev_append_penalty_per_open_zone_ns", g.append_penalty_per_open_zone_ns);
  Status st = g.validate();
  if (!st.ok()) return st;
  return g;
}

Status DeviceGeometry::validate() const {
  if (num_zones == 0 || zone_capacity_blocks == 0)
    return Status::error(Errc::ConfigError, "device needs zones and capacity");
  if (channels == 0 || chips_per_channel == 0)
    return Status::error(Errc::ConfigError, "device needs at least one chip");
  if (chips_per_zone == 0 || chips_per_zone > total_chips())
    return Status::error(Errc::ConfigError, "chips_per_zone must be in [1, total chips]");
  if (page_write_latency_ns == 0 || page_read_latency_ns == 0)
    return Status::error(Errc::ConfigError, "page latencies must be nonzero");
  if (max_open_zones == 0)
    return Status::error(Errc::ConfigError, "max_open_zones must be nonzero");
  return Status::success();
}

void ZnsDevice::PackedBlock::store(const uint8_t* payload, const uint8_t* oob) {
  uint32_t plen = kBlockSize;
  while (plen > 0 && payload[plen - 1] == 0) --plen;
  uint32_t olen = kOobSize;
  while (olen > 0 && oob[olen - 1] == 0) --olen;
  payload_len = static_cast<uint16_t>(plen);
  oob_len = static_cast<uint8_t>(olen);
  if (plen + olen == 0) {
    buf.reset();
    return;
  }
  buf = std::make_unique<uint8_t[]>(plen + olen);
  std::memcpy(buf.get(), payload, plen);
  std::memcpy(buf.get() + plen, oob, olen);
}

void ZnsDevice::PackedBlock::load(uint8_t* payload, uint8_t* oob) const {
  std::memset(payload, 0, kBlockSize);
  std::memset(oob, 0, kOobSize);
  if (buf) {
    std::memcpy(payload, buf.get(), payload_len);
    std::memcpy(oob, buf.get() + payload_len, oob_len);
  }
}

ZnsDevice::PackedBlock ZnsDevice::PackedBlock::clone() const {
  PackedBlock b;
  b.payload_len = payload_len;
  b.oob_len = oob_len;
  if (buf) {
    b.buf = std::make_unique<uint8_t[]>(payload_len + oob_len);
    std::memcpy(b.buf.get(), buf.get(), payload_len + oob_len);
  }
  return b;
}

uint32_t ZnsDevice::Zone::durable_high() const {
  for (uint32_t i = reserved_wp; i > 0; --i) {
    if (written[i - 1]) return i;
  }
  return 0;
}

ZnsDevice::ZnsDevice(const DeviceGeometry& geo, SimClock* clock, uint32_t drive_id)
    : geo_(geo), clock_(clock), drive_id_(drive_id) {
  zones_.resize(geo_.num_zones);
  chip_busy_until_.assign(geo_.total_chips(), 0);
}

SimTime ZnsDevice::occupy_chips(uint32_t zone, uint32_t offset, uint32_t nblocks,
                                SimTime latency) {
  SimTime done = clock_->now();
  for (uint32_t i = 0; i < nblocks; ++i) {
    uint32_t chip = (zone * geo_.chips_per_zone + (offset + i) % geo_.chips_per_zone) %
                    geo_.total_chips();
    SimTime start = std::max(chip_busy_until_[chip], clock_->now());
    SimTime end = start + latency;
    chip_busy_until_[chip] = end;
    done = std::max(done, end);
  }
  return done;
}

void ZnsDevice::record(uint64_t id, CmdKind kind, uint32_t zone, uint64_t offset,
                       uint32_t nblocks, bool completed) {
  if (observer_) {
    observer_(CommandRecord{id, drive_id_, kind, zone, offset, nblocks, completed,
                            clock_->now()});
  }
}

Result<uint64_t> ZnsDevice::fail_submission(CmdKind kind, uint32_t zone, CompletionCb cb) {
  uint64_t id = next_cmd_id_++;
  SimTime at = clock_->now();
  clock_->schedule_at(at, [this, id, kind, zone, cb = std::move(cb), at]() {
    Completion c;
    c.command_id = id;
    c.kind = kind;
    c.status = Errc::DriveFailed;
    c.zone = zone;
    c.submitted_at = at;
    c.completed_at = clock_->now();
    ++completions_applied_;
    record(id, kind, zone, 0, 0, true);
    cb(c);
  });
  return id;
}

void ZnsDevice::open_for_write(Zone& z) {
  if (z.state == ZoneState::Empty) {
    z.state = ZoneState::Open;
    ++open_zones_;
    z.blocks.resize(geo_.zone_capacity_blocks);
    z.written.assign(geo_.zone_capacity_blocks, false);
  }
}

Result<uint64_t> ZnsDevice::submit_write(uint32_t zone, uint32_t offset,
                                         std::span<const uint8_t> data,
                                         std::span<const uint8_t> oob, CompletionCb cb) {
  if (zone >= geo_.num_zones) return Status::error(Errc::InvalidArgument, "bad zone");
  uint32_t n = static_cast<uint32_t>(data.size() / kBlockSize);
  if (n == 0 || data.size() != size_t(n) * kBlockSize || oob.size() != size_t(n) * kOobSize)
    return Status::error(Errc::InvalidArgument, "write sizes");
  if (failed_) return fail_submission(CmdKind::Write, zone, std::move(cb));
  Zone& z = zones_[zone];
  if (z.state == ZoneState::Full)
    return Status::error(Errc::ZoneStateError, "write to Full zone");
  if (offset != z.reserved_wp)
    return Status::error(Errc::ZoneStateError, "write offset != write pointer");
  if (z.reserved_wp + n > geo_.zone_capacity_blocks)
    return Status::error(Errc::ZoneStateError, "write past zone capacity");
  if (z.write_outstanding || z.appends_outstanding > 0)
    return Status::error(Errc::ConcurrentWriteConflict, "zone busy");
  if (z.state == ZoneState::Empty && open_zones_ >= geo_.max_open_zones)
    return Status::error(Errc::TooManyOpenZones, "");
  open_for_write(z);
  z.reserved_wp += n;
  z.write_outstanding = true;

  uint64_t id = next_cmd_id_++;
  SimTime submit = clock_->now();
  SimTime done = occupy_chips(zone, offset, n, geo_.page_write_latency_ns);
  record(id, CmdKind::Write, zone, offset, n, false);
  std::vector<uint8_t> data_copy(data.begin(), data.end());
  std::vector<uint8_t> oob_copy(oob.begin(), oob.end());
  clock_->schedule_at(done, [this, id, zone, offset, n, submit,
                             d = std::move(data_copy), o = std::move(oob_copy),
                             cb = std::move(cb)]() {
    Zone& zz = zones_[zone];
    for (uint32_t i = 0; i < n; ++i) {
      zz.blocks[offset + i].store(d.data() + size_t(i) * kBlockSize,
                                  o.data() + size_t(i) * kOobSize);
      zz.written[offset + i] = true;
    }
    zz.written_count += n;
    zz.write_outstanding = false;
    if (zz.state == ZoneState::Open && zz.reserved_wp == geo_.zone_capacity_blocks &&
        zz.written_count == geo_.zone_capacity_blocks) {
      zz.state = ZoneState::Full;
      --open_zones_;
    }
    Completion c;
    c.command_id = id;
    c.kind = CmdKind::Write;
    c.zone = zone;
    c.offset = offset;
    c.num_blocks = n;
    c.submitted_at = submit;
    c.completed_at = clock_->now();
    ++completions_applied_;
    record(id, CmdKind::Write, zone, offset, n, true);
    cb(c);
  });
  return id;
}

Result<uint64_t> ZnsDevice::submit_append(uint32_t zone, std::span<const uint8_t> data,
                                          std::span<const uint8_t> oob, CompletionCb cb) {
  if (zone >= geo_.num_zones) return Status::error(Errc::InvalidArgument, "bad zone");
  uint32_t n = static_cast<uint32_t>(data.size() / kBlockSize);
  if (n == 0 || data.size() != size_t(n) * kBlockSize || oob.size() != size_t(n) * kOobSize)
    return Status::error(Errc::InvalidArgument, "append sizes");
  if (failed_) return fail_submission(CmdKind::Append, zone, std::move(cb));
  Zone& z = zones_[zone];
  if (z.state == ZoneState::Full)
    return Status::error(Errc::ZoneStateError, "append to Full zone");
  if (z.reserved_wp + n > geo_.zone_capacity_blocks)
    return Status::error(Errc::ZoneStateError, "append past zone capacity");
  if (z.write_outstanding)
    return Status::error(Errc::ConcurrentWriteConflict, "zone write outstanding");
  if (z.state == ZoneState::Empty && open_zones_ >= geo_.max_open_zones)
    return Status::error(Errc::TooManyOpenZones, "");
  open_for_write(z);
  uint32_t offset = z.reserved_wp;  // reserved here, reported at completion
  z.reserved_wp += n;
  ++z.appends_outstanding;

  uint64_t id = next_cmd_id_++;
  SimTime submit = clock_->now();
  SimTime done = occupy_chips(zone, offset, n, geo_.page_write_latency_ns);
  if (geo_.append_penalty_per_open_zone_ns > 0 && open_zones_ > 1) {
    done += geo_.append_penalty_per_open_zone_ns * (open_zones_ - 1);
  }
  record(id, CmdKind::Append, zone, offset, n, false);
  std::vector<uint8_t> data_copy(data.begin(), data.end());
  std::vector<uint8_t> oob_copy(oob.begin(), oob.end());
  clock_->schedule_at(done, [this, id, zone, offset, n, submit,
                             d = std::move(data_copy), o = std::move(oob_copy),
                             cb = std::move(cb)]() {
    Zone& zz = zones_[zone];
    for (uint32_t i = 0; i < n; ++i) {
      zz.blocks[offset + i].store(d.data() + size_t(i) * kBlockSize,
                                  o.data() + size_t(i) * kOobSize);
      zz.written[offset + i] = true;
    }
    zz.written_count += n;
    --zz.appends_outstanding;
    if (zz.state == ZoneState::Open && zz.reserved_wp == geo_.zone_capacity_blocks &&
        zz.written_count == geo_.zone_capacity_blocks) {
      zz.state = ZoneState::Full;
      --open_zones_;
    }
    Completion c;
    c.command_id = id;
    c.kind = CmdKind::Append;
    c.zone = zone;
    c.offset = offset;
    c.num_blocks = n;
    c.submitted_at = submit;
    c.completed_at = clock_->now();
    ++completions_applied_;
    record(id, CmdKind::Append, zone, offset, n, true);
    cb(c);
  });
  return id;
}

Result<uint64_t> ZnsDevice::submit_read(uint32_t zone, uint32_t offset, uint32_t nblocks,
                                        CompletionCb cb) {
  if (zone >= geo_.num_zones) return Status::error(Errc::InvalidArgument, "bad zone");
  if (nblocks == 0) return Status::error(Errc::InvalidArgument, "empty read");
  if (failed_) return fail_submission(CmdKind::Read, zone, std::move(cb));
  Zone& z = zones_[zone];
  if (uint64_t(offset) + nblocks > z.reserved_wp)
    return Status::error(Errc::ZoneStateError, "read past write pointer");

  uint64_t id = next_cmd_id_++;
  SimTime submit = clock_->now();
  SimTime done = occupy_chips(zone, offset, nblocks, geo_.page_read_latency_ns);
  record(id, CmdKind::Read, zone, offset, nblocks, false);
  clock_->schedule_at(done, [this, id, zone, offset, nblocks, submit, cb = std::move(cb)]() {
    Zone& zz = zones_[zone];
    Completion c;
    c.command_id = id;
    c.kind = CmdKind::Read;
    c.zone = zone;
    c.offset = offset;
    c.num_blocks = nblocks;
    c.submitted_at = submit;
    c.completed_at = clock_->now();
    c.blocks.resize(nblocks);
    for (uint32_t i = 0; i < nblocks; ++i) {
      c.blocks[i].payload.resize(kBlockSize);
      zz.blocks[offset + i].load(c.blocks[i].payload.data(), c.blocks[i].oob.data());
    }
    ++completions_applied_;
    record(id, CmdKind::Read, zone, offset, nblocks, true);
    cb(c);
  });
  return id;
}

Status ZnsDevice::reset_zone(uint32_t zone) {
  if (zone >= geo_.num_zones) return Status::error(Errc::InvalidArgument, "bad zone");
  if (failed_) return Status::error(Errc::DriveFailed, "");
  Zone& z = zones_[zone];
  if (z.write_outstanding || z.appends_outstanding > 0)
    return Status::error(Errc::ConcurrentWriteConflict, "reset with commands in flight");
  if (z.state == ZoneState::Open) --open_zones_;
  z = Zone{};
  return Status::success();
}

Status ZnsDevice::finish_zone(uint32_t zone) {
  if (zone >= geo_.num_zones) return Status::error(Errc::InvalidArgument, "bad zone");
  if (failed_) return Status::error(Errc::DriveFailed, "");
  Zone& z = zones_[zone];
  if (z.state == ZoneState::Full) return Status::success();
  if (z.state == ZoneState::Empty)
    return Status::error(Errc::ZoneStateError, "finish on Empty zone");
  if (z.write_outstanding || z.appends_outstanding > 0)
    return Status::error(Errc::ConcurrentWriteConflict, "finish with commands in flight");
  z.state = ZoneState::Full;
  z.finished = true;
  --open_zones_;
  return Status::success();
}

ZoneInfo ZnsDevice::zone_info(uint32_t zone) const {
  ZoneInfo info;
  info.capacity = geo_.zone_capacity_blocks;
  if (zone < zones_.size()) {
    info.state = zones_[zone].state;
    info.write_pointer = zones_[zone].reserved_wp;
  }
  return info;
}

bool ZnsDevice::debug_peek(uint32_t zone, uint32_t offset, std::span<uint8_t> payload,
                           std::span<uint8_t> oob) const {
  if (zone >= zones_.size()) return false;
  const Zone& z = zones_[zone];
  if (offset >= z.blocks.size() || !z.written[offset]) return false;
  z.blocks[offset].load(payload.data(), oob.data());
  return true;
}

namespace {
constexpr uint32_t kImageMagic = 0x4d494c5a;  // "ZLIM"
constexpr uint32_t kImageVersion = 1;
}  // namespace

Status ZnsDevice::serialize(std::ostream& out) const {
  uint8_t hdr[24];
  put_u32(hdr, kImageMagic);
  put_u32(hdr + 4, kImageVersion);
  put_u32(hdr + 8, geo_.num_zones);
  put_u32(hdr + 12, geo_.zone_capacity_blocks);
  put_u32(hdr + 16, drive_id_);
  put_u32(hdr + 20, 0);
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  std::vector<uint8_t> payload(kBlockSize);
  std::vector<uint8_t> oob(kOobSize);
  for (const Zone& z : zones_) {
    // Durable cut: blocks whose commands completed; lost reservations shrink wp.
    uint32_t wp = z.blocks.empty() ? 0 : z.durable_high();
    ZoneState st = z.state;
    if (st == ZoneState::Open && wp == 0) st = ZoneState::Empty;
    uint8_t zh[8];
    zh[0] = static_cast<uint8_t>(st);
    zh[1] = z.finished ? 1 : 0;
    zh[2] = zh[3] = 0;
    put_u32(zh + 4, wp);
    out.write(reinterpret_cast<const char*>(zh), sizeof(zh));
    for (uint32_t i = 0; i < wp; ++i) {
      if (z.written[i]) {
        z.blocks[i].load(payload.data(), oob.data());
      } else {
        std::fill(payload.begin(), payload.end(), 0);
        std::fill(oob.begin(), oob.end(), 0);
      }
      out.write(reinterpret_cast<const char*>(payload.data()), kBlockSize);
      out.write(reinterpret_cast<const char*>(oob.data()), kOobSize);
    }
  }
  if (!out) return Status::error(Errc::ImageFormatError, "image write failed");
  return Status::success();
}

Result<std::unique_ptr<ZnsDevice>> ZnsDevice::deserialize(std::istream& in, SimClock* clock) {
  uint8_t hdr[24];
  in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  if (!in || get_u32(hdr) != kImageMagic)
    return Status::error(Errc::ImageFormatError, "bad image magic");
  if (get_u32(hdr + 4) != kImageVersion)
    return Status::error(Errc::ImageFormatError, "unsupported image version");
  DeviceGeometry geo;
  geo.num_zones = get_u32(hdr + 8);
  geo.zone_capacity_blocks = get_u32(hdr + 12);
  uint32_t drive_id = get_u32(hdr + 16);
  Status st = geo.validate();
  if (!st.ok()) return Status::error(Errc::ImageFormatError, "bad image geometry");
  auto dev = std::make_unique<ZnsDevice>(geo, clock, drive_id);
  std::vector<uint8_t> payload(kBlockSize);
  std::vector<uint8_t> oob(kOobSize);
  for (Zone& z : dev->zones_) {
    uint8_t zh[8];
    in.read(reinterpret_cast<char*>(zh), sizeof(zh));
    if (!in) return Status::error(Errc::ImageFormatError, "truncated zone record");
    if (zh[0] > 2) return Status::error(Errc::ImageFormatError, "bad zone state");
    z.state = static_cast<ZoneState>(zh[0]);
    z.finished = zh[1] != 0;
    z.reserved_wp = get_u32(zh + 4);
    if (z.reserved_wp > geo.zone_capacity_blocks)
      return Status::error(Errc::ImageFormatError, "zone wp past capacity");
    if (z.state != ZoneState::Empty) {
      z.blocks.resize(geo.zone_capacity_blocks);
      z.written.assign(geo.zone_capacity_blocks, false);
      if (z.state == ZoneState::Open) ++dev->open_zones_;
    }
    for (uint32_t i = 0; i < z.reserved_wp; ++i) {
      in.read(reinterpret_cast<char*>(payload.data()), kBlockSize);
      in.read(reinterpret_cast<char*>(oob.data()), kOobSize);
      if (!in) return Status::error(Errc::ImageFormatError, "truncated block data");
      z.blocks[i].store(payload.data(), oob.data());
      z.written[i] = true;
      ++z.written_count;
    }
  }
  return dev;
}

std::unique_ptr<ZnsDevice> ZnsDevice::snapshot_durable(SimClock* clock) const {
  auto dev = std::make_unique<ZnsDevice>(geo_, clock, drive_id_);
  for (uint32_t zi = 0; zi < zones_.size(); ++zi) {
    const Zone& src = zones_[zi];
    Zone& dst = dev->zones_[zi];
    uint32_t wp = src.blocks.empty() ? 0 : src.durable_high();
    dst.state = src.state;
    dst.finished = src.finished;
    if (dst.state == ZoneState::Open && wp == 0) dst.state = ZoneState::Empty;
    dst.reserved_wp = wp;
    if (dst.state != ZoneState::Empty) {
      dst.blocks.resize(geo_.zone_capacity_blocks);
      dst.written.assign(geo_.zone_capacity_blocks, false);
      for (uint32_t i = 0; i < wp; ++i) {
        if (src.written[i]) {
          dst.blocks[i] = src.blocks[i].clone();
          dst.written[i] = true;
          ++dst.written_count;
        }
      }
      if (dst.state == ZoneState::Open) ++dev->open_zones_;
    }
  }
  return dev;
}

}  // namespace zlraid
