#include "zlraid/layout.h"

#include <zlib.h>

#include <cassert>
#include <cstring>

namespace zlraid {

namespace {

uint32_t crc32_of(std::span<const uint8_t> bytes) {
  return static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(bytes.data()), bytes.size()));
}

constexpr uint32_t kHeaderMagic = 0x48534c5a;  // "ZLSH"
constexpr uint32_t kFooterMagic = 0x46534c5a;  // "ZLSF"
constexpr uint16_t kHeaderVersion = 1;

}  // namespace

void serialize_block_meta(const BlockMeta& m, std::span<uint8_t> oob) {
  assert(oob.size() >= kBlockMetaSize);
  std::memset(oob.data(), 0, oob.size());
  put_u64(oob.data(), m.lba);
  put_u64(oob.data() + 8, m.timestamp);
  put_u32(oob.data() + 16, m.stripe_id);
  if (oob.size() > kOobMarkerOffset) oob[kOobMarkerOffset] = kOobMarkerValue;
}

BlockMeta parse_block_meta(std::span<const uint8_t> oob) {
  assert(oob.size() >= kBlockMetaSize);
  BlockMeta m;
  m.lba = get_u64(oob.data());
  m.timestamp = get_u64(oob.data() + 8);
  m.stripe_id = get_u32(oob.data() + 16);
  return m;
}

Result<SegmentGeometry> compute_segment_geometry(uint32_t zone_capacity,
                                                 uint32_t chunk_blocks) {
  if (chunk_blocks == 0)
    return Status::error(Errc::ConfigError, "chunk_blocks must be nonzero");
  if (zone_capacity < chunk_blocks + chunk_blocks + 1)
    return Status::error(Errc::ConfigError, "zone too small for one stripe");
  SegmentGeometry g;
  g.zone_capacity = zone_capacity;
  g.chunk_blocks = chunk_blocks;
  g.header_blocks = chunk_blocks;
  // Largest S with C + S*C + ceil(S*C/204) <= capacity. Start from the bound
  // without the footer and walk down; at most a few thousand iterations even
  // at production scale, and it is exact.
  uint32_t s = (zone_capacity - chunk_blocks) / chunk_blocks;
  while (s > 0) {
    uint64_t used = uint64_t(chunk_blocks) + uint64_t(s) * chunk_blocks +
                    ceil_div_u32(uint64_t(s) * chunk_blocks, kMetaPerBlock);
    if (used <= zone_capacity) break;
    --s;
  }
  if (s == 0) return Status::error(Errc::ConfigError, "zone too small for one stripe");
  g.stripes = s;
  g.footer_blocks = ceil_div_u32(uint64_t(s) * chunk_blocks, kMetaPerBlock);
  return g;
}

uint32_t drive_for_position(RaidScheme s, const SchemeShape& shape,
                            uint32_t stripe_seq, uint32_t position) {
  uint32_t n = shape.width();
  assert(position < n);
  if (s == RaidScheme::Raid5 || s == RaidScheme::Raid6) {
    uint32_t rot = stripe_seq % n;
    // Parity j sits on drive (n-1-j-rot) mod n; data columns take the
    // remaining drives in ascending order.
    bool parity_drive[8] = {};
    uint32_t pd[2] = {};
    for (uint32_t j = 0; j < shape.m; ++j) {
      uint32_t d = (n - 1 - j + n - rot) % n;
      parity_drive[d] = true;
      pd[j] = d;
    }
    if (position >= shape.k) return pd[position - shape.k];
    uint32_t seen = 0;
    for (uint32_t d = 0; d < n; ++d) {
      if (parity_drive[d]) continue;
      if (seen == position) return d;
      ++seen;
    }
    assert(false);
  }
  // RAID0 / RAID01 / RAID4: identity placement, parity (or mirrors) last.
  return position;
}

uint32_t position_for_drive(RaidScheme s, const SchemeShape& shape,
                            uint32_t stripe_seq, uint32_t drive) {
  uint32_t n = shape.width();
  for (uint32_t p = 0; p < n; ++p) {
    if (drive_for_position(s, shape, stripe_seq, p) == drive) return p;
  }
  assert(false);
  return 0;
}

void serialize_header_block(const SegmentDescriptor& d, std::span<uint8_t> out) {
  assert(out.size() == kBlockSize);
  assert(d.zones.size() == d.width());
  std::memset(out.data(), 0, out.size());
  put_u32(out.data(), kHeaderMagic);
  put_u16(out.data() + 4, kHeaderVersion);
  out[6] = static_cast<uint8_t>(d.scheme);
  out[7] = static_cast<uint8_t>(d.mode);
  put_u64(out.data() + 8, d.segment_id);
  put_u16(out.data() + 16, d.k);
  put_u16(out.data() + 18, d.m);
  put_u32(out.data() + 20, d.chunk_blocks);
  put_u32(out.data() + 24, d.group_size);
  put_u32(out.data() + 28, d.stripes);
  put_u64(out.data() + 32, d.created_ts);
  out[40] = static_cast<uint8_t>(d.seg_class);
  out[41] = static_cast<uint8_t>(d.zones.size());
  for (size_t i = 0; i < d.zones.size(); ++i) {
    put_u32(out.data() + 44 + 4 * i, d.zones[i]);
  }
  put_u32(out.data() + kBlockSize - 4, crc32_of(out.first(kBlockSize - 4)));
}

Result<SegmentDescriptor> parse_header_block(std::span<const uint8_t> block) {
  assert(block.size() == kBlockSize);
  if (get_u32(block.data()) != kHeaderMagic)
    return Status::error(Errc::CorruptHeader, "bad header magic");
  if (get_u32(block.data() + kBlockSize - 4) != crc32_of(block.first(kBlockSize - 4)))
    return Status::error(Errc::CorruptHeader, "header crc mismatch");
  if (get_u16(block.data() + 4) != kHeaderVersion)
    return Status::error(Errc::CorruptHeader, "unsupported header version");
  SegmentDescriptor d;
  d.scheme = static_cast<RaidScheme>(block[6]);
  d.mode = static_cast<SegMode>(block[7]);
  d.segment_id = get_u64(block.data() + 8);
  d.k = get_u16(block.data() + 16);
  d.m = get_u16(block.data() + 18);
  d.chunk_blocks = get_u32(block.data() + 20);
  d.group_size = get_u32(block.data() + 24);
  d.stripes = get_u32(block.data() + 28);
  d.created_ts = get_u64(block.data() + 32);
  d.seg_class = static_cast<SegClass>(block[40]);
  uint8_t drives = block[41];
  if (drives == 0 || drives != d.k + d.m || drives > 16)
    return Status::error(Errc::CorruptHeader, "bad drive count");
  d.zones.resize(drives);
  for (uint32_t i = 0; i < drives; ++i) d.zones[i] = get_u32(block.data() + 44 + 4 * i);
  return d;
}

void serialize_footer_block(std::span<const BlockMeta> metas, uint32_t block_index,
                            std::span<uint8_t> out) {
  assert(out.size() == kBlockSize);
  assert(metas.size() <= kMetaPerBlock);
  std::memset(out.data(), 0, out.size());
  for (size_t i = 0; i < metas.size(); ++i) {
    std::span<uint8_t> slot = out.subspan(i * kBlockMetaSize, kBlockMetaSize);
    put_u64(slot.data(), metas[i].lba);
    put_u64(slot.data() + 8, metas[i].timestamp);
    put_u32(slot.data() + 16, metas[i].stripe_id);
  }
  uint8_t* tail = out.data() + kMetaPerBlock * kBlockMetaSize;  // offset 4080
  put_u32(tail, kFooterMagic);
  put_u32(tail + 4, block_index);
  put_u32(tail + 8, crc32_of(out.first(kMetaPerBlock * kBlockMetaSize)));
}

Status parse_footer_block(std::span<const uint8_t> block, uint32_t expect_index,
                          std::vector<BlockMeta>& out) {
  assert(block.size() == kBlockSize);
  const uint8_t* tail = block.data() + kMetaPerBlock * kBlockMetaSize;
  if (get_u32(tail) != kFooterMagic)
    return Status::error(Errc::CorruptFooter, "bad footer magic");
  if (get_u32(tail + 4) != expect_index)
    return Status::error(Errc::CorruptFooter, "footer block index mismatch");
  if (get_u32(tail + 8) != crc32_of(block.first(kMetaPerBlock * kBlockMetaSize)))
    return Status::error(Errc::CorruptFooter, "footer crc mismatch");
  for (uint32_t i = 0; i < kMetaPerBlock; ++i) {
    const uint8_t* slot = block.data() + i * kBlockMetaSize;
    BlockMeta m;
    m.lba = get_u64(slot);
    m.timestamp = get_u64(slot + 8);
    m.stripe_id = get_u32(slot + 16);
    out.push_back(m);
  }
  return Status::success();
}

uint32_t cst_entry_bytes(uint32_t group_size) {
  if (group_size <= 1) return 0;  // ZoneWrite layout is static, no table
  return ceil_div_u32(ceil_log2(group_size), 8);
}

void CompactStripeTable::init(uint32_t drives, uint32_t stripes, uint32_t group_size) {
  stripes_ = stripes;
  entry_bytes_ = cst_entry_bytes(group_size);
  data_.clear();
  if (entry_bytes_ > 0) {
    data_.assign(size_t(drives) * stripes * entry_bytes_, 0);
  }
}

void CompactStripeTable::set(uint32_t drive, uint32_t col, uint32_t within_group_id) {
  size_t base = (size_t(drive) * stripes_ + col) * entry_bytes_;
  for (uint32_t b = 0; b < entry_bytes_; ++b) {
    data_[base + b] = static_cast<uint8_t>(within_group_id >> (8 * b));
  }
}

uint32_t CompactStripeTable::get(uint32_t drive, uint32_t col) const {
  size_t base = (size_t(drive) * stripes_ + col) * entry_bytes_;
  uint32_t v = 0;
  for (uint32_t b = 0; b < entry_bytes_; ++b) {
    v |= uint32_t(data_[base + b]) << (8 * b);
  }
  return v;
}

uint64_t cst_max_memory_bits(uint32_t drives, uint32_t stripes_per_segment,
                             uint32_t zones_per_drive, uint32_t group_size) {
  return uint64_t(drives) * stripes_per_segment * zones_per_drive *
         ceil_log2(group_size);
}

Result<PbaCodec> PbaCodec::create(uint32_t drives, uint32_t num_zones,
                                  uint32_t zone_capacity) {
  uint64_t total = uint64_t(drives) * num_zones * zone_capacity;
  if (total >= kUnmappedPba)
    return Status::error(Errc::ConfigError,
                         "array too large for 4-byte physical block addresses");
  PbaCodec c;
  c.num_zones_ = num_zones;
  c.zone_capacity_ = zone_capacity;
  return c;
}

uint32_t PbaCodec::pack(const Pba& p) const {
  return (p.drive * num_zones_ + p.zone) * zone_capacity_ + p.offset;
}

Pba PbaCodec::unpack(uint32_t v) const {
  Pba p;
  p.offset = v % zone_capacity_;
  uint32_t zd = v / zone_capacity_;
  p.zone = zd % num_zones_;
  p.drive = zd / num_zones_;
  return p;
}

}  // namespace zlraid
