#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zlraid/common.h"
#include "zlraid/erasure.h"

namespace zlraid {

// Per-block metadata kept in the 64-byte OOB area and replayed into footers.
// 20 bytes on media: lba u64, timestamp u64, stripe_id u32 (little-endian).
// lba is a byte address with the low 12 bits zero for user blocks; mapping
// blocks set bit 0; kInvalidLba marks zero-fill padding. timestamp comes from
// the volume's logical write counter (starts at 1, 0 means "never written",
// which is what erased flash reads back as).
struct BlockMeta {
  uint64_t lba = 0;
  uint64_t timestamp = 0;
  uint32_t stripe_id = 0;

  bool is_unwritten() const { return timestamp == 0; }
  bool is_padding() const { return lba == kInvalidLba; }
  bool is_mapping_block() const { return lba != kInvalidLba && (lba & 1) != 0; }
  bool is_user_block() const {
    return timestamp != 0 && lba != kInvalidLba && (lba & 1) == 0;
  }
};

// Every block written as part of a stripe also carries a presence marker one
// byte past the 20-byte record. Parity blocks store coded lanes in the lba and
// timestamp fields, and a coded lane can legitimately be zero, so "all-zero
// OOB" alone cannot distinguish a durable parity block from never-written
// flash. The marker can: erased blocks read back zero there.
inline constexpr uint8_t kOobMarkerValue = 0xA5;
inline constexpr size_t kOobMarkerOffset = kBlockMetaSize;
inline bool oob_present(std::span<const uint8_t> oob) {
  return oob.size() > kOobMarkerOffset && oob[kOobMarkerOffset] == kOobMarkerValue;
}

// Footer entry for a column lost in a crash (written when recovery closes a
// damaged segment). Real stripe ids are bounded by the per-zone stripe count,
// so this value can never collide with one.
inline constexpr uint32_t kDeadStripeId = 0xFFFFFFFFu;

void serialize_block_meta(const BlockMeta& m, std::span<uint8_t> oob);
BlockMeta parse_block_meta(std::span<const uint8_t> oob);

inline uint64_t mapping_block_lba(uint64_t group_index) {
  return (group_index * kL2pGroupEntries * kBlockSize) | 1;
}
inline uint64_t mapping_block_group(uint64_t lba) {
  return (lba & ~1ull) / kBlockSize / kL2pGroupEntries;
}

// A segment carves each of its k+m zones into header / data / footer regions.
// The header takes one chunk (C blocks); the data region holds S chunks; the
// footer holds the zone's S*C block-metadata entries at 204 per block. S is
// the largest value with C + S*C + ceil(S*C/204) <= zone capacity.
struct SegmentGeometry {
  uint32_t zone_capacity = 0;
  uint32_t chunk_blocks = 0;   // C
  uint32_t header_blocks = 0;  // == C
  uint32_t stripes = 0;        // S
  uint32_t footer_blocks = 0;

  uint32_t data_blocks() const { return stripes * chunk_blocks; }
  uint32_t data_start() const { return header_blocks; }
  uint32_t footer_start() const { return header_blocks + data_blocks(); }
  uint32_t used_blocks() const { return footer_start() + footer_blocks; }
};

Result<SegmentGeometry> compute_segment_geometry(uint32_t zone_capacity,
                                                 uint32_t chunk_blocks);

// Stripe-group arithmetic. Groups are `group_size` consecutive stripe
// sequence numbers; the last group may be short.
inline uint32_t group_of_stripe(uint32_t stripe_seq, uint32_t group_size) {
  return stripe_seq / group_size;
}
inline uint32_t group_first_stripe(uint32_t group, uint32_t group_size) {
  return group * group_size;
}
inline uint32_t group_stripe_count(uint32_t group, uint32_t group_size,
                                   uint32_t total_stripes) {
  uint32_t first = group_first_stripe(group, group_size);
  uint32_t remain = total_stripes - first;
  return remain < group_size ? remain : group_size;
}

// Parity placement. RAID4 and RAID01 pin parity/mirror chunks to the last m
// drives; RAID5/6 rotate left by one drive per stripe so parity load spreads.
// Position p is the stripe-internal index (0..k-1 data, then parity).
uint32_t drive_for_position(RaidScheme s, const SchemeShape& shape,
                            uint32_t stripe_seq, uint32_t position);
uint32_t position_for_drive(RaidScheme s, const SchemeShape& shape,
                            uint32_t stripe_seq, uint32_t drive);

// Segment descriptor as persisted in each zone's header block.
enum class SegMode : uint8_t { Append = 0, ZoneWrite = 1 };
enum class SegClass : uint8_t { Small = 0, Large = 1 };

struct SegmentDescriptor {
  uint64_t segment_id = 0;
  RaidScheme scheme = RaidScheme::Raid5;
  SegMode mode = SegMode::Append;
  SegClass seg_class = SegClass::Small;
  uint16_t k = 0;
  uint16_t m = 0;
  uint32_t chunk_blocks = 0;
  uint32_t group_size = 0;  // 1 for ZoneWrite segments
  uint32_t stripes = 0;
  uint64_t created_ts = 0;
  std::vector<uint32_t> zones;  // zone id on drive i

  uint32_t width() const { return k + m; }
};

void serialize_header_block(const SegmentDescriptor& d, std::span<uint8_t> out);
Result<SegmentDescriptor> parse_header_block(std::span<const uint8_t> block);

void serialize_footer_block(std::span<const BlockMeta> metas, uint32_t block_index,
                            std::span<uint8_t> out);
Status parse_footer_block(std::span<const uint8_t> block, uint32_t expect_index,
                          std::vector<BlockMeta>& out);

// Compact Stripe Table: per segment, (k+m) x S entries of the within-group
// stripe id (stripe_seq % G), byte-packed at ceil(ceil(log2 G)/8) bytes each.
class CompactStripeTable {
 public:
  void init(uint32_t drives, uint32_t stripes, uint32_t group_size);
  bool enabled() const { return entry_bytes_ > 0; }
  void set(uint32_t drive, uint32_t col, uint32_t within_group_id);
  uint32_t get(uint32_t drive, uint32_t col) const;
  uint64_t memory_bytes() const { return data_.size(); }
  uint32_t entry_bytes() const { return entry_bytes_; }

 private:
  uint32_t stripes_ = 0;
  uint32_t entry_bytes_ = 0;
  std::vector<uint8_t> data_;
};

uint32_t cst_entry_bytes(uint32_t group_size);
// Worst-case CST footprint if every zone belonged to an open/sealed segment,
// counted at bit granularity: drives * S * zones_per_drive * ceil(log2 G).
uint64_t cst_max_memory_bits(uint32_t drives, uint32_t stripes_per_segment,
                             uint32_t zones_per_drive, uint32_t group_size);

// 4-byte physical block address used by the L2P table and mapping blocks:
// pba = (drive * num_zones + zone) * zone_capacity + offset. The whole array
// must fit below 2^32 - 1 (0xffffffff is the unmapped sentinel).
struct Pba {
  uint32_t drive = 0;
  uint32_t zone = 0;
  uint32_t offset = 0;
};

class PbaCodec {
 public:
  PbaCodec() = default;
  static Result<PbaCodec> create(uint32_t drives, uint32_t num_zones,
                                 uint32_t zone_capacity);
  uint32_t pack(const Pba& p) const;
  Pba unpack(uint32_t v) const;

 private:
  uint32_t num_zones_ = 0;
  uint32_t zone_capacity_ = 0;
};

}  // namespace zlraid
