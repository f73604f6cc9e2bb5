#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zlraid/common.h"

namespace zlraid {

enum class RaidScheme : uint8_t { Raid0 = 0, Raid01 = 1, Raid4 = 2, Raid5 = 3, Raid6 = 4 };

const char* scheme_name(RaidScheme s);
Result<RaidScheme> scheme_from_name(const std::string& name);

// Data/parity split for an array of `drives` devices. RAID0 stripes across
// all drives, RAID01 mirrors half onto half, RAID4/5 use one parity drive,
// RAID6 two.
struct SchemeShape {
  uint32_t k = 0;
  uint32_t m = 0;
  uint32_t width() const { return k + m; }
};
Result<SchemeShape> scheme_shape(RaidScheme s, uint32_t drives);

// GF(2^8) with polynomial 0x11d, generator 2.
uint8_t gf_mul(uint8_t a, uint8_t b);
uint8_t gf_inv(uint8_t a);
uint8_t gf_pow2(uint32_t e);

// Stripe positions are 0..k-1 (data) then k..k+m-1 (parity). For RAID4/5/6
// parity row r has coefficient 2^(r*j) on data column j, so row 0 is plain
// XOR and row 1 is the classic RAID6 Q polynomial; this generator is MDS for
// m <= 2. RAID01's "parity" rows are verbatim mirrors of the data columns.
uint8_t parity_coef(RaidScheme s, uint32_t r, uint32_t j);

// Fills m parity buffers from k data buffers, all `len` bytes.
void encode_chunks(RaidScheme s, const SchemeShape& shape,
                   std::span<const uint8_t* const> data,
                   std::span<uint8_t* const> parity, size_t len);

struct AvailChunk {
  uint32_t position;     // 0..k+m-1
  const uint8_t* bytes;  // len bytes
};

// Reconstructs the chunk at `missing` from any k available positions
// (RAID01: from the surviving copy). Fails if the available set cannot
// express the missing position.
Status decode_chunk(RaidScheme s, const SchemeShape& shape,
                    std::span<const AvailChunk> avail, uint32_t missing,
                    uint8_t* out, size_t len);

// True if losing exactly the flagged positions is survivable. |failed| <= m
// for RAID4/5/6; RAID01 additionally cannot lose both copies of one column.
bool failure_admissible(RaidScheme s, const SchemeShape& shape,
                        const std::vector<bool>& failed_positions);

// Per-block metadata lanes (LBA, timestamp) are protected with the same code
// applied to their 8-byte little-endian representation; parity row r yields
// the lane stored in parity chunk r's OOB.
uint64_t encode_meta_lane(RaidScheme s, const SchemeShape& shape, uint32_t r,
                          std::span<const uint64_t> data_values);
struct AvailLane {
  uint32_t position;
  uint64_t value;
};
Status decode_meta_lane(RaidScheme s, const SchemeShape& shape,
                        std::span<const AvailLane> avail, uint32_t missing,
                        uint64_t* out);

}  // namespace zlraid
