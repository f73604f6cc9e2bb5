#include "zlraid/erasure.h"

#include <array>
#include <cassert>
#include <cstring>

namespace zlraid {

const char* scheme_name(RaidScheme s) {
  switch (s) {
    case RaidScheme::Raid0: return "raid0";
    case RaidScheme::Raid01: return "raid01";
    case RaidScheme::Raid4: return "raid4";
    case RaidScheme::Raid5: return "raid5";
    case RaidScheme::Raid6: return "raid6";
  }
  return "?";
}

Result<RaidScheme> scheme_from_name(const std::string& name) {
  if (name == "raid0") return RaidScheme::Raid0;
  if (name == "raid01") return RaidScheme::Raid01;
  if (name == "raid4") return RaidScheme::Raid4;
  if (name == "raid5") return RaidScheme::Raid5;
  if (name == "raid6") return RaidScheme::Raid6;
  return Status::error(Errc::ConfigError, "unknown scheme '" + name + "'");
}

Result<SchemeShape> scheme_shape(RaidScheme s, uint32_t drives) {
  if (drives < 2) return Status::error(Errc::ConfigError, "need at least 2 drives");
  switch (s) {
    case RaidScheme::Raid0:
      return SchemeShape{drives, 0};
    case RaidScheme::Raid01:
      if (drives % 2 != 0)
        return Status::error(Errc::ConfigError, "raid01 needs an even drive count");
      return SchemeShape{drives / 2, drives / 2};
    case RaidScheme::Raid4:
    case RaidScheme::Raid5:
      return SchemeShape{drives - 1, 1};
    case RaidScheme::Raid6:
      if (drives < 3)
        return Status::error(Errc::ConfigError, "raid6 needs at least 3 drives");
      return SchemeShape{drives - 2, 2};
  }
  return Status::error(Errc::ConfigError, "bad scheme");
}

namespace {

struct GfTables {
  std::array<uint8_t, 256> log;
  std::array<uint8_t, 256> exp;  // exp[i] = 2^i, period 255
  std::array<std::array<uint8_t, 256>, 256> mul;

  GfTables() {
    uint8_t x = 1;
    for (int i = 0; i < 255; ++i) {
      exp[i] = x;
      log[x] = static_cast<uint8_t>(i);
      uint16_t nx = static_cast<uint16_t>(x) << 1;
      if (nx & 0x100) nx ^= 0x11d;
      x = static_cast<uint8_t>(nx);
    }
    exp[255] = exp[0];
    log[0] = 0;
    for (int a = 0; a < 256; ++a) {
      for (int b = 0; b < 256; ++b) {
        if (a == 0 || b == 0) {
          mul[a][b] = 0;
        } else {
          mul[a][b] = exp[(log[a] + log[b]) % 255];
        }
      }
    }
  }
};

const GfTables& gf() {
  static GfTables t;
  return t;
}

// 64-bit-lane multiply by 2 in GF(2^8), the standard RAID6 trick.
inline uint64_t gf2_mul2_wide(uint64_t v) {
  uint64_t high = v & 0x8080808080808080ull;
  uint64_t shifted = (v << 1) & 0xfefefefefefefefeull;
  return shifted ^ ((high >> 7) * 0x1d);
}

}  // namespace

uint8_t gf_mul(uint8_t a, uint8_t b) { return gf().mul[a][b]; }

uint8_t gf_inv(uint8_t a) {
  assert(a != 0);
  return gf().exp[(255 - gf().log[a]) % 255];
}

uint8_t gf_pow2(uint32_t e) { return gf().exp[e % 255]; }

uint8_t parity_coef(RaidScheme s, uint32_t r, uint32_t j) {
  if (s == RaidScheme::Raid01) return 0;  // mirrors are not generated by the code
  return gf_pow2(r * j);
}

void encode_chunks(RaidScheme s, const SchemeShape& shape,
                   std::span<const uint8_t* const> data,
                   std::span<uint8_t* const> parity, size_t len) {
  assert(data.size() == shape.k && parity.size() == shape.m);
  if (shape.m == 0) return;
  if (s == RaidScheme::Raid01) {
    for (uint32_t j = 0; j < shape.m; ++j) std::memcpy(parity[j], data[j], len);
    return;
  }
  size_t words = len / 8;
  size_t tail = len % 8;
  // Row 0 is plain XOR for every supported scheme.
  {
    uint64_t* p = reinterpret_cast<uint64_t*>(parity[0]);
    std::memcpy(parity[0], data[0], len);
    for (uint32_t j = 1; j < shape.k; ++j) {
      const uint64_t* d = reinterpret_cast<const uint64_t*>(data[j]);
      for (size_t w = 0; w < words; ++w) p[w] ^= d[w];
      for (size_t t = 0; t < tail; ++t)
        parity[0][words * 8 + t] ^= data[j][words * 8 + t];
    }
  }
  if (shape.m >= 2) {
    // Q via Horner: q = ((d_{k-1} * 2) ^ d_{k-2}) * 2 ^ ... ^ d_0.
    uint64_t* q = reinterpret_cast<uint64_t*>(parity[1]);
    std::memcpy(parity[1], data[shape.k - 1], len);
    for (int j = static_cast<int>(shape.k) - 2; j >= 0; --j) {
      const uint64_t* d = reinterpret_cast<const uint64_t*>(data[j]);
      for (size_t w = 0; w < words; ++w) q[w] = gf2_mul2_wide(q[w]) ^ d[w];
      for (size_t t = 0; t < tail; ++t) {
        uint8_t b = parity[1][words * 8 + t];
        parity[1][words * 8 + t] = gf().mul[b][2] ^ data[j][words * 8 + t];
      }
    }
  }
  // Generic path for any further rows (not used by the shipped schemes).
  for (uint32_t r = 2; r < shape.m; ++r) {
    std::memset(parity[r], 0, len);
    for (uint32_t j = 0; j < shape.k; ++j) {
      uint8_t c = parity_coef(s, r, j);
      const auto& row = gf().mul[c];
      for (size_t i = 0; i < len; ++i) parity[r][i] ^= row[data[j][i]];
    }
  }
}

namespace {

// Gauss-Jordan inversion of an n x n matrix over GF(2^8); n <= 8 in practice.
bool gf_invert(std::vector<uint8_t>& a, uint32_t n, std::vector<uint8_t>& inv) {
  inv.assign(size_t(n) * n, 0);
  for (uint32_t i = 0; i < n; ++i) inv[size_t(i) * n + i] = 1;
  for (uint32_t col = 0; col < n; ++col) {
    uint32_t pivot = col;
    while (pivot < n && a[size_t(pivot) * n + col] == 0) ++pivot;
    if (pivot == n) return false;
    if (pivot != col) {
      for (uint32_t j = 0; j < n; ++j) {
        std::swap(a[size_t(pivot) * n + j], a[size_t(col) * n + j]);
        std::swap(inv[size_t(pivot) * n + j], inv[size_t(col) * n + j]);
      }
    }
    uint8_t piv_inv = gf_inv(a[size_t(col) * n + col]);
    for (uint32_t j = 0; j < n; ++j) {
      a[size_t(col) * n + j] = gf_mul(a[size_t(col) * n + j], piv_inv);
      inv[size_t(col) * n + j] = gf_mul(inv[size_t(col) * n + j], piv_inv);
    }
    for (uint32_t row = 0; row < n; ++row) {
      if (row == col) continue;
      uint8_t f = a[size_t(row) * n + col];
      if (f == 0) continue;
      for (uint32_t j = 0; j < n; ++j) {
        a[size_t(row) * n + j] ^= gf_mul(f, a[size_t(col) * n + j]);
        inv[size_t(row) * n + j] ^= gf_mul(f, inv[size_t(col) * n + j]);
      }
    }
  }
  return true;
}

void generator_row(RaidScheme s, const SchemeShape& shape, uint32_t position,
                   uint8_t* row) {
  std::memset(row, 0, shape.k);
  if (position < shape.k) {
    row[position] = 1;
  } else {
    for (uint32_t j = 0; j < shape.k; ++j) row[j] = parity_coef(s, position - shape.k, j);
  }
}

// Coefficients over the available chunks that reproduce position `missing`.
Status solve_coefficients(RaidScheme s, const SchemeShape& shape,
                          std::span<const uint32_t> positions, uint32_t missing,
                          std::vector<uint8_t>& coefs) {
  uint32_t k = shape.k;
  if (positions.size() != k)
    return Status::error(Errc::InvalidArgument, "decode needs exactly k chunks");
  std::vector<uint8_t> a(size_t(k) * k);
  for (uint32_t i = 0; i < k; ++i) generator_row(s, shape, positions[i], &a[size_t(i) * k]);
  std::vector<uint8_t> inv;
  if (!gf_invert(a, k, inv))
    return Status::error(Errc::UnrecoverableCorruption, "chunk set not decodable");
  std::vector<uint8_t> target(k);
  generator_row(s, shape, missing, target.data());
  coefs.assign(k, 0);
  // coefs = target * inv
  for (uint32_t c = 0; c < k; ++c) {
    uint8_t acc = 0;
    for (uint32_t j = 0; j < k; ++j) acc ^= gf_mul(target[j], inv[size_t(j) * k + c]);
    coefs[c] = acc;
  }
  return Status::success();
}

}  // namespace

Status decode_chunk(RaidScheme s, const SchemeShape& shape,
                    std::span<const AvailChunk> avail, uint32_t missing,
                    uint8_t* out, size_t len) {
  if (s == RaidScheme::Raid01) {
    uint32_t want = missing < shape.k ? missing + shape.k : missing - shape.k;
    for (const AvailChunk& c : avail) {
      if (c.position == want || c.position == missing) {
        std::memcpy(out, c.bytes, len);
        return Status::success();
      }
    }
    return Status::error(Errc::UnrecoverableCorruption, "both mirror copies lost");
  }
  if (s == RaidScheme::Raid0)
    return Status::error(Errc::UnrecoverableCorruption, "raid0 cannot decode");

  std::vector<uint32_t> positions(shape.k);
  if (avail.size() < shape.k)
    return Status::error(Errc::UnrecoverableCorruption, "not enough chunks to decode");
  for (uint32_t i = 0; i < shape.k; ++i) positions[i] = avail[i].position;
  std::vector<uint8_t> coefs;
  Status st = solve_coefficients(s, shape, positions, missing, coefs);
  if (!st.ok()) return st;
  std::memset(out, 0, len);
  for (uint32_t c = 0; c < shape.k; ++c) {
    if (coefs[c] == 0) continue;
    const auto& row = gf().mul[coefs[c]];
    const uint8_t* src = avail[c].bytes;
    if (coefs[c] == 1) {
      const uint64_t* s64 = reinterpret_cast<const uint64_t*>(src);
      uint64_t* o64 = reinterpret_cast<uint64_t*>(out);
      size_t words = len / 8;
      for (size_t w = 0; w < words; ++w) o64[w] ^= s64[w];
      for (size_t t = words * 8; t < len; ++t) out[t] ^= src[t];
    } else {
      for (size_t i = 0; i < len; ++i) out[i] ^= row[src[i]];
    }
  }
  return Status::success();
}

bool failure_admissible(RaidScheme s, const SchemeShape& shape,
                        const std::vector<bool>& failed_positions) {
  uint32_t failures = 0;
  for (bool f : failed_positions)
    if (f) ++failures;
  if (failures == 0) return true;
  if (s == RaidScheme::Raid0) return false;
  if (failures > shape.m) return false;
  if (s == RaidScheme::Raid01) {
    for (uint32_t j = 0; j < shape.k; ++j) {
      if (failed_positions[j] && failed_positions[j + shape.k]) return false;
    }
  }
  return true;
}

uint64_t encode_meta_lane(RaidScheme s, const SchemeShape& shape, uint32_t r,
                          std::span<const uint64_t> data_values) {
  assert(data_values.size() == shape.k);
  if (s == RaidScheme::Raid01) return data_values[r];
  uint64_t acc = 0;
  for (uint32_t j = 0; j < shape.k; ++j) {
    uint8_t c = parity_coef(s, r, j);
    if (c == 1) {
      acc ^= data_values[j];
    } else if (c != 0) {
      uint8_t in[8], outb[8];
      put_u64(in, data_values[j]);
      const auto& row = gf().mul[c];
      for (int i = 0; i < 8; ++i) outb[i] = row[in[i]];
      acc ^= get_u64(outb);
    }
  }
  return acc;
}

Status decode_meta_lane(RaidScheme s, const SchemeShape& shape,
                        std::span<const AvailLane> avail, uint32_t missing,
                        uint64_t* out) {
  std::vector<uint8_t> bufs(avail.size() * 8);
  std::vector<AvailChunk> chunks(avail.size());
  for (size_t i = 0; i < avail.size(); ++i) {
    put_u64(&bufs[i * 8], avail[i].value);
    chunks[i] = AvailChunk{avail[i].position, &bufs[i * 8]};
  }
  uint8_t outb[8];
  Status st = decode_chunk(s, shape, chunks, missing, outb, 8);
  if (!st.ok()) return st;
  *out = get_u64(outb);
  return Status::success();
}

}  // namespace zlraid
