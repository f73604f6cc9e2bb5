#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>

namespace zlraid {

// Simulated time in nanoseconds. Integer so runs are bit-reproducible.
using SimTime = uint64_t;

constexpr uint32_t kBlockSize = 4096;
constexpr uint32_t kOobSize = 64;
// Entries of block metadata (20 bytes each) that fit in one 4-KiB footer block.
constexpr uint32_t kMetaPerBlock = 204;
constexpr uint32_t kBlockMetaSize = 20;
// LBA sentinel stamped into zero-filled stripe padding.
constexpr uint64_t kInvalidLba = ~0ull;
// L2P entry value for an unmapped logical block.
constexpr uint32_t kUnmappedPba = 0xFFFFFFFFu;
// Entries per L2P entry group == entries per 4-KiB mapping block.
constexpr uint32_t kL2pGroupEntries = 1024;

enum class Errc : uint8_t {
  Ok = 0,
  InvalidArgument,
  ZoneStateError,          // write to Full zone, offset != wp, read past wp, ...
  TooManyOpenZones,
  ConcurrentWriteConflict, // second outstanding write, or append vs write overlap
  DriveFailed,
  ImageFormatError,
  ConfigError,
  UnmappedLba,
  NoFreeZones,
  CorruptHeader,
  CorruptFooter,
  UnrecoverableCorruption,
  TraceParseError,
  VerifyFailed,
};

const char* errc_name(Errc e);

struct Status {
  Errc code = Errc::Ok;
  std::string message;

  bool ok() const { return code == Errc::Ok; }
  static Status success() { return {}; }
  static Status error(Errc c, std::string msg = {}) { return {c, std::move(msg)}; }
};

template <typename T>
struct Result {
  Status status;
  std::optional<T> value;

  Result(T v) : value(std::move(v)) {}
  Result(Status s) : status(std::move(s)) {}
  bool ok() const { return status.ok(); }
  T& operator*() { return *value; }
  const T& operator*() const { return *value; }
  T* operator->() { return &*value; }
  const T* operator->() const { return &*value; }
};

// Little-endian field accessors for the on-device formats.
inline void put_u16(uint8_t* p, uint16_t v) { std::memcpy(p, &v, 2); }
inline void put_u32(uint8_t* p, uint32_t v) { std::memcpy(p, &v, 4); }
inline void put_u64(uint8_t* p, uint64_t v) { std::memcpy(p, &v, 8); }
inline uint16_t get_u16(const uint8_t* p) { uint16_t v; std::memcpy(&v, p, 2); return v; }
inline uint32_t get_u32(const uint8_t* p) { uint32_t v; std::memcpy(&v, p, 4); return v; }
inline uint64_t get_u64(const uint8_t* p) { uint64_t v; std::memcpy(&v, p, 8); return v; }

inline uint32_t ceil_div_u32(uint64_t a, uint64_t b) {
  return static_cast<uint32_t>((a + b - 1) / b);
}

inline uint32_t ceil_log2(uint64_t v) {
  uint32_t bits = 0;
  uint64_t cap = 1;
  while (cap < v) {
    cap <<= 1;
    ++bits;
  }
  return bits;
}

// splitmix64: tiny deterministic mixer used for payload stamps and seeding.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace zlraid
