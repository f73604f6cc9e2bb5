#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include "zlraid/common.h"
#include "zlraid/config.h"
#include "zlraid/sim.h"

namespace zlraid {

// Timing/geometry knobs for one simulated ZNS drive. A zone spans
// chips_per_zone flash chips; block at zone offset o occupies chip
// (zone * chips_per_zone + o % chips_per_zone) % (channels * chips_per_channel).
// Per-chip page programs/reads serialize; a command completes when its last
// block's chip finishes. With the defaults one zone sustains
// 16 * 4096 B / 140 us = 446.4 MiB/s.
struct DeviceGeometry {
  uint32_t num_zones = 64;
  uint32_t zone_capacity_blocks = 4096;
  uint32_t channels = 4;
  uint32_t chips_per_channel = 4;
  uint32_t chips_per_zone = 16;
  uint32_t max_open_zones = 16;
  SimTime page_write_latency_ns = 140'000;
  SimTime page_read_latency_ns = 65'000;
  // Models firmware slowdown of Zone Append with many open zones:
  // each append pays penalty * (open_zones - 1) extra. Off by default.
  SimTime append_penalty_per_open_zone_ns = 0;

  uint32_t total_chips() const { return channels * chips_per_channel; }
  static Result<DeviceGeometry> from_config(KvConfig& cfg);
  Status validate() const;
};

enum class ZoneState : uint8_t { Empty = 0, Open = 1, Full = 2 };

struct ZoneInfo {
  ZoneState state = ZoneState::Empty;
  uint32_t write_pointer = 0;  // next reservable offset
  uint32_t capacity = 0;
};

enum class CmdKind : uint8_t { Write, Append, Read };

struct ReadBlockOut {
  std::vector<uint8_t> payload;        // kBlockSize bytes
  std::array<uint8_t, kOobSize> oob{};
};

struct Completion {
  uint64_t command_id = 0;
  CmdKind kind = CmdKind::Write;
  Errc status = Errc::Ok;
  uint32_t zone = 0;
  uint64_t offset = 0;  // device-assigned for appends
  uint32_t num_blocks = 0;
  SimTime submitted_at = 0;
  SimTime completed_at = 0;
  std::vector<ReadBlockOut> blocks;  // reads only
};

// Observer for property tests and crash-point enumeration. Fires on submission
// (completed=false) and again when the command's effects become durable.
struct CommandRecord {
  uint64_t command_id;
  uint32_t drive;
  CmdKind kind;
  uint32_t zone;
  uint64_t offset;
  uint32_t num_blocks;
  bool completed;
  SimTime time;
};

// One simulated ZNS drive. All commands are asynchronous: submit_* returns a
// command id (or a synchronous precondition failure) and the completion is
// delivered through the callback on the shared SimClock. Data becomes durable
// only when the completion fires; a crash snapshot keeps exactly the blocks of
// completed commands.
class ZnsDevice {
 public:
  using CompletionCb = std::function<void(const Completion&)>;
  using Observer = std::function<void(const CommandRecord&)>;

  ZnsDevice(const DeviceGeometry& geo, SimClock* clock, uint32_t drive_id);

  const DeviceGeometry& geometry() const { return geo_; }
  uint32_t drive_id() const { return drive_id_; }

  // data is n*4096 bytes, oob n*64 bytes. Zone Write: offset must equal the
  // write pointer and only one write/append may be outstanding per zone.
  Result<uint64_t> submit_write(uint32_t zone, uint32_t offset,
                                std::span<const uint8_t> data,
                                std::span<const uint8_t> oob, CompletionCb cb);
  // Zone Append: offset is reserved at submission and reported on completion.
  // Multiple appends may be in flight on one zone.
  Result<uint64_t> submit_append(uint32_t zone, std::span<const uint8_t> data,
                                 std::span<const uint8_t> oob, CompletionCb cb);
  Result<uint64_t> submit_read(uint32_t zone, uint32_t offset, uint32_t nblocks,
                               CompletionCb cb);

  Status reset_zone(uint32_t zone);
  Status finish_zone(uint32_t zone);
  ZoneInfo zone_info(uint32_t zone) const;
  uint32_t open_zone_count() const { return open_zones_; }

  // After fail() every subsequent submission completes with DriveFailed and
  // state ops fail; in-flight commands still land (they already left the host).
  void fail() { failed_ = true; }
  bool is_failed() const { return failed_; }

  // Durable-view persistence: in-flight reservations are dropped, each zone is
  // stored as its written prefix. See docs/format.md.
  Status serialize(std::ostream& out) const;
  static Result<std::unique_ptr<ZnsDevice>> deserialize(std::istream& in,
                                                        SimClock* clock);
  // Same durable cut without the byte round-trip (used by crash tests).
  std::unique_ptr<ZnsDevice> snapshot_durable(SimClock* clock) const;

  void set_observer(Observer obs) { observer_ = std::move(obs); }
  uint64_t completions_applied() const { return completions_applied_; }

  // Test/tooling backdoor: durable bytes without timing or state checks.
  bool debug_peek(uint32_t zone, uint32_t offset, std::span<uint8_t> payload,
                  std::span<uint8_t> oob) const;

 private:
  // Payload and OOB with trailing zeros trimmed; bit-exact on expansion.
  struct PackedBlock {
    std::unique_ptr<uint8_t[]> buf;
    uint16_t payload_len = 0;
    uint8_t oob_len = 0;
    void store(const uint8_t* payload, const uint8_t* oob);
    void load(uint8_t* payload, uint8_t* oob) const;
    PackedBlock clone() const;
  };

  struct Zone {
    ZoneState state = ZoneState::Empty;
    uint32_t reserved_wp = 0;
    bool finished = false;
    std::vector<PackedBlock> blocks;  // sized lazily to capacity
    std::vector<bool> written;        // durable flags
    uint32_t written_count = 0;
    bool write_outstanding = false;
    uint32_t appends_outstanding = 0;
    uint32_t durable_high() const;  // 1 + highest written index
  };

  DeviceGeometry geo_;
  SimClock* clock_;
  uint32_t drive_id_;
  std::vector<Zone> zones_;
  std::vector<SimTime> chip_busy_until_;
  uint32_t open_zones_ = 0;
  bool failed_ = false;
  uint64_t next_cmd_id_ = 1;
  uint64_t completions_applied_ = 0;
  Observer observer_;

  SimTime occupy_chips(uint32_t zone, uint32_t offset, uint32_t nblocks,
                       SimTime latency);
  Result<uint64_t> fail_submission(CmdKind kind, uint32_t zone, CompletionCb cb);
  void open_for_write(Zone& z);
  void record(uint64_t id, CmdKind kind, uint32_t zone, uint64_t offset,
              uint32_t nblocks, bool completed);
};

}  // namespace zlraid
