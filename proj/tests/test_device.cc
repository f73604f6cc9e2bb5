// Simulated ZNS drive: timing model, zone-state rules, persistence.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <sstream>
#include <vector>

#include "zlraid/zns_device.h"

using namespace zlraid;

namespace {

std::vector<uint8_t> pattern_blocks(uint32_t n, uint8_t tag) {
  std::vector<uint8_t> v(static_cast<size_t>(n) * kBlockSize);
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<uint8_t>(tag + i * 131);
  return v;
}

std::vector<uint8_t> pattern_oob(uint32_t n, uint8_t tag) {
  std::vector<uint8_t> v(static_cast<size_t>(n) * kOobSize);
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<uint8_t>(tag ^ (i * 29));
  return v;
}

struct Harness {
  DeviceGeometry geo;
  SimClock clock;
  ZnsDevice dev;

  explicit Harness(DeviceGeometry g = {}) : geo(g), dev(geo, &clock, 0) {}

  // Append and return (offset, completion time).
  std::pair<uint64_t, SimTime> append_now(uint32_t zone, uint32_t nblocks,
                                          uint8_t tag = 0x11) {
    auto data = pattern_blocks(nblocks, tag);
    auto oob = pattern_oob(nblocks, tag);
    uint64_t off = ~0ull;
    SimTime done = 0;
    auto r = dev.submit_append(zone, data, oob, [&](const Completion& c) {
      REQUIRE(c.status == Errc::Ok);
      off = c.offset;
      done = c.completed_at;
    });
    REQUIRE(r.ok());
    clock.run_until_idle();
    return {off, done};
  }
};

}  // namespace

TEST_CASE("single block write completes at exactly one page program") {
  Harness h;
  auto data = pattern_blocks(1, 1);
  auto oob = pattern_oob(1, 1);
  SimTime done = 0;
  auto r = h.dev.submit_write(0, 0, data, oob, [&](const Completion& c) {
    CHECK(c.status == Errc::Ok);
    CHECK(c.kind == CmdKind::Write);
    CHECK(c.zone == 0);
    CHECK(c.offset == 0);
    CHECK(c.num_blocks == 1);
    CHECK(c.submitted_at == 0);
    done = c.completed_at;
  });
  REQUIRE(r.ok());
  h.clock.run_until_idle();
  CHECK(done == 140'000);
  CHECK(h.dev.zone_info(0).state == ZoneState::Open);
  CHECK(h.dev.zone_info(0).write_pointer == 1);
}

TEST_CASE("one zone spans 16 chips: 16 single-block appends finish together") {
  Harness h;
  std::vector<SimTime> done;
  std::vector<uint64_t> offsets;
  for (int i = 0; i < 16; ++i) {
    auto data = pattern_blocks(1, static_cast<uint8_t>(i));
    auto oob = pattern_oob(1, static_cast<uint8_t>(i));
    auto r = h.dev.submit_append(3, data, oob, [&](const Completion& c) {
      REQUIRE(c.status == Errc::Ok);
      done.push_back(c.completed_at);
      offsets.push_back(c.offset);
    });
    REQUIRE(r.ok());
  }
  h.clock.run_until_idle();
  REQUIRE(done.size() == 16);
  for (SimTime t : done) CHECK(t == 140'000);
  // Device-assigned offsets are the reservation order.
  std::sort(offsets.begin(), offsets.end());
  for (uint64_t i = 0; i < 16; ++i) CHECK(offsets[i] == i);

  // That is the documented per-zone ceiling: 16 blocks / 140 us = 446.4 MiB/s.
  double mibs = 16.0 * kBlockSize / (140e-6) / (1024.0 * 1024.0);
  CHECK(mibs == doctest::Approx(446.4).epsilon(0.001));
}

TEST_CASE("17th block of a burst waits for a chip") {
  Harness h;
  std::vector<SimTime> done;
  for (int i = 0; i < 32; ++i) {
    auto data = pattern_blocks(1, static_cast<uint8_t>(i));
    auto oob = pattern_oob(1, static_cast<uint8_t>(i));
    REQUIRE(h.dev
                .submit_append(0, data, oob,
                               [&](const Completion& c) {
                                 REQUIRE(c.status == Errc::Ok);
                                 done.push_back(c.completed_at);
                               })
                .ok());
  }
  h.clock.run_until_idle();
  REQUIRE(done.size() == 32);
  std::sort(done.begin(), done.end());
  for (int i = 0; i < 16; ++i) CHECK(done[i] == 140'000);
  for (int i = 16; i < 32; ++i) CHECK(done[i] == 280'000);
}

TEST_CASE("a 16-block command is as fast as one block; 17 blocks take two rounds") {
  Harness h;
  auto [off16, t16] = h.append_now(0, 16);
  CHECK(off16 == 0);
  CHECK(t16 == 140'000);
  Harness h2;
  auto [off17, t17] = h2.append_now(0, 17);
  CHECK(off17 == 0);
  CHECK(t17 == 280'000);
}

TEST_CASE("zones hashed to the same chips contend; distinct chips run parallel") {
  // 16 total chips and chips_per_zone=16 means every zone maps onto the same
  // chip set.
  Harness shared;
  std::vector<SimTime> done;
  for (uint32_t z = 0; z < 2; ++z) {
    auto data = pattern_blocks(16, static_cast<uint8_t>(z));
    auto oob = pattern_oob(16, static_cast<uint8_t>(z));
    REQUIRE(shared.dev
                .submit_append(z, data, oob,
                               [&](const Completion& c) {
                                 REQUIRE(c.status == Errc::Ok);
                                 done.push_back(c.completed_at);
                               })
                .ok());
  }
  shared.clock.run_until_idle();
  REQUIRE(done.size() == 2);
  CHECK(std::max(done[0], done[1]) == 280'000);

  // Double the chip count: zone 1 lands on chips 16..31, fully parallel.
  DeviceGeometry wide;
  wide.channels = 8;  // 32 chips
  Harness par(wide);
  done.clear();
  for (uint32_t z = 0; z < 2; ++z) {
    auto data = pattern_blocks(16, static_cast<uint8_t>(z));
    auto oob = pattern_oob(16, static_cast<uint8_t>(z));
    REQUIRE(par.dev
                .submit_append(z, data, oob,
                               [&](const Completion& c) {
                                 REQUIRE(c.status == Errc::Ok);
                                 done.push_back(c.completed_at);
                               })
                .ok());
  }
  par.clock.run_until_idle();
  REQUIRE(done.size() == 2);
  CHECK(done[0] == 140'000);
  CHECK(done[1] == 140'000);
}

TEST_CASE("dependent zone writes serialize at one program each") {
  Harness h;
  SimTime last = 0;
  std::function<void(uint32_t)> write_next = [&](uint32_t i) {
    if (i == 5) return;
    auto data = pattern_blocks(1, static_cast<uint8_t>(i));
    auto oob = pattern_oob(1, static_cast<uint8_t>(i));
    REQUIRE(h.dev
                .submit_write(0, i, data, oob,
                              [&, i](const Completion& c) {
                                REQUIRE(c.status == Errc::Ok);
                                last = c.completed_at;
                                write_next(i + 1);
                              })
                .ok());
  };
  write_next(0);
  h.clock.run_until_idle();
  CHECK(last == 5 * 140'000);
  CHECK(h.dev.zone_info(0).write_pointer == 5);
}

TEST_CASE("reads cost the page read latency and return payload plus OOB") {
  Harness h;
  auto data = pattern_blocks(3, 0x42);
  auto oob = pattern_oob(3, 0x42);
  REQUIRE(h.dev.submit_write(1, 0, data, oob, [](const Completion&) {}).ok());
  h.clock.run_until_idle();
  SimTime start = h.clock.now();
  bool seen = false;
  auto r = h.dev.submit_read(1, 1, 2, [&](const Completion& c) {
    REQUIRE(c.status == Errc::Ok);
    REQUIRE(c.blocks.size() == 2);
    for (uint32_t b = 0; b < 2; ++b) {
      const auto& blk = c.blocks[b];
      REQUIRE(blk.payload.size() == kBlockSize);
      CHECK(std::equal(blk.payload.begin(), blk.payload.end(),
                       data.begin() + (1 + b) * kBlockSize));
      CHECK(std::equal(blk.oob.begin(), blk.oob.end(),
                       oob.begin() + (1 + b) * kOobSize));
    }
    CHECK(c.completed_at == start + 65'000);
    seen = true;
  });
  REQUIRE(r.ok());
  h.clock.run_until_idle();
  CHECK(seen);
}

TEST_CASE("zone write rules") {
  Harness h;
  auto data = pattern_blocks(1, 9);
  auto oob = pattern_oob(1, 9);

  SUBCASE("offset must equal the write pointer") {
    auto r = h.dev.submit_write(0, 3, data, oob, [](const Completion&) {});
    CHECK_FALSE(r.ok());
    CHECK(r.status.code == Errc::ZoneStateError);
  }
  SUBCASE("second outstanding write to one zone conflicts") {
    REQUIRE(h.dev.submit_write(0, 0, data, oob, [](const Completion&) {}).ok());
    auto r = h.dev.submit_write(0, 1, data, oob, [](const Completion&) {});
    CHECK_FALSE(r.ok());
    CHECK(r.status.code == Errc::ConcurrentWriteConflict);
    h.clock.run_until_idle();
    // After completion the zone takes the next write.
    CHECK(h.dev.submit_write(0, 1, data, oob, [](const Completion&) {}).ok());
    h.clock.run_until_idle();
  }
  SUBCASE("append while a zone write is outstanding conflicts") {
    REQUIRE(h.dev.submit_write(0, 0, data, oob, [](const Completion&) {}).ok());
    auto r = h.dev.submit_append(0, data, oob, [](const Completion&) {});
    CHECK_FALSE(r.ok());
    CHECK(r.status.code == Errc::ConcurrentWriteConflict);
    h.clock.run_until_idle();
  }
  SUBCASE("writes to a finished zone fail") {
    REQUIRE(h.dev.submit_write(0, 0, data, oob, [](const Completion&) {}).ok());
    h.clock.run_until_idle();
    REQUIRE(h.dev.finish_zone(0).ok());
    CHECK(h.dev.zone_info(0).state == ZoneState::Full);
    auto r = h.dev.submit_write(0, 1, data, oob, [](const Completion&) {});
    CHECK_FALSE(r.ok());
    CHECK(r.status.code == Errc::ZoneStateError);
  }
  SUBCASE("reads past the write pointer fail") {
    REQUIRE(h.dev.submit_write(0, 0, data, oob, [](const Completion&) {}).ok());
    h.clock.run_until_idle();
    auto r = h.dev.submit_read(0, 0, 2, [](const Completion&) {});
    CHECK_FALSE(r.ok());
    CHECK(r.status.code == Errc::ZoneStateError);
  }
}

TEST_CASE("appends reserve space and reject overflow") {
  DeviceGeometry g;
  g.zone_capacity_blocks = 8;
  Harness h(g);
  auto data = pattern_blocks(6, 1);
  auto oob = pattern_oob(6, 1);
  REQUIRE(h.dev.submit_append(0, data, oob, [](const Completion&) {}).ok());
  // 6 of 8 blocks reserved while still in flight; 3 more do not fit.
  auto r = h.dev.submit_append(0, pattern_blocks(3, 2), pattern_oob(3, 2),
                               [](const Completion&) {});
  CHECK_FALSE(r.ok());
  CHECK(r.status.code == Errc::ZoneStateError);
  // 2 more do.
  CHECK(h.dev
            .submit_append(0, pattern_blocks(2, 3), pattern_oob(2, 3),
                           [](const Completion&) {})
            .ok());
  h.clock.run_until_idle();
  CHECK(h.dev.zone_info(0).state == ZoneState::Full);
}

TEST_CASE("open zone limit") {
  DeviceGeometry g;
  g.max_open_zones = 2;
  Harness h(g);
  auto data = pattern_blocks(1, 7);
  auto oob = pattern_oob(1, 7);
  REQUIRE(h.dev.submit_write(0, 0, data, oob, [](const Completion&) {}).ok());
  REQUIRE(h.dev.submit_write(1, 0, data, oob, [](const Completion&) {}).ok());
  CHECK(h.dev.open_zone_count() == 2);
  auto r = h.dev.submit_write(2, 0, data, oob, [](const Completion&) {});
  CHECK_FALSE(r.ok());
  CHECK(r.status.code == Errc::TooManyOpenZones);
  h.clock.run_until_idle();
  // Filling a zone closes it and frees a slot.
  REQUIRE(h.dev.finish_zone(0).ok());
  CHECK(h.dev.open_zone_count() == 1);
  CHECK(h.dev.submit_write(2, 0, data, oob, [](const Completion&) {}).ok());
  h.clock.run_until_idle();
}

TEST_CASE("reset returns a zone to empty and reopens it for writes") {
  Harness h;
  auto data = pattern_blocks(2, 5);
  auto oob = pattern_oob(2, 5);
  REQUIRE(h.dev.submit_write(4, 0, data, oob, [](const Completion&) {}).ok());
  h.clock.run_until_idle();
  REQUIRE(h.dev.finish_zone(4).ok());
  REQUIRE(h.dev.reset_zone(4).ok());
  auto zi = h.dev.zone_info(4);
  CHECK(zi.state == ZoneState::Empty);
  CHECK(zi.write_pointer == 0);
  std::array<uint8_t, kBlockSize> payload;
  std::array<uint8_t, kOobSize> ob;
  CHECK_FALSE(h.dev.debug_peek(4, 0, payload, ob));
  CHECK(h.dev.submit_write(4, 0, data, oob, [](const Completion&) {}).ok());
  h.clock.run_until_idle();
  CHECK(h.dev.zone_info(4).write_pointer == 2);
}

TEST_CASE("append penalty scales with other open zones") {
  DeviceGeometry g;
  g.append_penalty_per_open_zone_ns = 10'000;
  g.channels = 8;  // plenty of chips so only the penalty differs
  Harness h(g);
  auto [o0, t0] = h.append_now(0, 1);
  CHECK(t0 == 140'000);  // first zone: no other zone open
  SimTime base = h.clock.now();
  auto [o1, t1] = h.append_now(1, 1);
  CHECK(t1 - base == 150'000);  // one other open zone
  base = h.clock.now();
  auto [o2, t2] = h.append_now(2, 1);
  CHECK(t2 - base == 160'000);  // two others
  (void)o0; (void)o1; (void)o2;
}

TEST_CASE("failed drive: in-flight lands, new submissions report the failure") {
  Harness h;
  auto data = pattern_blocks(1, 3);
  auto oob = pattern_oob(1, 3);
  Errc inflight = Errc::ConfigError;
  REQUIRE(h.dev
              .submit_write(0, 0, data, oob,
                            [&](const Completion& c) { inflight = c.status; })
              .ok());
  h.dev.fail();
  CHECK(h.dev.is_failed());
  Errc later = Errc::Ok;
  auto r = h.dev.submit_write(1, 0, data, oob,
                              [&](const Completion& c) { later = c.status; });
  REQUIRE(r.ok());  // submission is accepted, the completion carries the error
  h.clock.run_until_idle();
  CHECK(inflight == Errc::Ok);
  CHECK(later == Errc::DriveFailed);
  std::array<uint8_t, kBlockSize> payload;
  std::array<uint8_t, kOobSize> ob;
  CHECK(h.dev.debug_peek(0, 0, payload, ob));
  CHECK(h.dev.reset_zone(2).code == Errc::DriveFailed);
}

TEST_CASE("serialize round-trips the durable state") {
  Harness h;
  auto data = pattern_blocks(5, 0x77);
  auto oob = pattern_oob(5, 0x77);
  REQUIRE(h.dev.submit_write(2, 0, data, oob, [](const Completion&) {}).ok());
  h.clock.run_until_idle();
  REQUIRE(h.dev.finish_zone(2).ok());

  std::ostringstream out;
  REQUIRE(h.dev.serialize(out).ok());
  std::istringstream in(out.str());
  SimClock clock2;
  auto dup = ZnsDevice::deserialize(in, &clock2);
  REQUIRE(dup.ok());
  CHECK((*dup)->geometry().num_zones == h.geo.num_zones);
  CHECK((*dup)->zone_info(2).state == ZoneState::Full);
  CHECK((*dup)->zone_info(2).write_pointer == 5);
  for (uint32_t i = 0; i < 5; ++i) {
    std::array<uint8_t, kBlockSize> payload;
    std::array<uint8_t, kOobSize> ob;
    REQUIRE((*dup)->debug_peek(2, i, payload, ob));
    CHECK(std::equal(payload.begin(), payload.end(),
                     data.begin() + i * kBlockSize));
    CHECK(std::equal(ob.begin(), ob.end(), oob.begin() + i * kOobSize));
  }
  // Unwritten zones stay empty.
  CHECK((*dup)->zone_info(0).state == ZoneState::Empty);
}

TEST_CASE("serialization keeps only durable blocks, not in-flight ones") {
  Harness h;
  auto data = pattern_blocks(1, 0x21);
  auto oob = pattern_oob(1, 0x21);
  REQUIRE(h.dev.submit_append(0, data, oob, [](const Completion&) {}).ok());
  // No clock steps: the append is reserved but not durable.
  std::ostringstream cut;
  REQUIRE(h.dev.serialize(cut).ok());
  std::istringstream in(cut.str());
  SimClock clock2;
  auto dup = ZnsDevice::deserialize(in, &clock2);
  REQUIRE(dup.ok());
  CHECK((*dup)->zone_info(0).write_pointer == 0);
  std::array<uint8_t, kBlockSize> payload;
  std::array<uint8_t, kOobSize> ob;
  CHECK_FALSE((*dup)->debug_peek(0, 0, payload, ob));
  // The original still lands the append once time moves.
  h.clock.run_until_idle();
  CHECK(h.dev.zone_info(0).write_pointer == 1);
}

TEST_CASE("snapshot_durable equals a serialize/deserialize round trip") {
  Harness h;
  for (uint32_t z = 0; z < 3; ++z) h.append_now(z, 4, static_cast<uint8_t>(z));
  SimClock c2;
  auto snap = h.dev.snapshot_durable(&c2);
  std::ostringstream a, b;
  REQUIRE(h.dev.serialize(a).ok());
  REQUIRE(snap->serialize(b).ok());
  CHECK(a.str() == b.str());
}

TEST_CASE("deserialize rejects trash") {
  std::istringstream in("this is not a drive image");
  SimClock c;
  auto r = ZnsDevice::deserialize(in, &c);
  CHECK_FALSE(r.ok());
  CHECK(r.status.code == Errc::ImageFormatError);
}

TEST_CASE("observer sees a submission record and a completion record") {
  Harness h;
  std::vector<CommandRecord> records;
  h.dev.set_observer([&](const CommandRecord& r) { records.push_back(r); });
  auto data = pattern_blocks(2, 1);
  auto oob = pattern_oob(2, 1);
  REQUIRE(h.dev.submit_write(6, 0, data, oob, [](const Completion&) {}).ok());
  REQUIRE(records.size() == 1);
  CHECK_FALSE(records[0].completed);
  CHECK(records[0].kind == CmdKind::Write);
  CHECK(records[0].zone == 6);
  CHECK(records[0].num_blocks == 2);
  h.clock.run_until_idle();
  REQUIRE(records.size() == 2);
  CHECK(records[1].completed);
  CHECK(records[1].command_id == records[0].command_id);
  CHECK(records[1].offset == 0);
  CHECK(h.dev.completions_applied() == 1);
}

TEST_CASE("geometry validation") {
  DeviceGeometry g;
  g.zone_capacity_blocks = 0;
  CHECK_FALSE(g.validate().ok());
  DeviceGeometry g2;
  g2.chips_per_zone = 0;
  CHECK_FALSE(g2.validate().ok());
  DeviceGeometry ok;
  CHECK(ok.validate().ok());
}

// Independent replication of the chip-occupancy model, checked against the
// device on a randomized append-only schedule.
TEST_CASE("randomized appends match an independent chip-model oracle") {
  DeviceGeometry g;
  g.num_zones = 8;
  g.zone_capacity_blocks = 64;
  Harness h(g);
  std::mt19937_64 rng(20260823);

  const uint32_t total_chips = g.channels * g.chips_per_channel;
  std::vector<SimTime> chip_busy(total_chips, 0);
  std::vector<uint32_t> wp(g.num_zones, 0);

  struct Expect {
    uint64_t offset;
    SimTime done;
  };
  std::vector<Expect> expects;
  std::vector<Expect> actuals;

  for (int i = 0; i < 40; ++i) {
    uint32_t zone = static_cast<uint32_t>(rng() % g.num_zones);
    uint32_t nblocks = 1 + static_cast<uint32_t>(rng() % 4);
    if (wp[zone] + nblocks > g.zone_capacity_blocks) continue;

    // Oracle: blocks occupy their chips in offset order from submission time.
    uint64_t off = wp[zone];
    SimTime finish = 0;
    for (uint32_t b = 0; b < nblocks; ++b) {
      uint32_t chip = (zone * g.chips_per_zone +
                       static_cast<uint32_t>((off + b) % g.chips_per_zone)) %
                      total_chips;
      SimTime start = std::max(h.clock.now(), chip_busy[chip]);
      chip_busy[chip] = start + g.page_write_latency_ns;
      finish = std::max(finish, chip_busy[chip]);
    }
    wp[zone] += nblocks;
    expects.push_back({off, finish});

    auto data = pattern_blocks(nblocks, static_cast<uint8_t>(i));
    auto oob = pattern_oob(nblocks, static_cast<uint8_t>(i));
    REQUIRE(h.dev
                .submit_append(zone, data, oob,
                               [&](const Completion& c) {
                                 REQUIRE(c.status == Errc::Ok);
                                 actuals.push_back({c.offset, c.completed_at});
                               })
                .ok());
    if (rng() % 3 == 0) h.clock.run_until_idle();
  }
  h.clock.run_until_idle();
  REQUIRE(actuals.size() == expects.size());
  std::sort(actuals.begin(), actuals.end(),
            [](const Expect& a, const Expect& b) { return a.done < b.done; });
  std::sort(expects.begin(), expects.end(),
            [](const Expect& a, const Expect& b) { return a.done < b.done; });
  for (size_t i = 0; i < expects.size(); ++i)
    CHECK(actuals[i].done == expects[i].done);
}

TEST_CASE("identical schedules produce identical completion times") {
  auto run = [] {
    Harness h;
    std::vector<SimTime> log;
    for (int i = 0; i < 24; ++i) {
      uint32_t zone = static_cast<uint32_t>(i % 3);
      auto data = pattern_blocks(2, static_cast<uint8_t>(i));
      auto oob = pattern_oob(2, static_cast<uint8_t>(i));
      REQUIRE(h.dev
                  .submit_append(zone, data, oob,
                                 [&](const Completion& c) {
                                   log.push_back(c.completed_at);
                                 })
                  .ok());
    }
    h.clock.run_until_idle();
    return log;
  };
  CHECK(run() == run());
}
