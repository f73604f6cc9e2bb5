// zlraid: benchmarks, trace replay, fault injection, and geometry inspection
// for the log-structured RAID engine over simulated ZNS drives.
//
// Subcommands: bench, replay, crashtest, rebuild, gc-stress, geometry.
// Runs are fully deterministic: the same config, seed, and workload produce
// byte-identical CSV output. Exit status: 0 clean, 1 verifier failure,
// 2 usage/config error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "zlraid/erasure.h"
#include "zlraid/layout.h"
#include "zlraid/workload.h"

using nlohmann::ordered_json;

namespace zlraid {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;

int fail_usage(const Status& st) {
  std::fprintf(stderr, "error: %s\n", st.message.c_str());
  return kExitUsage;
}

// ---------------------------------------------------------------------------
// Shared engine/device options. Command-line flags override config-file keys.

struct CommonOpts {
  std::string config_path;
  uint64_t seed = 1;
  uint32_t qd = 16;
  std::string scheme, mode;
  uint32_t drives = 0, chunk_small = 0, chunk_large = 0;
  uint32_t ns = 0, nl = 0, group_size = 0;
  std::string l2p_cap, logical;
  double reserved_pct = 0;
  uint32_t zones = 0, zone_blocks = 0;
  std::string out_path;

  CLI::Option* o_seed = nullptr;
  CLI::Option* o_qd = nullptr;
  CLI::Option* o_scheme = nullptr;
  CLI::Option* o_mode = nullptr;
  CLI::Option* o_drives = nullptr;
  CLI::Option* o_chunk_small = nullptr;
  CLI::Option* o_chunk_large = nullptr;
  CLI::Option* o_ns = nullptr;
  CLI::Option* o_nl = nullptr;
  CLI::Option* o_group = nullptr;
  CLI::Option* o_l2p = nullptr;
  CLI::Option* o_logical = nullptr;
  CLI::Option* o_reserved = nullptr;
  CLI::Option* o_zones = nullptr;
  CLI::Option* o_zone_blocks = nullptr;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "config file (key = value lines)");
    o_seed = app->add_option("--seed", seed, "workload seed");
    o_qd = app->add_option("--qd", qd, "queue depth");
    o_scheme = app->add_option("--scheme", scheme,
                               "raid0|raid01|raid4|raid5|raid6");
    o_mode = app->add_option("--mode", mode, "zapraid|zonewrite|zoneappend");
    o_drives = app->add_option("--drives", drives, "member drive count");
    o_chunk_small =
        app->add_option("--chunk-small", chunk_small, "small-class chunk, blocks");
    o_chunk_large =
        app->add_option("--chunk-large", chunk_large, "large-class chunk, blocks");
    o_ns = app->add_option("--ns", ns, "concurrently open small-chunk segments");
    o_nl = app->add_option("--nl", nl, "concurrently open large-chunk segments");
    o_group = app->add_option("--group-size", group_size,
                              "stripes per ordering group");
    o_l2p = app->add_option("--l2p-cap", l2p_cap,
                            "mapping-table memory cap (sizes ok; 0 = unlimited)");
    o_logical = app->add_option("--logical", logical, "logical capacity (size)");
    o_reserved = app->add_option(
        "--reserved", reserved_pct,
        "reserved-space percent; sizes the logical capacity from the physical");
    o_zones = app->add_option("--zones", zones, "zones per drive");
    o_zone_blocks =
        app->add_option("--zone-blocks", zone_blocks, "blocks per zone");
    app->add_option("--out", out_path, "write the metrics CSV here ('-' = stdout)");
  }
};

struct BuildOut {
  DeviceGeometry geo;
  VolumeParams params;
};

Result<BuildOut> build_config(const CommonOpts& o) {
  KvConfig cfg = [] {
    auto r = KvConfig::parse_string("");
    return *r;
  }();
  if (!o.config_path.empty()) {
    auto r = KvConfig::parse_file(o.config_path);
    if (!r.ok()) return r.status;
    cfg = *r;
  }
  auto set_if = [&cfg](CLI::Option* opt, const char* key, const std::string& v) {
    if (opt && opt->count() > 0) cfg.set(key, v);
  };
  set_if(o.o_scheme, "scheme", o.scheme);
  set_if(o.o_mode, "mode", o.mode);
  set_if(o.o_drives, "drives", std::to_string(o.drives));
  set_if(o.o_chunk_small, "chunk_small", std::to_string(o.chunk_small));
  set_if(o.o_chunk_large, "chunk_large", std::to_string(o.chunk_large));
  set_if(o.o_ns, "n_small", std::to_string(o.ns));
  set_if(o.o_nl, "n_large", std::to_string(o.nl));
  set_if(o.o_group, "group_size", std::to_string(o.group_size));
  set_if(o.o_l2p, "l2p_cap", o.l2p_cap);
  set_if(o.o_logical, "logical_capacity", o.logical);
  set_if(o.o_zones, "dev_zones", std::to_string(o.zones));
  set_if(o.o_zone_blocks, "dev_zone_capacity_blocks",
         std::to_string(o.zone_blocks));

  auto geo = DeviceGeometry::from_config(cfg);
  if (!geo.ok()) return geo.status;
  auto par = VolumeParams::from_config(cfg);
  if (!par.ok()) return par.status;
  BuildOut b{*geo, *par};
  if (o.o_reserved && o.o_reserved->count() > 0) {
    if (o.o_logical && o.o_logical->count() > 0)
      return Status::error(Errc::ConfigError,
                           "--logical and --reserved are mutually exclusive");
    auto cap = data_capacity_blocks(b.geo, b.params);
    if (!cap.ok()) return cap.status;
    b.params.logical_bytes =
        logical_bytes_for_reserved(*cap, o.reserved_pct / 100.0);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Workload options shared by bench / crashtest / gc-stress.

struct WorkloadOpts {
  std::string pattern = "random";
  double theta = 0.99;
  double read_frac = 0.0;
  std::string total = "64MiB";
  std::string mix;  // "1:0.75,4:0.25" (blocks:weight)

  void add(CLI::App* app) {
    app->add_option("--pattern", pattern, "random|sequential|zipf");
    app->add_option("--theta", theta, "zipf skew (default 0.99)");
    app->add_option("--read-frac", read_frac, "fraction of ops that read");
    app->add_option("--total", total, "total traffic (size)");
    app->add_option("--mix", mix,
                    "request-size mix, blocks:weight pairs, e.g. 1:0.75,4:0.25");
  }

  Result<WorkloadSpec> build(const CommonOpts& common) const {
    WorkloadSpec w;
    auto pr = access_pattern_from_name(pattern);
    if (!pr.ok()) return pr.status;
    w.pattern = *pr;
    w.zipf_theta = theta;
    w.read_fraction = read_frac;
    w.queue_depth = common.qd;
    w.seed = common.seed;
    bool ok = false;
    w.total_bytes = parse_size_or(total, 0, &ok);
    if (!ok)
      return Status::error(Errc::ConfigError, "bad --total size: " + total);
    if (!mix.empty()) {
      w.sizes.clear();
      std::stringstream ss(mix);
      std::string part;
      while (std::getline(ss, part, ',')) {
        size_t colon = part.find(':');
        if (colon == std::string::npos)
          return Status::error(Errc::ConfigError, "bad --mix entry: " + part);
        SizeClass c;
        try {
          c.blocks = static_cast<uint32_t>(std::stoul(part.substr(0, colon)));
          c.weight = std::stod(part.substr(colon + 1));
        } catch (const std::exception&) {
          return Status::error(Errc::ConfigError, "bad --mix entry: " + part);
        }
        w.sizes.push_back(c);
      }
    }
    return w;
  }
};

Status write_csv(const std::string& path, const std::string& body) {
  if (path.empty()) return Status::success();
  if (path == "-") {
    std::fwrite(body.data(), 1, body.size(), stdout);
    return Status::success();
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) return Status::error(Errc::ConfigError, "cannot open " + path);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  return Status::success();
}

ordered_json bench_json(const char* cmd, const BuildOut& b, const BenchResult& r,
                        SimTime sim_ns) {
  ordered_json j;
  j["command"] = cmd;
  j["scheme"] = scheme_name(b.params.scheme);
  j["mode"] = engine_mode_name(b.params.mode);
  j["drives"] = b.params.drives;
  j["logical_bytes"] = b.params.logical_bytes;
  j["ops"] = r.ops;
  j["write_ops"] = r.write_ops;
  j["read_ops"] = r.read_ops;
  j["throughput_mibs"] = r.throughput_mibs;
  j["write_p50_us"] = r.write_p50_us;
  j["write_p95_us"] = r.write_p95_us;
  j["read_p50_us"] = r.read_p50_us;
  j["read_p95_us"] = r.read_p95_us;
  j["write_amplification"] = r.snap.write_amplification;
  j["gc_runs"] = r.snap.counters.gc_runs;
  j["gc_moved_blocks"] = r.snap.counters.gc_moved_blocks;
  j["cst_memory_bytes"] = r.snap.cst_memory_bytes;
  j["l2p_resident_bytes"] = r.snap.l2p.resident_bytes;
  j["sim_seconds"] = static_cast<double>(sim_ns) / 1e9;
  j["verify_failures"] = r.verify_failures;
  if (r.readback_checked) {
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(r.readback_digest));
    j["readback_digest"] = hex;
  }
  return j;
}

// ---------------------------------------------------------------------------
// bench

int cmd_bench(const CommonOpts& common, const WorkloadOpts& wl, bool no_verify,
              bool readback) {
  auto b = build_config(common);
  if (!b.ok()) return fail_usage(b.status);
  auto spec = wl.build(common);
  if (!spec.ok()) return fail_usage(spec.status);
  auto sim = make_sim(b->geo, b->params);
  if (!sim.ok()) return fail_usage(sim.status);
  BenchOptions bo;
  bo.verify_reads = !no_verify;
  bo.final_readback = readback;
  auto r = run_bench(sim->volume.get(), *spec, bo);
  if (!r.ok()) return fail_usage(r.status);
  std::cout << bench_json("bench", *b, *r, sim->clock->now()).dump(2) << "\n";
  Status ws = write_csv(common.out_path, r->csv());
  if (!ws.ok()) return fail_usage(ws);
  return r->verify_failures == 0 ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// replay

int cmd_replay(const CommonOpts& common, const std::string& trace_path,
               bool closed_loop, bool readback) {
  auto b = build_config(common);
  if (!b.ok()) return fail_usage(b.status);
  auto trace = parse_trace_file(trace_path);
  if (!trace.ok()) return fail_usage(trace.status);
  auto sim = make_sim(b->geo, b->params);
  if (!sim.ok()) return fail_usage(sim.status);
  ReplayOptions ro;
  ro.closed_loop = closed_loop;
  ro.queue_depth = common.qd;
  ro.seed = common.seed;
  ro.final_readback = readback;
  auto r = run_replay(sim->volume.get(), *trace, ro);
  if (!r.ok()) return fail_usage(r.status);
  ordered_json j = bench_json("replay", *b, *r, sim->clock->now());
  j["trace"] = trace_path;
  j["records"] = trace->size();
  j["closed_loop"] = closed_loop;
  std::cout << j.dump(2) << "\n";
  Status ws = write_csv(common.out_path, r->csv());
  if (!ws.ok()) return fail_usage(ws);
  return r->verify_failures == 0 ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// crashtest

int cmd_crashtest(const CommonOpts& common, const WorkloadOpts& wl,
                  std::vector<uint64_t> points, bool exhaustive,
                  uint32_t random_points, bool mid_gc, uint64_t schedule_seed,
                  bool idempotent) {
  auto b = build_config(common);
  if (!b.ok()) return fail_usage(b.status);
  auto spec = wl.build(common);
  if (!spec.ok()) return fail_usage(spec.status);
  CrashTestConfig cc;
  cc.geometry = b->geo;
  cc.params = b->params;
  cc.workload = *spec;
  cc.points = std::move(points);
  cc.exhaustive = exhaustive;
  cc.random_points = random_points;
  cc.mid_gc_points = mid_gc;
  cc.schedule_seed = schedule_seed;
  cc.check_idempotent = idempotent;
  auto rep = run_crashtest(cc);
  if (!rep.ok()) return fail_usage(rep.status);
  uint64_t gc_points = 0;
  for (const auto& p : rep->points) gc_points += p.during_gc ? 1 : 0;
  ordered_json j;
  j["command"] = "crashtest";
  j["total_commands"] = rep->total_commands;
  j["points"] = rep->points.size();
  j["mid_gc_points"] = gc_points;
  j["failures"] = rep->failures;
  std::cout << j.dump(2) << "\n";
  Status ws = write_csv(common.out_path, rep->csv());
  if (!ws.ok()) return fail_usage(ws);
  return rep->failures == 0 ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// rebuild

int cmd_rebuild(const CommonOpts& common, const WorkloadOpts& wl,
                std::vector<uint32_t> fail_drives, bool no_verify_images) {
  auto b = build_config(common);
  if (!b.ok()) return fail_usage(b.status);
  auto spec = wl.build(common);
  if (!spec.ok()) return fail_usage(spec.status);
  RebuildScenario sc;
  sc.geometry = b->geo;
  sc.params = b->params;
  sc.fill = *spec;
  sc.fail_drives = std::move(fail_drives);
  sc.verify_images = !no_verify_images;
  auto r = run_rebuild(sc);
  if (!r.ok()) return fail_usage(r.status);
  ordered_json j;
  j["command"] = "rebuild";
  j["scheme"] = scheme_name(b->params.scheme);
  j["fill_bytes"] = spec->total_bytes;
  j["stored_user_blocks"] = r->stored_user_blocks;
  j["fill_sim_seconds"] = static_cast<double>(r->fill_ns) / 1e9;
  j["rebuild_sim_seconds"] = static_cast<double>(r->rebuild_ns) / 1e9;
  j["images_checked"] = r->images_checked;
  j["images_equal"] = r->images_equal;
  j["readback_mismatches"] = r->readback_mismatches;
  std::cout << j.dump(2) << "\n";
  Status ws = write_csv(common.out_path, r->fill_result.csv());
  if (!ws.ok()) return fail_usage(ws);
  bool ok = (!r->images_checked || r->images_equal) &&
            r->readback_mismatches == 0;
  return ok ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// gc-stress: overwrite traffic of a multiple of the logical capacity, then a
// full readback; the interesting outputs are write amplification and
// throughput as a function of reserved space.

int cmd_gc_stress(const CommonOpts& common, const WorkloadOpts& wl,
                  double overwrite_mult) {
  CommonOpts c2 = common;
  if (!(c2.o_reserved && c2.o_reserved->count() > 0) &&
      !(c2.o_logical && c2.o_logical->count() > 0)) {
    // Default: 25% reserved space.
    return fail_usage(Status::error(
        Errc::ConfigError, "gc-stress needs --reserved or --logical"));
  }
  auto b = build_config(c2);
  if (!b.ok()) return fail_usage(b.status);
  auto spec = wl.build(common);
  if (!spec.ok()) return fail_usage(spec.status);
  spec->total_bytes = static_cast<uint64_t>(
      overwrite_mult * static_cast<double>(b->params.logical_bytes));
  auto sim = make_sim(b->geo, b->params);
  if (!sim.ok()) return fail_usage(sim.status);
  BenchOptions bo;
  bo.final_readback = true;
  auto r = run_bench(sim->volume.get(), *spec, bo);
  if (!r.ok()) return fail_usage(r.status);
  ordered_json j = bench_json("gc-stress", *b, *r, sim->clock->now());
  j["overwrite_mult"] = overwrite_mult;
  j["free_zones_min"] = r->snap.free_zones_min;
  std::cout << j.dump(2) << "\n";
  Status ws = write_csv(common.out_path, r->csv());
  if (!ws.ok()) return fail_usage(ws);
  return r->verify_failures == 0 ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// geometry: segment layout numbers for a zone/chunk shape, plus the
// worst-case compact-stripe-table footprint for a whole array.

int cmd_geometry(uint32_t zone_blocks, uint32_t chunk, uint32_t drives,
                 uint32_t zones, uint32_t group_size, uint64_t stripes_override) {
  auto sg = compute_segment_geometry(zone_blocks, chunk);
  if (!sg.ok()) return fail_usage(sg.status);
  ordered_json j;
  j["command"] = "geometry";
  j["zone_capacity_blocks"] = sg->zone_capacity;
  j["chunk_blocks"] = sg->chunk_blocks;
  j["header_blocks"] = sg->header_blocks;
  j["data_blocks"] = sg->data_blocks();
  j["stripes"] = sg->stripes;
  j["footer_blocks"] = sg->footer_blocks;
  j["used_blocks"] = sg->used_blocks();
  uint64_t stripes =
      stripes_override > 0 ? stripes_override : static_cast<uint64_t>(sg->stripes);
  uint64_t bits = cst_max_memory_bits(drives, static_cast<uint32_t>(stripes),
                                      zones, group_size);
  ordered_json cst;
  cst["drives"] = drives;
  cst["zones_per_drive"] = zones;
  cst["group_size"] = group_size;
  cst["stripes_counted"] = stripes;
  cst["entry_bytes"] = cst_entry_bytes(group_size);
  cst["max_memory_bytes"] = bits / 8;
  cst["max_memory_gib"] = static_cast<double>(bits) / 8.0 / (1ull << 30);
  j["cst"] = cst;
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"log-structured RAID engine over simulated ZNS drives"};
  app.require_subcommand(1);

  // bench
  auto* bench = app.add_subcommand("bench", "run a synthetic workload");
  CommonOpts bench_common;
  WorkloadOpts bench_wl;
  bench_common.add(bench);
  bench_wl.add(bench);
  bool bench_no_verify = false, bench_readback = false;
  bench->add_flag("--no-verify", bench_no_verify, "skip per-read verification");
  bench->add_flag("--readback", bench_readback,
                  "verify the whole volume against the shadow model at the end");

  // replay
  auto* replay = app.add_subcommand("replay", "replay a block I/O trace");
  CommonOpts replay_common;
  replay_common.add(replay);
  std::string trace_path;
  bool replay_closed = false, replay_readback = false;
  replay->add_option("trace", trace_path, "trace CSV: time_us,op,offset,length")
      ->required();
  replay->add_flag("--closed-loop", replay_closed,
                   "ignore arrival times; keep the queue full");
  replay->add_flag("--readback", replay_readback, "full readback at the end");

  // crashtest
  auto* crash = app.add_subcommand("crashtest", "crash-point injection");
  CommonOpts crash_common;
  WorkloadOpts crash_wl;
  crash_common.add(crash);
  crash_wl.add(crash);
  crash_wl.total = "256KiB";
  std::vector<uint64_t> crash_points;
  bool crash_exhaustive = false, crash_mid_gc = false, crash_idem = false;
  uint32_t crash_random = 0;
  uint64_t crash_sched_seed = 1;
  crash->add_option("--points", crash_points, "explicit applied-command indices");
  crash->add_flag("--exhaustive", crash_exhaustive,
                  "crash at every command boundary");
  crash->add_option("--random-points", crash_random, "extra random crash points");
  crash->add_flag("--mid-gc", crash_mid_gc,
                  "draw the random points from windows where GC is active");
  crash->add_option("--schedule-seed", crash_sched_seed,
                    "seed for the random crash schedule");
  crash->add_flag("--idempotent", crash_idem,
                  "also check recover-of-recover convergence");

  // rebuild
  auto* rebuild = app.add_subcommand("rebuild", "fill, fail drives, rebuild");
  CommonOpts rebuild_common;
  WorkloadOpts rebuild_wl;
  rebuild_common.add(rebuild);
  rebuild_wl.add(rebuild);
  std::vector<uint32_t> rebuild_fail = {0};
  bool rebuild_no_images = false;
  rebuild->add_option("--fail-drive", rebuild_fail,
                      "drive indices to fail (repeatable)");
  rebuild->add_flag("--no-verify-images", rebuild_no_images,
                    "skip the byte comparison of drive images");

  // gc-stress
  auto* gcs = app.add_subcommand("gc-stress", "overwrite churn vs reserved space");
  CommonOpts gcs_common;
  WorkloadOpts gcs_wl;
  gcs_common.add(gcs);
  gcs_wl.add(gcs);
  double gcs_mult = 5.0;
  gcs->add_option("--overwrite-mult", gcs_mult,
                  "traffic as a multiple of the logical capacity");

  // geometry
  auto* geom = app.add_subcommand("geometry", "print segment layout numbers");
  uint32_t g_zone_blocks = 4096, g_chunk = 1, g_drives = 4, g_zones = 64,
           g_group = 256;
  uint64_t g_stripes = 0;
  geom->add_option("--zone-blocks", g_zone_blocks, "blocks per zone")->required();
  geom->add_option("--chunk", g_chunk, "chunk size in blocks");
  geom->add_option("--drives", g_drives, "drives (for the CST footprint)");
  geom->add_option("--zones", g_zones, "zones per drive (for the CST footprint)");
  geom->add_option("--group-size", g_group, "stripes per group");
  geom->add_option("--stripes", g_stripes,
                   "override the stripe count used for the CST footprint");

  CLI11_PARSE(app, argc, argv);

  if (*bench) return cmd_bench(bench_common, bench_wl, bench_no_verify,
                               bench_readback);
  if (*replay) return cmd_replay(replay_common, trace_path, replay_closed,
                                 replay_readback);
  if (*crash)
    return cmd_crashtest(crash_common, crash_wl, crash_points, crash_exhaustive,
                         crash_random, crash_mid_gc, crash_sched_seed,
                         crash_idem);
  if (*rebuild)
    return cmd_rebuild(rebuild_common, rebuild_wl, rebuild_fail,
                       rebuild_no_images);
  if (*gcs) return cmd_gc_stress(gcs_common, gcs_wl, gcs_mult);
  if (*geom)
    return cmd_geometry(g_zone_blocks, g_chunk, g_drives, g_zones, g_group,
                        g_stripes);
  return kExitUsage;
}

}  // namespace
}  // namespace zlraid

int main(int argc, char** argv) { return zlraid::run_cli(argc, argv); }
