#include "zlraid/workload.h"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "zlraid/erasure.h"
#include "zlraid/layout.h"

namespace zlraid {

namespace {

// Finalizer-only variant of the splitmix64 mixer (no increment step); kept
// distinct from mix64 in common.h so the two cannot be confused.
inline uint64_t fmix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline uint64_t stamp_tag(uint64_t lba, uint64_t version, uint64_t seed) {
  return fmix64(lba * 0x9e3779b97f4a7c15ull ^ version * 0xc2b2ae3d27d4eb4full ^
                seed);
}

// Unit-interval draw with explicit arithmetic so results do not depend on the
// standard library's distribution implementations.
inline double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline uint64_t bounded_draw(std::mt19937_64& rng, uint64_t bound) {
  return bound == 0 ? 0 : rng() % bound;
}

const uint8_t kZeroBlock[kBlockSize] = {};

// Per-block content digest, combined order-independently so a verifier may
// read blocks in any batching.
inline uint64_t block_digest(uint64_t block, const uint8_t* data) {
  uint64_t h = fnv1a(std::span<const uint8_t>(data, kBlockSize),
                     0xcbf29ce484222325ull);
  return fmix64(h ^ block * 0x9e3779b97f4a7c15ull);
}

std::string describe_block(uint64_t block, const char* what) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "block %llu: %s",
                static_cast<unsigned long long>(block), what);
  return buf;
}

}  // namespace

uint64_t fnv1a(std::span<const uint8_t> bytes, uint64_t h) {
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

void stamp_block(uint64_t lba, uint64_t version, uint64_t seed,
                 std::span<uint8_t> out) {
  assert(out.size() == kBlockSize);
  std::memset(out.data(), 0, out.size());
  put_u64(out.data(), kStampMagic);
  put_u64(out.data() + 8, lba);
  put_u64(out.data() + 16, version);
  put_u64(out.data() + 24, stamp_tag(lba, version, seed));
}

BlockVerdict classify_block(std::span<const uint8_t> block, uint64_t seed,
                            uint64_t* lba_out, uint64_t* version_out) {
  assert(block.size() == kBlockSize);
  if (std::memcmp(block.data(), kZeroBlock, kBlockSize) == 0)
    return BlockVerdict::Zero;
  if (get_u64(block.data()) != kStampMagic) return BlockVerdict::Garbage;
  uint64_t lba = get_u64(block.data() + 8);
  uint64_t version = get_u64(block.data() + 16);
  uint64_t tag = get_u64(block.data() + 24);
  if (tag != stamp_tag(lba, version, seed)) return BlockVerdict::Garbage;
  if (std::memcmp(block.data() + 32, kZeroBlock, kBlockSize - 32) != 0)
    return BlockVerdict::Garbage;
  if (lba_out) *lba_out = lba;
  if (version_out) *version_out = version;
  return BlockVerdict::Stamp;
}

// ---------------------------------------------------------------------------
// ShadowModel

ShadowModel::ShadowModel(uint64_t logical_blocks, uint64_t seed)
    : logical_blocks_(logical_blocks),
      seed_(seed),
      acked_(logical_blocks, 0),
      submitted_(logical_blocks, 0) {}

void ShadowModel::note_submit(uint64_t block, uint64_t version) {
  assert(block < logical_blocks_);
  assert(version > submitted_[block]);
  submitted_[block] = version;
}

void ShadowModel::note_ack(uint64_t block, uint64_t version) {
  assert(block < logical_blocks_);
  if (version > acked_[block]) acked_[block] = version;
}

std::string ShadowModel::check_read(uint64_t block,
                                    std::span<const uint8_t> data,
                                    uint64_t floor_version) const {
  uint64_t lba = 0, version = 0;
  switch (classify_block(data, seed_, &lba, &version)) {
    case BlockVerdict::Zero:
      if (floor_version != 0)
        return describe_block(block, "read zeros after an acknowledged write");
      return {};
    case BlockVerdict::Garbage:
      return describe_block(block, "payload is neither zeros nor a valid stamp");
    case BlockVerdict::Stamp:
      if (lba != block * kBlockSize)
        return describe_block(block, "stamp belongs to a different address");
      if (version < floor_version)
        return describe_block(block, "stale version (older than last ack)");
      if (version > submitted_[block])
        return describe_block(block, "version newer than anything submitted");
      return {};
  }
  return describe_block(block, "unreachable verdict");
}

std::string ShadowModel::check_crash_read(uint64_t block,
                                          std::span<const uint8_t> data) const {
  return check_read(block, data, acked_[block]);
}

uint64_t ShadowModel::quiescent_digest() const {
  std::vector<uint8_t> scratch(kBlockSize);
  uint64_t digest = 0;
  for (uint64_t b = 0; b < logical_blocks_; ++b) {
    if (acked_[b] == 0) {
      digest += block_digest(b, kZeroBlock);
    } else {
      stamp_block(b * kBlockSize, acked_[b], seed_, scratch);
      digest += block_digest(b, scratch.data());
    }
  }
  return digest;
}

std::vector<uint64_t> ShadowModel::touched() const {
  std::vector<uint64_t> out;
  for (uint64_t b = 0; b < logical_blocks_; ++b)
    if (submitted_[b] != 0) out.push_back(b);
  return out;
}

// ---------------------------------------------------------------------------
// Workload spec + generators

const char* access_pattern_name(AccessPattern p) {
  switch (p) {
    case AccessPattern::Random: return "random";
    case AccessPattern::Sequential: return "sequential";
    case AccessPattern::Zipf: return "zipf";
  }
  return "?";
}

Result<AccessPattern> access_pattern_from_name(const std::string& name) {
  if (name == "random" || name == "uniform") return AccessPattern::Random;
  if (name == "sequential" || name == "seq") return AccessPattern::Sequential;
  if (name == "zipf") return AccessPattern::Zipf;
  return Status::error(Errc::ConfigError, "unknown access pattern: " + name);
}

std::vector<SizeClass> WorkloadSpec::mix_4k_16k() {
  return {{1, 0.75}, {4, 0.25}};
}

Status WorkloadSpec::validate(uint64_t logical_bytes) const {
  if (sizes.empty())
    return Status::error(Errc::ConfigError, "workload has no size classes");
  double wsum = 0;
  uint64_t max_blocks = 0;
  for (const SizeClass& s : sizes) {
    if (s.blocks == 0)
      return Status::error(Errc::ConfigError, "zero-block size class");
    if (s.weight < 0)
      return Status::error(Errc::ConfigError, "negative size-class weight");
    wsum += s.weight;
    max_blocks = std::max<uint64_t>(max_blocks, s.blocks);
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    return Status::error(Errc::ConfigError, "size-class weights must sum to 1");
  if (read_fraction < 0 || read_fraction > 1)
    return Status::error(Errc::ConfigError, "read fraction outside [0,1]");
  if (queue_depth == 0)
    return Status::error(Errc::ConfigError, "queue depth must be positive");
  if (pattern == AccessPattern::Zipf && (zipf_theta <= 0 || zipf_theta >= 1))
    return Status::error(Errc::ConfigError, "zipf theta must be in (0,1)");
  if (max_blocks * kBlockSize > logical_bytes)
    return Status::error(Errc::ConfigError,
                         "request size exceeds the logical space");
  return Status::success();
}

ZipfGenerator::ZipfGenerator(uint64_t n, double theta) : n_(n), theta_(theta) {
  assert(n > 0);
  zetan_ = 0;
  for (uint64_t i = 1; i <= n_; ++i)
    zetan_ += 1.0 / std::pow(static_cast<double>(i), theta_);
  zeta2_ = 1.0 + 1.0 / std::pow(2.0, theta_);
  alpha_ = 1.0 / (1.0 - theta_);
  eta_ = (1.0 - std::pow(2.0 / static_cast<double>(n_), 1.0 - theta_)) /
         (1.0 - zeta2_ / zetan_);
}

uint64_t ZipfGenerator::next(std::mt19937_64& rng) {
  double u = unit_draw(rng);
  double uz = u * zetan_;
  if (uz < 1.0) return 0;
  if (uz < 1.0 + std::pow(0.5, theta_)) return 1;
  uint64_t v = static_cast<uint64_t>(
      static_cast<double>(n_) * std::pow(eta_ * u - eta_ + 1.0, alpha_));
  return v >= n_ ? n_ - 1 : v;
}

OpStream::OpStream(const WorkloadSpec& spec, uint64_t logical_blocks)
    : spec_(spec),
      logical_blocks_(logical_blocks),
      bytes_left_(spec.total_bytes),
      rng_(spec.seed * 0x9e3779b97f4a7c15ull + 0x715ea5e051ull) {
  if (spec_.pattern == AccessPattern::Zipf)
    zipf_ = std::make_unique<ZipfGenerator>(logical_blocks, spec_.zipf_theta);
}

std::optional<OpStream::Op> OpStream::next() {
  if (bytes_left_ == 0) return std::nullopt;
  Op op;
  // Draw order is fixed (size, direction, offset) so streams with the same
  // seed are identical regardless of how the caller paces them.
  double sz = unit_draw(rng_);
  double acc = 0;
  op.nblocks = spec_.sizes.back().blocks;
  for (const SizeClass& c : spec_.sizes) {
    acc += c.weight;
    if (sz < acc) {
      op.nblocks = c.blocks;
      break;
    }
  }
  op.is_read = spec_.read_fraction > 0 && unit_draw(rng_) < spec_.read_fraction;
  uint64_t span = logical_blocks_ - op.nblocks;  // inclusive upper start
  switch (spec_.pattern) {
    case AccessPattern::Random:
      op.block = bounded_draw(rng_, span + 1);
      break;
    case AccessPattern::Sequential:
      if (seq_cursor_ + op.nblocks > logical_blocks_) seq_cursor_ = 0;
      op.block = seq_cursor_;
      seq_cursor_ += op.nblocks;
      break;
    case AccessPattern::Zipf:
      op.block = std::min<uint64_t>(zipf_->next(rng_), span);
      break;
  }
  uint64_t op_bytes = static_cast<uint64_t>(op.nblocks) * kBlockSize;
  bytes_left_ -= std::min(bytes_left_, op_bytes);
  return op;
}

// ---------------------------------------------------------------------------
// Closed-loop driver shared by bench and replay.

namespace {

struct Driver {
  Volume* vol = nullptr;
  ShadowModel* shadow = nullptr;
  uint32_t qd = 1;
  bool verify = true;

  // Source of ops; nullopt means "nothing available right now" (more may
  // arrive later, e.g. open-loop replay).
  std::function<std::optional<OpStream::Op>()> next_op;

  uint64_t in_flight = 0;
  uint64_t ops = 0, write_ops = 0, read_ops = 0;
  uint64_t bytes_written = 0, bytes_read = 0;
  uint64_t verify_failures = 0;
  std::vector<std::string> failure_details;
  LatencyRecorder wlat, rlat;
  SimTime first_submit = 0;
  SimTime last_ack = 0;
  bool any_submit = false;
  bool pumping = false;

  void fail(std::string d) {
    ++verify_failures;
    if (failure_details.size() < 8) failure_details.push_back(std::move(d));
  }

  void pump() {
    if (pumping) return;
    pumping = true;
    while (in_flight < qd) {
      std::optional<OpStream::Op> op = next_op();
      if (!op) break;
      if (!any_submit) {
        any_submit = true;
        first_submit = vol->clock()->now();
      }
      if (op->is_read)
        issue_read(*op);
      else
        issue_write(*op);
    }
    pumping = false;
  }

  void issue_write(const OpStream::Op& op) {
    uint64_t version = shadow->alloc_version();
    std::vector<uint8_t> buf(static_cast<size_t>(op.nblocks) * kBlockSize);
    for (uint32_t b = 0; b < op.nblocks; ++b) {
      uint64_t blk = op.block + b;
      stamp_block(blk * kBlockSize, version, shadow->seed(),
                  std::span<uint8_t>(buf.data() + static_cast<size_t>(b) * kBlockSize,
                                     kBlockSize));
      shadow->note_submit(blk, version);
    }
    ++in_flight;
    ++ops;
    ++write_ops;
    SimTime t0 = vol->clock()->now();
    uint64_t nbytes = buf.size();
    vol->write(op.block * kBlockSize, buf,
               [this, op, version, t0, nbytes](Status st) {
                 --in_flight;
                 if (!st.ok()) {
                   fail(describe_block(op.block,
                                       ("write failed: " + st.message).c_str()));
                 } else {
                   for (uint32_t b = 0; b < op.nblocks; ++b)
                     shadow->note_ack(op.block + b, version);
                   bytes_written += nbytes;
                   wlat.add(vol->clock()->now() - t0);
                   last_ack = vol->clock()->now();
                 }
                 pump();
               });
  }

  void issue_read(const OpStream::Op& op) {
    std::vector<uint64_t> floors(op.nblocks);
    for (uint32_t b = 0; b < op.nblocks; ++b)
      floors[b] = shadow->newest_acked(op.block + b);
    ++in_flight;
    ++ops;
    ++read_ops;
    SimTime t0 = vol->clock()->now();
    vol->read(op.block * kBlockSize,
              static_cast<uint64_t>(op.nblocks) * kBlockSize,
              [this, op, floors = std::move(floors),
               t0](Status st, std::vector<uint8_t> data) {
                --in_flight;
                if (!st.ok()) {
                  fail(describe_block(op.block,
                                      ("read failed: " + st.message).c_str()));
                } else {
                  if (verify) {
                    for (uint32_t b = 0; b < op.nblocks; ++b) {
                      std::string err = shadow->check_read(
                          op.block + b,
                          std::span<const uint8_t>(
                              data.data() + static_cast<size_t>(b) * kBlockSize,
                              kBlockSize),
                          floors[b]);
                      if (!err.empty()) fail(std::move(err));
                    }
                  }
                  bytes_read += data.size();
                  rlat.add(vol->clock()->now() - t0);
                  last_ack = vol->clock()->now();
                }
                pump();
              });
  }

  void fill_result(BenchResult* r) const {
    r->ops = ops;
    r->write_ops = write_ops;
    r->read_ops = read_ops;
    r->bytes_written = bytes_written;
    r->bytes_read = bytes_read;
    r->verify_failures += verify_failures;
    r->write_p50_us = static_cast<double>(wlat.percentile(50)) / 1000.0;
    r->write_p95_us = static_cast<double>(wlat.percentile(95)) / 1000.0;
    r->read_p50_us = static_cast<double>(rlat.percentile(50)) / 1000.0;
    r->read_p95_us = static_cast<double>(rlat.percentile(95)) / 1000.0;
    uint64_t moved = bytes_written + bytes_read;
    SimTime window = last_ack > first_submit ? last_ack - first_submit : 0;
    if (window > 0 && moved > 0)
      r->throughput_mibs = static_cast<double>(moved) * 1e9 /
                           (static_cast<double>(window) * 1024.0 * 1024.0);
  }
};

void report_failures(const Driver& d) {
  for (const std::string& f : d.failure_details)
    std::fprintf(stderr, "[verify] %s\n", f.c_str());
  if (d.verify_failures > d.failure_details.size())
    std::fprintf(stderr, "[verify] ... and %llu more\n",
                 static_cast<unsigned long long>(d.verify_failures -
                                                d.failure_details.size()));
}

}  // namespace

std::string BenchResult::csv() const {
  char digest_hex[24];
  std::snprintf(digest_hex, sizeof(digest_hex), "%016llx",
                static_cast<unsigned long long>(readback_digest));
  std::vector<std::pair<std::string, std::string>> extra = {
      {"throughput_mibs", format_mibs(throughput_mibs)},
      {"write_p50_us", format_mibs(write_p50_us)},
      {"write_p95_us", format_mibs(write_p95_us)},
      {"read_p50_us", format_mibs(read_p50_us)},
      {"read_p95_us", format_mibs(read_p95_us)},
      {"degraded_p50_us", format_mibs(degraded_p50_us)},
      {"degraded_p95_us", format_mibs(degraded_p95_us)},
      {"ops", std::to_string(ops)},
      {"write_ops", std::to_string(write_ops)},
      {"read_ops", std::to_string(read_ops)},
      {"bytes_written", std::to_string(bytes_written)},
      {"bytes_read", std::to_string(bytes_read)},
      {"verify_failures", std::to_string(verify_failures)},
      {"readback_checked", readback_checked ? "1" : "0"},
      {"readback_digest", digest_hex},
  };
  return metrics_csv(snap, extra);
}

Result<BenchResult> run_bench(Volume* vol, const WorkloadSpec& spec,
                              const BenchOptions& opts) {
  Status vs = spec.validate(vol->params().logical_bytes);
  if (!vs.ok()) return vs;

  uint64_t logical_blocks = vol->params().logical_bytes / kBlockSize;
  std::unique_ptr<ShadowModel> owned;
  ShadowModel* shadow = opts.shadow;
  if (!shadow) {
    owned = std::make_unique<ShadowModel>(logical_blocks, spec.seed);
    shadow = owned.get();
  }

  OpStream stream(spec, logical_blocks);
  Driver drv;
  drv.vol = vol;
  drv.shadow = shadow;
  drv.qd = spec.queue_depth;
  drv.verify = opts.verify_reads;
  drv.next_op = [&stream]() { return stream.next(); };

  drv.pump();
  vol->clock()->run_until_idle();
  vol->drain();

  BenchResult r;
  drv.fill_result(&r);
  report_failures(drv);
  if (opts.final_readback) {
    uint64_t mism = 0;
    auto dg = readback_digest(vol, shadow, &mism);
    if (!dg.ok()) return dg.status;
    r.readback_digest = *dg;
    r.readback_checked = true;
    r.verify_failures += mism;
    if (shadow->quiescent_digest() != *dg) {
      ++r.verify_failures;
      std::fprintf(stderr, "[verify] volume digest differs from the shadow\n");
    }
  }
  r.degraded_p50_us =
      static_cast<double>(vol->degraded_read_latency().percentile(50)) / 1000.0;
  r.degraded_p95_us =
      static_cast<double>(vol->degraded_read_latency().percentile(95)) / 1000.0;
  if (!vol->first_error().ok()) return vol->first_error();
  r.snap = vol->metrics();
  return r;
}

Result<uint64_t> readback_digest(Volume* vol, const ShadowModel* shadow,
                                 uint64_t* mismatches) {
  uint64_t logical_blocks = vol->params().logical_bytes / kBlockSize;
  constexpr uint64_t kBatchBlocks = 256;
  constexpr uint32_t kQd = 8;
  uint64_t digest = 0;
  uint64_t mism = 0;
  uint64_t next = 0;
  uint64_t active = 0;
  std::vector<std::string> details;
  std::function<void()> pump = [&]() {
    while (active < kQd && next < logical_blocks) {
      uint64_t start = next;
      uint64_t n = std::min(kBatchBlocks, logical_blocks - start);
      next += n;
      ++active;
      vol->read(start * kBlockSize, n * kBlockSize,
                [&, start, n](Status st, std::vector<uint8_t> data) {
                  --active;
                  if (!st.ok()) {
                    ++mism;
                    if (details.size() < 4)
                      details.push_back(describe_block(
                          start, ("readback failed: " + st.message).c_str()));
                  } else {
                    for (uint64_t b = 0; b < n; ++b) {
                      const uint8_t* p =
                          data.data() + static_cast<size_t>(b) * kBlockSize;
                      digest += block_digest(start + b, p);
                      if (shadow) {
                        std::string err = shadow->check_read(
                            start + b, std::span<const uint8_t>(p, kBlockSize),
                            shadow->newest_acked(start + b));
                        if (!err.empty()) {
                          ++mism;
                          if (details.size() < 4) details.push_back(err);
                        }
                      }
                    }
                  }
                  pump();
                });
    }
  };
  pump();
  vol->clock()->run_until_idle();
  for (const std::string& d : details)
    std::fprintf(stderr, "[readback] %s\n", d.c_str());
  if (mismatches) *mismatches = mism;
  if (!vol->first_error().ok()) return vol->first_error();
  return digest;
}

// ---------------------------------------------------------------------------
// Trace parsing + replay

Result<std::vector<TraceRecord>> parse_trace(std::istream& in) {
  size_t lineno = 0;
  auto err = [&lineno](const std::string& m) {
    return Status::error(Errc::TraceParseError,
                         "line " + std::to_string(lineno) + ": " + m);
  };
  std::string line;
  ++lineno;
  if (!std::getline(in, line)) return err("empty trace (missing header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "time_us,op,offset,length")
    return err("header must be `time_us,op,offset,length`");

  std::vector<TraceRecord> out;
  uint64_t prev_time = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string_view, 4> fields;
    std::string_view rest = line;
    for (int f = 0; f < 4; ++f) {
      size_t comma = rest.find(',');
      if (f < 3) {
        if (comma == std::string_view::npos)
          return err("expected 4 comma-separated fields");
        fields[f] = rest.substr(0, comma);
        rest = rest.substr(comma + 1);
      } else {
        if (comma != std::string_view::npos)
          return err("expected 4 comma-separated fields");
        fields[f] = rest;
      }
    }
    auto parse_u64 = [](std::string_view s, uint64_t* v) {
      const char* b = s.data();
      const char* e = s.data() + s.size();
      auto [p, ec] = std::from_chars(b, e, *v);
      return ec == std::errc() && p == e && !s.empty();
    };
    TraceRecord rec;
    if (!parse_u64(fields[0], &rec.time_us))
      return err("bad time_us field");
    if (fields[1] == "R" || fields[1] == "r")
      rec.is_read = true;
    else if (fields[1] == "W" || fields[1] == "w")
      rec.is_read = false;
    else
      return err("op must be R or W");
    if (!parse_u64(fields[2], &rec.offset)) return err("bad offset field");
    if (!parse_u64(fields[3], &rec.length)) return err("bad length field");
    if (rec.offset % kBlockSize != 0 || rec.length % kBlockSize != 0 ||
        rec.length == 0)
      return err("offset/length must be nonzero multiples of 4096");
    if (rec.time_us < prev_time)
      return err("arrival times must be non-decreasing");
    prev_time = rec.time_us;
    out.push_back(rec);
  }
  return out;
}

Result<std::vector<TraceRecord>> parse_trace_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    return Status::error(Errc::TraceParseError, "cannot open trace: " + path);
  return parse_trace(f);
}

Result<BenchResult> run_replay(Volume* vol,
                               const std::vector<TraceRecord>& trace,
                               const ReplayOptions& opts) {
  uint64_t logical = vol->params().logical_bytes;
  for (size_t i = 0; i < trace.size(); ++i) {
    if (trace[i].offset + trace[i].length > logical)
      return Status::error(Errc::TraceParseError,
                           "record " + std::to_string(i + 1) +
                               " reaches past the logical capacity");
  }
  if (opts.queue_depth == 0)
    return Status::error(Errc::ConfigError, "queue depth must be positive");

  uint64_t logical_blocks = logical / kBlockSize;
  ShadowModel shadow(logical_blocks, opts.seed);
  Driver drv;
  drv.vol = vol;
  drv.shadow = &shadow;
  drv.qd = opts.queue_depth;
  drv.verify = opts.verify_reads;

  auto to_op = [](const TraceRecord& r) {
    OpStream::Op op;
    op.is_read = r.is_read;
    op.block = r.offset / kBlockSize;
    op.nblocks = static_cast<uint32_t>(r.length / kBlockSize);
    return op;
  };

  if (opts.closed_loop) {
    size_t idx = 0;
    drv.next_op = [&]() -> std::optional<OpStream::Op> {
      if (idx >= trace.size()) return std::nullopt;
      return to_op(trace[idx++]);
    };
    drv.pump();
    vol->clock()->run_until_idle();
  } else {
    // Open loop: arrivals enter a FIFO at their trace time; the driver takes
    // from the FIFO whenever a queue slot is free.
    std::deque<OpStream::Op> ready;
    drv.next_op = [&]() -> std::optional<OpStream::Op> {
      if (ready.empty()) return std::nullopt;
      OpStream::Op op = ready.front();
      ready.pop_front();
      return op;
    };
    SimTime base = vol->clock()->now();
    for (const TraceRecord& r : trace) {
      vol->clock()->schedule_at(base + r.time_us * 1000, [&, r]() {
        ready.push_back(to_op(r));
        drv.pump();
      });
    }
    vol->clock()->run_until_idle();
  }
  vol->drain();

  BenchResult r;
  drv.fill_result(&r);
  report_failures(drv);
  if (opts.final_readback) {
    uint64_t mism = 0;
    auto dg = readback_digest(vol, &shadow, &mism);
    if (!dg.ok()) return dg.status;
    r.readback_digest = *dg;
    r.readback_checked = true;
    r.verify_failures += mism;
  }
  if (!vol->first_error().ok()) return vol->first_error();
  r.snap = vol->metrics();
  return r;
}

// ---------------------------------------------------------------------------
// Simulation scaffolding

std::vector<ZnsDevice*> SimSetup::device_ptrs() const {
  std::vector<ZnsDevice*> out;
  out.reserve(drives.size());
  for (const auto& d : drives) out.push_back(d.get());
  return out;
}

Result<SimSetup> make_sim(const DeviceGeometry& geo,
                          const VolumeParams& params) {
  SimSetup s;
  s.clock = std::make_unique<SimClock>();
  for (uint32_t d = 0; d < params.drives; ++d)
    s.drives.push_back(std::make_unique<ZnsDevice>(geo, s.clock.get(), d));
  auto rv = Volume::create(s.clock.get(), s.device_ptrs(), params);
  if (!rv.ok()) return rv.status;
  s.volume = std::move(*rv);
  return Result<SimSetup>(std::move(s));
}

Result<uint64_t> data_capacity_blocks(const DeviceGeometry& geo,
                                      const VolumeParams& params) {
  auto shape = scheme_shape(params.scheme, params.drives);
  if (!shape.ok()) return shape.status;
  auto sg = compute_segment_geometry(geo.zone_capacity_blocks,
                                     params.chunk_small_blocks);
  if (!sg.ok()) return sg.status;
  uint64_t per_segment = static_cast<uint64_t>(sg->stripes) *
                         sg->chunk_blocks * shape->k;
  return static_cast<uint64_t>(geo.num_zones) * per_segment;
}

uint64_t logical_bytes_for_reserved(uint64_t capacity_blocks, double reserved) {
  double blocks = static_cast<double>(capacity_blocks) / (1.0 + reserved);
  return static_cast<uint64_t>(blocks) * kBlockSize;
}

// ---------------------------------------------------------------------------
// Crash testing

std::string CrashTestReport::csv() const {
  std::ostringstream os;
  os << "point,during_gc,pass,acked_writes,blocks_checked,detail\n";
  for (const CrashPointResult& p : points) {
    std::string d = p.detail;
    for (char& c : d)
      if (c == ',' || c == '\n') c = ';';
    os << p.point << "," << (p.during_gc ? 1 : 0) << "," << (p.pass ? 1 : 0)
       << "," << p.acked_writes << "," << p.blocks_checked << "," << d << "\n";
  }
  return os.str();
}

namespace {

// One crash point: deterministically re-run the workload, cut at the n-th
// applied device command, recover from the cut, and verify.
CrashPointResult run_crash_point(const CrashTestConfig& cfg, uint64_t n,
                                 bool during_gc) {
  CrashPointResult r;
  r.point = n;
  r.during_gc = during_gc;

  auto simr = make_sim(cfg.geometry, cfg.params);
  if (!simr.ok()) {
    r.detail = "setup: " + simr.status.message;
    return r;
  }
  SimSetup sim = std::move(*simr);
  uint64_t logical_blocks = cfg.params.logical_bytes / kBlockSize;
  ShadowModel shadow(logical_blocks, cfg.workload.seed);

  auto rec_clock = std::make_unique<SimClock>();
  std::vector<std::unique_ptr<ZnsDevice>> snaps;
  std::optional<ShadowModel> crash_shadow;
  auto take_snapshot = [&]() {
    for (const auto& d : sim.drives)
      snaps.push_back(d->snapshot_durable(rec_clock.get()));
    crash_shadow = shadow;
  };

  if (n == 0) {
    take_snapshot();
  } else {
    uint64_t applied = 0;
    for (const auto& d : sim.drives)
      d->set_observer([&](const CommandRecord& cr) {
        if (!cr.completed) return;
        if (++applied == n) take_snapshot();
      });
  }

  BenchOptions bo;
  bo.shadow = &shadow;
  bo.verify_reads = false;  // the post-crash check is the point here
  auto br = run_bench(sim.volume.get(), cfg.workload, bo);
  if (!br.ok()) {
    r.detail = "workload: " + br.status.message;
    return r;
  }
  if (!crash_shadow) {
    r.detail = "crash point beyond the end of the run";
    return r;
  }

  std::vector<ZnsDevice*> snap_ptrs;
  for (const auto& d : snaps) snap_ptrs.push_back(d.get());
  VolumeParams rp = cfg.params;
  if (cfg.check_idempotent) rp.gc_free_threshold = 0;  // digests must be stable
  RecoveryReport rr;
  auto rv = Volume::recover(rec_clock.get(), snap_ptrs, rp, &rr);
  if (!rv.ok()) {
    r.detail = "recover: " + rv.status.message;
    return r;
  }
  std::unique_ptr<Volume> vol = std::move(*rv);

  for (uint64_t b = 0; b < logical_blocks; ++b)
    if (crash_shadow->newest_acked(b) != 0) ++r.acked_writes;

  // Verify every block that was ever submitted to.
  std::string first_fail;
  for (uint64_t b : crash_shadow->touched()) {
    bool done = false;
    Status rst = Status::success();
    std::vector<uint8_t> data;
    vol->read(b * kBlockSize, kBlockSize,
              [&](Status st, std::vector<uint8_t> d) {
                rst = st;
                data = std::move(d);
                done = true;
              });
    rec_clock->run_until_idle();
    if (!done || !rst.ok()) {
      if (first_fail.empty())
        first_fail = describe_block(b, done ? ("read failed: " + rst.message).c_str()
                                            : "read never completed");
      continue;
    }
    ++r.blocks_checked;
    std::string err = crash_shadow->check_crash_read(b, data);
    if (!err.empty() && first_fail.empty()) first_fail = std::move(err);
  }
  if (!first_fail.empty()) {
    r.detail = first_fail;
    return r;
  }

  if (cfg.check_idempotent) {
    // Recover-of-recover must converge: cut the recovered (drained) volume,
    // recover again, and compare user-visible state digests.
    uint64_t d1 = vol->state_digest();
    auto clock2 = std::make_unique<SimClock>();
    std::vector<std::unique_ptr<ZnsDevice>> snaps2;
    for (auto* d : snap_ptrs) snaps2.push_back(d->snapshot_durable(clock2.get()));
    // snap_ptrs devices were mutated by the first recovery; their durable view
    // now matches what a second crash immediately after it would see.
    std::vector<ZnsDevice*> ptrs2;
    for (const auto& d : snaps2) ptrs2.push_back(d.get());
    RecoveryReport rr2;
    auto rv2 = Volume::recover(clock2.get(), ptrs2, rp, &rr2);
    if (!rv2.ok()) {
      r.detail = "second recover: " + rv2.status.message;
      return r;
    }
    uint64_t d2 = (*rv2)->state_digest();
    if (d1 != d2) {
      r.detail = "recovery is not idempotent (state digests differ)";
      return r;
    }
  }

  r.pass = true;
  return r;
}

}  // namespace

Result<CrashTestReport> run_crashtest(const CrashTestConfig& cfg) {
  Status vs = cfg.workload.validate(cfg.params.logical_bytes);
  if (!vs.ok()) return vs;

  CrashTestReport rep;
  std::vector<uint8_t> gc_flag;  // applied-command index (1-based) -> in GC?
  {
    auto simr = make_sim(cfg.geometry, cfg.params);
    if (!simr.ok()) return simr.status;
    SimSetup sim = std::move(*simr);
    Volume* volp = sim.volume.get();
    for (const auto& d : sim.drives)
      d->set_observer([&gc_flag, volp](const CommandRecord& cr) {
        if (!cr.completed) return;
        gc_flag.push_back(volp->gc_active() ? 1 : 0);
      });
    BenchOptions bo;
    auto br = run_bench(volp, cfg.workload, bo);
    if (!br.ok()) return br.status;
    rep.total_commands = gc_flag.size();
  }

  std::set<uint64_t> points(cfg.points.begin(), cfg.points.end());
  if (cfg.exhaustive)
    for (uint64_t n = 0; n <= rep.total_commands; ++n) points.insert(n);
  if (cfg.random_points > 0) {
    std::vector<uint64_t> pool;
    if (cfg.mid_gc_points) {
      for (uint64_t i = 0; i < gc_flag.size(); ++i)
        if (gc_flag[i]) pool.push_back(i + 1);
    }
    if (pool.empty())
      for (uint64_t i = 1; i <= rep.total_commands; ++i) pool.push_back(i);
    std::mt19937_64 rng(cfg.schedule_seed * 0x9e3779b97f4a7c15ull + 1);
    uint32_t want = cfg.random_points;
    uint64_t attempts = 0;
    while (want > 0 && attempts < static_cast<uint64_t>(cfg.random_points) * 64) {
      ++attempts;
      uint64_t n = pool[bounded_draw(rng, pool.size())];
      if (points.insert(n).second) --want;
      if (points.size() >= pool.size() + cfg.points.size() +
                               (cfg.exhaustive ? rep.total_commands + 1 : 0))
        break;
    }
  }

  for (uint64_t n : points) {
    if (n > rep.total_commands) continue;
    bool in_gc = n >= 1 && n <= gc_flag.size() && gc_flag[n - 1];
    CrashPointResult pr = run_crash_point(cfg, n, in_gc);
    if (!pr.pass) ++rep.failures;
    rep.points.push_back(std::move(pr));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Rebuild scenario

Result<RebuildResult> run_rebuild(const RebuildScenario& sc) {
  auto simr = make_sim(sc.geometry, sc.params);
  if (!simr.ok()) return simr.status;
  SimSetup sim = std::move(*simr);
  Volume* vol = sim.volume.get();
  uint64_t logical_blocks = sc.params.logical_bytes / kBlockSize;
  ShadowModel shadow(logical_blocks, sc.fill.seed);

  RebuildResult out;
  {
    BenchOptions bo;
    bo.shadow = &shadow;
    auto br = run_bench(vol, sc.fill, bo);
    if (!br.ok()) return br.status;
    out.fill_result = std::move(*br);
    if (out.fill_result.verify_failures > 0)
      return Status::error(Errc::VerifyFailed, "fill phase failed verification");
  }
  out.fill_ns = sim.clock->now();
  out.stored_user_blocks = out.fill_result.snap.counters.user_write_blocks;

  // Pre-failure durable images of the drives about to fail.
  std::vector<std::string> pre_images(sc.fail_drives.size());
  if (sc.verify_images) {
    for (size_t i = 0; i < sc.fail_drives.size(); ++i) {
      std::ostringstream os;
      Status st = sim.drives[sc.fail_drives[i]]->serialize(os);
      if (!st.ok()) return st;
      pre_images[i] = os.str();
    }
  }

  for (uint32_t d : sc.fail_drives) {
    if (d >= sim.drives.size())
      return Status::error(Errc::InvalidArgument, "bad drive index");
    sim.drives[d]->fail();
  }

  SimTime t0 = sim.clock->now();
  out.images_equal = true;
  for (size_t i = 0; i < sc.fail_drives.size(); ++i) {
    uint32_t d = sc.fail_drives[i];
    auto repl = std::make_unique<ZnsDevice>(sc.geometry, sim.clock.get(), d);
    Status st = vol->rebuild_drive(d, repl.get());
    if (!st.ok()) return st;
    if (sc.verify_images) {
      std::ostringstream os;
      Status s2 = repl->serialize(os);
      if (!s2.ok()) return s2;
      if (os.str() != pre_images[i]) out.images_equal = false;
      out.images_checked = true;
    }
    sim.drives[d] = std::move(repl);  // keep the swapped-in device alive
  }
  out.rebuild_ns = sim.clock->now() - t0;

  if (sc.verify_readback) {
    uint64_t mism = 0;
    auto dg = readback_digest(vol, &shadow, &mism);
    if (!dg.ok()) return dg.status;
    out.readback_mismatches = mism;
  }
  return out;
}

}  // namespace zlraid
