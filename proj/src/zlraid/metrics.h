#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zlraid/common.h"
#include "zlraid/l2p.h"

namespace zlraid {

class LatencyRecorder {
 public:
  void add(SimTime ns) { samples_.push_back(ns); }
  size_t count() const { return samples_.size(); }
  // Nearest-rank percentile; 0 when empty.
  SimTime percentile(double p) const;
  SimTime mean() const;

 private:
  std::vector<SimTime> samples_;
};

// Cumulative counters kept by the volume; blocks unless noted.
struct VolumeCounters {
  uint64_t user_write_blocks = 0;   // foreground data, padding excluded
  uint64_t user_read_blocks = 0;
  uint64_t gc_moved_blocks = 0;
  uint64_t padding_blocks = 0;      // zero fill from stripe timeouts
  uint64_t parity_blocks = 0;
  uint64_t header_blocks = 0;
  uint64_t footer_blocks = 0;
  uint64_t mapping_blocks = 0;
  uint64_t device_write_blocks = 0;  // everything the devices were sent
  uint64_t device_read_blocks = 0;
  uint64_t stripes_formed = 0;
  uint64_t fill_timeouts = 0;
  uint64_t segments_opened = 0;
  uint64_t segments_sealed = 0;
  uint64_t gc_runs = 0;
  uint64_t gc_reset_zones = 0;
  uint64_t degraded_reads = 0;
  uint64_t cst_entries_inspected = 0;
  uint64_t cst_entries_inspected_max = 0;
};

struct MetricsSnapshot {
  SimTime sim_now_ns = 0;
  VolumeCounters counters;
  L2pStats l2p;
  uint64_t cst_memory_bytes = 0;
  uint64_t free_zones_min = 0;
  // write_amplification = device writes / user writes (0 if no user writes)
  double write_amplification = 0.0;

  std::string to_json() const;
};

// "key,value" CSV block used by the CLI; keys are stable and ordered so the
// same run always produces byte-identical output.
std::string metrics_csv(const MetricsSnapshot& snap,
                        const std::vector<std::pair<std::string, std::string>>& extra);

std::string format_mibs(double v);

}  // namespace zlraid
