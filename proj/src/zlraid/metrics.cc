#include "zlraid/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace zlraid {

SimTime LatencyRecorder::percentile(double p) const {
  if (samples_.empty()) return 0;
  std::vector<SimTime> sorted(samples_);
  std::sort(sorted.begin(), sorted.end());
  double rank = p / 100.0 * static_cast<double>(sorted.size());
  size_t idx = static_cast<size_t>(std::ceil(rank));
  if (idx == 0) idx = 1;
  if (idx > sorted.size()) idx = sorted.size();
  return sorted[idx - 1];
}

SimTime LatencyRecorder::mean() const {
  if (samples_.empty()) return 0;
  unsigned __int128 sum = 0;
  for (SimTime s : samples_) sum += s;
  return static_cast<SimTime>(sum / samples_.size());
}

std::string format_mibs(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string MetricsSnapshot::to_json() const {
  std::ostringstream os;
  os << "{";
  os << "\"sim_now_ns\":" << sim_now_ns;
  os << ",\"user_write_blocks\":" << counters.user_write_blocks;
  os << ",\"user_read_blocks\":" << counters.user_read_blocks;
  os << ",\"device_write_blocks\":" << counters.device_write_blocks;
  os << ",\"device_read_blocks\":" << counters.device_read_blocks;
  os << ",\"gc_moved_blocks\":" << counters.gc_moved_blocks;
  os << ",\"write_amplification\":" << format_mibs(write_amplification);
  os << ",\"stripes_formed\":" << counters.stripes_formed;
  os << ",\"fill_timeouts\":" << counters.fill_timeouts;
  os << ",\"segments_sealed\":" << counters.segments_sealed;
  os << ",\"gc_runs\":" << counters.gc_runs;
  os << ",\"degraded_reads\":" << counters.degraded_reads;
  os << ",\"cst_entries_inspected\":" << counters.cst_entries_inspected;
  os << ",\"l2p_group_faults\":" << l2p.group_faults;
  os << ",\"l2p_mapping_block_writes\":" << l2p.mapping_block_writes;
  os << ",\"l2p_resident_bytes\":" << l2p.resident_bytes;
  os << ",\"cst_memory_bytes\":" << cst_memory_bytes;
  os << ",\"free_zones_min\":" << free_zones_min;
  os << "}";
  return os.str();
}

std::string metrics_csv(const MetricsSnapshot& snap,
                        const std::vector<std::pair<std::string, std::string>>& extra) {
  std::ostringstream os;
  os << "key,value\n";
  auto row = [&os](const std::string& k, const std::string& v) {
    os << k << "," << v << "\n";
  };
  row("sim_now_ns", std::to_string(snap.sim_now_ns));
  row("user_write_blocks", std::to_string(snap.counters.user_write_blocks));
  row("user_read_blocks", std::to_string(snap.counters.user_read_blocks));
  row("device_write_blocks", std::to_string(snap.counters.device_write_blocks));
  row("device_read_blocks", std::to_string(snap.counters.device_read_blocks));
  row("parity_blocks", std::to_string(snap.counters.parity_blocks));
  row("padding_blocks", std::to_string(snap.counters.padding_blocks));
  row("mapping_blocks", std::to_string(snap.counters.mapping_blocks));
  row("gc_moved_blocks", std::to_string(snap.counters.gc_moved_blocks));
  row("write_amplification", format_mibs(snap.write_amplification));
  row("stripes_formed", std::to_string(snap.counters.stripes_formed));
  row("fill_timeouts", std::to_string(snap.counters.fill_timeouts));
  row("segments_opened", std::to_string(snap.counters.segments_opened));
  row("segments_sealed", std::to_string(snap.counters.segments_sealed));
  row("gc_runs", std::to_string(snap.counters.gc_runs));
  row("gc_reset_zones", std::to_string(snap.counters.gc_reset_zones));
  row("degraded_reads", std::to_string(snap.counters.degraded_reads));
  row("cst_entries_inspected", std::to_string(snap.counters.cst_entries_inspected));
  row("cst_entries_inspected_max", std::to_string(snap.counters.cst_entries_inspected_max));
  row("l2p_lookups", std::to_string(snap.l2p.lookups));
  row("l2p_group_faults", std::to_string(snap.l2p.group_faults));
  row("l2p_mapping_block_reads", std::to_string(snap.l2p.mapping_block_reads));
  row("l2p_mapping_block_writes", std::to_string(snap.l2p.mapping_block_writes));
  row("l2p_clean_drops", std::to_string(snap.l2p.clean_drops));
  row("l2p_resident_groups", std::to_string(snap.l2p.resident_groups));
  row("l2p_resident_bytes", std::to_string(snap.l2p.resident_bytes));
  row("cst_memory_bytes", std::to_string(snap.cst_memory_bytes));
  row("free_zones_min", std::to_string(snap.free_zones_min));
  for (const auto& kv : extra) row(kv.first, kv.second);
  return os.str();
}

}  // namespace zlraid
