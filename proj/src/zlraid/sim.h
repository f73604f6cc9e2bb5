#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <unordered_set>
#include <vector>

#include "zlraid/common.h"

namespace zlraid {

// Single-threaded discrete-event clock. Everything in the simulation (device
// command completions, fill timers, engine continuations) is scheduled here,
// so a run is fully determined by the submission order. Ties in time are
// broken by scheduling order.
class SimClock {
 public:
  using EventId = uint64_t;

  SimTime now() const { return now_; }

  EventId schedule_at(SimTime at, std::function<void()> fn);
  EventId schedule_after(SimTime delay, std::function<void()> fn) {
    return schedule_at(now_ + delay, std::move(fn));
  }
  // Lazy cancellation; the slot stays queued but won't fire.
  void cancel(EventId id);

  bool has_pending() const { return live_events_ > 0; }
  // Runs one event; returns false when idle.
  bool step();
  void run_until_idle();

  uint64_t events_processed() const { return processed_; }

 private:
  struct Event {
    SimTime at;
    EventId id;
    std::function<void()> fn;
    bool operator>(const Event& o) const {
      return at != o.at ? at > o.at : id > o.id;
    }
  };

  SimTime now_ = 0;
  EventId next_id_ = 1;
  uint64_t live_events_ = 0;
  uint64_t processed_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;
  std::unordered_set<EventId> cancelled_;
};

}  // namespace zlraid
