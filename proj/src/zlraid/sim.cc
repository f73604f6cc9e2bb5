#include "zlraid/sim.h"

#include <cassert>

namespace zlraid {

SimClock::EventId SimClock::schedule_at(SimTime at, std::function<void()> fn) {
  assert(at >= now_);
  EventId id = next_id_++;
  queue_.push(Event{at, id, std::move(fn)});
  ++live_events_;
  return id;
}

void SimClock::cancel(EventId id) {
  if (id == 0) return;
  cancelled_.insert(id);
  if (live_events_ > 0) --live_events_;
}

bool SimClock::step() {
  while (!queue_.empty()) {
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    auto it = cancelled_.find(ev.id);
    if (it != cancelled_.end()) {
      cancelled_.erase(it);
      continue;
    }
    assert(ev.at >= now_);
    now_ = ev.at;
    --live_events_;
    ++processed_;
    ev.fn();
    return true;
  }
  return false;
}

void SimClock::run_until_idle() {
  while (step()) {
  }
}

}  // namespace zlraid
