#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flexsim/common.hpp"
#include "flexsim/crypto.hpp"

namespace flexsim {

// One record in the simulation trace. `detail` is a compact
// "key=value;key=value" string holding only integers and identifiers so the
// serialized log is bit-reproducible.
struct SimEvent {
  std::uint64_t id = 0;
  SimTime time_us = 0;
  Actor actor = Actor::Monitor;
  std::string action;
  std::string detail;
  std::uint64_t parent = 0;  // 0 = no causal parent
};

class EventLog {
 public:
  // Records keep their insertion sequence as `id`; export order is
  // (time_us, id), which is a total order.
  std::uint64_t record(SimTime time_us, Actor actor, std::string action,
                       std::string detail = {}, std::uint64_t parent = 0);

  const std::vector<SimEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  void clear();

  // Events sorted by (time_us, id).
  std::vector<SimEvent> ordered() const;

  crypto::Digest256 digest() const;

  void write_jsonl(std::ostream& os) const;
  void write_csv(std::ostream& os) const;

 private:
  std::vector<SimEvent> events_;
  std::uint64_t next_id_ = 1;
};

// Charging context handed to synchronous module operations. Operations add
// their modeled latency with charge(); the caller turns the accumulated
// duration into an event span.
struct OpCtx {
  SimTime start = 0;
  SimDuration elapsed = 0;
  EventLog* log = nullptr;
  Actor actor = Actor::Monitor;
  std::uint64_t parent = 0;

  SimTime now() const { return start + elapsed; }
  void charge(SimDuration d) { elapsed += d; }
  std::uint64_t record(Actor a, std::string action, std::string detail = {}) {
    if (log == nullptr) return 0;
    return log->record(now(), a, std::move(action), std::move(detail), parent);
  }
};

}  // namespace flexsim
