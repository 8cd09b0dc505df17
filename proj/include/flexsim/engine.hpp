#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "flexsim/common.hpp"
#include "flexsim/event_log.hpp"

namespace flexsim {

using EventFn = std::function<void()>;

class CycleDetected : public std::runtime_error {
 public:
  explicit CycleDetected(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic min-time-first event engine. Ties are broken by insertion
// order. The engine is the single serialization point of a simulation; no
// module advances time on its own.
class Engine {
 public:
  explicit Engine(EventLog* log = nullptr) : log_(log) {}

  SimTime now() const { return now_; }
  EventLog* log() { return log_; }
  void set_log(EventLog* log) { log_ = log; }

  std::uint64_t at(SimTime time_us, EventFn fn);
  std::uint64_t after(SimDuration delay_us, EventFn fn) {
    return at(now_ + delay_us, fn);
  }

  // Completion tokens let events depend on work finished elsewhere. If the
  // engine drains with waiters still pending, the dependency graph had a
  // cycle (an event awaited a completion only it would have produced).
  std::uint64_t make_completion(std::string label);
  void on_complete(std::uint64_t token, EventFn fn);
  void complete(std::uint64_t token);
  bool completed(std::uint64_t token) const;

  // Runs until no events remain. Throws CycleDetected when unfired
  // completions still have waiters at quiescence.
  void run_until_quiescent();

  bool running() const { return running_; }

 private:
  struct Scheduled {
    SimTime time;
    std::uint64_t seq;
    EventFn fn;
  };
  struct ByTimeSeq {
    bool operator()(const Scheduled& a, const Scheduled& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.seq > b.seq;
    }
  };
  struct CompletionState {
    std::string label;
    bool done = false;
    std::vector<EventFn> waiters;
  };

  SimTime now_ = 0;
  std::uint64_t next_seq_ = 1;
  std::uint64_t next_token_ = 1;
  bool running_ = false;
  std::priority_queue<Scheduled, std::vector<Scheduled>, ByTimeSeq> queue_;
  std::unordered_map<std::uint64_t, CompletionState> completions_;
  EventLog* log_;
};

// FIFO-serialized resource (an I/O lane, the compute unit, the monitor
// path). Jobs run back to back; the work callback executes at job start and
// returns the job's duration, the done callback fires at job end.
class Channel {
 public:
  Channel(Engine& engine, std::string name) : engine_(&engine), name_(std::move(name)) {}

  using WorkFn = std::function<SimDuration()>;
  using DoneFn = std::function<void(SimTime start, SimTime end)>;

  void submit(WorkFn work, DoneFn done);

  const std::string& name() const { return name_; }
  SimTime free_at() const { return free_at_; }

 private:
  struct Job {
    WorkFn work;
    DoneFn done;
  };

  void start_next();

  Engine* engine_;
  std::string name_;
  bool busy_ = false;
  SimTime free_at_ = 0;
  std::deque<Job> queue_;
};

}  // namespace flexsim
