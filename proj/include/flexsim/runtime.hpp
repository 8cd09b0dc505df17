#pragma once

#include "flexsim/daemon.hpp"
#include "flexsim/engine.hpp"
#include "flexsim/event_log.hpp"
#include "flexsim/memmgr.hpp"
#include "flexsim/monitor.hpp"
#include "flexsim/physmem.hpp"
#include "flexsim/timing.hpp"

namespace flexsim {

// Non-owning wiring bundle handed to pipelines and schedulers. One I/O lane
// and one compute lane model the single-NVMe/single-NPU device; the alloc
// lane serializes monitor work and the decrypt lane the secure-world CPU.
struct SimRt {
  Engine* engine = nullptr;
  EventLog* log = nullptr;
  PhysicalMemory* mem = nullptr;
  Monitor* monitor = nullptr;
  FlexMemDaemon* daemon = nullptr;
  MemoryManager* memmgr = nullptr;
  TimingModel timing;

  Channel* ch_alloc = nullptr;
  Channel* ch_io = nullptr;
  Channel* ch_decrypt = nullptr;
  Channel* ch_compute = nullptr;

  OpCtx ctx_at_now(Actor actor = Actor::Monitor) const {
    OpCtx ctx;
    ctx.start = engine->now();
    ctx.log = log;
    ctx.actor = actor;
    return ctx;
  }
};

}  // namespace flexsim
