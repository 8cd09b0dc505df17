#pragma once

#include <memory>

#include "flexsim/pipeline.hpp"
#include "flexsim/runtime.hpp"

namespace flexsim {

struct SimulatorConfig {
  MemoryLayout layout = MemoryLayout::default_device();
  TimingModel timing;
  MemMgrConfig memcfg;
  std::uint64_t seed = 1;
  // On-demand protection: boot with translation off and the monitor image
  // hashed; the first secure operation re-enables and verifies.
  bool start_frozen = true;
  bool enable_log = true;
};

// Owns one simulated world: frames, monitor, daemon, working-set manager,
// the event engine and its four resource lanes.
class Simulator {
 public:
  explicit Simulator(SimulatorConfig cfg = {});

  SimRt& rt() { return rt_; }
  Engine& engine() { return engine_; }
  EventLog& log() { return log_; }
  PhysicalMemory& mem() { return mem_; }
  Monitor& monitor() { return monitor_; }
  FlexMemDaemon& daemon() { return daemon_; }
  MemoryManager& memmgr() { return memmgr_; }
  const SimulatorConfig& config() const { return cfg_; }

  void register_model(const ModelManifest& manifest) { memmgr_.register_model(manifest); }

  // Schedules the phase and drains the engine. Sweep-style callers use
  // these; composed scenarios schedule jobs themselves and drain once.
  PrefillResult run_prefill_blocking(const ModelManifest& model, const PrefillParams& params);
  DecodeResult run_decode_blocking(const ModelManifest& model, const DecodeParams& params);

  OpCtx op_ctx(Actor actor = Actor::Monitor) { return rt_.ctx_at_now(actor); }

 private:
  SimulatorConfig cfg_;
  EventLog log_;
  Engine engine_;
  PhysicalMemory mem_;
  Monitor monitor_;
  FlexMemDaemon daemon_;
  MemoryManager memmgr_;
  Channel ch_alloc_;
  Channel ch_io_;
  Channel ch_decrypt_;
  Channel ch_compute_;
  SimRt rt_;
};

}  // namespace flexsim
