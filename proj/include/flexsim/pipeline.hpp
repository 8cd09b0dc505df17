#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "flexsim/model.hpp"
#include "flexsim/runtime.hpp"

namespace flexsim {

// FlexServe: per-layer page-granular allocation, pipelined, NPU.
// StrawmanOpt: contiguous carve upfront, pipelined, NPU.
// Strawman: contiguous carve upfront, serial stages, CPU.
// NwBase: no protection, pipelined, NPU (performance upper bound).
enum class ExecutionMode : std::uint8_t { FlexServe, StrawmanOpt, Strawman, NwBase };
const char* execution_mode_name(ExecutionMode m);
ExecutionMode execution_mode_from_name(const std::string& name);

struct LayerSpans {
  std::uint32_t layer = 0;
  bool cached = false;
  SimTime alloc_start = 0, alloc_end = 0;
  SimTime load_start = 0, load_end = 0;
  SimTime decrypt_start = 0, decrypt_end = 0;
  SimTime compute_start = 0, compute_end = 0;
};

struct PrefillResult {
  Status status;
  SimTime request_start = 0;
  SimTime first_token_time = 0;
  SimDuration ttft_us = 0;
  SimDuration stall_us_total = 0;
  SimDuration compute_span_total_us = 0;  // forward-pass time only, no launch
  std::vector<LayerSpans> per_layer;
  std::uint64_t sequence_id = 0;
};

struct PrefillParams {
  ExecutionMode mode = ExecutionMode::FlexServe;
  std::uint64_t prompt_tokens = 0;
  // Treat the first k layers as warm without consulting the weight cache
  // (what-if runs and oracles).
  std::optional<std::uint32_t> forced_cached_prefix;
  // Consult and update the persistent weight cache (FlexServe only).
  bool use_weight_cache = false;
  // Background memory pressure fed to the contiguous-allocation cost curve.
  std::uint64_t background_bytes = 0;
  // Baseline modes pre-allocate KV space for this many output tokens.
  std::uint64_t max_new_tokens = 128;
  std::uint64_t sequence_id = 0;  // 0 = allocate fresh
  std::uint64_t request_id = 0;
  // Release weights and the contiguous region when the run completes.
  bool release_at_end = false;
};

struct DecodeParams {
  ExecutionMode mode = ExecutionMode::FlexServe;
  std::uint64_t sequence_id = 0;
  std::uint64_t n_new_tokens = 0;
};

struct DecodeResult {
  Status status;
  std::vector<SimDuration> token_us;
  SimTime end_time = 0;
};

// Schedules inference phases as event graphs on the runtime's channels.
class Pipeline {
 public:
  explicit Pipeline(SimRt& rt) : rt_(&rt) {}

  void start_prefill(const ModelManifest& model, const PrefillParams& params,
                     std::function<void(PrefillResult)> done);
  void start_decode(const ModelManifest& model, const DecodeParams& params,
                    std::function<void(DecodeResult)> done);

 private:
  SimRt* rt_;
};

// Synchronous secure-loading sequence for one layer: DMA of ciphertext into
// the still-unprotected grant, protection flip, in-secure-world decrypt and
// digest check. Charges `ctx` with the load and decrypt latencies.
Status secure_load_layer(SimRt& rt, const ModelManifest& model, std::uint32_t layer,
                         const AllocationGrant& grant, OpCtx& ctx);

// Closed-form twin of the event-driven prefill; must agree with the engine
// to the microsecond on clean runs. Used by the zero-stall search.
struct PrefillEstimate {
  SimDuration ttft_us = 0;
  SimDuration stall_us = 0;
};

struct EstimateFlags {
  bool unfreeze_needed = true;    // first secure use pays the verify cost
  bool npu_switch_needed = true;  // mode flip at request start
};

PrefillEstimate estimate_prefill(const TimingModel& timing, const ModelManifest& model,
                                 ExecutionMode mode, std::uint64_t prompt_tokens,
                                 std::uint32_t cached_prefix, std::uint64_t background_bytes,
                                 std::uint64_t max_new_tokens, std::uint32_t kv_block_tokens,
                                 EstimateFlags flags = {});

}  // namespace flexsim
