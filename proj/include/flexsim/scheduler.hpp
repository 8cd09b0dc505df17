#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "flexsim/pipeline.hpp"
#include "flexsim/runtime.hpp"

namespace flexsim {

// Minimal number of earliest layers that must stay resident for pipelined
// prefill to run without waiting on weight loading or decryption. Binary
// search over the closed-form pipeline; TTFT(k) is non-increasing in k, so
// the first k with TTFT(k) == TTFT(all cached) is minimal.
std::uint32_t zero_stall_prefix(const TimingModel& timing, const ModelManifest& model,
                                std::uint64_t prompt_tokens, std::uint32_t kv_block_tokens,
                                EstimateFlags flags = {});

// For a prompt-length distribution the conservative line is the max over
// support points.
std::uint32_t zero_stall_prefix_for_distribution(
    const TimingModel& timing, const ModelManifest& model,
    const std::vector<std::pair<std::uint64_t, double>>& prompt_distribution,
    std::uint32_t kv_block_tokens, EstimateFlags flags = {});

struct WorkflowStep {
  std::string model_id;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t output_tokens = 0;
};

struct WorkflowSpec {
  std::string name;
  std::vector<WorkflowStep> steps;
  bool predictable = true;  // next-model identity known ahead of time

  void validate() const {
    if (steps.empty()) throw ConfigError("workflow: no steps");
  }
};

struct PrefetchOutcome {
  Status status;
  std::uint32_t layers_prefetched = 0;
  bool truncated = false;  // budget ran out; prefix kept, tail skipped
};

// Background-loads the next model's first `target_layers` layers on the I/O
// and decrypt lanes, overlapping the current model's decode. When the frame
// budget runs short it evicts the current model's tail layers first and then
// truncates, keeping whatever prefix fits.
void start_prefetch(SimRt& rt, const ModelManifest& next_model, std::uint32_t target_layers,
                    const std::string& current_model_id,
                    std::function<void(PrefetchOutcome)> done);

struct ModelShareStats {
  double request_freq_ewma = 0.0;
  std::uint64_t typical_prompt_tokens = 128;
  double cached_fraction = 0.0;
};

struct CacheShareState {
  std::map<std::string, ModelShareStats> models;
  std::uint64_t watermark_bytes = 0;

  void observe_request(const std::string& model_id, std::uint64_t prompt_tokens,
                       double ewma_alpha = 0.2);
};

struct CacheShareAssignment {
  std::map<std::string, std::uint32_t> layers;  // resident prefix per model
  CacheShareState state;                        // updated cached_fraction
};

// Splits the budget across models by greedy marginal value: frequency times
// the stall reduction of the next earliest layer, per byte. Ties break by
// model id. Never exceeds the budget; shrinking the budget never grows any
// model's share.
CacheShareAssignment adjust_cache_shares(
    const CacheShareState& stats, std::uint64_t budget_bytes,
    const std::map<std::string, const ModelManifest*>& manifests, const TimingModel& timing,
    std::uint32_t kv_block_tokens);

}  // namespace flexsim
