#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flexsim/common.hpp"
#include "flexsim/daemon.hpp"
#include "flexsim/model.hpp"
#include "flexsim/monitor.hpp"
#include "flexsim/physmem.hpp"

namespace flexsim {

struct MemMgrConfig {
  std::uint32_t kv_block_tokens = 16;
  // Closed sequences may be dropped without spilling after this much idle
  // virtual time.
  SimDuration closed_kv_drop_after_us = 60'000'000;
};

struct KvPageInfo {
  std::uint64_t kv_id = 0;
  std::string model_id;
  std::uint64_t sequence_id = 0;
  std::uint32_t token_start = 0;
  std::uint32_t token_count = 0;
  bool spilled = false;
  SimTime last_use = 0;
  std::uint64_t frames = 0;
};

struct FootprintSnapshot {
  SimTime time_us = 0;
  std::uint64_t weights_bytes = 0;
  std::uint64_t kv_bytes = 0;
  std::uint64_t act_bytes = 0;
  std::uint64_t free_frames = 0;
};

struct ReclaimVictim {
  enum class Kind : std::uint8_t { Activation, KvPage, WeightLayer };
  Kind kind = Kind::Activation;
  std::string model_id;       // WeightLayer
  std::uint32_t layer = 0;    // WeightLayer
  std::uint64_t kv_id = 0;    // KvPage
  std::uint64_t request_id = 0;  // Activation
  std::uint64_t frames = 0;
};

// Secure-world working-set manager: layered weight cache (prefix residency),
// paged KV cache with encrypted offload, volatile activation regions, and
// reclaim-victim selection under kernel pressure.
class MemoryManager : public ReclaimDelegate {
 public:
  MemoryManager() = default;
  MemoryManager(PhysicalMemory* mem, Monitor* monitor, FlexMemDaemon* daemon,
                MemMgrConfig config = {});

  void register_model(const ModelManifest& manifest);
  const ModelManifest* manifest(const std::string& model_id) const;

  // --- weights ------------------------------------------------------------
  // Layers become resident strictly in order; eviction runs tail-first, so
  // residency is always a prefix.
  std::uint32_t resident_prefix(const std::string& model_id) const;
  // Prefix of layers whose weights are present (decrypted), <= resident.
  std::uint32_t loaded_prefix(const std::string& model_id) const;
  // Weight layers are allocated staged: the cost lands here, the pages seal
  // to protected state once their encrypted bytes are in.
  Result<AllocationGrant> alloc_layer(const std::string& model_id, std::uint32_t layer,
                                      OpCtx& ctx, bool stage_for_load = true);
  Status mark_layer_loaded(const std::string& model_id, std::uint32_t layer);
  Status evict_tail_layer(const std::string& model_id, OpCtx& ctx);
  // The zero-stall line: eviction keeps at least this prefix unless pressure
  // makes breaking it unavoidable.
  void set_protected_prefix(const std::string& model_id, std::uint32_t k);
  std::uint32_t protected_prefix(const std::string& model_id) const;
  void touch_model(const std::string& model_id, SimTime now);
  std::uint64_t layer_grant(const std::string& model_id, std::uint32_t layer) const;
  // A pinned model backs a running request; its layers are not victims.
  void pin_model(const std::string& model_id, bool pinned);

  // --- KV cache -----------------------------------------------------------
  std::uint64_t allocate_sequence_id() { return next_sequence_id_++; }
  bool has_sequence(std::uint64_t sequence_id) const {
    return sequences_.count(sequence_id) != 0;
  }
  Status open_sequence(const std::string& model_id, std::uint64_t sequence_id);
  Status kv_append(std::uint64_t sequence_id, std::uint32_t n_tokens, OpCtx& ctx);
  Status close_sequence(std::uint64_t sequence_id, SimTime now);
  // Sequences between requests stay open but inactive; only inactive
  // sequences' pages are offload candidates.
  void set_sequence_active(std::uint64_t sequence_id, bool active);
  Status kv_offload(std::uint64_t n_pages, OpCtx& ctx);
  Status kv_restore(std::uint64_t kv_id, OpCtx& ctx);
  std::vector<KvPageInfo> kv_pages() const;
  std::uint64_t kv_resident_pages() const;
  std::uint64_t sequence_tokens(std::uint64_t sequence_id) const;
  // Test hook: corrupt a spilled blob byte.
  void corrupt_spill_blob(std::uint64_t kv_id, std::size_t offset);

  // --- activations --------------------------------------------------------
  Result<std::uint64_t> alloc_activation(std::uint64_t request_id, std::uint64_t bytes,
                                         OpCtx& ctx);
  // Flags the region reclaimable without freeing it yet (victim priority 1).
  void mark_request_completed(std::uint64_t request_id);
  Status complete_request(std::uint64_t request_id, OpCtx& ctx);
  // Protected pages a request's compute touches: its activation region plus
  // the sequence's resident KV pages.
  std::vector<PageId> request_working_pages(std::uint64_t request_id,
                                            std::uint64_t sequence_id) const;

  // --- reclaim ------------------------------------------------------------
  Result<std::vector<ReclaimVictim>> select_reclaim_victims(std::uint64_t n_frames,
                                                            SimTime now) const;
  std::uint64_t reclaim_frames(PhysicalMemory& mem, Monitor& monitor, FlexMemDaemon& daemon,
                               std::uint64_t n_frames, OpCtx& ctx) override;

  // --- accounting ---------------------------------------------------------
  FootprintSnapshot footprint(SimTime now) const;
  // Exact recount: category frames must equal protected frames in memory.
  Status check_residency() const;
  std::uint64_t weights_frames() const;
  std::uint64_t kv_frames_resident() const;
  std::uint64_t act_frames() const;
  std::uint64_t evictable_frames(SimTime now) const;

  const MemMgrConfig& config() const { return config_; }

 private:
  struct ModelCache {
    ModelManifest manifest;
    std::vector<std::uint64_t> layer_grants;  // grant id per resident layer, 0 = absent
    std::uint32_t resident = 0;               // prefix length (allocated)
    std::uint32_t loaded = 0;                 // prefix length (weights present)
    std::uint32_t keep_prefix = 0;            // zero-stall line
    bool pinned = false;
    SimTime last_use = 0;
  };

  struct KvPage {
    KvPageInfo info;
    std::uint64_t grant_id = 0;       // when resident
    crypto::Bytes spill_blob;         // when spilled
    std::uint64_t spill_epoch = 0;
  };

  struct Sequence {
    std::string model_id;
    std::uint64_t sequence_id = 0;
    std::uint64_t tokens = 0;
    bool closed = false;
    bool active = false;
    SimTime closed_at = 0;
    std::vector<std::uint64_t> kv_ids;
  };

  struct Activation {
    std::uint64_t request_id = 0;
    std::uint64_t grant_id = 0;
    std::uint64_t bytes = 0;
    bool completed = false;
  };

  std::uint64_t kv_page_frames(const ModelManifest& m) const;
  crypto::Bytes serialize_kv_content(const KvPage& page) const;
  Status kv_offload_one(std::uint64_t kv_id, OpCtx& ctx);
  Status apply_victim(const ReclaimVictim& v, OpCtx& ctx);

  PhysicalMemory* mem_ = nullptr;
  Monitor* monitor_ = nullptr;
  FlexMemDaemon* daemon_ = nullptr;
  MemMgrConfig config_;
  crypto::AeadKey kv_seal_key_{};

  std::map<std::string, ModelCache> models_;
  std::map<std::uint64_t, KvPage> kv_pages_;
  std::map<std::uint64_t, Sequence> sequences_;
  std::map<std::uint64_t, Activation> activations_;
  std::uint64_t next_kv_id_ = 1;
  std::uint64_t next_sequence_id_ = 1;
};

}  // namespace flexsim
