#pragma once

#include <array>
#include <optional>
#include <vector>

#include "flexsim/common.hpp"
#include "flexsim/crypto.hpp"
#include "flexsim/event_log.hpp"
#include "flexsim/physmem.hpp"
#include "flexsim/timing.hpp"

namespace flexsim {

enum class NpuMode : std::uint8_t { Unprotected, Protected };
enum class ReclaimMode : std::uint8_t { Eager, Lazy };

struct NpuDriverImage {
  std::vector<PageId> code_pages;
  std::vector<PageId> data_pages;

  std::vector<PageId> all() const {
    std::vector<PageId> v = code_pages;
    v.insert(v.end(), data_pages.begin(), data_pages.end());
    return v;
  }
};

enum class TableRef : std::uint8_t { S2Normal, S2Sandbox, SmmuDisk, SmmuNpu };

// Charge policy for protect_pages: Full carries the measured end-to-end
// allocation cost; Transition is the in-pipeline state flip whose cost was
// already attributed to the allocation stage.
enum class ProtectCharge : std::uint8_t { Full, Transition };

// Hypervisor-level reference monitor. Owns both stage-2 tables, the SMMU
// tables, the NPU mode and the freeze/verify record. Value-semantic so the
// security explorer can snapshot whole worlds cheaply; every operation takes
// the PhysicalMemory it acts on.
class Monitor {
 public:
  Monitor() = default;
  Monitor(PhysicalMemory& mem, const TimingModel& timing, std::uint64_t image_seed,
          std::uint32_t driver_code_frames = 1, std::uint32_t driver_data_frames = 1);

  // --- access routing -----------------------------------------------------
  // Every CPU access in the simulation funnels through here. Writes must
  // carry the full new page content; a normal-actor write to a lazy-reclaim
  // page is routed through on_reuse so pre-release bytes are never
  // observable.
  Result<AccessOutcome> cpu_access(PhysicalMemory& mem, Actor actor, PageId page,
                                   AccessKind kind,
                                   std::optional<PageContent> write_content,
                                   OpCtx& ctx);

  Result<AccessOutcome> dma_access(PhysicalMemory& mem, DeviceId device, PageId page,
                                   AccessKind kind,
                                   std::optional<PageContent> write_content,
                                   OpCtx& ctx);

  // --- table mutators (monitor-only primitives) ---------------------------
  Status map_pages(PhysicalMemory& mem, Actor caller, TableRef table,
                   const std::vector<PageId>& pages, OpCtx& ctx);
  Status unmap_pages(PhysicalMemory& mem, Actor caller, TableRef table,
                     const std::vector<PageId>& pages, OpCtx& ctx);

  // Kernel-visible SMMU reconfiguration. With protection enabled the write
  // is intercepted and checked; mappings of protected pages are refused.
  // With protection disabled the write lands directly.
  enum class SmmuCharge : std::uint8_t { None, Baseline };
  Status kernel_smmu_reconfig(PhysicalMemory& mem, DeviceId device,
                              const std::vector<PageId>& add_pages, bool remove,
                              OpCtx& ctx, SmmuCharge charge = SmmuCharge::None);

  // --- protection state transitions ---------------------------------------
  Status protect_pages(PhysicalMemory& mem, const std::vector<PageId>& pages,
                       OpCtx& ctx, ProtectCharge charge = ProtectCharge::Full);
  Status unprotect_pages(PhysicalMemory& mem, const std::vector<PageId>& pages,
                         ReclaimMode mode, OpCtx& ctx);
  Status on_reuse(PhysicalMemory& mem, PageId page,
                  std::optional<PageContent> new_content, OpCtx& ctx);

  Status npu_set_mode(PhysicalMemory& mem, NpuMode target, OpCtx& ctx);
  // Grants FlexMem pages to the protected NPU; charged at the secure SMMU
  // setup rate.
  Status npu_grant(PhysicalMemory& mem, const std::vector<PageId>& pages, OpCtx& ctx);
  Status npu_revoke(const std::vector<PageId>& pages, OpCtx& ctx);

  Status freeze(PhysicalMemory& mem, OpCtx& ctx);
  Status unfreeze(PhysicalMemory& mem, OpCtx& ctx);

  // --- state --------------------------------------------------------------
  bool protection_enabled() const { return protection_enabled_; }
  bool halted() const { return halted_; }
  NpuMode npu_mode() const { return npu_mode_; }
  const std::optional<crypto::Digest256>& frozen_hash() const { return frozen_hash_; }
  const Stage2Table& s2_normal() const { return s2_normal_; }
  const Stage2Table& s2_sandbox() const { return s2_sandbox_; }
  const SmmuTable& smmu(DeviceId d) const { return smmu_tables_[static_cast<int>(d)]; }
  const NpuDriverImage& driver() const { return driver_; }
  FrameRange monitor_region() const { return monitor_region_; }
  bool npu_task_inflight() const { return npu_task_inflight_; }
  void set_npu_task_inflight(bool v) { npu_task_inflight_ = v; }
  const TimingModel& timing() const { return timing_; }

  // Digest over the monitor image: region page bytes plus both stage-2
  // tables in canonical (sorted-entry) form.
  crypto::Digest256 image_digest(const PhysicalMemory& mem) const;

  // Full invariant sweep; O(frames), used by tests and the explorer.
  Status validate(const PhysicalMemory& mem) const;

 private:
  Status map_one(PhysicalMemory& mem, TableRef table, PageId page);
  SmmuTable& smmu_mut(DeviceId d) { return smmu_tables_[static_cast<int>(d)]; }
  void drop_from_all_smmu(PageId page);
  Status ensure_enabled(PhysicalMemory& mem, OpCtx& ctx);

  TimingModel timing_;
  FrameRange monitor_region_{};
  Stage2Table s2_normal_;
  Stage2Table s2_sandbox_;
  std::array<SmmuTable, kDeviceCount> smmu_tables_{};
  NpuDriverImage driver_;
  NpuMode npu_mode_ = NpuMode::Unprotected;
  bool protection_enabled_ = true;
  bool halted_ = false;
  bool npu_task_inflight_ = false;
  std::optional<crypto::Digest256> frozen_hash_;
  PageBitset npu_unprotected_mapping_;  // saved across mode switches
};

}  // namespace flexsim
