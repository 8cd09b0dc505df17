#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flexsim/common.hpp"
#include "flexsim/event_log.hpp"
#include "flexsim/monitor.hpp"
#include "flexsim/physmem.hpp"

namespace flexsim {

// Pages handed out by the daemon. Secure grants stay pinned and protected for
// their whole lifetime; plain grants model ordinary mmap memory.
struct AllocationGrant {
  std::uint64_t grant_id = 0;
  std::vector<PageId> pages;  // ordered, not necessarily contiguous
  bool secure = false;

  std::uint64_t bytes() const { return static_cast<std::uint64_t>(pages.size()) * kPageSize; }
};

struct CmaRegion {
  std::uint64_t region_id = 0;
  PageId base{};
  std::uint32_t length = 0;
};

struct AllocRow {
  std::uint64_t grant_id = 0;
  std::uint64_t frames = 0;
  std::string mode;  // flexmem | mmap | cma
  SimDuration latency_us = 0;
};

class FlexMemDaemon;

// Lets the framework free secure memory when the kernel asks for frames
// back or an allocation would fail. Returns the number of frames actually
// released to the kernel.
class ReclaimDelegate {
 public:
  virtual ~ReclaimDelegate() = default;
  virtual std::uint64_t reclaim_frames(PhysicalMemory& mem, Monitor& monitor,
                                       FlexMemDaemon& daemon, std::uint64_t n_frames,
                                       OpCtx& ctx) = 0;
};

// Normal-world allocation broker: keeps the kernel free list, pins pages for
// secure grants, and carves contiguous regions for the baseline modes.
class FlexMemDaemon {
 public:
  FlexMemDaemon() = default;
  FlexMemDaemon(const PhysicalMemory& mem, const Monitor& monitor);

  void set_reclaim_delegate(ReclaimDelegate* delegate) { reclaim_delegate_ = delegate; }

  // Picks lowest-index free frames (fragmentation tolerant), pins them and
  // switches them to protected state. The grant's latency covers the whole
  // allocate+pin+unmap path. With `stage_for_load` the full cost is charged
  // here but the pages stay unprotected so encrypted content can be DMA'd in
  // first; protect_pages(Transition) seals them afterwards.
  Result<AllocationGrant> flexmem_allocate(PhysicalMemory& mem, Monitor& monitor,
                                           std::uint64_t n_frames, OpCtx& ctx,
                                           bool stage_for_load = false);

  // Plain anonymous mapping, used by the unprotected baseline.
  Result<AllocationGrant> mmap_allocate(PhysicalMemory& mem, std::uint64_t n_frames,
                                        OpCtx& ctx);

  // Releases a grant; secure grants go through the monitor with the given
  // reclaim mode, frames return to the kernel free list.
  Status release_grant(PhysicalMemory& mem, Monitor& monitor, std::uint64_t grant_id,
                       ReclaimMode mode, OpCtx& ctx);

  // Kernel-initiated reclaim: the framework chooses what to give back.
  // Reclaiming more than is held reclaims everything evictable; best effort.
  Status kernel_reclaim(PhysicalMemory& mem, Monitor& monitor, std::uint64_t n_frames,
                        OpCtx& ctx);

  // Contiguous carve for the baseline modes; compaction is modeled as
  // relocating movable pages out of the chosen window.
  Result<CmaRegion> cma_allocate(PhysicalMemory& mem, Monitor& monitor,
                                 std::uint64_t n_frames, std::uint64_t background_bytes,
                                 OpCtx& ctx);
  Status cma_release(PhysicalMemory& mem, std::uint64_t region_id, OpCtx& ctx);

  // Marks frames as occupied by other applications (movable under
  // compaction).
  Status reserve_background(std::uint64_t n_frames);
  void release_background(std::uint64_t n_frames);

  std::uint64_t free_frames() const { return free_.count(); }
  const AllocationGrant* grant(std::uint64_t id) const;
  std::uint64_t live_grant_frames(bool secure_only) const;
  const std::vector<AllocRow>& alloc_rows() const { return alloc_rows_; }

  // Exact frame conservation: grants + free + background + regions +
  // reserved ranges + driver image == total.
  Status check_accounting(const PhysicalMemory& mem, const Monitor& monitor) const;

 private:
  Result<std::vector<PageId>> take_free(PhysicalMemory& mem, Monitor& monitor,
                                        std::uint64_t n_frames, bool allow_reclaim,
                                        OpCtx& ctx);

  TimingModel timing_;
  PageBitset free_;
  PageBitset background_;
  std::map<std::uint64_t, AllocationGrant> grants_;
  std::map<std::uint64_t, CmaRegion> regions_;
  std::vector<AllocRow> alloc_rows_;
  ReclaimDelegate* reclaim_delegate_ = nullptr;
  std::uint64_t next_id_ = 1;
};

}  // namespace flexsim
