#include "flexsim/daemon.hpp"

#include <algorithm>

namespace flexsim {

FlexMemDaemon::FlexMemDaemon(const PhysicalMemory& mem, const Monitor& monitor) {
  timing_ = monitor.timing();
  const MemoryLayout& layout = mem.layout();
  free_ = PageBitset(layout.total_frames);
  background_ = PageBitset(layout.total_frames);
  PageBitset driver(layout.total_frames);
  for (PageId p : monitor.driver().all()) driver.set(p);
  for (std::uint32_t i = layout.first_general_frame(); i < layout.total_frames; ++i) {
    PageId p{i};
    if (layout.is_reserved(p) || driver.test(p)) continue;
    free_.set(p);
  }
}

Result<std::vector<PageId>> FlexMemDaemon::take_free(PhysicalMemory& mem, Monitor& monitor,
                                                     std::uint64_t n_frames,
                                                     bool allow_reclaim, OpCtx& ctx) {
  if (free_.count() < n_frames && allow_reclaim && reclaim_delegate_ != nullptr) {
    reclaim_delegate_->reclaim_frames(mem, monitor, *this, n_frames - free_.count(), ctx);
  }
  if (free_.count() < n_frames) {
    return Status::error(StatusCode::OutOfMemory,
                         "need " + std::to_string(n_frames) + " frames, " +
                             std::to_string(free_.count()) + " free");
  }
  std::vector<PageId> pages;
  pages.reserve(n_frames);
  std::uint32_t cursor = 0;
  for (std::uint64_t i = 0; i < n_frames; ++i) {
    auto idx = free_.first_set(cursor);
    PageId p{*idx};
    free_.reset(p);
    pages.push_back(p);
    cursor = *idx + 1;
    // A lazily reclaimed frame is cleared (or overwritten) on its way back
    // into use.
    if (mem.state(p) == PageState::LazyReclaim) {
      Status s = monitor.on_reuse(mem, p, std::nullopt, ctx);
      if (!s.ok()) return s;
    }
  }
  return pages;
}

Result<AllocationGrant> FlexMemDaemon::flexmem_allocate(PhysicalMemory& mem, Monitor& monitor,
                                                        std::uint64_t n_frames, OpCtx& ctx,
                                                        bool stage_for_load) {
  SimDuration charged_before = ctx.elapsed;
  auto taken = take_free(mem, monitor, n_frames, /*allow_reclaim=*/true, ctx);
  if (!taken.ok()) return taken.status();
  std::vector<PageId> pages = std::move(taken).take();

  for (PageId p : pages) mem.set_pinned(p, true);
  if (stage_for_load) {
    ctx.charge(timing_.flexmem_alloc_us(n_frames * kPageSize));
  } else {
    Status s = monitor.protect_pages(mem, pages, ctx, ProtectCharge::Full);
    if (!s.ok()) {
      for (PageId p : pages) {
        mem.set_pinned(p, false);
        free_.set(p);
      }
      return s;
    }
  }

  AllocationGrant grant;
  grant.grant_id = next_id_++;
  grant.pages = std::move(pages);
  grant.secure = true;
  grants_[grant.grant_id] = grant;
  alloc_rows_.push_back(
      AllocRow{grant.grant_id, n_frames, "flexmem", ctx.elapsed - charged_before});
  ctx.record(Actor::NormalKernel, "flexmem_allocate",
             "grant=" + std::to_string(grant.grant_id) + ";frames=" + std::to_string(n_frames));
  return grant;
}

Result<AllocationGrant> FlexMemDaemon::mmap_allocate(PhysicalMemory& mem,
                                                     std::uint64_t n_frames, OpCtx& ctx) {
  if (free_.count() < n_frames) {
    return Status::error(StatusCode::OutOfMemory,
                         "mmap: need " + std::to_string(n_frames) + " frames");
  }
  std::vector<PageId> pages;
  pages.reserve(n_frames);
  std::uint32_t cursor = 0;
  for (std::uint64_t i = 0; i < n_frames; ++i) {
    auto idx = free_.first_set(cursor);
    PageId p{*idx};
    free_.reset(p);
    pages.push_back(p);
    cursor = *idx + 1;
    if (mem.state(p) == PageState::LazyReclaim) {
      // The kernel overwrites reused anonymous pages; the trap clears them.
      mem.set_state(p, PageState::Unprotected);
      mem.set_dirty(p, false);
      mem.write_content(p, PageContent::zeros());
    }
  }
  SimDuration latency = timing_.mmap_alloc_us(n_frames * kPageSize);
  ctx.charge(latency);
  AllocationGrant grant;
  grant.grant_id = next_id_++;
  grant.pages = std::move(pages);
  grant.secure = false;
  grants_[grant.grant_id] = grant;
  alloc_rows_.push_back(AllocRow{grant.grant_id, n_frames, "mmap", latency});
  ctx.record(Actor::NormalKernel, "mmap_allocate",
             "grant=" + std::to_string(grant.grant_id) + ";frames=" + std::to_string(n_frames));
  return grant;
}

Status FlexMemDaemon::release_grant(PhysicalMemory& mem, Monitor& monitor,
                                    std::uint64_t grant_id, ReclaimMode mode, OpCtx& ctx) {
  auto it = grants_.find(grant_id);
  if (it == grants_.end()) {
    return Status::error(StatusCode::InvalidPage, "release_grant: unknown grant");
  }
  AllocationGrant grant = it->second;
  if (grant.secure) {
    // A staged grant that never sealed just unpins.
    bool sealed = !grant.pages.empty() && mem.state(grant.pages[0]) == PageState::FlexMem;
    if (sealed) {
      Status s = monitor.unprotect_pages(mem, grant.pages, mode, ctx);
      if (!s.ok()) return s;
    }
    for (PageId p : grant.pages) mem.set_pinned(p, false);
  }
  for (PageId p : grant.pages) free_.set(p);
  grants_.erase(it);
  ctx.record(Actor::NormalKernel, "release_grant",
             "grant=" + std::to_string(grant_id) + ";frames=" + std::to_string(grant.pages.size()));
  return Status::success();
}

Status FlexMemDaemon::kernel_reclaim(PhysicalMemory& mem, Monitor& monitor,
                                     std::uint64_t n_frames, OpCtx& ctx) {
  ctx.record(Actor::NormalKernel, "kernel_reclaim", "frames=" + std::to_string(n_frames));
  if (n_frames == 0 || reclaim_delegate_ == nullptr) return Status::success();
  reclaim_delegate_->reclaim_frames(mem, monitor, *this, n_frames, ctx);
  return Status::success();  // best effort by design
}

Result<CmaRegion> FlexMemDaemon::cma_allocate(PhysicalMemory& mem, Monitor& monitor,
                                              std::uint64_t n_frames,
                                              std::uint64_t background_bytes, OpCtx& ctx) {
  if (n_frames == 0) {
    return Status::error(StatusCode::Unsatisfiable, "cma: zero-length region");
  }
  const MemoryLayout& layout = mem.layout();
  PageBitset driver(layout.total_frames);
  for (PageId p : monitor.driver().all()) driver.set(p);

  // A window is carvable when every frame in it is movable (free or
  // background-occupied); pinned or protected frames block compaction.
  auto eligible = [&](std::uint32_t i) {
    PageId p{i};
    if (layout.is_reserved(p) || driver.test(p)) return false;
    if (mem.pinned(p)) return false;
    return free_.test(p) || background_.test(p);
  };

  std::uint32_t run = 0;
  std::uint32_t window_first = 0;
  bool found = false;
  for (std::uint32_t i = layout.first_general_frame(); i < layout.total_frames; ++i) {
    if (eligible(i)) {
      if (run == 0) window_first = i;
      ++run;
      if (run >= n_frames) {
        found = true;
        break;
      }
    } else {
      run = 0;
    }
  }
  if (!found || free_.count() < n_frames) {
    return Status::error(StatusCode::Unsatisfiable,
                         "cma: no contiguous run of " + std::to_string(n_frames) + " frames");
  }

  // Relocate background pages out of the window, consume free ones.
  std::uint32_t window_end = window_first + static_cast<std::uint32_t>(n_frames);
  for (std::uint32_t i = window_first; i < window_end; ++i) {
    PageId p{i};
    if (background_.test(p)) {
      background_.reset(p);
      std::uint32_t cursor = 0;
      while (true) {
        auto idx = free_.first_set(cursor);
        if (idx && (*idx < window_first || *idx >= window_end)) {
          free_.reset(PageId{*idx});
          background_.set(PageId{*idx});
          break;
        }
        if (!idx) {
          return Status::error(StatusCode::Unsatisfiable, "cma: nowhere to migrate");
        }
        cursor = *idx + 1;
      }
    } else {
      free_.reset(p);
    }
    if (mem.state(p) == PageState::LazyReclaim) {
      Status s = monitor.on_reuse(mem, p, std::nullopt, ctx);
      if (!s.ok()) return s;
    }
    mem.set_pinned(p, true);
  }

  CmaRegion region;
  region.region_id = next_id_++;
  region.base = PageId{window_first};
  region.length = static_cast<std::uint32_t>(n_frames);
  regions_[region.region_id] = region;
  SimDuration latency = timing_.cma_alloc_us(n_frames * kPageSize, background_bytes);
  ctx.charge(latency);
  alloc_rows_.push_back(AllocRow{region.region_id, n_frames, "cma", latency});
  ctx.record(Actor::NormalKernel, "cma_allocate",
             "region=" + std::to_string(region.region_id) +
                 ";base=" + std::to_string(window_first) +
                 ";frames=" + std::to_string(n_frames));
  return region;
}

Status FlexMemDaemon::cma_release(PhysicalMemory& mem, std::uint64_t region_id, OpCtx& ctx) {
  auto it = regions_.find(region_id);
  if (it == regions_.end()) {
    return Status::error(StatusCode::InvalidPage, "cma_release: unknown region");
  }
  CmaRegion region = it->second;
  for (std::uint32_t i = region.base.index; i < region.base.index + region.length; ++i) {
    PageId p{i};
    mem.set_pinned(p, false);
    mem.write_content(p, PageContent::zeros());  // baseline zeroes eagerly
    free_.set(p);
  }
  regions_.erase(it);
  ctx.record(Actor::NormalKernel, "cma_release", "region=" + std::to_string(region_id));
  return Status::success();
}

Status FlexMemDaemon::reserve_background(std::uint64_t n_frames) {
  if (free_.count() < n_frames) {
    return Status::error(StatusCode::OutOfMemory, "background reservation exceeds free memory");
  }
  std::uint32_t cursor = 0;
  for (std::uint64_t i = 0; i < n_frames; ++i) {
    auto idx = free_.first_set(cursor);
    free_.reset(PageId{*idx});
    background_.set(PageId{*idx});
    cursor = *idx + 1;
  }
  return Status::success();
}

void FlexMemDaemon::release_background(std::uint64_t n_frames) {
  for (std::uint64_t i = 0; i < n_frames; ++i) {
    auto idx = background_.first_set(0);
    if (!idx) return;
    background_.reset(PageId{*idx});
    free_.set(PageId{*idx});
  }
}

const AllocationGrant* FlexMemDaemon::grant(std::uint64_t id) const {
  auto it = grants_.find(id);
  return it == grants_.end() ? nullptr : &it->second;
}

std::uint64_t FlexMemDaemon::live_grant_frames(bool secure_only) const {
  std::uint64_t total = 0;
  for (const auto& [id, g] : grants_) {
    if (!secure_only || g.secure) total += g.pages.size();
  }
  return total;
}

Status FlexMemDaemon::check_accounting(const PhysicalMemory& mem, const Monitor& monitor) const {
  const MemoryLayout& layout = mem.layout();
  std::vector<std::uint8_t> seen(layout.total_frames, 0);
  auto claim = [&](PageId p, const char* who) -> Status {
    if (!mem.valid(p)) return Status::error(StatusCode::InvariantViolation, "claim out of range");
    if (seen[p.index]++) {
      return Status::error(StatusCode::InvariantViolation,
                           std::string("frame claimed twice: ") + std::to_string(p.index) +
                               " by " + who);
    }
    return Status::success();
  };

  for (std::uint32_t i = 0; i < layout.total_frames; ++i) {
    PageId p{i};
    if (layout.is_reserved(p)) {
      Status s = claim(p, "reserved");
      if (!s.ok()) return s;
    }
  }
  for (PageId p : monitor.driver().all()) {
    Status s = claim(p, "driver");
    if (!s.ok()) return s;
  }
  for (const auto& [id, g] : grants_) {
    for (PageId p : g.pages) {
      Status s = claim(p, "grant");
      if (!s.ok()) return s;
      // Staged grants hold unprotected pages only while encrypted content is
      // being loaded into them.
      if (g.secure && mem.state(p) != PageState::FlexMem &&
          mem.state(p) != PageState::Unprotected) {
        return Status::error(StatusCode::InvariantViolation, "secure grant page in bad state");
      }
      if (g.secure && !mem.pinned(p)) {
        return Status::error(StatusCode::InvariantViolation, "secure grant page not pinned");
      }
    }
  }
  for (const auto& [id, r] : regions_) {
    for (std::uint32_t i = r.base.index; i < r.base.index + r.length; ++i) {
      Status s = claim(PageId{i}, "cma");
      if (!s.ok()) return s;
    }
  }
  Status st = Status::success();
  background_.for_each_set([&](PageId p) {
    Status s = claim(p, "background");
    if (!s.ok() && st.ok()) st = s;
  });
  if (!st.ok()) return st;
  free_.for_each_set([&](PageId p) {
    Status s = claim(p, "free");
    if (!s.ok() && st.ok()) st = s;
  });
  if (!st.ok()) return st;

  for (std::uint32_t i = 0; i < layout.total_frames; ++i) {
    if (!seen[i]) {
      return Status::error(StatusCode::InvariantViolation,
                           "frame unaccounted: " + std::to_string(i));
    }
  }
  return Status::success();
}

}  // namespace flexsim
