#include "flexsim/monitor.hpp"

#include <algorithm>
#include <string>

#include "flexsim/rng.hpp"

namespace flexsim {

namespace {

std::string page_detail(PageId p) { return "page=" + std::to_string(p.index); }

std::uint64_t bytes_of(std::size_t n_pages) {
  return static_cast<std::uint64_t>(n_pages) * kPageSize;
}

}  // namespace

Monitor::Monitor(PhysicalMemory& mem, const TimingModel& timing, std::uint64_t image_seed,
                 std::uint32_t driver_code_frames, std::uint32_t driver_data_frames) {
  timing_ = timing;
  const MemoryLayout& layout = mem.layout();
  monitor_region_ = layout.monitor_region;

  s2_normal_.owner = TableOwner::NormalKernel;
  s2_normal_.mapped = PageBitset(layout.total_frames);
  s2_sandbox_.owner = TableOwner::NpuSandbox;
  s2_sandbox_.mapped = PageBitset(layout.total_frames);
  for (int d = 0; d < kDeviceCount; ++d) {
    smmu_tables_[d].device = static_cast<DeviceId>(d);
    smmu_tables_[d].mapped = PageBitset(layout.total_frames);
  }
  npu_unprotected_mapping_ = PageBitset(layout.total_frames);

  // The kernel sees an identity mapping minus the secure carve-out, the
  // monitor image, and the hooked MMIO windows.
  for (std::uint32_t i = 0; i < layout.total_frames; ++i) {
    PageId p{i};
    if (layout.is_reserved(p)) continue;
    s2_normal_.mapped.set(p);
  }
  s2_normal_.set_mmio(MmioRegionId::NpuMmio, true);
  s2_normal_.set_mmio(MmioRegionId::SmmuMmio, false);  // hooked while protection is on

  // Monitor image bytes; hashed by freeze/unfreeze.
  std::uint64_t seed = image_seed;
  for (std::uint32_t i = monitor_region_.first; i < monitor_region_.end(); ++i) {
    mem.write_content(PageId{i}, PageContent::seeded(splitmix64(seed)));
  }

  // NPU driver code/data pages come from the first general frames.
  std::uint32_t next = layout.first_general_frame();
  for (std::uint32_t i = 0; i < driver_code_frames; ++i) driver_.code_pages.push_back(PageId{next++});
  for (std::uint32_t i = 0; i < driver_data_frames; ++i) driver_.data_pages.push_back(PageId{next++});
  if (next > layout.total_frames) {
    throw ConfigError("monitor: driver image does not fit in general frames");
  }
}

Result<AccessOutcome> Monitor::cpu_access(PhysicalMemory& mem, Actor actor, PageId page,
                                          AccessKind kind,
                                          std::optional<PageContent> write_content,
                                          OpCtx& ctx) {
  if (!mem.valid(page)) {
    return Status::error(StatusCode::InvalidPage, "cpu_access: frame out of range");
  }
  auto log_outcome = [&](AccessResult r) {
    ctx.record(actor, kind == AccessKind::Read ? "cpu_read" : "cpu_write",
               page_detail(page) + ";result=" + access_result_name(r));
  };
  auto finish = [&](AccessResult r) -> Result<AccessOutcome> {
    log_outcome(r);
    AccessOutcome out;
    out.result = r;
    if (r == AccessResult::Ok && kind == AccessKind::Read) out.content = mem.content(page);
    return out;
  };

  bool privileged = actor == Actor::SecureWorld || actor == Actor::Monitor;
  if (privileged) {
    if (kind == AccessKind::Write) {
      mem.write_content(page, write_content.value_or(PageContent::zeros()));
    }
    return finish(AccessResult::Ok);
  }

  // Normal-world actors.
  PageState st = mem.state(page);
  if (st == PageState::TzSecure) {
    return finish(AccessResult::TzFault);  // enforced by hardware partition, not stage 2
  }

  if (auto region = mem.layout().mmio_region(page)) {
    if (protection_enabled_ && !s2_normal_.mmio(*region)) {
      return finish(AccessResult::Stage2Fault);
    }
    // MMIO reads/writes are device pokes; no page content involved.
    log_outcome(AccessResult::Ok);
    AccessOutcome out;
    out.result = AccessResult::Ok;
    return out;
  }

  if (!protection_enabled_) {
    // Stage-2 translation is off: plain physical access.
    if (kind == AccessKind::Write) {
      mem.write_content(page, write_content.value_or(PageContent::zeros()));
    }
    return finish(AccessResult::Ok);
  }

  if (st == PageState::FlexMem) {
    return finish(AccessResult::Stage2Fault);
  }

  if (st == PageState::LazyReclaim) {
    // The access traps to the monitor, which performs the deferred clear or
    // overwrite before the page can be observed. A probing read is denied;
    // a retry after the fault sees zeros.
    if (kind == AccessKind::Write) {
      Status s = on_reuse(mem, page, std::move(write_content), ctx);
      if (!s.ok()) return s;
      return finish(AccessResult::Ok);
    }
    Status s = on_reuse(mem, page, std::nullopt, ctx);
    if (!s.ok()) return s;
    return finish(AccessResult::Stage2Fault);
  }

  // Unprotected page: stage-2 mapping decides.
  if (!s2_normal_.mapped.test(page)) {
    return finish(AccessResult::Stage2Fault);
  }
  if (kind == AccessKind::Write) {
    mem.write_content(page, write_content.value_or(PageContent::zeros()));
  }
  return finish(AccessResult::Ok);
}

Result<AccessOutcome> Monitor::dma_access(PhysicalMemory& mem, DeviceId device, PageId page,
                                          AccessKind kind,
                                          std::optional<PageContent> write_content,
                                          OpCtx& ctx) {
  int di = static_cast<int>(device);
  if (di < 0 || di >= kDeviceCount) {
    return Status::error(StatusCode::UnknownDevice, "dma_access: unknown device");
  }
  if (!mem.valid(page)) {
    return Status::error(StatusCode::InvalidPage, "dma_access: frame out of range");
  }
  auto finish = [&](AccessResult r) -> Result<AccessOutcome> {
    ctx.record(Actor::NormalKernel,
               std::string("dma_") + (kind == AccessKind::Read ? "read" : "write"),
               std::string("device=") + device_name(device) + ";" + page_detail(page) +
                   ";result=" + access_result_name(r));
    AccessOutcome out;
    out.result = r;
    if (r == AccessResult::Ok && kind == AccessKind::Read) out.content = mem.content(page);
    return out;
  };

  // The bus blocks device access to the static secure region and MMIO
  // windows outright.
  if (mem.state(page) == PageState::TzSecure || mem.layout().is_mmio(page)) {
    return finish(AccessResult::SmmuFault);
  }
  if (!smmu_tables_[di].mapped.test(page)) {
    return finish(AccessResult::SmmuFault);
  }
  if (kind == AccessKind::Write) {
    mem.write_content(page, write_content.value_or(PageContent::zeros()));
  }
  return finish(AccessResult::Ok);
}

Status Monitor::map_one(PhysicalMemory& mem, TableRef table, PageId page) {
  PageState st = mem.state(page);
  switch (table) {
    case TableRef::S2Normal:
      if (st == PageState::FlexMem || st == PageState::TzSecure) {
        return Status::error(StatusCode::InvariantViolation,
                             "mapping protected frame into normal stage-2 table");
      }
      if (monitor_region_.contains(page)) {
        return Status::error(StatusCode::InvariantViolation,
                             "mapping monitor image into normal stage-2 table");
      }
      s2_normal_.mapped.set(page);
      return Status::success();
    case TableRef::S2Sandbox:
      s2_sandbox_.mapped.set(page);
      return Status::success();
    case TableRef::SmmuDisk:
      if (st != PageState::Unprotected) {
        return Status::error(StatusCode::InvariantViolation,
                             "mapping non-unprotected frame for device DMA");
      }
      if (monitor_region_.contains(page)) {
        return Status::error(StatusCode::InvariantViolation,
                             "mapping monitor image for device DMA");
      }
      smmu_mut(DeviceId::DiskDma).mapped.set(page);
      return Status::success();
    case TableRef::SmmuNpu:
      if (npu_mode_ == NpuMode::Protected) {
        if (st != PageState::FlexMem) {
          return Status::error(StatusCode::InvariantViolation,
                               "protected NPU may map only protected pages");
        }
      } else {
        if (st != PageState::Unprotected) {
          return Status::error(StatusCode::InvariantViolation,
                               "unprotected NPU may map only unprotected pages");
        }
        if (monitor_region_.contains(page)) {
          return Status::error(StatusCode::InvariantViolation,
                               "mapping monitor image for device DMA");
        }
      }
      smmu_mut(DeviceId::Npu).mapped.set(page);
      return Status::success();
  }
  return Status::error(StatusCode::InvariantViolation, "unknown table");
}

Status Monitor::map_pages(PhysicalMemory& mem, Actor caller, TableRef table,
                          const std::vector<PageId>& pages, OpCtx& ctx) {
  if (caller != Actor::Monitor) {
    return Status::error(StatusCode::NotMonitor, "map_pages requires the monitor");
  }
  for (PageId p : pages) {
    if (!mem.valid(p)) return Status::error(StatusCode::InvalidPage, "map_pages");
    Status s = map_one(mem, table, p);
    if (!s.ok()) return s;
  }
  ctx.record(Actor::Monitor, "map_pages", "count=" + std::to_string(pages.size()));
  return Status::success();
}

Status Monitor::unmap_pages(PhysicalMemory& mem, Actor caller, TableRef table,
                            const std::vector<PageId>& pages, OpCtx& ctx) {
  if (caller != Actor::Monitor) {
    return Status::error(StatusCode::NotMonitor, "unmap_pages requires the monitor");
  }
  for (PageId p : pages) {
    if (!mem.valid(p)) return Status::error(StatusCode::InvalidPage, "unmap_pages");
    switch (table) {
      case TableRef::S2Normal: s2_normal_.mapped.reset(p); break;
      case TableRef::S2Sandbox: s2_sandbox_.mapped.reset(p); break;
      case TableRef::SmmuDisk: smmu_mut(DeviceId::DiskDma).mapped.reset(p); break;
      case TableRef::SmmuNpu: smmu_mut(DeviceId::Npu).mapped.reset(p); break;
    }
  }
  ctx.record(Actor::Monitor, "unmap_pages", "count=" + std::to_string(pages.size()));
  return Status::success();
}

Status Monitor::kernel_smmu_reconfig(PhysicalMemory& mem, DeviceId device,
                                     const std::vector<PageId>& add_pages, bool remove,
                                     OpCtx& ctx, SmmuCharge charge) {
  int di = static_cast<int>(device);
  if (di < 0 || di >= kDeviceCount) {
    return Status::error(StatusCode::UnknownDevice, "smmu_reconfig: unknown device");
  }
  for (PageId p : add_pages) {
    if (!mem.valid(p)) return Status::error(StatusCode::InvalidPage, "smmu_reconfig");
  }
  if (charge == SmmuCharge::Baseline) {
    ctx.charge(timing_.smmu_setup_us(bytes_of(add_pages.size()), /*baseline=*/true));
  }

  if (protection_enabled_) {
    // Intercepted: the monitor refuses mappings that would expose protected
    // memory or hand the protected NPU to the kernel.
    if (device == DeviceId::Npu && npu_mode_ == NpuMode::Protected) {
      ctx.record(Actor::Monitor, "smmu_reconfig_rejected", "device=npu;reason=protected_mode");
      return Status::error(StatusCode::InvariantViolation,
                           "kernel may not reconfigure the protected NPU");
    }
    for (PageId p : add_pages) {
      PageState st = mem.state(p);
      if (remove) continue;
      if (st != PageState::Unprotected || monitor_region_.contains(p) ||
          mem.layout().is_mmio(p)) {
        ctx.record(Actor::Monitor, "smmu_reconfig_rejected",
                   page_detail(p) + ";state=" + page_state_name(st));
        return Status::error(StatusCode::InvariantViolation,
                             "kernel attempted to map a protected page for DMA");
      }
    }
  }
  for (PageId p : add_pages) {
    if (remove) {
      smmu_mut(device).mapped.reset(p);
    } else {
      // With protection off the write lands unchecked (normal-world
      // self-management); there are no protected pages to expose then.
      if (!protection_enabled_ && (mem.state(p) != PageState::Unprotected ||
                                   monitor_region_.contains(p) || mem.layout().is_mmio(p))) {
        // Physically representable but pointless mappings (e.g. MMIO) are
        // dropped by hardware; keep the table well-formed.
        continue;
      }
      if (!protection_enabled_ && mem.state(p) == PageState::LazyReclaim) continue;
      if (mem.state(p) == PageState::Unprotected) smmu_mut(device).mapped.set(p);
    }
  }
  ctx.record(Actor::NormalKernel, "smmu_reconfig",
             std::string("device=") + device_name(device) +
                 ";count=" + std::to_string(add_pages.size()) +
                 ";remove=" + (remove ? "1" : "0"));
  return Status::success();
}

Status Monitor::ensure_enabled(PhysicalMemory& mem, OpCtx& ctx) {
  if (halted_) {
    return Status::error(StatusCode::IntegrityViolation, "secure path halted");
  }
  if (protection_enabled_) return Status::success();
  return unfreeze(mem, ctx);
}

Status Monitor::protect_pages(PhysicalMemory& mem, const std::vector<PageId>& pages,
                              OpCtx& ctx, ProtectCharge charge) {
  Status en = ensure_enabled(mem, ctx);
  if (!en.ok()) return en;
  for (PageId p : pages) {
    if (!mem.valid(p)) return Status::error(StatusCode::InvalidPage, "protect_pages");
    if (mem.layout().is_reserved(p)) {
      return Status::error(StatusCode::InvariantViolation, "protect_pages: reserved frame");
    }
    if (mem.state(p) != PageState::Unprotected) {
      return Status::error(mem.state(p) == PageState::FlexMem ? StatusCode::AlreadyProtected
                                                              : StatusCode::NotProtected,
                           "protect_pages: " + page_detail(p) + " is " +
                               page_state_name(mem.state(p)));
    }
    if (!mem.pinned(p)) {
      return Status::error(StatusCode::NotPinned, "protect_pages: " + page_detail(p));
    }
  }
  for (PageId p : pages) {
    s2_normal_.mapped.reset(p);
    drop_from_all_smmu(p);
    mem.set_state(p, PageState::FlexMem);
  }
  if (charge == ProtectCharge::Full) {
    ctx.charge(timing_.flexmem_alloc_us(bytes_of(pages.size())));
  }
  ctx.record(Actor::Monitor, "protect_pages", "count=" + std::to_string(pages.size()));
  return Status::success();
}

Status Monitor::unprotect_pages(PhysicalMemory& mem, const std::vector<PageId>& pages,
                                ReclaimMode mode, OpCtx& ctx) {
  for (PageId p : pages) {
    if (!mem.valid(p)) return Status::error(StatusCode::InvalidPage, "unprotect_pages");
    if (mem.state(p) != PageState::FlexMem) {
      return Status::error(StatusCode::NotProtected,
                           "unprotect_pages: " + page_detail(p) + " is " +
                               page_state_name(mem.state(p)));
    }
  }
  for (PageId p : pages) {
    drop_from_all_smmu(p);
    if (mode == ReclaimMode::Eager) {
      mem.write_content(p, PageContent::zeros());
      mem.set_state(p, PageState::Unprotected);
      mem.set_dirty(p, false);
      s2_normal_.mapped.set(p);
    } else {
      // Content retained; the frame is returned for allocation bookkeeping
      // but stays untranslated until on_reuse clears or overwrites it.
      mem.set_state(p, PageState::LazyReclaim);
      mem.set_dirty(p, true);
    }
  }
  ctx.charge(timing_.flexmem_reclaim_us(bytes_of(pages.size())));
  if (mode == ReclaimMode::Eager) {
    ctx.charge(timing_.zero_fill_us(bytes_of(pages.size())));
  }
  ctx.record(Actor::Monitor, "unprotect_pages",
             "count=" + std::to_string(pages.size()) +
                 ";mode=" + (mode == ReclaimMode::Eager ? "eager" : "lazy"));
  return Status::success();
}

Status Monitor::on_reuse(PhysicalMemory& mem, PageId page,
                         std::optional<PageContent> new_content, OpCtx& ctx) {
  if (!mem.valid(page)) return Status::error(StatusCode::InvalidPage, "on_reuse");
  if (mem.state(page) != PageState::LazyReclaim) {
    return Status::error(StatusCode::NotLazy, "on_reuse: " + page_detail(page));
  }
  if (!new_content.has_value()) {
    // Cleared even if the kernel never writes it.
    mem.write_content(page, PageContent::zeros());
    ctx.charge(timing_.zero_fill_us(kPageSize));
  } else {
    mem.write_content(page, std::move(*new_content));
  }
  mem.set_dirty(page, false);
  mem.set_state(page, PageState::Unprotected);
  s2_normal_.mapped.set(page);
  ctx.record(Actor::Monitor, "on_reuse", page_detail(page));
  return Status::success();
}

Status Monitor::npu_set_mode(PhysicalMemory& mem, NpuMode target, OpCtx& ctx) {
  if (npu_task_inflight_) {
    return Status::error(StatusCode::TaskInFlight, "npu_set_mode: task in flight");
  }
  if (target == npu_mode_) return Status::success();

  if (target == NpuMode::Protected) {
    Status en = ensure_enabled(mem, ctx);
    if (!en.ok()) return en;
    s2_normal_.set_mmio(MmioRegionId::NpuMmio, false);
    s2_sandbox_.set_mmio(MmioRegionId::NpuMmio, true);
    for (PageId p : driver_.all()) {
      s2_normal_.mapped.reset(p);
      s2_sandbox_.mapped.set(p);
    }
    npu_unprotected_mapping_ = smmu_mut(DeviceId::Npu).mapped;
    smmu_mut(DeviceId::Npu).mapped.clear();
    npu_mode_ = NpuMode::Protected;
  } else {
    s2_sandbox_.set_mmio(MmioRegionId::NpuMmio, false);
    s2_normal_.set_mmio(MmioRegionId::NpuMmio, true);
    for (PageId p : driver_.all()) {
      s2_sandbox_.mapped.reset(p);
      s2_normal_.mapped.set(p);
    }
    npu_mode_ = NpuMode::Unprotected;
    // Restore the saved unprotected view, dropping frames that changed state
    // while the NPU was protected.
    SmmuTable& npu = smmu_mut(DeviceId::Npu);
    npu.mapped.clear();
    npu_unprotected_mapping_.for_each_set([&](PageId p) {
      if (mem.state(p) == PageState::Unprotected) npu.mapped.set(p);
    });
  }
  ctx.charge(timing_.npu_mode_switch_us());
  ctx.record(Actor::Monitor, "npu_set_mode",
             std::string("mode=") + (target == NpuMode::Protected ? "protected" : "unprotected"));
  return Status::success();
}

Status Monitor::npu_grant(PhysicalMemory& mem, const std::vector<PageId>& pages, OpCtx& ctx) {
  if (npu_mode_ != NpuMode::Protected) {
    return Status::error(StatusCode::InvariantViolation, "npu_grant: NPU not in protected mode");
  }
  for (PageId p : pages) {
    if (!mem.valid(p)) return Status::error(StatusCode::InvalidPage, "npu_grant");
    if (mem.state(p) != PageState::FlexMem) {
      return Status::error(StatusCode::InvariantViolation,
                           "npu_grant: " + page_detail(p) + " not protected");
    }
  }
  for (PageId p : pages) smmu_mut(DeviceId::Npu).mapped.set(p);
  ctx.charge(timing_.smmu_setup_us(bytes_of(pages.size())));
  ctx.record(Actor::Monitor, "npu_grant", "count=" + std::to_string(pages.size()));
  return Status::success();
}

Status Monitor::npu_revoke(const std::vector<PageId>& pages, OpCtx& ctx) {
  for (PageId p : pages) smmu_mut(DeviceId::Npu).mapped.reset(p);
  ctx.record(Actor::Monitor, "npu_revoke", "count=" + std::to_string(pages.size()));
  return Status::success();
}

Status Monitor::freeze(PhysicalMemory& mem, OpCtx& ctx) {
  if (halted_) return Status::error(StatusCode::IntegrityViolation, "secure path halted");
  if (!protection_enabled_) return Status::success();
  if (mem.count_state(PageState::FlexMem) != 0) {
    return Status::error(StatusCode::ResourcesHeld, "freeze: protected pages live");
  }
  if (npu_mode_ != NpuMode::Unprotected) {
    return Status::error(StatusCode::ResourcesHeld, "freeze: NPU still protected");
  }
  // Deferred clears must land before translation is disabled, otherwise
  // released secrets would become readable.
  if (mem.count_state(PageState::LazyReclaim) != 0) {
    for (std::uint32_t i = 0; i < mem.total_frames(); ++i) {
      PageId p{i};
      if (mem.state(p) == PageState::LazyReclaim) {
        Status s = on_reuse(mem, p, std::nullopt, ctx);
        if (!s.ok()) return s;
      }
    }
  }
  frozen_hash_ = image_digest(mem);
  protection_enabled_ = false;
  ctx.record(Actor::Monitor, "freeze", "digest=" + crypto::hex(*frozen_hash_).substr(0, 16));
  return Status::success();
}

Status Monitor::unfreeze(PhysicalMemory& mem, OpCtx& ctx) {
  if (halted_) return Status::error(StatusCode::IntegrityViolation, "secure path halted");
  if (protection_enabled_) {
    return Status::error(StatusCode::AlreadyProtected, "unfreeze: not frozen");
  }
  ctx.charge(timing_.s2pt_boot_us());
  ctx.charge(timing_.hash_check_us());
  crypto::Digest256 current = image_digest(mem);
  if (!frozen_hash_ || current != *frozen_hash_) {
    halted_ = true;
    ctx.record(Actor::Monitor, "tamper_detected", "op=unfreeze");
    return Status::error(StatusCode::IntegrityViolation, "monitor image digest mismatch");
  }
  frozen_hash_.reset();
  protection_enabled_ = true;
  ctx.record(Actor::Monitor, "unfreeze", "result=ok");
  return Status::success();
}

void Monitor::drop_from_all_smmu(PageId page) {
  for (auto& table : smmu_tables_) table.mapped.reset(page);
}

crypto::Digest256 Monitor::image_digest(const PhysicalMemory& mem) const {
  crypto::Sha256Stream h;
  for (std::uint32_t i = monitor_region_.first; i < monitor_region_.end(); ++i) {
    PageBytes bytes = mem.content(PageId{i}).materialize();
    h.update(bytes.data(), bytes.size());
  }
  auto hash_table = [&h](const Stage2Table& t) {
    std::uint8_t owner = static_cast<std::uint8_t>(t.owner);
    h.update(&owner, 1);
    for (bool m : t.mmio_mapped) {
      std::uint8_t b = m ? 1 : 0;
      h.update(&b, 1);
    }
    // Bitset words are a canonical sorted-entry encoding.
    const auto& words = t.mapped.words();
    h.update(words.data(), words.size() * sizeof(std::uint64_t));
  };
  hash_table(s2_normal_);
  hash_table(s2_sandbox_);
  return h.finish();
}

Status Monitor::validate(const PhysicalMemory& mem) const {
  auto fail = [](const std::string& what) {
    return Status::error(StatusCode::InvariantViolation, what);
  };

  if (!protection_enabled_) {
    if (mem.count_state(PageState::FlexMem) != 0) {
      return fail("protection disabled with protected pages live");
    }
    if (npu_mode_ != NpuMode::Unprotected) return fail("protection disabled with protected NPU");
    if (!frozen_hash_.has_value()) return fail("disabled but no frozen digest");
  } else if (frozen_hash_.has_value()) {
    return fail("enabled but frozen digest present");
  }

  // NPU MMIO mapped in exactly one of the two stage-2 tables.
  bool in_normal = s2_normal_.mmio(MmioRegionId::NpuMmio);
  bool in_sandbox = s2_sandbox_.mmio(MmioRegionId::NpuMmio);
  if (in_normal == in_sandbox) return fail("NPU MMIO bijection broken");
  if (in_sandbox != (npu_mode_ == NpuMode::Protected)) {
    return fail("sandbox MMIO mapping does not match NPU mode");
  }

  Status st = Status::success();
  s2_normal_.mapped.for_each_set([&](PageId p) {
    PageState s = mem.state(p);
    if (s == PageState::FlexMem || s == PageState::TzSecure) {
      st = fail("protected frame mapped in normal stage-2 table");
    }
    if (monitor_region_.contains(p)) st = fail("monitor frame mapped in normal stage-2 table");
  });
  if (!st.ok()) return st;

  for (int d = 0; d < kDeviceCount; ++d) {
    const SmmuTable& t = smmu_tables_[d];
    bool npu_protected = static_cast<DeviceId>(d) == DeviceId::Npu && npu_mode_ == NpuMode::Protected;
    t.mapped.for_each_set([&](PageId p) {
      PageState s = mem.state(p);
      if (npu_protected) {
        if (s != PageState::FlexMem) st = fail("protected NPU maps a non-protected page");
      } else {
        if (s == PageState::FlexMem || s == PageState::TzSecure || s == PageState::LazyReclaim) {
          st = fail("device table maps a protected page");
        }
      }
    });
    if (!st.ok()) return st;
  }

  for (PageId p : driver_.all()) {
    bool in_n = s2_normal_.mapped.test(p);
    bool in_s = s2_sandbox_.mapped.test(p);
    if (npu_mode_ == NpuMode::Protected) {
      if (in_n || !in_s) return fail("driver image mapping wrong for protected mode");
    } else {
      if (!in_n || in_s) return fail("driver image mapping wrong for unprotected mode");
    }
  }
  return Status::success();
}

}  // namespace flexsim
