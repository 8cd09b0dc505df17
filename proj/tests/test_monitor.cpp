#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flexsim/monitor.hpp"

using namespace flexsim;

namespace {

struct World {
  PhysicalMemory mem{MemoryLayout::tiny()};
  TimingModel timing;
  Monitor monitor{mem, timing, /*image_seed=*/42};
  EventLog log;

  OpCtx ctx() {
    OpCtx c;
    c.log = &log;
    return c;
  }

  // First frames the kernel can freely use (after the driver image).
  PageId general(std::uint32_t i) {
    return PageId{mem.layout().first_general_frame() + 2 + i};
  }

  Status protect(std::initializer_list<PageId> pages) {
    std::vector<PageId> v(pages);
    for (PageId p : v) mem.set_pinned(p, true);
    OpCtx c = ctx();
    return monitor.protect_pages(mem, v, c);
  }
};

}  // namespace

TEST_CASE("normal actors fault on protected pages, secure world does not") {
  World w;
  PageId page = w.general(0);
  REQUIRE(w.protect({page}).ok());

  OpCtx c = w.ctx();
  auto kernel = w.monitor.cpu_access(w.mem, Actor::NormalKernel, page, AccessKind::Read,
                                     std::nullopt, c);
  REQUIRE(kernel.ok());
  CHECK(kernel.value().result == AccessResult::Stage2Fault);

  auto secure = w.monitor.cpu_access(w.mem, Actor::SecureWorld, page, AccessKind::Read,
                                     std::nullopt, c);
  REQUIRE(secure.ok());
  CHECK(secure.value().result == AccessResult::Ok);

  auto tz = w.monitor.cpu_access(w.mem, Actor::NormalApp, PageId{0}, AccessKind::Read,
                                 std::nullopt, c);
  REQUIRE(tz.ok());
  CHECK(tz.value().result == AccessResult::TzFault);

  PageId plain = w.general(1);
  auto app = w.monitor.cpu_access(w.mem, Actor::NormalApp, plain, AccessKind::Write,
                                  PageContent::seeded(5), c);
  REQUIRE(app.ok());
  CHECK(app.value().result == AccessResult::Ok);
  CHECK(w.mem.content(plain).same_bytes_as(PageContent::seeded(5)));

  auto invalid = w.monitor.cpu_access(w.mem, Actor::NormalApp, PageId{999}, AccessKind::Read,
                                      std::nullopt, c);
  CHECK(invalid.code() == StatusCode::InvalidPage);
}

TEST_CASE("device DMA is gated by the per-device tables") {
  World w;
  PageId prot = w.general(0);
  PageId plain = w.general(1);
  REQUIRE(w.protect({prot}).ok());
  OpCtx c = w.ctx();

  // Protected page: unmapped from every device.
  auto fault = w.monitor.dma_access(w.mem, DeviceId::DiskDma, prot, AccessKind::Read,
                                    std::nullopt, c);
  CHECK(fault.value().result == AccessResult::SmmuFault);

  // Plain page becomes reachable once mapped.
  REQUIRE(w.monitor.kernel_smmu_reconfig(w.mem, DeviceId::DiskDma, {plain}, false, c).ok());
  auto ok = w.monitor.dma_access(w.mem, DeviceId::DiskDma, plain, AccessKind::Write,
                                 PageContent::seeded(9), c);
  CHECK(ok.value().result == AccessResult::Ok);

  // Kernel attempts to map the protected page for DMA: intercepted.
  auto rejected = w.monitor.kernel_smmu_reconfig(w.mem, DeviceId::DiskDma, {prot}, false, c);
  CHECK(rejected.code == StatusCode::InvariantViolation);

  // Protected-mode NPU maps protected pages only.
  REQUIRE(w.monitor.npu_set_mode(w.mem, NpuMode::Protected, c).ok());
  REQUIRE(w.monitor.npu_grant(w.mem, {prot}, c).ok());
  auto npu_ok = w.monitor.dma_access(w.mem, DeviceId::Npu, prot, AccessKind::Read,
                                     std::nullopt, c);
  CHECK(npu_ok.value().result == AccessResult::Ok);
  auto npu_leak = w.monitor.dma_access(w.mem, DeviceId::Npu, plain, AccessKind::Write,
                                       PageContent::seeded(1), c);
  CHECK(npu_leak.value().result == AccessResult::SmmuFault);
  CHECK(w.monitor.npu_grant(w.mem, {plain}, c).code == StatusCode::InvariantViolation);
  CHECK(w.monitor.validate(w.mem).ok());
}

TEST_CASE("map_pages is monitor-only and re-checks type invariants") {
  World w;
  PageId prot = w.general(0);
  REQUIRE(w.protect({prot}).ok());
  OpCtx c = w.ctx();

  CHECK(w.monitor.map_pages(w.mem, Actor::NormalKernel, TableRef::S2Normal, {prot}, c).code ==
        StatusCode::NotMonitor);
  CHECK(w.monitor.map_pages(w.mem, Actor::Monitor, TableRef::S2Normal, {prot}, c).code ==
        StatusCode::InvariantViolation);

  PageId a = w.general(1), b = w.general(2), d = w.general(3);
  CHECK(w.monitor.map_pages(w.mem, Actor::Monitor, TableRef::SmmuDisk, {a, b, d}, c).ok());

  // Unmap then access: the definition of unmapped.
  CHECK(w.monitor.unmap_pages(w.mem, Actor::Monitor, TableRef::S2Normal, {a}, c).ok());
  auto out = w.monitor.cpu_access(w.mem, Actor::NormalKernel, a, AccessKind::Read,
                                  std::nullopt, c);
  CHECK(out.value().result == AccessResult::Stage2Fault);
}

TEST_CASE("protect and unprotect move state and latency") {
  World w;
  OpCtx c = w.ctx();
  // Empty set: free.
  CHECK(w.monitor.protect_pages(w.mem, {}, c).ok());
  CHECK(c.elapsed == 0);

  PageId p = w.general(0);
  CHECK(w.monitor.protect_pages(w.mem, {p}, c).code == StatusCode::NotPinned);
  w.mem.set_pinned(p, true);
  REQUIRE(w.monitor.protect_pages(w.mem, {p}, c).ok());
  CHECK(w.mem.state(p) == PageState::FlexMem);
  CHECK(w.monitor.protect_pages(w.mem, {p}, c).code == StatusCode::AlreadyProtected);

  // Eager release zeroes and remaps.
  w.mem.write_content(p, PageContent::seeded(4));
  OpCtx c2 = w.ctx();
  REQUIRE(w.monitor.unprotect_pages(w.mem, {p}, ReclaimMode::Eager, c2).ok());
  CHECK(w.mem.state(p) == PageState::Unprotected);
  auto read = w.monitor.cpu_access(w.mem, Actor::NormalKernel, p, AccessKind::Read,
                                   std::nullopt, c2);
  CHECK(read.value().result == AccessResult::Ok);
  CHECK(read.value().content->is_zeros());
  CHECK(w.monitor.unprotect_pages(w.mem, {p}, ReclaimMode::Eager, c2).code ==
        StatusCode::NotProtected);
}

TEST_CASE("lazy release hides stale bytes until reuse") {
  World w;
  PageId p = w.general(0);
  REQUIRE(w.protect({p}).ok());
  w.mem.write_content(p, PageContent::seeded(99));  // secret
  OpCtx c = w.ctx();
  REQUIRE(w.monitor.unprotect_pages(w.mem, {p}, ReclaimMode::Lazy, c).ok());
  CHECK(w.mem.state(p) == PageState::LazyReclaim);
  CHECK(w.mem.dirty(p));

  // Probing read is denied and triggers the deferred clear.
  auto probe = w.monitor.cpu_access(w.mem, Actor::NormalKernel, p, AccessKind::Read,
                                    std::nullopt, c);
  CHECK(probe.value().result == AccessResult::Stage2Fault);
  CHECK(w.mem.state(p) == PageState::Unprotected);
  auto retry = w.monitor.cpu_access(w.mem, Actor::NormalKernel, p, AccessKind::Read,
                                    std::nullopt, c);
  CHECK(retry.value().result == AccessResult::Ok);
  CHECK(retry.value().content->is_zeros());
}

TEST_CASE("reuse with kernel content lands that content, never old bytes") {
  World w;
  PageId p = w.general(0);
  REQUIRE(w.protect({p}).ok());
  w.mem.write_content(p, PageContent::seeded(99));
  OpCtx c = w.ctx();
  REQUIRE(w.monitor.unprotect_pages(w.mem, {p}, ReclaimMode::Lazy, c).ok());

  auto write = w.monitor.cpu_access(w.mem, Actor::NormalKernel, p, AccessKind::Write,
                                    PageContent::seeded(123), c);
  CHECK(write.value().result == AccessResult::Ok);
  auto read = w.monitor.cpu_access(w.mem, Actor::NormalKernel, p, AccessKind::Read,
                                   std::nullopt, c);
  CHECK(read.value().content->same_bytes_as(PageContent::seeded(123)));

  CHECK(w.monitor.on_reuse(w.mem, p, std::nullopt, c).code == StatusCode::NotLazy);
}

TEST_CASE("NPU mode switch moves MMIO, driver image, and restores exactly") {
  World w;
  OpCtx c = w.ctx();
  PageId plain = w.general(0);
  REQUIRE(w.monitor.kernel_smmu_reconfig(w.mem, DeviceId::Npu, {plain}, false, c).ok());
  PageBitset before = w.monitor.smmu(DeviceId::Npu).mapped;

  SimDuration t0 = c.elapsed;
  REQUIRE(w.monitor.npu_set_mode(w.mem, NpuMode::Protected, c).ok());
  CHECK(c.elapsed - t0 == 210);  // 0.21 ms per switch
  CHECK(w.monitor.validate(w.mem).ok());

  // Kernel pokes at the NPU window now fault.
  PageId npu_mmio{w.mem.layout().npu_mmio.first};
  auto poke = w.monitor.cpu_access(w.mem, Actor::NormalKernel, npu_mmio, AccessKind::Write,
                                   std::nullopt, c);
  CHECK(poke.value().result == AccessResult::Stage2Fault);
  CHECK(w.monitor.npu_set_mode(w.mem, NpuMode::Protected, c).ok());  // idempotent

  REQUIRE(w.monitor.npu_set_mode(w.mem, NpuMode::Unprotected, c).ok());
  CHECK(w.monitor.smmu(DeviceId::Npu).mapped == before);
  CHECK(w.monitor.validate(w.mem).ok());

  w.monitor.set_npu_task_inflight(true);
  CHECK(w.monitor.npu_set_mode(w.mem, NpuMode::Protected, c).code ==
        StatusCode::TaskInFlight);
}

TEST_CASE("freeze requires released resources and verifies on unfreeze") {
  World w;
  OpCtx c = w.ctx();
  PageId p = w.general(0);
  w.mem.set_pinned(p, true);
  REQUIRE(w.monitor.protect_pages(w.mem, {p}, c).ok());
  CHECK(w.monitor.freeze(w.mem, c).code == StatusCode::ResourcesHeld);
  REQUIRE(w.monitor.unprotect_pages(w.mem, {p}, ReclaimMode::Lazy, c).ok());

  // Deferred clears land before translation is disabled.
  REQUIRE(w.monitor.freeze(w.mem, c).ok());
  CHECK(w.mem.count_state(PageState::LazyReclaim) == 0);
  CHECK_FALSE(w.monitor.protection_enabled());
  CHECK(w.monitor.frozen_hash().has_value());

  OpCtx c2 = w.ctx();
  REQUIRE(w.monitor.unfreeze(w.mem, c2).ok());
  CHECK(c2.elapsed == 130 + 2830);  // translation boot + hash check
  CHECK(w.monitor.protection_enabled());
  CHECK_FALSE(w.monitor.frozen_hash().has_value());
  CHECK(w.monitor.unfreeze(w.mem, c2).code == StatusCode::AlreadyProtected);
}

TEST_CASE("any single bit flipped in the monitor image is detected") {
  World w;
  OpCtx c = w.ctx();
  REQUIRE(w.monitor.freeze(w.mem, c).ok());

  // While frozen the kernel can write the image; flip one bit via the real
  // access path and verify detection (full sweep lives in the acceptance
  // campaign).
  FrameRange region = w.monitor.monitor_region();
  PageId victim{region.first + 1};
  auto before = w.monitor.cpu_access(w.mem, Actor::NormalKernel, victim, AccessKind::Read,
                                     std::nullopt, c);
  REQUIRE(before.value().result == AccessResult::Ok);
  PageBytes bytes = before.value().content->materialize();
  bytes[100] ^= 0x10;
  auto write = w.monitor.cpu_access(w.mem, Actor::NormalKernel, victim, AccessKind::Write,
                                    PageContent::literal_copy(bytes.data(), bytes.size()), c);
  REQUIRE(write.value().result == AccessResult::Ok);

  CHECK(w.monitor.unfreeze(w.mem, c).code == StatusCode::IntegrityViolation);
  CHECK(w.monitor.halted());
  CHECK(w.monitor.protect_pages(w.mem, {w.general(0)}, c).code ==
        StatusCode::IntegrityViolation);
}

TEST_CASE("protect auto-re-enables protection from the frozen state") {
  World w;
  OpCtx c = w.ctx();
  REQUIRE(w.monitor.freeze(w.mem, c).ok());
  PageId p = w.general(0);
  w.mem.set_pinned(p, true);
  OpCtx c2 = w.ctx();
  REQUIRE(w.monitor.protect_pages(w.mem, {p}, c2).ok());
  CHECK(w.monitor.protection_enabled());
  // Re-enable cost precedes the allocation charge.
  CHECK(c2.elapsed >= 130 + 2830);
}
