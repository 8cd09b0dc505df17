#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flexsim/daemon.hpp"

using namespace flexsim;

namespace {

struct World {
  PhysicalMemory mem;
  TimingModel timing;
  Monitor monitor;
  FlexMemDaemon daemon;
  EventLog log;

  explicit World(std::uint32_t general_frames = 64) : mem(make_layout(general_frames)),
        monitor(mem, timing, 7), daemon(mem, monitor) {}

  static MemoryLayout make_layout(std::uint32_t general_frames) {
    MemoryLayout l = MemoryLayout::tiny();
    l.total_frames = l.first_general_frame() + 2 /*driver*/ + general_frames;
    return l;
  }

  OpCtx ctx() {
    OpCtx c;
    c.log = &log;
    return c;
  }
};

}  // namespace

TEST_CASE("allocation pins, protects and accounts every frame") {
  World w;
  OpCtx c = w.ctx();
  auto grant = w.daemon.flexmem_allocate(w.mem, w.monitor, 10, c);
  REQUIRE(grant.ok());
  CHECK(grant.value().pages.size() == 10);
  for (PageId p : grant.value().pages) {
    CHECK(w.mem.state(p) == PageState::FlexMem);
    CHECK(w.mem.pinned(p));
  }
  CHECK(w.daemon.check_accounting(w.mem, w.monitor).ok());
  CHECK(w.daemon.live_grant_frames(true) == 10);

  REQUIRE(w.daemon.release_grant(w.mem, w.monitor, grant.value().grant_id,
                                 ReclaimMode::Lazy, c)
              .ok());
  CHECK(w.daemon.live_grant_frames(true) == 0);
  CHECK(w.mem.count_state(PageState::LazyReclaim) == 10);
  CHECK(w.daemon.check_accounting(w.mem, w.monitor).ok());

  // Lazily released frames are allocatable again and come back cleared.
  auto again = w.daemon.flexmem_allocate(w.mem, w.monitor, 12, c);
  REQUIRE(again.ok());
  CHECK(w.mem.count_state(PageState::LazyReclaim) == 0);
  CHECK(w.daemon.check_accounting(w.mem, w.monitor).ok());
}

TEST_CASE("zero-frame and over-capacity requests") {
  World w;
  OpCtx c = w.ctx();
  auto empty = w.daemon.flexmem_allocate(w.mem, w.monitor, 0, c);
  REQUIRE(empty.ok());
  CHECK(empty.value().pages.empty());
  CHECK(c.elapsed == 0);

  auto too_big = w.daemon.flexmem_allocate(w.mem, w.monitor, 100000, c);
  CHECK(too_big.code() == StatusCode::OutOfMemory);
}

TEST_CASE("page-granular allocation tolerates fragmentation that defeats contiguity") {
  World w;
  OpCtx c = w.ctx();
  // Checkerboard: fill everything with single-frame grants, free the even
  // ones eagerly so every other frame stays protected and pinned.
  std::vector<std::uint64_t> holders;
  for (std::uint32_t i = 0; i < 64; ++i) {
    auto g = w.daemon.flexmem_allocate(w.mem, w.monitor, 1, c);
    REQUIRE(g.ok());
    holders.push_back(g.value().grant_id);
  }
  for (std::uint32_t i = 0; i < 64; i += 2) {
    REQUIRE(w.daemon.release_grant(w.mem, w.monitor, holders[i], ReclaimMode::Eager, c).ok());
  }

  // 32 scattered free frames: fine for page-granular allocation.
  auto frag = w.daemon.flexmem_allocate(w.mem, w.monitor, 20, c);
  CHECK(frag.ok());
  REQUIRE(w.daemon
              .release_grant(w.mem, w.monitor, frag.value().grant_id, ReclaimMode::Eager, c)
              .ok());

  // The same pattern defeats a contiguous carve of the same size.
  auto cma = w.daemon.cma_allocate(w.mem, w.monitor, 20, 0, c);
  CHECK(cma.code() == StatusCode::Unsatisfiable);
}

TEST_CASE("contiguous carve relocates movable background pages") {
  World w;
  OpCtx c = w.ctx();
  REQUIRE(w.daemon.reserve_background(20).ok());
  auto region = w.daemon.cma_allocate(w.mem, w.monitor, 40, 2 * kGiB, c);
  REQUIRE(region.ok());
  CHECK(region.value().length == 40);
  // Contiguity by construction.
  CHECK(w.daemon.check_accounting(w.mem, w.monitor).ok());
  for (std::uint32_t i = 0; i < 40; ++i) {
    CHECK(w.mem.pinned(PageId{region.value().base.index + i}));
  }
  REQUIRE(w.daemon.cma_release(w.mem, region.value().region_id, c).ok());
  CHECK(w.daemon.check_accounting(w.mem, w.monitor).ok());
}

TEST_CASE("contiguous carve fails when pinned pages block every window") {
  World w;
  OpCtx c = w.ctx();
  // Fill, then free all but one frame per 8-frame stride: the pinned
  // stragglers cap the largest movable run below 16.
  std::vector<std::uint64_t> holders;
  for (std::uint32_t i = 0; i < 64; ++i) {
    auto g = w.daemon.flexmem_allocate(w.mem, w.monitor, 1, c);
    REQUIRE(g.ok());
    holders.push_back(g.value().grant_id);
  }
  for (std::uint32_t i = 0; i < 64; ++i) {
    if (i % 8 == 0) continue;
    REQUIRE(w.daemon.release_grant(w.mem, w.monitor, holders[i], ReclaimMode::Eager, c).ok());
  }
  CHECK(w.daemon.cma_allocate(w.mem, w.monitor, 16, 0, c).code() ==
        StatusCode::Unsatisfiable);
  CHECK(w.daemon.cma_allocate(w.mem, w.monitor, 4, 0, c).ok());
}

TEST_CASE("plain mappings charge the unprotected rate and stay unpinned") {
  World w;
  OpCtx c = w.ctx();
  auto g = w.daemon.mmap_allocate(w.mem, 8, c);
  REQUIRE(g.ok());
  CHECK_FALSE(g.value().secure);
  for (PageId p : g.value().pages) {
    CHECK(w.mem.state(p) == PageState::Unprotected);
    CHECK_FALSE(w.mem.pinned(p));
  }
  CHECK(c.elapsed == w.timing.mmap_alloc_us(8 * kPageSize));
  CHECK(w.daemon.check_accounting(w.mem, w.monitor).ok());
}

TEST_CASE("allocation rows capture the latency breakdown") {
  World w;
  OpCtx c = w.ctx();
  auto g = w.daemon.flexmem_allocate(w.mem, w.monitor, 4, c);
  REQUIRE(g.ok());
  REQUIRE(w.daemon.alloc_rows().size() == 1);
  const AllocRow& row = w.daemon.alloc_rows().front();
  CHECK(row.mode == "flexmem");
  CHECK(row.frames == 4);
  CHECK(row.latency_us == w.timing.flexmem_alloc_us(4 * kPageSize));
}
