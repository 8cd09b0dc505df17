#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flexsim/physmem.hpp"

using namespace flexsim;

TEST_CASE("layout validation rejects malformed ranges") {
  MemoryLayout l = MemoryLayout::tiny();
  CHECK_NOTHROW(l.validate());
  MemoryLayout bad = l;
  bad.monitor_region = FrameRange{0, 4};  // overlaps the secure carve-out
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  MemoryLayout tiny_mem = l;
  tiny_mem.total_frames = 4;
  CHECK_THROWS_AS(tiny_mem.validate(), ConfigError);
}

TEST_CASE("page content kinds materialize and compare") {
  PageContent z = PageContent::zeros();
  PageBytes zb = z.materialize();
  CHECK(zb[0] == 0);
  CHECK(zb[4095] == 0);

  PageContent s1 = PageContent::seeded(77);
  PageContent s2 = PageContent::seeded(77);
  PageContent s3 = PageContent::seeded(78);
  CHECK(s1.same_bytes_as(s2));
  CHECK(s1.same_handle_as(s2));
  CHECK_FALSE(s1.same_bytes_as(s3));
  CHECK_FALSE(s1.same_bytes_as(z));

  std::uint8_t raw[5] = {1, 2, 3, 4, 5};
  PageContent lit = PageContent::literal_copy(raw, 5);
  PageBytes lb = lit.materialize();
  CHECK(lb[0] == 1);
  CHECK(lb[4] == 5);
  CHECK(lb[5] == 0);  // zero padded
}

TEST_CASE("page content serialization round trips") {
  for (const PageContent& c :
       {PageContent::zeros(), PageContent::seeded(123456),
        PageContent::literal_copy("hello", 5)}) {
    std::vector<std::uint8_t> buf;
    c.serialize_to(buf);
    std::size_t consumed = 0;
    PageContent back = PageContent::deserialize(buf.data(), buf.size(), consumed);
    CHECK(consumed == buf.size());
    CHECK(back.same_bytes_as(c));
  }
}

TEST_CASE("bitset tracks count and scans") {
  PageBitset bs(200);
  CHECK(bs.count() == 0);
  bs.set(PageId{3});
  bs.set(PageId{64});
  bs.set(PageId{199});
  bs.set(PageId{64});  // idempotent
  CHECK(bs.count() == 3);
  CHECK(bs.first_set(0).value() == 3);
  CHECK(bs.first_set(4).value() == 64);
  CHECK(bs.first_set(65).value() == 199);
  bs.reset(PageId{64});
  CHECK(bs.count() == 2);
  std::vector<std::uint32_t> seen;
  bs.for_each_set([&](PageId p) { seen.push_back(p.index); });
  CHECK(seen == std::vector<std::uint32_t>{3, 199});
}

TEST_CASE("physical memory keeps the state partition exact") {
  PhysicalMemory mem(MemoryLayout::tiny());
  CHECK(mem.total_frames() == 16);
  CHECK(mem.count_state(PageState::TzSecure) == 2);
  CHECK(mem.count_state(PageState::Unprotected) == 14);
  CHECK(mem.check("init").ok());

  mem.set_state(PageId{8}, PageState::FlexMem);
  CHECK(mem.count_state(PageState::FlexMem) == 1);
  CHECK(mem.count_state(PageState::Unprotected) == 13);

  mem.write_content(PageId{8}, PageContent::seeded(1));
  CHECK_FALSE(mem.content(PageId{8}).is_zeros());
  mem.write_content(PageId{8}, PageContent::zeros());
  CHECK(mem.content(PageId{8}).is_zeros());

  mem.set_pinned(PageId{9}, true);
  CHECK(mem.pinned(PageId{9}));
  mem.set_dirty(PageId{9}, true);
  CHECK(mem.dirty(PageId{9}));
  mem.set_dirty(PageId{9}, false);
  CHECK_FALSE(mem.dirty(PageId{9}));
}
