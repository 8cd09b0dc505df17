#include "flexsim/physmem.hpp"

#include <algorithm>
#include <cstring>

#include "flexsim/rng.hpp"

namespace flexsim {

const char* page_state_name(PageState s) {
  switch (s) {
    case PageState::Unprotected: return "unprotected";
    case PageState::FlexMem: return "flexmem";
    case PageState::TzSecure: return "tz_secure";
    case PageState::LazyReclaim: return "lazy_reclaim";
  }
  return "unknown";
}

const char* device_name(DeviceId d) {
  switch (d) {
    case DeviceId::DiskDma: return "disk_dma";
    case DeviceId::Npu: return "npu";
  }
  return "unknown";
}

const char* access_result_name(AccessResult r) {
  switch (r) {
    case AccessResult::Ok: return "ok";
    case AccessResult::Stage2Fault: return "stage2_fault";
    case AccessResult::TzFault: return "tz_fault";
    case AccessResult::SmmuFault: return "smmu_fault";
  }
  return "unknown";
}

PageContent PageContent::seeded(std::uint64_t seed) {
  PageContent c;
  c.kind_ = Kind::Seeded;
  c.seed_ = seed;
  return c;
}

PageContent PageContent::literal(std::shared_ptr<const PageBytes> bytes) {
  PageContent c;
  c.kind_ = Kind::Literal;
  c.bytes_ = std::move(bytes);
  return c;
}

PageContent PageContent::literal_copy(const void* data, std::size_t n) {
  auto buf = std::make_shared<PageBytes>();
  buf->fill(0);
  std::memcpy(buf->data(), data, std::min(n, static_cast<std::size_t>(kPageSize)));
  return literal(std::move(buf));
}

PageBytes PageContent::materialize() const {
  PageBytes out;
  switch (kind_) {
    case Kind::Zeros:
      out.fill(0);
      break;
    case Kind::Seeded: {
      std::uint64_t s = seed_;
      for (std::size_t i = 0; i < kPageSize; i += 8) {
        std::uint64_t v = splitmix64(s);
        std::memcpy(out.data() + i, &v, 8);
      }
      break;
    }
    case Kind::Literal:
      out = *bytes_;
      break;
  }
  return out;
}

bool PageContent::same_handle_as(const PageContent& other) const {
  if (kind_ != other.kind_) return false;
  switch (kind_) {
    case Kind::Zeros: return true;
    case Kind::Seeded: return seed_ == other.seed_;
    case Kind::Literal: return bytes_ == other.bytes_;
  }
  return false;
}

bool PageContent::same_bytes_as(const PageContent& other) const {
  if (same_handle_as(other)) return true;
  return materialize() == other.materialize();
}

void PageContent::serialize_to(std::vector<std::uint8_t>& out) const {
  out.push_back(static_cast<std::uint8_t>(kind_));
  switch (kind_) {
    case Kind::Zeros:
      break;
    case Kind::Seeded: {
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(seed_ >> (8 * i)));
      break;
    }
    case Kind::Literal:
      out.insert(out.end(), bytes_->begin(), bytes_->end());
      break;
  }
}

PageContent PageContent::deserialize(const std::uint8_t* data, std::size_t avail,
                                     std::size_t& consumed) {
  consumed = 0;
  if (avail < 1) return PageContent::zeros();
  Kind k = static_cast<Kind>(data[0]);
  consumed = 1;
  switch (k) {
    case Kind::Zeros:
      return PageContent::zeros();
    case Kind::Seeded: {
      if (avail < 9) return PageContent::zeros();
      std::uint64_t seed = 0;
      for (int i = 0; i < 8; ++i) seed |= static_cast<std::uint64_t>(data[1 + i]) << (8 * i);
      consumed = 9;
      return PageContent::seeded(seed);
    }
    case Kind::Literal: {
      if (avail < 1 + kPageSize) return PageContent::zeros();
      consumed = 1 + kPageSize;
      return PageContent::literal_copy(data + 1, kPageSize);
    }
  }
  return PageContent::zeros();
}

void PageBitset::clear() {
  std::fill(words_.begin(), words_.end(), 0);
  count_ = 0;
}

std::optional<std::uint32_t> PageBitset::first_set(std::uint32_t from) const {
  if (from >= frames_) return std::nullopt;
  std::uint32_t wi = from >> 6;
  std::uint64_t w = words_[wi] & (~0ull << (from & 63));
  while (true) {
    if (w != 0) {
      std::uint32_t idx = wi * 64 + static_cast<std::uint32_t>(__builtin_ctzll(w));
      if (idx >= frames_) return std::nullopt;
      return idx;
    }
    if (++wi >= words_.size()) return std::nullopt;
    w = words_[wi];
  }
}

MemoryLayout MemoryLayout::default_device() {
  MemoryLayout l;
  l.total_frames = static_cast<std::uint32_t>(16 * kFramesPerGiB);
  l.tz_secure = FrameRange{0, 64};
  l.monitor_region = FrameRange{64, 4};
  l.npu_mmio = FrameRange{68, 1};
  l.smmu_mmio = FrameRange{69, 1};
  return l;
}

MemoryLayout MemoryLayout::tiny() {
  MemoryLayout l;
  l.total_frames = 16;
  l.tz_secure = FrameRange{0, 2};
  l.monitor_region = FrameRange{2, 4};
  l.npu_mmio = FrameRange{6, 1};
  l.smmu_mmio = FrameRange{7, 1};
  return l;
}

std::uint32_t MemoryLayout::first_general_frame() const {
  std::uint32_t first = 0;
  first = std::max(first, tz_secure.end());
  first = std::max(first, monitor_region.end());
  first = std::max(first, npu_mmio.end());
  first = std::max(first, smmu_mmio.end());
  return first;
}

std::optional<MmioRegionId> MemoryLayout::mmio_region(PageId p) const {
  if (npu_mmio.contains(p)) return MmioRegionId::NpuMmio;
  if (smmu_mmio.contains(p)) return MmioRegionId::SmmuMmio;
  return std::nullopt;
}

void MemoryLayout::validate() const {
  if (total_frames == 0) throw ConfigError("memory: total_frames must be > 0");
  auto in_bounds = [&](const FrameRange& r, const char* name) {
    if (r.end() > total_frames) {
      throw ConfigError(std::string("memory: range '") + name + "' exceeds total_frames");
    }
  };
  in_bounds(tz_secure, "tz_secure");
  in_bounds(monitor_region, "monitor_region");
  in_bounds(npu_mmio, "npu_mmio");
  in_bounds(smmu_mmio, "smmu_mmio");
  if (monitor_region.count == 0) throw ConfigError("memory: monitor_region must be non-empty");
  if (npu_mmio.count == 0 || smmu_mmio.count == 0) {
    throw ConfigError("memory: MMIO windows must be non-empty");
  }
  // Reserved ranges must not overlap.
  const FrameRange ranges[] = {tz_secure, monitor_region, npu_mmio, smmu_mmio};
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      std::uint32_t lo = std::max(ranges[i].first, ranges[j].first);
      std::uint32_t hi = std::min(ranges[i].end(), ranges[j].end());
      if (lo < hi && ranges[i].count > 0 && ranges[j].count > 0) {
        throw ConfigError("memory: reserved ranges overlap");
      }
    }
  }
  if (first_general_frame() >= total_frames) {
    throw ConfigError("memory: no general-purpose frames left");
  }
}

namespace {
constexpr std::uint8_t kStateMask = 0x3;
constexpr std::uint8_t kPinnedBit = 0x4;
constexpr std::uint8_t kDirtyBit = 0x8;
}  // namespace

PhysicalMemory::PhysicalMemory(const MemoryLayout& layout) : layout_(layout) {
  layout_.validate();
  meta_.assign(layout_.total_frames, 0);
  state_counts_[static_cast<int>(PageState::Unprotected)] = layout_.total_frames;
  for (std::uint32_t i = layout_.tz_secure.first; i < layout_.tz_secure.end(); ++i) {
    set_state(PageId{i}, PageState::TzSecure);
  }
}

PageState PhysicalMemory::state(PageId p) const {
  return static_cast<PageState>(meta_[p.index] & kStateMask);
}

void PhysicalMemory::set_state(PageId p, PageState s) {
  PageState old = state(p);
  if (old == s) return;
  --state_counts_[static_cast<int>(old)];
  ++state_counts_[static_cast<int>(s)];
  meta_[p.index] = static_cast<std::uint8_t>((meta_[p.index] & ~kStateMask) |
                                             static_cast<std::uint8_t>(s));
}

bool PhysicalMemory::pinned(PageId p) const { return meta_[p.index] & kPinnedBit; }

void PhysicalMemory::set_pinned(PageId p, bool v) {
  if (v) {
    meta_[p.index] |= kPinnedBit;
  } else {
    meta_[p.index] &= static_cast<std::uint8_t>(~kPinnedBit);
  }
}

bool PhysicalMemory::dirty(PageId p) const { return meta_[p.index] & kDirtyBit; }

void PhysicalMemory::set_dirty(PageId p, bool v) {
  if (v) {
    meta_[p.index] |= kDirtyBit;
  } else {
    meta_[p.index] &= static_cast<std::uint8_t>(~kDirtyBit);
  }
}

PageContent PhysicalMemory::content(PageId p) const {
  auto it = contents_.find(p.index);
  if (it == contents_.end()) return PageContent::zeros();
  return it->second;
}

void PhysicalMemory::write_content(PageId p, PageContent c) {
  if (c.is_zeros()) {
    contents_.erase(p.index);
  } else {
    contents_[p.index] = std::move(c);
  }
}

Status PhysicalMemory::check(const std::string& where) const {
  std::array<std::uint64_t, 4> counts{};
  for (std::uint32_t i = 0; i < layout_.total_frames; ++i) {
    PageState s = state(PageId{i});
    ++counts[static_cast<int>(s)];
    bool in_tz = layout_.tz_secure.contains(PageId{i});
    if (in_tz != (s == PageState::TzSecure)) {
      return Status::error(StatusCode::InvariantViolation,
                           where + ": frame " + std::to_string(i) +
                               " secure-range/state mismatch");
    }
  }
  if (counts != state_counts_) {
    return Status::error(StatusCode::InvariantViolation, where + ": state counters drifted");
  }
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total != layout_.total_frames) {
    return Status::error(StatusCode::InvariantViolation, where + ": state partition not exhaustive");
  }
  return Status::success();
}

}  // namespace flexsim
