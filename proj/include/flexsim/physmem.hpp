#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flexsim/common.hpp"
#include "flexsim/crypto.hpp"

namespace flexsim {

enum class PageState : std::uint8_t {
  Unprotected = 0,
  FlexMem = 1,
  TzSecure = 2,
  LazyReclaim = 3,
};

const char* page_state_name(PageState s);

enum class MmioRegionId : std::uint8_t { NpuMmio = 0, SmmuMmio = 1 };
inline constexpr int kMmioRegionCount = 2;

enum class DeviceId : std::uint8_t { DiskDma = 0, Npu = 1 };
inline constexpr int kDeviceCount = 2;
const char* device_name(DeviceId d);

using PageBytes = std::array<std::uint8_t, kPageSize>;

// Immutable page content handle. Whole-page granularity keeps copies O(1):
// simulations with gigabytes of modeled memory never materialize bytes,
// while security scenarios carry real literals that encryption and clearing
// visibly transform.
class PageContent {
 public:
  enum class Kind : std::uint8_t { Zeros, Seeded, Literal };

  PageContent() = default;  // zeros
  static PageContent zeros() { return PageContent(); }
  static PageContent seeded(std::uint64_t seed);
  static PageContent literal(std::shared_ptr<const PageBytes> bytes);
  static PageContent literal_copy(const void* data, std::size_t n);  // zero-padded

  Kind kind() const { return kind_; }
  bool is_zeros() const { return kind_ == Kind::Zeros; }
  PageBytes materialize() const;

  // Cheap when handles are structurally equal; falls back to byte compare.
  bool same_bytes_as(const PageContent& other) const;
  // Structural identity only (no materialization); true implies equal bytes.
  bool same_handle_as(const PageContent& other) const;

  // Compact exact encoding (kind tag + seed or literal bytes); round-trips
  // through deserialize byte-identically.
  void serialize_to(std::vector<std::uint8_t>& out) const;
  static PageContent deserialize(const std::uint8_t* data, std::size_t avail,
                                 std::size_t& consumed);

 private:
  Kind kind_ = Kind::Zeros;
  std::uint64_t seed_ = 0;
  std::shared_ptr<const PageBytes> bytes_;
};

// Bitset over page frames with a maintained popcount.
class PageBitset {
 public:
  PageBitset() = default;
  explicit PageBitset(std::uint32_t frames) : frames_(frames), words_((frames + 63) / 64, 0) {}

  bool test(PageId p) const {
    return (words_[p.index >> 6] >> (p.index & 63)) & 1u;
  }
  void set(PageId p) {
    std::uint64_t& w = words_[p.index >> 6];
    std::uint64_t bit = 1ull << (p.index & 63);
    if (!(w & bit)) {
      w |= bit;
      ++count_;
    }
  }
  void reset(PageId p) {
    std::uint64_t& w = words_[p.index >> 6];
    std::uint64_t bit = 1ull << (p.index & 63);
    if (w & bit) {
      w &= ~bit;
      --count_;
    }
  }
  void clear();
  std::uint64_t count() const { return count_; }
  std::uint32_t frames() const { return frames_; }

  // Lowest set index >= from, or nullopt.
  std::optional<std::uint32_t> first_set(std::uint32_t from = 0) const;

  template <typename Fn>
  void for_each_set(Fn&& fn) const {
    for (std::uint32_t wi = 0; wi < words_.size(); ++wi) {
      std::uint64_t w = words_[wi];
      while (w != 0) {
        std::uint32_t bit = static_cast<std::uint32_t>(__builtin_ctzll(w));
        fn(PageId{wi * 64 + bit});
        w &= w - 1;
      }
    }
  }

  bool operator==(const PageBitset& other) const {
    return frames_ == other.frames_ && words_ == other.words_;
  }

  const std::vector<std::uint64_t>& words() const { return words_; }

 private:
  std::uint32_t frames_ = 0;
  std::vector<std::uint64_t> words_;
  std::uint64_t count_ = 0;
};

enum class TableOwner : std::uint8_t { NormalKernel, NpuSandbox };

// Stage-2 translation for one owner: guest-physical frames plus MMIO
// regions. The untrusted kernel addresses an identity mapping minus the
// entries the monitor removed.
struct Stage2Table {
  TableOwner owner = TableOwner::NormalKernel;
  PageBitset mapped;
  std::array<bool, kMmioRegionCount> mmio_mapped{};

  bool mmio(MmioRegionId r) const { return mmio_mapped[static_cast<int>(r)]; }
  void set_mmio(MmioRegionId r, bool v) { mmio_mapped[static_cast<int>(r)] = v; }
};

struct SmmuTable {
  DeviceId device = DeviceId::DiskDma;
  PageBitset mapped;
};

struct MemoryLayout {
  std::uint32_t total_frames = 0;
  FrameRange tz_secure;       // static secure carve-out, contiguous
  FrameRange monitor_region;  // hypervisor-component image, contiguous
  FrameRange npu_mmio;
  FrameRange smmu_mmio;

  // 16 GiB of RAM, 64 secure frames, a 4-frame monitor image, 1-frame MMIO
  // windows.
  static MemoryLayout default_device();
  // 16-frame layout used by exhaustive security exploration.
  static MemoryLayout tiny();

  std::uint32_t first_general_frame() const;
  bool is_mmio(PageId p) const { return npu_mmio.contains(p) || smmu_mmio.contains(p); }
  std::optional<MmioRegionId> mmio_region(PageId p) const;
  bool is_reserved(PageId p) const {
    return tz_secure.contains(p) || monitor_region.contains(p) || is_mmio(p);
  }
  void validate() const;
};

enum class AccessResult : std::uint8_t { Ok, Stage2Fault, TzFault, SmmuFault };
const char* access_result_name(AccessResult r);

struct AccessOutcome {
  AccessResult result = AccessResult::Ok;
  // Present on successful reads.
  std::optional<PageContent> content;

  bool ok() const { return result == AccessResult::Ok; }
};

enum class AccessKind : std::uint8_t { Read, Write };

// The universe of page frames: per-frame protection state, pin/dirty flags,
// and whole-page contents (sparse; untouched frames read as zeros).
class PhysicalMemory {
 public:
  PhysicalMemory() = default;
  explicit PhysicalMemory(const MemoryLayout& layout);

  const MemoryLayout& layout() const { return layout_; }
  std::uint32_t total_frames() const { return layout_.total_frames; }
  bool valid(PageId p) const { return p.index < layout_.total_frames; }

  PageState state(PageId p) const;
  void set_state(PageId p, PageState s);
  bool pinned(PageId p) const;
  void set_pinned(PageId p, bool v);
  bool dirty(PageId p) const;
  void set_dirty(PageId p, bool v);

  PageContent content(PageId p) const;
  void write_content(PageId p, PageContent c);

  std::uint64_t count_state(PageState s) const { return state_counts_[static_cast<int>(s)]; }

  // Full-scan structural check (state partition, static secure range); test
  // and debugging aid, not on hot paths.
  Status check(const std::string& where) const;

 private:
  MemoryLayout layout_;
  std::vector<std::uint8_t> meta_;  // state(2 bits) | pinned | dirty
  std::unordered_map<std::uint32_t, PageContent> contents_;
  std::array<std::uint64_t, 4> state_counts_{};
};

}  // namespace flexsim
