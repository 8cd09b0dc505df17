#include "flexsim/attack.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>

#include "flexsim/rng.hpp"

namespace flexsim {

namespace {

constexpr std::size_t kMaxFindings = 64;

OpCtx null_ctx() { return OpCtx{}; }

void add_finding(SecurityReport& report, const char* kind, std::string detail,
                 const std::vector<std::uint16_t>& trace) {
  if (report.findings.size() < kMaxFindings) {
    report.findings.push_back(SecurityFinding{kind, std::move(detail), trace});
  }
}

bool content_is_sentinel(const SecurityWorld& world, const PageContent& content) {
  for (const PageContent& s : world.sentinels) {
    if (content.same_handle_as(s)) return true;
  }
  return false;
}

// Confidentiality check on a successful read outcome.
std::uint64_t check_observation(SecurityWorld& world, PageId page,
                                const AccessOutcome& outcome, SecurityReport& report,
                                const std::vector<std::uint16_t>& trace) {
  if (outcome.result != AccessResult::Ok || !outcome.content.has_value()) return 0;
  std::uint64_t violations = 0;
  PageState st = world.mem.state(page);
  if (st == PageState::FlexMem || st == PageState::TzSecure) {
    ++report.leaks;
    ++violations;
    add_finding(report, "protected_content_returned",
                "page=" + std::to_string(page.index), trace);
  }
  if (content_is_sentinel(world, *outcome.content)) {
    ++report.leaks;
    ++violations;
    add_finding(report, "sentinel_observed", "page=" + std::to_string(page.index), trace);
  }
  return violations;
}

bool monitor_image_differs(const SecurityWorld& world) {
  FrameRange region = world.monitor.monitor_region();
  for (std::uint32_t i = 0; i < region.count; ++i) {
    PageContent now = world.mem.content(PageId{region.first + i});
    if (!now.same_bytes_as(world.frozen_image[i])) return true;
  }
  return false;
}

std::uint64_t fingerprint_page(const PageContent& content) {
  PageBytes bytes = content.materialize();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

void refresh_image_fp(SecurityWorld& world, PageId page) {
  FrameRange region = world.monitor.monitor_region();
  if (!region.contains(page) || world.image_fp.empty()) return;
  world.image_fp[page.index - region.first] = fingerprint_page(world.mem.content(page));
}

}  // namespace

const char* attack_action_name(AttackActionKind k) {
  switch (k) {
    case AttackActionKind::KernelRead: return "kernel_read";
    case AttackActionKind::KernelWrite: return "kernel_write";
    case AttackActionKind::DmaRead: return "dma_read";
    case AttackActionKind::DmaWrite: return "dma_write";
    case AttackActionKind::NpuDmaRead: return "npu_dma_read";
    case AttackActionKind::NpuDmaWrite: return "npu_dma_write";
    case AttackActionKind::SmmuMap: return "smmu_map";
    case AttackActionKind::NpuMmioPoke: return "npu_mmio_poke";
    case AttackActionKind::TamperMonitor: return "tamper_monitor";
    case AttackActionKind::ReplayRequest: return "replay_request";
  }
  return "unknown";
}

std::string AttackAction::describe() const {
  std::string s = attack_action_name(kind);
  s += "(page=" + std::to_string(page.index);
  if (kind == AttackActionKind::TamperMonitor) s += ",off=" + std::to_string(offset);
  s += ")";
  return s;
}

SecurityWorld SecurityWorld::sentinel_live(std::uint64_t seed) {
  SecurityWorld w;
  TimingModel timing;
  w.mem = PhysicalMemory(MemoryLayout::tiny());
  w.monitor = Monitor(w.mem, timing, derive_seed(seed, "attack-monitor-image"));
  OpCtx ctx = null_ctx();

  Rng rng(derive_seed(seed, "attack-sentinels"));
  std::uint32_t first = w.mem.layout().first_general_frame() + 2;  // past the driver

  // Three protected pages holding sentinel plaintext; one granted to the
  // protected NPU.
  std::vector<PageId> secret_pages = {PageId{first}, PageId{first + 1}, PageId{first + 2}};
  for (PageId p : secret_pages) w.mem.set_pinned(p, true);
  Status s = w.monitor.protect_pages(w.mem, secret_pages, ctx);
  if (!s.ok()) throw std::logic_error("sentinel base: protect failed: " + s.to_string());
  for (PageId p : secret_pages) {
    auto bytes = rng.bytes(kPageSize);
    PageContent content = PageContent::literal_copy(bytes.data(), bytes.size());
    w.mem.write_content(p, content);
    w.sentinels.push_back(content);
  }
  s = w.monitor.npu_set_mode(w.mem, NpuMode::Protected, ctx);
  if (!s.ok()) throw std::logic_error("sentinel base: npu mode failed");
  s = w.monitor.npu_grant(w.mem, {secret_pages[0]}, ctx);
  if (!s.ok()) throw std::logic_error("sentinel base: npu grant failed");

  // A lazily reclaimed page still carrying a former secret.
  PageId lazy{first + 3};
  w.mem.set_pinned(lazy, true);
  s = w.monitor.protect_pages(w.mem, {lazy}, ctx);
  if (!s.ok()) throw std::logic_error("sentinel base: lazy protect failed");
  auto lazy_bytes = rng.bytes(kPageSize);
  PageContent lazy_content = PageContent::literal_copy(lazy_bytes.data(), lazy_bytes.size());
  w.mem.write_content(lazy, lazy_content);
  w.sentinels.push_back(lazy_content);
  s = w.monitor.unprotect_pages(w.mem, {lazy}, ReclaimMode::Lazy, ctx);
  if (!s.ok()) throw std::logic_error("sentinel base: lazy release failed");
  w.mem.set_pinned(lazy, false);

  // Disk DMA legitimately maps one plain page.
  PageId plain{first + 4};
  s = w.monitor.kernel_smmu_reconfig(w.mem, DeviceId::DiskDma, {plain}, false, ctx);
  if (!s.ok()) throw std::logic_error("sentinel base: smmu setup failed");

  Status v = w.monitor.validate(w.mem);
  if (!v.ok()) throw std::logic_error("sentinel base invalid: " + v.to_string());
  return w;
}

SecurityWorld SecurityWorld::frozen(std::uint64_t seed) {
  SecurityWorld w;
  TimingModel timing;
  w.mem = PhysicalMemory(MemoryLayout::tiny());
  w.monitor = Monitor(w.mem, timing, derive_seed(seed, "attack-monitor-image"));
  OpCtx ctx = null_ctx();
  Status s = w.monitor.freeze(w.mem, ctx);
  if (!s.ok()) throw std::logic_error("frozen base: freeze failed: " + s.to_string());
  FrameRange region = w.monitor.monitor_region();
  for (std::uint32_t i = 0; i < region.count; ++i) {
    PageContent c = w.mem.content(PageId{region.first + i});
    w.frozen_image.push_back(c);
    w.frozen_fp.push_back(fingerprint_page(c));
  }
  w.image_fp = w.frozen_fp;
  return w;
}

std::vector<AttackAction> build_alphabet(const SecurityWorld& base) {
  std::vector<AttackAction> alphabet;
  std::uint32_t frames = base.mem.total_frames();
  auto add_all_pages = [&](AttackActionKind kind) {
    for (std::uint32_t i = 0; i < frames; ++i) {
      alphabet.push_back(AttackAction{kind, PageId{i}, 0});
    }
  };
  add_all_pages(AttackActionKind::KernelRead);
  add_all_pages(AttackActionKind::KernelWrite);
  add_all_pages(AttackActionKind::DmaRead);
  add_all_pages(AttackActionKind::DmaWrite);
  add_all_pages(AttackActionKind::SmmuMap);
  // NPU DMA probes on one representative page per protection class.
  std::vector<PageId> reps;
  std::array<bool, 4> seen{};
  for (std::uint32_t i = 0; i < frames; ++i) {
    PageState st = base.mem.state(PageId{i});
    if (!seen[static_cast<int>(st)]) {
      seen[static_cast<int>(st)] = true;
      reps.push_back(PageId{i});
    }
  }
  for (PageId p : reps) {
    alphabet.push_back(AttackAction{AttackActionKind::NpuDmaRead, p, 0});
    alphabet.push_back(AttackAction{AttackActionKind::NpuDmaWrite, p, 0});
  }
  alphabet.push_back(
      AttackAction{AttackActionKind::NpuMmioPoke, PageId{base.mem.layout().npu_mmio.first}, 0});
  FrameRange region = base.monitor.monitor_region();
  for (std::uint32_t i = 0; i < region.count; ++i) {
    alphabet.push_back(AttackAction{AttackActionKind::TamperMonitor, PageId{region.first + i},
                                    static_cast<std::uint16_t>(101 * (i + 1))});
  }
  alphabet.push_back(AttackAction{AttackActionKind::ReplayRequest, PageId{0}, 0});
  return alphabet;
}

std::uint64_t apply_action(SecurityWorld& world, const AttackAction& action,
                           SecurityReport& report, const std::vector<std::uint16_t>& trace) {
  OpCtx ctx = null_ctx();
  std::uint64_t violations = 0;
  bool frozen_before = !world.monitor.protection_enabled();
  FrameRange region = world.monitor.monitor_region();

  switch (action.kind) {
    case AttackActionKind::KernelRead: {
      auto out = world.monitor.cpu_access(world.mem, Actor::NormalKernel, action.page,
                                          AccessKind::Read, std::nullopt, ctx);
      if (out.ok()) violations += check_observation(world, action.page, out.value(), report, trace);
      break;
    }
    case AttackActionKind::KernelWrite: {
      PageContent payload = PageContent::seeded(
          derive_seed(0xA77ull + action.page.index, "attack-write"));
      auto out = world.monitor.cpu_access(world.mem, Actor::NormalKernel, action.page,
                                          AccessKind::Write, payload, ctx);
      if (out.ok() && out.value().ok() && region.contains(action.page) && frozen_before) {
        world.monitor_written = true;
        refresh_image_fp(world, action.page);
      }
      break;
    }
    case AttackActionKind::DmaRead:
    case AttackActionKind::NpuDmaRead: {
      DeviceId dev = action.kind == AttackActionKind::DmaRead ? DeviceId::DiskDma
                                                              : DeviceId::Npu;
      // A protected NPU takes no kernel commands: its MMIO window is gone
      // from the kernel's translation, so the attempt never reaches the
      // device. Disk DMA stays kernel-commandable.
      if (dev == DeviceId::Npu && world.monitor.npu_mode() == NpuMode::Protected) break;
      auto out = world.monitor.dma_access(world.mem, dev, action.page, AccessKind::Read,
                                          std::nullopt, ctx);
      if (out.ok()) violations += check_observation(world, action.page, out.value(), report, trace);
      break;
    }
    case AttackActionKind::DmaWrite:
    case AttackActionKind::NpuDmaWrite: {
      DeviceId dev = action.kind == AttackActionKind::DmaWrite ? DeviceId::DiskDma
                                                               : DeviceId::Npu;
      if (dev == DeviceId::Npu && world.monitor.npu_mode() == NpuMode::Protected) break;
      PageContent payload = PageContent::seeded(
          derive_seed(0xD3Aull + action.page.index, "attack-dma"));
      auto out = world.monitor.dma_access(world.mem, dev, action.page, AccessKind::Write,
                                          payload, ctx);
      if (out.ok() && out.value().ok() && region.contains(action.page) && frozen_before) {
        world.monitor_written = true;
        refresh_image_fp(world, action.page);
      }
      break;
    }
    case AttackActionKind::SmmuMap: {
      (void)world.monitor.kernel_smmu_reconfig(world.mem, DeviceId::DiskDma, {action.page},
                                               false, ctx);
      break;
    }
    case AttackActionKind::NpuMmioPoke: {
      bool was_protected = world.monitor.npu_mode() == NpuMode::Protected;
      auto out = world.monitor.cpu_access(world.mem, Actor::NormalKernel, action.page,
                                          AccessKind::Write, std::nullopt, ctx);
      if (out.ok() && out.value().ok() && was_protected) {
        ++report.npu_control_escapes;
        ++violations;
        add_finding(report, "npu_mmio_reachable_in_protected_mode", "", trace);
      }
      break;
    }
    case AttackActionKind::TamperMonitor: {
      auto peek = world.monitor.cpu_access(world.mem, Actor::NormalKernel, action.page,
                                           AccessKind::Read, std::nullopt, ctx);
      if (!peek.ok() || !peek.value().ok()) break;  // image is shielded
      PageBytes bytes = peek.value().content->materialize();
      bytes[action.offset % kPageSize] ^= 0x01;
      auto write = world.monitor.cpu_access(world.mem, Actor::NormalKernel, action.page,
                                            AccessKind::Write,
                                            PageContent::literal_copy(bytes.data(), bytes.size()),
                                            ctx);
      if (write.ok() && write.value().ok()) {
        world.monitor_written = true;
        refresh_image_fp(world, action.page);
      }
      break;
    }
    case AttackActionKind::ReplayRequest: {
      // Freshness rule: a counter at or below the session's high-water mark
      // must be rejected.
      bool rejected = world.captured_counter <= world.session_last_counter;
      if (!rejected) {
        ++report.replay_accepts;
        ++violations;
        add_finding(report, "replay_accepted", "", trace);
      }
      break;
    }
  }

  Status inv = world.monitor.validate(world.mem);
  if (!inv.ok()) {
    ++report.invariant_violations;
    ++violations;
    add_finding(report, "invariant_violation", inv.to_string(), trace);
  }
  ++report.actions_applied;
  return violations;
}

void end_of_trace_check(SecurityWorld& world, SecurityReport& report,
                        const std::vector<std::uint16_t>& trace,
                        ExplorerScratch* scratch) {
  ++report.traces;
  if (world.monitor.protection_enabled()) return;
  if (!world.monitor_written) return;

  // Ground truth: unequal fingerprints imply unequal bytes; equal ones are
  // confirmed exactly before concluding anything (a double flip restores the
  // original image).
  bool tampered;
  if (world.image_fp != world.frozen_fp) {
    tampered = true;
  } else {
    tampered = monitor_image_differs(world);
  }

  bool detected;
  if (scratch != nullptr) {
    auto it = scratch->unfreeze_memo.find(world.image_fp);
    if (it != scratch->unfreeze_memo.end()) {
      detected = it->second;
    } else {
      OpCtx ctx = null_ctx();
      Status s = world.monitor.unfreeze(world.mem, ctx);
      detected = s.code == StatusCode::IntegrityViolation;
      scratch->unfreeze_memo.emplace(world.image_fp, detected);
    }
  } else {
    OpCtx ctx = null_ctx();
    Status s = world.monitor.unfreeze(world.mem, ctx);
    detected = s.code == StatusCode::IntegrityViolation;
  }

  if (tampered && !detected) {
    ++report.undetected_tampers;
    add_finding(report, "undetected_tamper", "", trace);
  } else if (tampered && detected) {
    ++report.tamper_detections;
  } else if (!tampered && detected) {
    // Byte-identical rewrite flagged: the verifier would be unsound.
    ++report.invariant_violations;
    add_finding(report, "false_positive_tamper", "", trace);
  }
}

namespace {

void dfs(const SecurityWorld& world, const std::vector<AttackAction>& alphabet,
         std::uint32_t depth_left, std::vector<std::uint16_t>& trace,
         SecurityReport& report, ExplorerScratch& scratch) {
  for (std::uint16_t ai = 0; ai < alphabet.size(); ++ai) {
    SecurityWorld child = world;
    trace.push_back(ai);
    apply_action(child, alphabet[ai], report, trace);
    if (depth_left > 1) {
      dfs(child, alphabet, depth_left - 1, trace, report, scratch);
    } else {
      end_of_trace_check(child, report, trace, &scratch);
    }
    trace.pop_back();
  }
}

void merge_into(SecurityReport& total, const SecurityReport& part) {
  total.traces += part.traces;
  total.actions_applied += part.actions_applied;
  total.leaks += part.leaks;
  total.undetected_tampers += part.undetected_tampers;
  total.invariant_violations += part.invariant_violations;
  total.replay_accepts += part.replay_accepts;
  total.npu_control_escapes += part.npu_control_escapes;
  total.tamper_detections += part.tamper_detections;
  for (const auto& f : part.findings) {
    if (total.findings.size() < kMaxFindings) total.findings.push_back(f);
  }
}

SecurityWorld make_base(const AttackCampaign& campaign) {
  return campaign.base == AttackCampaign::Base::SentinelLive
             ? SecurityWorld::sentinel_live(campaign.seed)
             : SecurityWorld::frozen(campaign.seed);
}

void run_random_trace(const SecurityWorld& base, const std::vector<AttackAction>& alphabet,
                      const AttackCampaign& campaign, std::uint64_t trace_index,
                      SecurityReport& report, ExplorerScratch& scratch) {
  Rng rng(derive_seed(campaign.seed ^ trace_index, "attack-random-trace"));
  SecurityWorld world = base;
  std::vector<std::uint16_t> trace;
  for (std::uint32_t d = 0; d < campaign.depth; ++d) {
    std::uint16_t ai = static_cast<std::uint16_t>(rng.next_below(alphabet.size()));
    trace.push_back(ai);
    apply_action(world, alphabet[ai], report, trace);
  }
  end_of_trace_check(world, report, trace, &scratch);
}

}  // namespace

SecurityReport run_campaign_serial(const AttackCampaign& campaign) {
  SecurityWorld base = make_base(campaign);
  std::vector<AttackAction> alphabet = build_alphabet(base);
  SecurityReport report;
  report.alphabet_size = alphabet.size();

  ExplorerScratch scratch;
  if (campaign.randomized_traces > 0) {
    for (std::uint64_t t = 0; t < campaign.randomized_traces; ++t) {
      run_random_trace(base, alphabet, campaign, t, report, scratch);
    }
    return report;
  }

  std::vector<std::uint16_t> trace;
  if (campaign.depth == 0) {
    SecurityWorld world = base;
    end_of_trace_check(world, report, trace, &scratch);
    return report;
  }
  dfs(base, alphabet, campaign.depth, trace, report, scratch);
  return report;
}

SecurityReport run_campaign_parallel(const AttackCampaign& campaign) {
  SecurityWorld base = make_base(campaign);
  std::vector<AttackAction> alphabet = build_alphabet(base);
  SecurityReport total;
  total.alphabet_size = alphabet.size();

  if (campaign.randomized_traces > 0) {
    std::int64_t n = static_cast<std::int64_t>(campaign.randomized_traces);
    std::vector<SecurityReport> parts(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t t = 0; t < n; ++t) {
      run_random_trace(base, alphabet, campaign, static_cast<std::uint64_t>(t),
                       parts[static_cast<std::size_t>(t)]);
    }
    for (const auto& part : parts) merge_into(total, part);
    return total;
  }

  if (campaign.depth == 0) {
    std::vector<std::uint16_t> trace;
    SecurityWorld world = base;
    end_of_trace_check(world, total, trace);
    return total;
  }

  // Parallel over the first action; each branch explores its subtree with
  // the serial reference routine. Reports merge in alphabet order, so the
  // result is identical to the serial run.
  std::vector<SecurityReport> parts(alphabet.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t ai = 0; ai < static_cast<std::int64_t>(alphabet.size()); ++ai) {
    SecurityReport& part = parts[static_cast<std::size_t>(ai)];
    SecurityWorld child = base;
    std::vector<std::uint16_t> trace{static_cast<std::uint16_t>(ai)};
    apply_action(child, alphabet[static_cast<std::size_t>(ai)], part, trace);
    if (campaign.depth > 1) {
      dfs(child, alphabet, campaign.depth - 1, trace, part);
    } else {
      end_of_trace_check(child, part, trace);
    }
  }
  for (const auto& part : parts) merge_into(total, part);
  return total;
}

namespace {

// One flip at (page, byte, bit) through the real write path, then the real
// re-verification; returns true when the monitor catches it.
bool flip_and_verify(const SecurityWorld& base, std::uint32_t page_off, std::uint32_t byte,
                     std::uint8_t bit) {
  SecurityWorld world = base;
  OpCtx ctx;
  FrameRange region = world.monitor.monitor_region();
  PageId page{region.first + page_off};
  auto peek = world.monitor.cpu_access(world.mem, Actor::NormalKernel, page, AccessKind::Read,
                                       std::nullopt, ctx);
  if (!peek.ok() || !peek.value().ok()) return false;
  PageBytes bytes = peek.value().content->materialize();
  bytes[byte] ^= static_cast<std::uint8_t>(1u << bit);
  auto write = world.monitor.cpu_access(world.mem, Actor::NormalKernel, page,
                                        AccessKind::Write,
                                        PageContent::literal_copy(bytes.data(), bytes.size()),
                                        ctx);
  if (!write.ok() || !write.value().ok()) return false;
  Status s = world.monitor.unfreeze(world.mem, ctx);
  return s.code == StatusCode::IntegrityViolation;
}

}  // namespace

TamperSweepResult tamper_sweep_serial(std::uint64_t seed) {
  SecurityWorld base = SecurityWorld::frozen(seed);
  FrameRange region = base.monitor.monitor_region();
  TamperSweepResult result;
  for (std::uint32_t p = 0; p < region.count; ++p) {
    for (std::uint32_t byte = 0; byte < kPageSize; ++byte) {
      for (std::uint8_t bit = 0; bit < 8; ++bit) {
        ++result.flips;
        if (flip_and_verify(base, p, byte, bit)) {
          ++result.detected;
        } else {
          ++result.missed;
        }
      }
    }
  }
  return result;
}

TamperSweepResult tamper_sweep_parallel(std::uint64_t seed) {
  SecurityWorld base = SecurityWorld::frozen(seed);
  FrameRange region = base.monitor.monitor_region();
  std::uint64_t total_bytes = static_cast<std::uint64_t>(region.count) * kPageSize;
  std::uint64_t detected = 0, missed = 0;
#pragma omp parallel for schedule(dynamic, 256) reduction(+ : detected, missed)
  for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(total_bytes); ++idx) {
    std::uint32_t p = static_cast<std::uint32_t>(idx / kPageSize);
    std::uint32_t byte = static_cast<std::uint32_t>(idx % kPageSize);
    for (std::uint8_t bit = 0; bit < 8; ++bit) {
      if (flip_and_verify(base, p, byte, bit)) {
        ++detected;
      } else {
        ++missed;
      }
    }
  }
  TamperSweepResult result;
  result.flips = total_bytes * 8;
  result.detected = detected;
  result.missed = missed;
  return result;
}

}  // namespace flexsim
