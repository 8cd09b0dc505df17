#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flexsim/monitor.hpp"
#include "flexsim/physmem.hpp"

namespace flexsim {

// Normal-world capabilities only: everything a kernel-privileged adversary
// can attempt against the protection state machine.
enum class AttackActionKind : std::uint8_t {
  KernelRead,
  KernelWrite,
  DmaRead,       // disk DMA engine
  DmaWrite,
  NpuDmaRead,    // state-class representative probes
  NpuDmaWrite,
  SmmuMap,       // ask for a DMA mapping of a page
  NpuMmioPoke,
  TamperMonitor,  // single-byte flip in the monitor image
  ReplayRequest,
};

const char* attack_action_name(AttackActionKind k);

struct AttackAction {
  AttackActionKind kind = AttackActionKind::KernelRead;
  PageId page{};
  std::uint16_t offset = 0;  // tamper byte offset within the page

  std::string describe() const;
};

// Compact copyable world for exhaustive exploration: the production frame
// and monitor state machines plus the bookkeeping the checker needs.
struct SecurityWorld {
  PhysicalMemory mem;
  Monitor monitor;

  // Sentinel plaintext handles living in protected pages.
  std::vector<PageContent> sentinels;
  // Monitor image handles at freeze time, for the exact tamper oracle.
  std::vector<PageContent> frozen_image;
  bool monitor_written = false;  // any write landed in the image since freeze
  // Per-image-page content fingerprints, maintained on writes. Unequal
  // fingerprints imply unequal bytes; equal ones are confirmed by an exact
  // byte compare before anything is concluded.
  std::vector<std::uint64_t> image_fp;
  std::vector<std::uint64_t> frozen_fp;

  // Replay gate state, mirroring the session counter rule (the real
  // cryptographic path is exercised in the protocol suite; the campaign
  // model-checks the freshness rule itself).
  std::uint64_t session_last_counter = 1;
  std::uint64_t captured_counter = 1;

  static SecurityWorld sentinel_live(std::uint64_t seed);
  static SecurityWorld frozen(std::uint64_t seed);
};

struct AttackCampaign {
  enum class Base : std::uint8_t { SentinelLive, Frozen };
  Base base = Base::SentinelLive;
  std::uint32_t depth = 4;
  // 0 = exhaustive over the alphabet; otherwise this many random traces.
  std::uint64_t randomized_traces = 0;
  std::uint64_t seed = 1;
};

struct SecurityFinding {
  std::string kind;
  std::string detail;
  std::vector<std::uint16_t> trace;  // action indices into the alphabet
};

struct SecurityReport {
  std::uint64_t traces = 0;
  std::uint64_t actions_applied = 0;
  std::uint64_t alphabet_size = 0;
  std::uint64_t leaks = 0;
  std::uint64_t undetected_tampers = 0;
  std::uint64_t invariant_violations = 0;
  std::uint64_t replay_accepts = 0;
  std::uint64_t npu_control_escapes = 0;
  std::uint64_t tamper_detections = 0;  // forced unfreeze caught a dirty image
  std::vector<SecurityFinding> findings;

  std::uint64_t total_violations() const {
    return leaks + undetected_tampers + invariant_violations + replay_accepts +
           npu_control_escapes;
  }
};

std::vector<AttackAction> build_alphabet(const SecurityWorld& base);

// Memo for re-verification outcomes: the digest is a pure function of the
// image bytes, so byte-identical tampered states share one real run.
struct ExplorerScratch {
  std::map<std::vector<std::uint64_t>, bool> unfreeze_memo;
};

// Applies one adversary action through the production access paths and
// checks the confidentiality/integrity conditions. Returns the number of
// violations recorded.
std::uint64_t apply_action(SecurityWorld& world, const AttackAction& action,
                           SecurityReport& report, const std::vector<std::uint16_t>& trace);

// Trace-end check: force re-verification if the world is frozen and account
// for tamper detection.
void end_of_trace_check(SecurityWorld& world, SecurityReport& report,
                        const std::vector<std::uint16_t>& trace,
                        ExplorerScratch* scratch = nullptr);

// Serial reference explorer.
SecurityReport run_campaign_serial(const AttackCampaign& campaign);
// Data-parallel explorer (OpenMP over the first action / trace index);
// produces the identical report.
SecurityReport run_campaign_parallel(const AttackCampaign& campaign);

// Single-bit tamper sweep over the whole monitor image while frozen: every
// flip must be caught by the re-verification hash.
struct TamperSweepResult {
  std::uint64_t flips = 0;
  std::uint64_t detected = 0;
  std::uint64_t missed = 0;
};

TamperSweepResult tamper_sweep_serial(std::uint64_t seed);
TamperSweepResult tamper_sweep_parallel(std::uint64_t seed);

}  // namespace flexsim
