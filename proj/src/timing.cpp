#include "flexsim/timing.hpp"

#include <cmath>

namespace flexsim {

namespace {

double gib(std::uint64_t bytes) { return static_cast<double>(bytes) / static_cast<double>(kGiB); }

SimDuration ms_to_us(double ms) { return static_cast<SimDuration>(std::llround(ms * 1000.0)); }

}  // namespace

SimDuration TimingModel::flexmem_alloc_us(std::uint64_t bytes) const {
  return ms_to_us(flexmem_alloc_ms_per_gib * gib(bytes));
}

SimDuration TimingModel::flexmem_reclaim_us(std::uint64_t bytes) const {
  return ms_to_us(flexmem_reclaim_ms_per_gib * gib(bytes));
}

SimDuration TimingModel::zero_fill_us(std::uint64_t bytes) const {
  return ms_to_us(zero_fill_ms_per_gib * gib(bytes));
}

SimDuration TimingModel::cma_reclaim_us(std::uint64_t bytes) const {
  return ms_to_us(cma_reclaim_ms_per_gib * gib(bytes));
}

SimDuration TimingModel::mmap_alloc_us(std::uint64_t bytes) const {
  return ms_to_us(mmap_alloc_ms_per_gib * gib(bytes));
}

SimDuration TimingModel::cma_alloc_us(std::uint64_t bytes,
                                      std::uint64_t background_bytes) const {
  double anchor_rate = cma_anchor_ms / 8.0;  // anchor is an 8 GiB allocation
  double slope = (anchor_rate - cma_zero_pressure_ms_per_gib) / cma_anchor_bg_gib;
  double rate = cma_zero_pressure_ms_per_gib + slope * gib(background_bytes);
  return ms_to_us(rate * gib(bytes));
}

SimDuration TimingModel::load_us(std::uint64_t bytes) const {
  return ms_to_us(load_ms_per_gib * gib(bytes));
}

SimDuration TimingModel::decrypt_us(std::uint64_t bytes) const {
  return ms_to_us(decrypt_ms_per_gib * gib(bytes));
}

SimDuration TimingModel::smmu_setup_us(std::uint64_t bytes, bool baseline) const {
  double rate = baseline ? smmu_setup_baseline_ms_per_gib : smmu_setup_ms_per_gib;
  return ms_to_us(rate * gib(bytes));
}

SimDuration TimingModel::npu_task_launch_us(bool baseline) const {
  return ms_to_us(baseline ? npu_task_launch_baseline_ms : npu_task_launch_ms);
}

SimDuration TimingModel::npu_mode_switch_us() const { return ms_to_us(npu_mode_switch_ms); }

SimDuration TimingModel::s2pt_boot_us() const { return ms_to_us(s2pt_boot_ms); }

SimDuration TimingModel::hash_check_us() const { return ms_to_us(hash_check_ms); }

SimDuration TimingModel::swap_penalty_us(std::uint64_t overflow_bytes) const {
  return ms_to_us(swap_penalty_ms_per_gib * gib(overflow_bytes));
}

SimDuration TimingModel::compute_us(ComputeDevice device, std::uint64_t layer_bytes,
                                    std::uint64_t prompt_tokens) const {
  double base_ms = npu_prefill_ms_8gib_128tok * (gib(layer_bytes) / 8.0) *
                   (static_cast<double>(prompt_tokens) / 128.0);
  if (device == ComputeDevice::Cpu) base_ms *= cpu_compute_multiplier;
  return ms_to_us(base_ms);
}

SimDuration TimingModel::decode_token_us(ComputeDevice device, bool secure,
                                         std::uint64_t model_bytes) const {
  double ms = decode_ms_per_gib_token * gib(model_bytes);
  if (secure) ms *= secure_decode_overhead;
  if (device == ComputeDevice::Cpu) ms *= strawman_decode_multiplier;
  return ms_to_us(ms);
}

void TimingModel::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string("timing: ") + name + " must be > 0");
  };
  positive(flexmem_alloc_ms_per_gib, "flexmem_alloc_ms_per_gib");
  positive(flexmem_reclaim_ms_per_gib, "flexmem_reclaim_ms_per_gib");
  positive(zero_fill_ms_per_gib, "zero_fill_ms_per_gib");
  positive(cma_reclaim_ms_per_gib, "cma_reclaim_ms_per_gib");
  positive(mmap_alloc_ms_per_gib, "mmap_alloc_ms_per_gib");
  positive(cma_anchor_ms, "cma_anchor_ms");
  positive(cma_zero_pressure_ms_per_gib, "cma_zero_pressure_ms_per_gib");
  positive(cma_anchor_bg_gib, "cma_anchor_bg_gib");
  positive(load_ms_per_gib, "load_ms_per_gib");
  positive(decrypt_ms_per_gib, "decrypt_ms_per_gib");
  positive(smmu_setup_ms_per_gib, "smmu_setup_ms_per_gib");
  positive(smmu_setup_baseline_ms_per_gib, "smmu_setup_baseline_ms_per_gib");
  positive(npu_task_launch_ms, "npu_task_launch_ms");
  positive(npu_task_launch_baseline_ms, "npu_task_launch_baseline_ms");
  positive(npu_mode_switch_ms, "npu_mode_switch_ms");
  positive(s2pt_boot_ms, "s2pt_boot_ms");
  positive(hash_check_ms, "hash_check_ms");
  positive(npu_prefill_ms_8gib_128tok, "npu_prefill_ms_8gib_128tok");
  positive(cpu_compute_multiplier, "cpu_compute_multiplier");
  positive(decode_ms_per_gib_token, "decode_ms_per_gib_token");
  positive(secure_decode_overhead, "secure_decode_overhead");
  positive(strawman_decode_multiplier, "strawman_decode_multiplier");
  if (swap_penalty_ms_per_gib < 0.0) {
    throw ConfigError("timing: swap_penalty_ms_per_gib must be >= 0");
  }
  if (cma_anchor_ms / 8.0 < cma_zero_pressure_ms_per_gib) {
    throw ConfigError("timing: contiguous-allocation curve must be non-decreasing in pressure");
  }
}

}  // namespace flexsim
