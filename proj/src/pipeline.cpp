#include "flexsim/pipeline.hpp"

#include <algorithm>
#include <cstring>

namespace flexsim {

const char* execution_mode_name(ExecutionMode m) {
  switch (m) {
    case ExecutionMode::FlexServe: return "flexserve";
    case ExecutionMode::StrawmanOpt: return "strawman_opt";
    case ExecutionMode::Strawman: return "strawman";
    case ExecutionMode::NwBase: return "nw_base";
  }
  return "unknown";
}

ExecutionMode execution_mode_from_name(const std::string& name) {
  if (name == "flexserve") return ExecutionMode::FlexServe;
  if (name == "strawman_opt") return ExecutionMode::StrawmanOpt;
  if (name == "strawman") return ExecutionMode::Strawman;
  if (name == "nw_base") return ExecutionMode::NwBase;
  throw ConfigError("unknown execution mode: " + name);
}

namespace {

struct ModeTraits {
  bool pipelined = true;
  bool per_layer_alloc = false;  // allocation inside the layer pipeline
  bool upfront_cma = false;
  bool decrypts = true;
  bool secure = true;
  ComputeDevice device = ComputeDevice::Npu;
  bool baseline_rates = false;  // unprotected-path SMMU/launch numbers
};

ModeTraits traits_for(ExecutionMode m) {
  switch (m) {
    case ExecutionMode::FlexServe:
      return {true, true, false, true, true, ComputeDevice::Npu, false};
    case ExecutionMode::StrawmanOpt:
      return {true, false, true, true, true, ComputeDevice::Npu, false};
    case ExecutionMode::Strawman:
      return {false, false, true, true, true, ComputeDevice::Cpu, false};
    case ExecutionMode::NwBase:
      return {true, true, false, false, false, ComputeDevice::Npu, true};
  }
  return {};
}

std::uint64_t kv_block_frames(const ModelManifest& m, std::uint32_t block_tokens) {
  return frames_for_bytes(static_cast<std::uint64_t>(block_tokens) * m.kv_bytes_per_token);
}

std::uint64_t kv_blocks_for(std::uint64_t tokens, std::uint32_t block_tokens) {
  return (tokens + block_tokens - 1) / block_tokens;
}

std::uint64_t act_frames_for(const ModelManifest& m, std::uint64_t tokens) {
  return frames_for_bytes(m.act_bytes_per_token * std::max<std::uint64_t>(tokens, 1));
}

// --- secure loading internals ----------------------------------------------

Status dma_load_ciphertext(SimRt& rt, const ModelManifest& model, std::uint32_t layer,
                           const AllocationGrant& grant, OpCtx& ctx) {
  if (!model.has_payload) {
    ctx.record(Actor::NormalKernel, "dma_load_layer",
               "model=" + model.model_id + ";layer=" + std::to_string(layer) +
                   ";bytes=" + std::to_string(model.layers[layer].byte_size));
    return Status::success();
  }
  Status s = rt.monitor->kernel_smmu_reconfig(*rt.mem, DeviceId::DiskDma, grant.pages,
                                              /*remove=*/false, ctx);
  if (!s.ok()) return s;
  const crypto::Bytes& body = model.layer_ciphertexts[layer];
  for (std::size_t i = 0; i < grant.pages.size(); ++i) {
    std::size_t off = i * kPageSize;
    std::size_t n = std::min<std::size_t>(kPageSize, body.size() - std::min(off, body.size()));
    PageContent chunk = n > 0 ? PageContent::literal_copy(body.data() + off, n)
                              : PageContent::zeros();
    auto out = rt.monitor->dma_access(*rt.mem, DeviceId::DiskDma, grant.pages[i],
                                      AccessKind::Write, std::move(chunk), ctx);
    if (!out.ok()) return out.status();
    if (!out.value().ok()) {
      return Status::error(StatusCode::InvariantViolation, "dma load faulted");
    }
  }
  return Status::success();
}

Status decrypt_and_verify(SimRt& rt, const ModelManifest& model, std::uint32_t layer,
                          const AllocationGrant& grant, OpCtx& ctx) {
  if (!model.has_payload) {
    ctx.record(Actor::SecureWorld, "decrypt_layer",
               "model=" + model.model_id + ";layer=" + std::to_string(layer));
    return Status::success();
  }
  const LayerDescriptor& desc = model.layers[layer];
  crypto::Bytes body;
  body.reserve(desc.byte_size);
  for (std::size_t i = 0; i < grant.pages.size() && body.size() < desc.byte_size; ++i) {
    PageBytes bytes = rt.mem->content(grant.pages[i]).materialize();
    std::size_t take = std::min<std::size_t>(kPageSize, desc.byte_size - body.size());
    body.insert(body.end(), bytes.begin(), bytes.begin() + take);
  }
  auto plain = crypto::aead_open_detached(model.weights_key, model.layer_nonce(layer), body,
                                          model.layer_tags[layer], model.layer_ad(layer));
  if (!plain.has_value()) {
    ctx.record(Actor::SecureWorld, "decrypt_layer_failed",
               "model=" + model.model_id + ";layer=" + std::to_string(layer));
    return Status::error(StatusCode::DigestMismatch, "layer payload failed authentication");
  }
  if (crypto::sha256(*plain) != desc.plaintext_digest) {
    return Status::error(StatusCode::DigestMismatch, "layer plaintext digest mismatch");
  }
  for (std::size_t i = 0; i < grant.pages.size(); ++i) {
    std::size_t off = i * kPageSize;
    std::size_t n =
        std::min<std::size_t>(kPageSize, plain->size() - std::min(off, plain->size()));
    rt.mem->write_content(grant.pages[i], n > 0
                                              ? PageContent::literal_copy(plain->data() + off, n)
                                              : PageContent::zeros());
  }
  ctx.record(Actor::SecureWorld, "decrypt_layer",
             "model=" + model.model_id + ";layer=" + std::to_string(layer));
  return Status::success();
}

// --- the prefill job --------------------------------------------------------

struct PrefillJob : std::enable_shared_from_this<PrefillJob> {
  SimRt* rt = nullptr;
  const ModelManifest* model = nullptr;
  PrefillParams params;
  ModeTraits tr;
  std::function<void(PrefillResult)> done_cb;

  PrefillResult result;
  std::uint32_t n = 0;
  std::uint32_t cached_k = 0;
  bool memmgr_weights = false;  // grants tracked by the weight cache
  std::vector<AllocationGrant> grants;    // per layer, direct mode
  std::vector<std::uint64_t> aux_grants;  // mmap grants (NwBase)
  std::uint64_t cma_region = 0;
  std::vector<std::uint8_t> ready, computed, submitted;
  SimTime setup_end = 0;
  bool finished = false;

  void fail(Status s) {
    if (finished) return;
    finished = true;
    result.status = std::move(s);
    done_cb(result);
  }

  void start() {
    result.request_start = rt->engine->now();
    result.status = Status::success();
    n = model->n_layers();
    result.per_layer.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) result.per_layer[i].layer = i;
    ready.assign(n, 0);
    computed.assign(n, 0);
    submitted.assign(n, 0);

    if (params.mode == ExecutionMode::FlexServe) {
      if (params.forced_cached_prefix.has_value()) {
        cached_k = std::min(*params.forced_cached_prefix, n);
      } else {
        bool registered = rt->memmgr->manifest(model->model_id) != nullptr;
        memmgr_weights = registered && (params.use_weight_cache ||
                                        rt->memmgr->resident_prefix(model->model_id) == 0);
        if (memmgr_weights && params.use_weight_cache) {
          cached_k = std::min(rt->memmgr->loaded_prefix(model->model_id), n);
        }
      }
    }
    if (memmgr_weights) {
      rt->memmgr->touch_model(model->model_id, rt->engine->now());
      rt->memmgr->pin_model(model->model_id, true);
    }
    if (params.request_id == 0) params.request_id = 0x72000000ull + params.sequence_id;
    grants.resize(n);

    auto self = shared_from_this();
    rt->ch_alloc->submit([self] { return self->setup_work(); },
                         [self](SimTime, SimTime end) {
                           self->setup_end = end;
                           self->after_setup();
                         });
  }

  SimDuration setup_work() {
    OpCtx ctx = rt->ctx_at_now(Actor::SecureWorld);
    ctx.record(Actor::SecureWorld, "prefill_begin",
               "model=" + model->model_id + ";mode=" + execution_mode_name(params.mode) +
                   ";tokens=" + std::to_string(params.prompt_tokens));
    Status s = Status::success();
    std::uint32_t block_tokens = rt->memmgr->config().kv_block_tokens;

    if (params.mode == ExecutionMode::FlexServe) {
      if (rt->monitor->npu_mode() != NpuMode::Protected) {
        s = rt->monitor->npu_set_mode(*rt->mem, NpuMode::Protected, ctx);
        if (!s.ok()) { fail_later(s); return ctx.elapsed; }
      }
      if (params.sequence_id == 0) {
        params.sequence_id = rt->memmgr->allocate_sequence_id();
        if (params.request_id == 0x72000000ull) params.request_id += params.sequence_id;
      }
      if (!rt->memmgr->has_sequence(params.sequence_id)) {
        s = rt->memmgr->open_sequence(model->model_id, params.sequence_id);
        if (!s.ok()) { fail_later(s); return ctx.elapsed; }
      }
      rt->memmgr->set_sequence_active(params.sequence_id, true);
      auto act = rt->memmgr->alloc_activation(params.request_id,
                                              model->act_bytes_per_token *
                                                  std::max<std::uint64_t>(params.prompt_tokens, 1),
                                              ctx);
      if (!act.ok()) { fail_later(act.status()); return ctx.elapsed; }
      s = rt->memmgr->kv_append(params.sequence_id,
                                static_cast<std::uint32_t>(params.prompt_tokens), ctx);
      if (!s.ok()) { fail_later(s); return ctx.elapsed; }
      // Grant the working set (KV + activations) to the protected NPU.
      std::vector<PageId> work_pages = rt->memmgr->request_working_pages(params.request_id,
                                                                         params.sequence_id);
      s = rt->monitor->npu_grant(*rt->mem, work_pages, ctx);
      if (!s.ok()) { fail_later(s); return ctx.elapsed; }
      result.sequence_id = params.sequence_id;
    } else if (tr.upfront_cma) {
      std::uint64_t frames = model->total_frames() +
                             act_frames_for(*model, params.prompt_tokens) +
                             kv_blocks_for(params.prompt_tokens + params.max_new_tokens,
                                           block_tokens) *
                                 kv_block_frames(*model, block_tokens);
      auto region = rt->daemon->cma_allocate(*rt->mem, *rt->monitor, frames,
                                             params.background_bytes, ctx);
      if (!region.ok()) { fail_later(region.status()); return ctx.elapsed; }
      cma_region = region.value().region_id;
      if (params.mode == ExecutionMode::StrawmanOpt) {
        // Secure-NPU baseline: mode switch plus DMA window setup over the
        // carved region, modeled at the secure-path rate.
        ctx.charge(rt->timing.npu_mode_switch_us());
        ctx.charge(rt->timing.smmu_setup_us(frames * kPageSize));
        ctx.record(Actor::Monitor, "baseline_secure_npu_setup",
                   "frames=" + std::to_string(frames));
      }
    } else {  // NwBase
      std::uint64_t frames = act_frames_for(*model, params.prompt_tokens) +
                             kv_blocks_for(params.prompt_tokens, block_tokens) *
                                 kv_block_frames(*model, block_tokens);
      auto grant = rt->daemon->mmap_allocate(*rt->mem, frames, ctx);
      if (!grant.ok()) { fail_later(grant.status()); return ctx.elapsed; }
      aux_grants.push_back(grant.value().grant_id);
      s = rt->monitor->kernel_smmu_reconfig(*rt->mem, DeviceId::Npu, grant.value().pages,
                                            /*remove=*/false, ctx,
                                            Monitor::SmmuCharge::Baseline);
      if (!s.ok()) { fail_later(s); return ctx.elapsed; }
    }
    return ctx.elapsed;
  }

  // Failures inside channel work defer the callback so the channel finishes
  // its bookkeeping first.
  Status pending_fail;
  void fail_later(Status s) { pending_fail = std::move(s); }

  void after_setup() {
    if (finished) return;
    if (!pending_fail.ok()) { fail(pending_fail); return; }
    for (std::uint32_t i = 0; i < cached_k; ++i) {
      result.per_layer[i].cached = true;
      ready[i] = 1;
    }
    if (tr.pipelined) {
      for (std::uint32_t i = cached_k; i < n; ++i) {
        if (tr.per_layer_alloc) {
          submit_alloc(i);
        } else {
          submit_load(i);
        }
      }
    } else {
      if (cached_k < n) submit_load(cached_k);  // serial chain starts here
    }
    try_submit_compute(0);
  }

  void submit_alloc(std::uint32_t i) {
    auto self = shared_from_this();
    rt->ch_alloc->submit(
        [self, i] { return self->alloc_work(i); },
        [self, i](SimTime s, SimTime e) {
          self->result.per_layer[i].alloc_start = s;
          self->result.per_layer[i].alloc_end = e;
          if (self->finished) return;
          if (!self->pending_fail.ok()) { self->fail(self->pending_fail); return; }
          if (!self->tr.pipelined) return;  // not used serially
          self->submit_load(i);
        });
  }

  SimDuration alloc_work(std::uint32_t i) {
    OpCtx ctx = rt->ctx_at_now(Actor::NormalKernel);
    std::uint64_t frames = model->layers[i].frames();
    if (params.mode == ExecutionMode::FlexServe) {
      Result<AllocationGrant> g =
          memmgr_weights ? rt->memmgr->alloc_layer(model->model_id, i, ctx)
                         : rt->daemon->flexmem_allocate(*rt->mem, *rt->monitor, frames, ctx,
                                                        /*stage_for_load=*/true);
      if (!g.ok()) { fail_later(g.status()); return ctx.elapsed; }
      grants[i] = g.value();
    } else {  // NwBase
      auto g = rt->daemon->mmap_allocate(*rt->mem, frames, ctx);
      if (!g.ok()) { fail_later(g.status()); return ctx.elapsed; }
      grants[i] = g.value();
      aux_grants.push_back(g.value().grant_id);
      Status s = rt->monitor->kernel_smmu_reconfig(*rt->mem, DeviceId::Npu, g.value().pages,
                                                   /*remove=*/false, ctx,
                                                   Monitor::SmmuCharge::Baseline);
      if (!s.ok()) { fail_later(s); return ctx.elapsed; }
    }
    return ctx.elapsed;
  }

  void submit_load(std::uint32_t i) {
    auto self = shared_from_this();
    rt->ch_io->submit(
        [self, i] { return self->load_work(i); },
        [self, i](SimTime s, SimTime e) {
          self->result.per_layer[i].load_start = s;
          self->result.per_layer[i].load_end = e;
          if (self->finished) return;
          if (!self->pending_fail.ok()) { self->fail(self->pending_fail); return; }
          if (self->tr.decrypts) {
            self->submit_decrypt(i);
          } else {
            self->layer_ready(i);
          }
        });
  }

  SimDuration load_work(std::uint32_t i) {
    OpCtx ctx = rt->ctx_at_now(Actor::NormalKernel);
    if (params.mode == ExecutionMode::FlexServe) {
      Status s = dma_load_ciphertext(*rt, *model, i, grants[i], ctx);
      if (!s.ok()) { fail_later(s); return ctx.elapsed; }
    } else {
      ctx.record(Actor::NormalKernel, "load_layer",
                 "model=" + model->model_id + ";layer=" + std::to_string(i));
    }
    ctx.charge(rt->timing.load_us(model->layers[i].byte_size));
    return ctx.elapsed;
  }

  void submit_decrypt(std::uint32_t i) {
    auto self = shared_from_this();
    rt->ch_decrypt->submit(
        [self, i] { return self->decrypt_work(i); },
        [self, i](SimTime s, SimTime e) {
          self->result.per_layer[i].decrypt_start = s;
          self->result.per_layer[i].decrypt_end = e;
          if (self->finished) return;
          if (!self->pending_fail.ok()) { self->fail(self->pending_fail); return; }
          self->layer_ready(i);
        });
  }

  SimDuration decrypt_work(std::uint32_t i) {
    OpCtx ctx = rt->ctx_at_now(Actor::SecureWorld);
    if (params.mode == ExecutionMode::FlexServe) {
      // Loading is complete: flip the pages to protected, hand them to the
      // NPU, then decrypt inside the secure world.
      Status s = rt->monitor->protect_pages(*rt->mem, grants[i].pages, ctx,
                                            ProtectCharge::Transition);
      if (!s.ok()) { fail_later(s); return ctx.elapsed; }
      s = rt->monitor->npu_grant(*rt->mem, grants[i].pages, ctx);
      if (!s.ok()) { fail_later(s); return ctx.elapsed; }
      s = decrypt_and_verify(*rt, *model, i, grants[i], ctx);
      if (!s.ok()) { fail_later(s); return ctx.elapsed; }
      if (memmgr_weights) {
        Status ml = rt->memmgr->mark_layer_loaded(model->model_id, i);
        if (!ml.ok()) { fail_later(ml); return ctx.elapsed; }
      }
    } else {
      ctx.record(Actor::SecureWorld, "decrypt_layer",
                 "model=" + model->model_id + ";layer=" + std::to_string(i));
    }
    ctx.charge(rt->timing.decrypt_us(model->layers[i].byte_size));
    return ctx.elapsed;
  }

  void layer_ready(std::uint32_t i) {
    ready[i] = 1;
    try_submit_compute(i);
  }

  void try_submit_compute(std::uint32_t i) {
    if (finished || i >= n || submitted[i] || !ready[i]) return;
    if (i > 0 && !computed[i - 1]) return;
    submitted[i] = 1;
    auto self = shared_from_this();
    rt->ch_compute->submit(
        [self, i] { return self->compute_work(i); },
        [self, i](SimTime s, SimTime e) { self->compute_done(i, s, e); });
  }

  SimDuration compute_work(std::uint32_t i) {
    OpCtx ctx = rt->ctx_at_now(Actor::SecureWorld);
    rt->monitor->set_npu_task_inflight(tr.device == ComputeDevice::Npu);
    SimDuration launch = 0;
    if (tr.device == ComputeDevice::Npu) {
      launch = rt->timing.npu_task_launch_us(tr.baseline_rates);
      ctx.charge(launch);
      ctx.record(Actor::SecureWorld, "npu_task_launch", "layer=" + std::to_string(i));
    }
    SimDuration compute =
        rt->timing.compute_us(tr.device, model->layers[i].byte_size, params.prompt_tokens);
    ctx.charge(compute);
    result.compute_span_total_us += compute;
    ctx.record(Actor::SecureWorld, "compute_layer",
               "layer=" + std::to_string(i) + ";us=" + std::to_string(compute));
    return ctx.elapsed;
  }

  void compute_done(std::uint32_t i, SimTime s, SimTime e) {
    rt->monitor->set_npu_task_inflight(false);
    result.per_layer[i].compute_start = s;
    result.per_layer[i].compute_end = e;
    computed[i] = 1;
    if (finished) return;
    if (!tr.pipelined && i + 1 < n) submit_load(i + 1);
    if (i + 1 < n) {
      try_submit_compute(i + 1);
      return;
    }
    finalize(e);
  }

  void finalize(SimTime first_token) {
    result.first_token_time = first_token;
    result.ttft_us = first_token - result.request_start;
    SimTime prev = setup_end;
    for (std::uint32_t i = 0; i < n; ++i) {
      result.stall_us_total += result.per_layer[i].compute_start - prev;
      prev = result.per_layer[i].compute_end;
    }
    if (memmgr_weights) {
      rt->memmgr->pin_model(model->model_id, false);
      rt->memmgr->set_sequence_active(params.sequence_id, false);
    }
    if (rt->log != nullptr) {
      rt->log->record(first_token, Actor::SecureWorld, "first_token",
                      "model=" + model->model_id + ";ttft_us=" + std::to_string(result.ttft_us));
    }
    if (params.release_at_end) schedule_release();
    finished = true;
    done_cb(result);
  }

  void schedule_release() {
    auto self = shared_from_this();
    rt->ch_alloc->submit(
        [self] {
          OpCtx ctx = self->rt->ctx_at_now(Actor::NormalKernel);
          if (self->cma_region != 0) {
            ctx.charge(self->rt->timing.cma_reclaim_us(
                static_cast<std::uint64_t>(self->model->total_frames()) * kPageSize));
            self->rt->daemon->cma_release(*self->rt->mem, self->cma_region, ctx);
          }
          for (std::uint64_t g : self->aux_grants) {
            self->rt->daemon->release_grant(*self->rt->mem, *self->rt->monitor, g,
                                            ReclaimMode::Lazy, ctx);
          }
          if (self->params.mode == ExecutionMode::FlexServe && !self->memmgr_weights) {
            for (const auto& g : self->grants) {
              if (g.grant_id != 0) {
                self->rt->daemon->release_grant(*self->rt->mem, *self->rt->monitor,
                                                g.grant_id, ReclaimMode::Lazy, ctx);
              }
            }
          }
          return ctx.elapsed;
        },
        [](SimTime, SimTime) {});
  }
};

// --- the decode job ----------------------------------------------------------

struct DecodeJob : std::enable_shared_from_this<DecodeJob> {
  SimRt* rt = nullptr;
  const ModelManifest* model = nullptr;
  DecodeParams params;
  ModeTraits tr;
  std::function<void(DecodeResult)> done_cb;
  DecodeResult result;
  std::uint64_t remaining = 0;
  Status pending_fail;

  void start() {
    result.status = Status::success();
    remaining = params.n_new_tokens;
    if (params.mode == ExecutionMode::FlexServe) {
      rt->memmgr->set_sequence_active(params.sequence_id, true);
    }
    if (remaining == 0) {
      result.end_time = rt->engine->now();
      done_cb(result);
      return;
    }
    for (std::uint64_t t = 0; t < params.n_new_tokens; ++t) submit_token();
  }

  void submit_token() {
    auto self = shared_from_this();
    rt->ch_compute->submit(
        [self] { return self->token_work(); },
        [self](SimTime s, SimTime e) {
          self->result.token_us.push_back(e - s);
          if (--self->remaining == 0) self->finish(e);
        });
  }

  SimDuration token_work() {
    OpCtx ctx = rt->ctx_at_now(Actor::SecureWorld);
    rt->monitor->set_npu_task_inflight(tr.device == ComputeDevice::Npu);
    if (params.mode == ExecutionMode::FlexServe) {
      Status s = rt->memmgr->kv_append(params.sequence_id, 1, ctx);
      if (!s.ok()) pending_fail = s;
    } else if (params.mode == ExecutionMode::NwBase) {
      std::uint64_t tokens = ++nw_tokens_;
      std::uint32_t block = rt->memmgr->config().kv_block_tokens;
      if (tokens % block == 1) {
        ctx.charge(rt->timing.mmap_alloc_us(kv_block_frames(*model, block) * kPageSize));
      }
    }
    // Baseline modes pre-reserved KV space in the carved region.
    if (tr.device == ComputeDevice::Npu) {
      ctx.charge(rt->timing.npu_task_launch_us(tr.baseline_rates));
    }
    ctx.charge(rt->timing.decode_token_us(tr.device, tr.secure, model->total_bytes));
    return ctx.elapsed;
  }

  void finish(SimTime end) {
    rt->monitor->set_npu_task_inflight(false);
    if (!pending_fail.ok()) result.status = pending_fail;
    result.end_time = end;
    if (params.mode == ExecutionMode::FlexServe) {
      rt->memmgr->set_sequence_active(params.sequence_id, false);
    }
    done_cb(result);
  }

  std::uint64_t nw_tokens_ = 0;
};

}  // namespace

void Pipeline::start_prefill(const ModelManifest& model, const PrefillParams& params,
                             std::function<void(PrefillResult)> done) {
  auto job = std::make_shared<PrefillJob>();
  job->rt = rt_;
  job->model = &model;
  job->params = params;
  job->tr = traits_for(params.mode);
  job->done_cb = std::move(done);
  job->start();
}

void Pipeline::start_decode(const ModelManifest& model, const DecodeParams& params,
                            std::function<void(DecodeResult)> done) {
  auto job = std::make_shared<DecodeJob>();
  job->rt = rt_;
  job->model = &model;
  job->params = params;
  job->tr = traits_for(params.mode);
  job->done_cb = std::move(done);
  job->start();
}

Status secure_load_layer(SimRt& rt, const ModelManifest& model, std::uint32_t layer,
                         const AllocationGrant& grant, OpCtx& ctx) {
  if (layer >= model.n_layers()) {
    return Status::error(StatusCode::ConfigError, "secure_load_layer: bad layer");
  }
  Status s = dma_load_ciphertext(rt, model, layer, grant, ctx);
  if (!s.ok()) return s;
  ctx.charge(rt.timing.load_us(model.layers[layer].byte_size));
  s = rt.monitor->protect_pages(*rt.mem, grant.pages, ctx, ProtectCharge::Transition);
  if (!s.ok()) return s;
  s = decrypt_and_verify(rt, model, layer, grant, ctx);
  if (!s.ok()) return s;
  ctx.charge(rt.timing.decrypt_us(model.layers[layer].byte_size));
  return Status::success();
}

PrefillEstimate estimate_prefill(const TimingModel& timing, const ModelManifest& model,
                                 ExecutionMode mode, std::uint64_t prompt_tokens,
                                 std::uint32_t cached_prefix, std::uint64_t background_bytes,
                                 std::uint64_t max_new_tokens, std::uint32_t kv_block_tokens,
                                 EstimateFlags flags) {
  ModeTraits tr = traits_for(mode);
  std::uint32_t n = model.n_layers();
  std::uint32_t k = mode == ExecutionMode::FlexServe ? std::min(cached_prefix, n) : 0;

  // Setup span, mirroring PrefillJob::setup_work charge for charge.
  SimDuration setup = 0;
  std::uint64_t act_frames = act_frames_for(model, prompt_tokens);
  std::uint64_t block_frames = kv_block_frames(model, kv_block_tokens);
  std::uint64_t prompt_blocks = kv_blocks_for(prompt_tokens, kv_block_tokens);
  if (mode == ExecutionMode::FlexServe) {
    if (flags.unfreeze_needed) setup += timing.s2pt_boot_us() + timing.hash_check_us();
    if (flags.npu_switch_needed) setup += timing.npu_mode_switch_us();
    setup += timing.flexmem_alloc_us(act_frames * kPageSize);
    for (std::uint64_t b = 0; b < prompt_blocks; ++b) {
      setup += timing.flexmem_alloc_us(block_frames * kPageSize);
    }
    setup += timing.smmu_setup_us((act_frames + prompt_blocks * block_frames) * kPageSize);
  } else if (tr.upfront_cma) {
    std::uint64_t frames = model.total_frames() + act_frames +
                           kv_blocks_for(prompt_tokens + max_new_tokens, kv_block_tokens) *
                               block_frames;
    setup += timing.cma_alloc_us(frames * kPageSize, background_bytes);
    if (mode == ExecutionMode::StrawmanOpt) {
      setup += timing.npu_mode_switch_us() + timing.smmu_setup_us(frames * kPageSize);
    }
  } else {  // NwBase
    std::uint64_t frames = act_frames + prompt_blocks * block_frames;
    setup += timing.mmap_alloc_us(frames * kPageSize) +
             timing.smmu_setup_us(frames * kPageSize, /*baseline=*/true);
  }

  auto alloc_dur = [&](std::uint32_t i) -> SimDuration {
    std::uint64_t bytes = model.layers[i].frames() * kPageSize;
    if (mode == ExecutionMode::FlexServe) return timing.flexmem_alloc_us(bytes);
    if (mode == ExecutionMode::NwBase) {
      return timing.mmap_alloc_us(bytes) + timing.smmu_setup_us(bytes, /*baseline=*/true);
    }
    return 0;
  };
  auto load_dur = [&](std::uint32_t i) { return timing.load_us(model.layers[i].byte_size); };
  auto decrypt_dur = [&](std::uint32_t i) -> SimDuration {
    SimDuration d = timing.decrypt_us(model.layers[i].byte_size);
    if (mode == ExecutionMode::FlexServe) {
      d += timing.smmu_setup_us(model.layers[i].frames() * kPageSize);
    }
    return d;
  };
  auto compute_dur = [&](std::uint32_t i) -> SimDuration {
    SimDuration d = timing.compute_us(tr.device, model.layers[i].byte_size, prompt_tokens);
    if (tr.device == ComputeDevice::Npu) d += timing.npu_task_launch_us(tr.baseline_rates);
    return d;
  };

  SimTime setup_end = setup;
  PrefillEstimate est;

  if (tr.pipelined) {
    SimTime a_avail = setup_end, io_avail = setup_end, d_avail = setup_end,
            c_avail = setup_end;
    for (std::uint32_t i = 0; i < n; ++i) {
      SimTime ready;
      if (i < k) {
        ready = setup_end;
      } else {
        SimTime alloc_done;
        if (tr.per_layer_alloc) {
          a_avail += alloc_dur(i);
          alloc_done = a_avail;
        } else {
          alloc_done = setup_end;
        }
        io_avail = std::max(io_avail, alloc_done) + load_dur(i);
        SimTime load_done = io_avail;
        if (tr.decrypts) {
          d_avail = std::max(d_avail, load_done) + decrypt_dur(i);
          ready = d_avail;
        } else {
          ready = load_done;
        }
      }
      SimTime start = std::max(c_avail, ready);
      est.stall_us += start - c_avail;
      c_avail = start + compute_dur(i);
    }
    est.ttft_us = c_avail;
  } else {
    SimTime t = setup_end;
    for (std::uint32_t i = 0; i < n; ++i) {
      SimTime before = t;
      t += load_dur(i);
      t += decrypt_dur(i);
      est.stall_us += t - before;
      t += compute_dur(i);
    }
    est.ttft_us = t;
  }
  return est;
}

}  // namespace flexsim
