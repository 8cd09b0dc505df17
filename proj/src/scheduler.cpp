#include "flexsim/scheduler.hpp"

#include <algorithm>
#include <memory>

namespace flexsim {

namespace {

SimDuration ttft_at(const TimingModel& timing, const ModelManifest& model,
                    std::uint64_t tokens, std::uint32_t k, std::uint32_t kv_block_tokens,
                    EstimateFlags flags) {
  return estimate_prefill(timing, model, ExecutionMode::FlexServe, tokens, k,
                          /*background_bytes=*/0, /*max_new_tokens=*/0, kv_block_tokens, flags)
      .ttft_us;
}

}  // namespace

std::uint32_t zero_stall_prefix(const TimingModel& timing, const ModelManifest& model,
                                std::uint64_t prompt_tokens, std::uint32_t kv_block_tokens,
                                EstimateFlags flags) {
  std::uint32_t n = model.n_layers();
  SimDuration warm = ttft_at(timing, model, prompt_tokens, n, kv_block_tokens, flags);
  std::uint32_t lo = 0, hi = n;
  while (lo < hi) {
    std::uint32_t mid = lo + (hi - lo) / 2;
    if (ttft_at(timing, model, prompt_tokens, mid, kv_block_tokens, flags) == warm) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

std::uint32_t zero_stall_prefix_for_distribution(
    const TimingModel& timing, const ModelManifest& model,
    const std::vector<std::pair<std::uint64_t, double>>& prompt_distribution,
    std::uint32_t kv_block_tokens, EstimateFlags flags) {
  std::uint32_t k = 0;
  for (const auto& [tokens, prob] : prompt_distribution) {
    if (prob <= 0.0) continue;
    k = std::max(k, zero_stall_prefix(timing, model, tokens, kv_block_tokens, flags));
  }
  return k;
}

namespace {

struct PrefetchJob : std::enable_shared_from_this<PrefetchJob> {
  SimRt* rt = nullptr;
  const ModelManifest* model = nullptr;
  std::uint32_t target = 0;
  std::string current_model;
  std::function<void(PrefetchOutcome)> done_cb;
  PrefetchOutcome outcome;
  AllocationGrant grant;
  bool finished = false;

  void finish(Status s) {
    if (finished) return;
    finished = true;
    outcome.status = std::move(s);
    done_cb(outcome);
  }

  void start() {
    outcome.status = Status::success();
    next_layer();
  }

  void next_layer() {
    std::uint32_t layer = rt->memmgr->resident_prefix(model->model_id);
    if (layer >= target) {
      if (rt->log != nullptr) {
        rt->log->record(rt->engine->now(), Actor::SecureWorld, "prefetch_done",
                        "model=" + model->model_id +
                            ";layers=" + std::to_string(outcome.layers_prefetched));
      }
      finish(Status::success());
      return;
    }
    auto self = shared_from_this();
    rt->ch_alloc->submit([self, layer] { return self->alloc_work(layer); },
                         [self, layer](SimTime, SimTime) {
                           if (self->finished) return;
                           if (self->outcome.truncated) {
                             self->finish(Status::success());
                             return;
                           }
                           self->submit_load(layer);
                         });
  }

  SimDuration alloc_work(std::uint32_t layer) {
    OpCtx ctx = rt->ctx_at_now(Actor::SecureWorld);
    std::uint64_t need = model->layers[layer].frames();
    // Budget enforcement: free the current model's tail before giving up.
    while (rt->daemon->free_frames() < need && !current_model.empty()) {
      std::uint32_t cur_resident = rt->memmgr->resident_prefix(current_model);
      if (cur_resident == 0) break;
      Status ev = rt->memmgr->evict_tail_layer(current_model, ctx);
      if (!ev.ok()) break;
      ctx.record(Actor::SecureWorld, "prefetch_evict_tail", "model=" + current_model);
    }
    if (rt->daemon->free_frames() < need) {
      outcome.truncated = true;
      ctx.record(Actor::SecureWorld, "prefetch_truncated",
                 "model=" + model->model_id + ";at_layer=" + std::to_string(layer));
      return ctx.elapsed;
    }
    auto g = rt->memmgr->alloc_layer(model->model_id, layer, ctx);
    if (!g.ok()) {
      outcome.truncated = true;
      return ctx.elapsed;
    }
    grant = g.value();
    return ctx.elapsed;
  }

  void submit_load(std::uint32_t layer) {
    auto self = shared_from_this();
    rt->ch_io->submit(
        [self, layer] {
          OpCtx ctx = self->rt->ctx_at_now(Actor::NormalKernel);
          ctx.record(Actor::NormalKernel, "prefetch_load",
                     "model=" + self->model->model_id + ";layer=" + std::to_string(layer));
          ctx.charge(self->rt->timing.load_us(self->model->layers[layer].byte_size));
          return ctx.elapsed;
        },
        [self, layer](SimTime, SimTime) {
          if (self->finished) return;
          self->submit_decrypt(layer);
        });
  }

  void submit_decrypt(std::uint32_t layer) {
    auto self = shared_from_this();
    rt->ch_decrypt->submit(
        [self, layer] {
          OpCtx ctx = self->rt->ctx_at_now(Actor::SecureWorld);
          Status s = self->rt->monitor->protect_pages(*self->rt->mem, self->grant.pages, ctx,
                                                      ProtectCharge::Transition);
          if (s.ok()) {
            ctx.charge(self->rt->timing.decrypt_us(self->model->layers[layer].byte_size));
            self->rt->memmgr->mark_layer_loaded(self->model->model_id, layer);
            ctx.record(Actor::SecureWorld, "prefetch_decrypt",
                       "model=" + self->model->model_id + ";layer=" + std::to_string(layer));
          }
          return ctx.elapsed;
        },
        [self, layer](SimTime, SimTime) {
          if (self->finished) return;
          ++self->outcome.layers_prefetched;
          (void)layer;
          self->next_layer();
        });
  }
};

}  // namespace

void start_prefetch(SimRt& rt, const ModelManifest& next_model, std::uint32_t target_layers,
                    const std::string& current_model_id,
                    std::function<void(PrefetchOutcome)> done) {
  auto job = std::make_shared<PrefetchJob>();
  job->rt = &rt;
  job->model = &next_model;
  job->target = std::min(target_layers, next_model.n_layers());
  job->current_model = current_model_id;
  job->done_cb = std::move(done);
  if (rt.log != nullptr) {
    rt.log->record(rt.engine->now(), Actor::SecureWorld, "prefetch_begin",
                   "model=" + next_model.model_id +
                       ";target=" + std::to_string(job->target));
  }
  job->start();
}

void CacheShareState::observe_request(const std::string& model_id,
                                      std::uint64_t prompt_tokens, double ewma_alpha) {
  for (auto& [id, s] : models) {
    s.request_freq_ewma *= (1.0 - ewma_alpha);
  }
  ModelShareStats& s = models[model_id];
  s.request_freq_ewma += ewma_alpha;
  s.typical_prompt_tokens = prompt_tokens;
}

CacheShareAssignment adjust_cache_shares(
    const CacheShareState& stats, std::uint64_t budget_bytes,
    const std::map<std::string, const ModelManifest*>& manifests, const TimingModel& timing,
    std::uint32_t kv_block_tokens) {
  CacheShareAssignment out;
  out.state = stats;
  out.state.watermark_bytes = budget_bytes;

  struct ModelPlan {
    const ModelManifest* manifest = nullptr;
    double freq = 0.0;
    std::vector<SimDuration> stall_by_k;  // index 0..n
    std::uint32_t k = 0;
  };
  std::map<std::string, ModelPlan> plans;
  for (const auto& [id, m] : manifests) {
    ModelPlan plan;
    plan.manifest = m;
    auto it = stats.models.find(id);
    plan.freq = it != stats.models.end() ? it->second.request_freq_ewma : 0.0;
    std::uint64_t tokens = it != stats.models.end() ? it->second.typical_prompt_tokens : 128;
    plan.stall_by_k.reserve(m->n_layers() + 1);
    for (std::uint32_t k = 0; k <= m->n_layers(); ++k) {
      plan.stall_by_k.push_back(estimate_prefill(timing, *m, ExecutionMode::FlexServe, tokens,
                                                 k, 0, 0, kv_block_tokens)
                                    .stall_us);
    }
    plans[id] = std::move(plan);
    out.layers[id] = 0;
  }

  // Greedy by marginal value. The ranking ignores the budget and the
  // allocation takes the longest affordable prefix of the greedy sequence;
  // this keeps shares monotone in the budget. A vanishing secondary term
  // lets fully stall-free models keep filling by frequency (resident layers
  // also take load traffic off the bus).
  std::uint64_t spent = 0;
  while (true) {
    double best_value = 0.0;
    std::string best_id;
    for (const auto& [id, plan] : plans) {
      if (plan.k >= plan.manifest->n_layers()) continue;
      std::uint64_t layer_bytes = plan.manifest->layers[plan.k].frames() * kPageSize;
      double reduction =
          static_cast<double>(plan.stall_by_k[plan.k] - plan.stall_by_k[plan.k + 1]);
      double value =
          plan.freq * (reduction / static_cast<double>(layer_bytes) + 1e-9);
      if (value > best_value) {
        best_value = value;
        best_id = id;
      }
    }
    if (best_id.empty() || best_value <= 0.0) break;
    ModelPlan& plan = plans[best_id];
    std::uint64_t layer_bytes = plan.manifest->layers[plan.k].frames() * kPageSize;
    if (spent + layer_bytes > budget_bytes) break;
    spent += layer_bytes;
    ++plan.k;
    out.layers[best_id] = plan.k;
  }

  for (auto& [id, plan] : plans) {
    double total = static_cast<double>(plan.manifest->total_bytes);
    std::uint64_t cached = 0;
    for (std::uint32_t l = 0; l < plan.k; ++l) cached += plan.manifest->layers[l].byte_size;
    out.state.models[id].cached_fraction = total > 0 ? static_cast<double>(cached) / total : 0;
  }
  return out;
}

}  // namespace flexsim
