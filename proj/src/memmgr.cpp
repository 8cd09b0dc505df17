#include "flexsim/memmgr.hpp"

#include <algorithm>
#include <cstring>

#include "flexsim/rng.hpp"

namespace flexsim {

MemoryManager::MemoryManager(PhysicalMemory* mem, Monitor* monitor, FlexMemDaemon* daemon,
                             MemMgrConfig config)
    : mem_(mem), monitor_(monitor), daemon_(daemon), config_(config) {
  // Sealing key for KV spill blobs lives in the secure world.
  Rng rng(derive_seed(0x6b76, "kv-seal-key"));
  rng.fill_bytes(kv_seal_key_.data(), kv_seal_key_.size());
}

void MemoryManager::register_model(const ModelManifest& manifest) {
  manifest.validate();
  ModelCache cache;
  cache.manifest = manifest;
  cache.layer_grants.assign(manifest.n_layers(), 0);
  models_[manifest.model_id] = std::move(cache);
}

const ModelManifest* MemoryManager::manifest(const std::string& model_id) const {
  auto it = models_.find(model_id);
  return it == models_.end() ? nullptr : &it->second.manifest;
}

std::uint32_t MemoryManager::resident_prefix(const std::string& model_id) const {
  auto it = models_.find(model_id);
  return it == models_.end() ? 0 : it->second.resident;
}

std::uint32_t MemoryManager::loaded_prefix(const std::string& model_id) const {
  auto it = models_.find(model_id);
  return it == models_.end() ? 0 : it->second.loaded;
}

Result<AllocationGrant> MemoryManager::alloc_layer(const std::string& model_id,
                                                   std::uint32_t layer, OpCtx& ctx,
                                                   bool stage_for_load) {
  auto it = models_.find(model_id);
  if (it == models_.end()) {
    return Status::error(StatusCode::ConfigError, "alloc_layer: unknown model " + model_id);
  }
  ModelCache& cache = it->second;
  if (layer != cache.resident) {
    return Status::error(StatusCode::InvariantViolation,
                         "alloc_layer: layers become resident in order (expected " +
                             std::to_string(cache.resident) + ")");
  }
  std::uint64_t frames = cache.manifest.layers[layer].frames();
  auto grant = daemon_->flexmem_allocate(*mem_, *monitor_, frames, ctx, stage_for_load);
  if (!grant.ok()) return grant.status();
  cache.layer_grants[layer] = grant.value().grant_id;
  cache.resident = layer + 1;
  return grant;
}

Status MemoryManager::mark_layer_loaded(const std::string& model_id, std::uint32_t layer) {
  auto it = models_.find(model_id);
  if (it == models_.end()) {
    return Status::error(StatusCode::ConfigError, "mark_layer_loaded: unknown model");
  }
  if (layer >= it->second.resident || layer != it->second.loaded) {
    return Status::error(StatusCode::InvariantViolation, "mark_layer_loaded: out of order");
  }
  it->second.loaded = layer + 1;
  return Status::success();
}

Status MemoryManager::evict_tail_layer(const std::string& model_id, OpCtx& ctx) {
  auto it = models_.find(model_id);
  if (it == models_.end()) {
    return Status::error(StatusCode::ConfigError, "evict_tail_layer: unknown model");
  }
  ModelCache& cache = it->second;
  if (cache.resident == 0) {
    return Status::error(StatusCode::Insufficient, "evict_tail_layer: nothing resident");
  }
  std::uint32_t layer = cache.resident - 1;
  Status s = daemon_->release_grant(*mem_, *monitor_, cache.layer_grants[layer],
                                    ReclaimMode::Lazy, ctx);
  if (!s.ok()) return s;
  cache.layer_grants[layer] = 0;
  cache.resident = layer;
  cache.loaded = std::min(cache.loaded, cache.resident);
  ctx.record(Actor::SecureWorld, "evict_layer",
             "model=" + model_id + ";layer=" + std::to_string(layer));
  return Status::success();
}

void MemoryManager::set_protected_prefix(const std::string& model_id, std::uint32_t k) {
  auto it = models_.find(model_id);
  if (it != models_.end()) {
    it->second.keep_prefix = std::min(k, it->second.manifest.n_layers());
  }
}

std::uint32_t MemoryManager::protected_prefix(const std::string& model_id) const {
  auto it = models_.find(model_id);
  return it == models_.end() ? 0 : it->second.keep_prefix;
}

void MemoryManager::touch_model(const std::string& model_id, SimTime now) {
  auto it = models_.find(model_id);
  if (it != models_.end()) it->second.last_use = now;
}

std::uint64_t MemoryManager::layer_grant(const std::string& model_id,
                                         std::uint32_t layer) const {
  auto it = models_.find(model_id);
  if (it == models_.end() || layer >= it->second.layer_grants.size()) return 0;
  return it->second.layer_grants[layer];
}

void MemoryManager::pin_model(const std::string& model_id, bool pinned) {
  auto it = models_.find(model_id);
  if (it != models_.end()) it->second.pinned = pinned;
}

std::uint64_t MemoryManager::kv_page_frames(const ModelManifest& m) const {
  return frames_for_bytes(static_cast<std::uint64_t>(config_.kv_block_tokens) *
                          m.kv_bytes_per_token);
}

Status MemoryManager::open_sequence(const std::string& model_id, std::uint64_t sequence_id) {
  if (models_.find(model_id) == models_.end()) {
    return Status::error(StatusCode::ConfigError, "open_sequence: unknown model");
  }
  if (sequences_.count(sequence_id)) {
    return Status::error(StatusCode::ConfigError, "open_sequence: id in use");
  }
  Sequence seq;
  seq.model_id = model_id;
  seq.sequence_id = sequence_id;
  seq.active = true;
  sequences_[sequence_id] = std::move(seq);
  return Status::success();
}

Status MemoryManager::kv_append(std::uint64_t sequence_id, std::uint32_t n_tokens,
                                OpCtx& ctx) {
  auto it = sequences_.find(sequence_id);
  if (it == sequences_.end()) {
    return Status::error(StatusCode::ConfigError, "kv_append: unknown sequence");
  }
  Sequence& seq = it->second;
  const ModelManifest& m = models_.at(seq.model_id).manifest;
  std::uint32_t block = config_.kv_block_tokens;
  std::uint64_t blocks_before = (seq.tokens + block - 1) / block;
  std::uint64_t tokens_after = seq.tokens + n_tokens;
  std::uint64_t blocks_after = (tokens_after + block - 1) / block;

  for (std::uint64_t b = blocks_before; b < blocks_after; ++b) {
    std::uint64_t frames = kv_page_frames(m);
    auto grant = daemon_->flexmem_allocate(*mem_, *monitor_, frames, ctx);
    if (!grant.ok() && grant.code() == StatusCode::OutOfMemory) {
      // Make room by spilling the coldest pages, then retry once.
      Status off = kv_offload(std::max<std::uint64_t>(1, 1), ctx);
      if (!off.ok()) return grant.status();
      grant = daemon_->flexmem_allocate(*mem_, *monitor_, frames, ctx);
    }
    if (!grant.ok()) return grant.status();

    KvPage page;
    page.info.kv_id = next_kv_id_++;
    page.info.model_id = seq.model_id;
    page.info.sequence_id = sequence_id;
    page.info.token_start = static_cast<std::uint32_t>(b * block);
    page.info.token_count = 0;  // grows below
    page.info.frames = frames;
    page.info.last_use = ctx.now();
    page.grant_id = grant.value().grant_id;
    // KV tensor bytes written by the compute step; synthetic but stable.
    std::uint64_t content_seed = derive_seed(page.info.kv_id, "kv-content");
    for (std::size_t i = 0; i < grant.value().pages.size(); ++i) {
      mem_->write_content(grant.value().pages[i],
                          PageContent::seeded(content_seed + i));
    }
    seq.kv_ids.push_back(page.info.kv_id);
    kv_pages_[page.info.kv_id] = std::move(page);
  }

  seq.tokens = tokens_after;
  // Refresh logical spans: full blocks for all but the final partial one.
  for (std::size_t i = 0; i < seq.kv_ids.size(); ++i) {
    KvPage& p = kv_pages_.at(seq.kv_ids[i]);
    std::uint64_t start = p.info.token_start;
    p.info.token_count = static_cast<std::uint32_t>(
        std::min<std::uint64_t>(block, seq.tokens - start));
    p.info.last_use = ctx.now();
  }
  return Status::success();
}

Status MemoryManager::close_sequence(std::uint64_t sequence_id, SimTime now) {
  auto it = sequences_.find(sequence_id);
  if (it == sequences_.end()) {
    return Status::error(StatusCode::ConfigError, "close_sequence: unknown sequence");
  }
  it->second.closed = true;
  it->second.active = false;
  it->second.closed_at = now;
  return Status::success();
}

void MemoryManager::set_sequence_active(std::uint64_t sequence_id, bool active) {
  auto it = sequences_.find(sequence_id);
  if (it != sequences_.end()) it->second.active = active;
}

crypto::Bytes MemoryManager::serialize_kv_content(const KvPage& page) const {
  const AllocationGrant* grant = daemon_->grant(page.grant_id);
  crypto::Bytes out;
  std::uint32_t n = grant ? static_cast<std::uint32_t>(grant->pages.size()) : 0;
  out.push_back(static_cast<std::uint8_t>(n));
  out.push_back(static_cast<std::uint8_t>(n >> 8));
  out.push_back(static_cast<std::uint8_t>(n >> 16));
  out.push_back(static_cast<std::uint8_t>(n >> 24));
  if (grant == nullptr) return out;
  for (PageId p : grant->pages) {
    mem_->content(p).serialize_to(out);
  }
  return out;
}

Status MemoryManager::kv_offload(std::uint64_t n_pages, OpCtx& ctx) {
  std::vector<const KvPage*> resident;
  for (const auto& [id, p] : kv_pages_) {
    if (!p.info.spilled) resident.push_back(&p);
  }
  if (resident.size() < n_pages) {
    return Status::error(StatusCode::Insufficient, "kv_offload: not enough resident pages");
  }
  std::sort(resident.begin(), resident.end(), [](const KvPage* a, const KvPage* b) {
    if (a->info.last_use != b->info.last_use) return a->info.last_use < b->info.last_use;
    return a->info.kv_id < b->info.kv_id;
  });
  for (std::uint64_t i = 0; i < n_pages; ++i) {
    Status s = kv_offload_one(resident[i]->info.kv_id, ctx);
    if (!s.ok()) return s;
  }
  return Status::success();
}

Status MemoryManager::kv_restore(std::uint64_t kv_id, OpCtx& ctx) {
  auto it = kv_pages_.find(kv_id);
  if (it == kv_pages_.end()) {
    return Status::error(StatusCode::ConfigError, "kv_restore: unknown page");
  }
  KvPage& p = it->second;
  if (!p.info.spilled) {
    return Status::error(StatusCode::InvariantViolation, "kv_restore: page resident");
  }
  crypto::AeadNonce nonce = crypto::nonce_from_counter(
      (p.info.kv_id << 16) | (p.spill_epoch & 0xffff), /*domain=*/0x4b);
  std::string ad_str = p.info.model_id + "/" + std::to_string(p.info.sequence_id) + "/" +
                       std::to_string(p.info.token_start);
  crypto::Bytes ad(ad_str.begin(), ad_str.end());
  std::uint64_t bytes = p.info.frames * kPageSize;
  ctx.charge(monitor_->timing().load_us(bytes));
  auto plain = crypto::aead_open(kv_seal_key_, nonce, p.spill_blob, ad);
  ctx.charge(monitor_->timing().decrypt_us(bytes));
  if (!plain.has_value()) {
    ctx.record(Actor::SecureWorld, "kv_restore_failed", "kv=" + std::to_string(kv_id));
    return Status::error(StatusCode::SealVerifyFailure, "kv_restore: seal verification failed");
  }
  auto grant = daemon_->flexmem_allocate(*mem_, *monitor_, p.info.frames, ctx);
  if (!grant.ok()) return grant.status();
  // Rehydrate page contents from the sealed descriptors.
  const crypto::Bytes& buf = *plain;
  std::size_t off = 4;
  std::uint32_t n = static_cast<std::uint32_t>(buf[0]) |
                    (static_cast<std::uint32_t>(buf[1]) << 8) |
                    (static_cast<std::uint32_t>(buf[2]) << 16) |
                    (static_cast<std::uint32_t>(buf[3]) << 24);
  for (std::uint32_t i = 0; i < n && i < grant.value().pages.size(); ++i) {
    std::size_t consumed = 0;
    PageContent c = PageContent::deserialize(buf.data() + off, buf.size() - off, consumed);
    off += consumed;
    mem_->write_content(grant.value().pages[i], std::move(c));
  }
  p.grant_id = grant.value().grant_id;
  p.info.spilled = false;
  p.info.last_use = ctx.now();
  p.spill_blob.clear();
  ctx.record(Actor::SecureWorld, "kv_restore", "kv=" + std::to_string(kv_id));
  return Status::success();
}

std::vector<KvPageInfo> MemoryManager::kv_pages() const {
  std::vector<KvPageInfo> out;
  out.reserve(kv_pages_.size());
  for (const auto& [id, p] : kv_pages_) out.push_back(p.info);
  return out;
}

std::uint64_t MemoryManager::kv_resident_pages() const {
  std::uint64_t n = 0;
  for (const auto& [id, p] : kv_pages_) {
    if (!p.info.spilled) ++n;
  }
  return n;
}

std::uint64_t MemoryManager::sequence_tokens(std::uint64_t sequence_id) const {
  auto it = sequences_.find(sequence_id);
  return it == sequences_.end() ? 0 : it->second.tokens;
}

void MemoryManager::corrupt_spill_blob(std::uint64_t kv_id, std::size_t offset) {
  auto it = kv_pages_.find(kv_id);
  if (it != kv_pages_.end() && it->second.info.spilled && !it->second.spill_blob.empty()) {
    it->second.spill_blob[offset % it->second.spill_blob.size()] ^= 0x01;
  }
}

std::vector<PageId> MemoryManager::request_working_pages(std::uint64_t request_id,
                                                         std::uint64_t sequence_id) const {
  std::vector<PageId> pages;
  auto ait = activations_.find(request_id);
  if (ait != activations_.end()) {
    const AllocationGrant* g = daemon_->grant(ait->second.grant_id);
    if (g != nullptr) pages.insert(pages.end(), g->pages.begin(), g->pages.end());
  }
  auto sit = sequences_.find(sequence_id);
  if (sit != sequences_.end()) {
    for (std::uint64_t kv_id : sit->second.kv_ids) {
      auto kit = kv_pages_.find(kv_id);
      if (kit == kv_pages_.end() || kit->second.info.spilled) continue;
      const AllocationGrant* g = daemon_->grant(kit->second.grant_id);
      if (g != nullptr) pages.insert(pages.end(), g->pages.begin(), g->pages.end());
    }
  }
  return pages;
}

Result<std::uint64_t> MemoryManager::alloc_activation(std::uint64_t request_id,
                                                      std::uint64_t bytes, OpCtx& ctx) {
  if (activations_.count(request_id)) {
    return Status::error(StatusCode::ConfigError,
                         "alloc_activation: request already has a region");
  }
  auto grant = daemon_->flexmem_allocate(*mem_, *monitor_, frames_for_bytes(bytes), ctx);
  if (!grant.ok()) return grant.status();
  Activation act;
  act.request_id = request_id;
  act.grant_id = grant.value().grant_id;
  act.bytes = bytes;
  activations_[request_id] = act;
  return act.grant_id;
}

void MemoryManager::mark_request_completed(std::uint64_t request_id) {
  auto it = activations_.find(request_id);
  if (it != activations_.end()) it->second.completed = true;
}

Status MemoryManager::complete_request(std::uint64_t request_id, OpCtx& ctx) {
  auto it = activations_.find(request_id);
  if (it == activations_.end()) return Status::success();
  Status s = daemon_->release_grant(*mem_, *monitor_, it->second.grant_id,
                                    ReclaimMode::Lazy, ctx);
  if (!s.ok()) return s;
  activations_.erase(it);
  return Status::success();
}

Result<std::vector<ReclaimVictim>> MemoryManager::select_reclaim_victims(
    std::uint64_t n_frames, SimTime now) const {
  std::vector<ReclaimVictim> victims;
  std::uint64_t freed = 0;
  auto want_more = [&] { return freed < n_frames; };

  // (1) activation regions whose request completed.
  for (const auto& [id, act] : activations_) {
    if (!want_more()) break;
    if (!act.completed) continue;
    const AllocationGrant* g = daemon_->grant(act.grant_id);
    if (g == nullptr) continue;
    ReclaimVictim v;
    v.kind = ReclaimVictim::Kind::Activation;
    v.request_id = id;
    v.frames = g->pages.size();
    victims.push_back(v);
    freed += v.frames;
  }

  // (2) cold KV pages, least recently used first; pages of an actively
  // decoding sequence are off limits.
  if (want_more()) {
    std::vector<const KvPage*> resident;
    for (const auto& [id, p] : kv_pages_) {
      if (p.info.spilled) continue;
      auto sit = sequences_.find(p.info.sequence_id);
      if (sit != sequences_.end() && sit->second.active) continue;
      resident.push_back(&p);
    }
    std::sort(resident.begin(), resident.end(), [](const KvPage* a, const KvPage* b) {
      if (a->info.last_use != b->info.last_use) return a->info.last_use < b->info.last_use;
      return a->info.kv_id < b->info.kv_id;
    });
    for (const KvPage* p : resident) {
      if (!want_more()) break;
      ReclaimVictim v;
      v.kind = ReclaimVictim::Kind::KvPage;
      v.kv_id = p->info.kv_id;
      v.frames = p->info.frames;
      victims.push_back(v);
      freed += v.frames;
    }
  }

  // (3) weight layers, tail first, least recently used model first, keeping
  // each zero-stall prefix intact while that is possible.
  auto add_weight_victims = [&](bool allow_prefix_break) {
    std::vector<const ModelCache*> order;
    for (const auto& [id, mc] : models_) {
      if (!mc.pinned && mc.resident > 0) order.push_back(&mc);
    }
    std::sort(order.begin(), order.end(), [](const ModelCache* a, const ModelCache* b) {
      if (a->last_use != b->last_use) return a->last_use < b->last_use;
      return a->manifest.model_id < b->manifest.model_id;
    });
    for (const ModelCache* mc : order) {
      std::uint32_t floor_layer = allow_prefix_break ? 0 : mc->keep_prefix;
      // Skip layers already claimed in the previous pass.
      std::uint32_t top = mc->resident;
      for (const ReclaimVictim& v : victims) {
        if (v.kind == ReclaimVictim::Kind::WeightLayer &&
            v.model_id == mc->manifest.model_id) {
          top = std::min(top, v.layer);
        }
      }
      for (std::uint32_t l = top; l > floor_layer && want_more(); --l) {
        ReclaimVictim v;
        v.kind = ReclaimVictim::Kind::WeightLayer;
        v.model_id = mc->manifest.model_id;
        v.layer = l - 1;
        v.frames = mc->manifest.layers[l - 1].frames();
        victims.push_back(v);
        freed += v.frames;
      }
      if (!want_more()) break;
    }
  };
  if (want_more()) add_weight_victims(/*allow_prefix_break=*/false);
  if (want_more()) add_weight_victims(/*allow_prefix_break=*/true);

  (void)now;
  if (freed < n_frames) {
    return Status::error(StatusCode::Insufficient,
                         "reclaim demand exceeds evictable memory: need " +
                             std::to_string(n_frames) + ", evictable " +
                             std::to_string(freed));
  }
  return victims;
}

Status MemoryManager::apply_victim(const ReclaimVictim& v, OpCtx& ctx) {
  switch (v.kind) {
    case ReclaimVictim::Kind::Activation:
      return complete_request(v.request_id, ctx);
    case ReclaimVictim::Kind::KvPage: {
      auto it = kv_pages_.find(v.kv_id);
      if (it == kv_pages_.end()) return Status::success();
      const Sequence& seq = sequences_.at(it->second.info.sequence_id);
      bool droppable = seq.closed &&
                       (ctx.now() - seq.closed_at) >= config_.closed_kv_drop_after_us;
      if (droppable) {
        Status s = daemon_->release_grant(*mem_, *monitor_, it->second.grant_id,
                                          ReclaimMode::Lazy, ctx);
        if (!s.ok()) return s;
        auto& ids = sequences_.at(it->second.info.sequence_id).kv_ids;
        ids.erase(std::remove(ids.begin(), ids.end(), v.kv_id), ids.end());
        kv_pages_.erase(it);
        return Status::success();
      }
      return kv_offload_one(v.kv_id, ctx);
    }
    case ReclaimVictim::Kind::WeightLayer: {
      auto it = models_.find(v.model_id);
      if (it == models_.end()) return Status::success();
      if (it->second.resident != v.layer + 1) {
        return Status::error(StatusCode::InvariantViolation,
                             "reclaim would break prefix ordering");
      }
      return evict_tail_layer(v.model_id, ctx);
    }
  }
  return Status::success();
}

Status MemoryManager::kv_offload_one(std::uint64_t kv_id, OpCtx& ctx) {
  auto it = kv_pages_.find(kv_id);
  if (it == kv_pages_.end() || it->second.info.spilled) return Status::success();
  KvPage& p = it->second;
  const AllocationGrant* grant = daemon_->grant(p.grant_id);
  if (grant == nullptr) {
    return Status::error(StatusCode::InvariantViolation, "kv_offload: missing grant");
  }
  std::uint64_t bytes = grant->bytes();
  crypto::Bytes plain = serialize_kv_content(p);
  ++p.spill_epoch;
  crypto::AeadNonce nonce = crypto::nonce_from_counter(
      (p.info.kv_id << 16) | (p.spill_epoch & 0xffff), /*domain=*/0x4b);
  std::string ad_str = p.info.model_id + "/" + std::to_string(p.info.sequence_id) + "/" +
                       std::to_string(p.info.token_start);
  crypto::Bytes ad(ad_str.begin(), ad_str.end());
  p.spill_blob = crypto::aead_seal(kv_seal_key_, nonce, plain, ad);
  ctx.charge(monitor_->timing().decrypt_us(bytes));
  ctx.charge(monitor_->timing().load_us(bytes));
  Status s = daemon_->release_grant(*mem_, *monitor_, p.grant_id, ReclaimMode::Lazy, ctx);
  if (!s.ok()) return s;
  p.grant_id = 0;
  p.info.spilled = true;
  ctx.record(Actor::SecureWorld, "kv_offload",
             "kv=" + std::to_string(p.info.kv_id) + ";bytes=" + std::to_string(bytes));
  return Status::success();
}

std::uint64_t MemoryManager::reclaim_frames(PhysicalMemory& mem, Monitor& monitor,
                                            FlexMemDaemon& daemon, std::uint64_t n_frames,
                                            OpCtx& ctx) {
  (void)mem;
  (void)monitor;
  (void)daemon;
  auto victims = select_reclaim_victims(n_frames, ctx.now());
  std::vector<ReclaimVictim> list;
  if (victims.ok()) {
    list = std::move(victims).take();
  } else {
    // Reclaiming more than is held reclaims everything evictable.
    auto all = select_reclaim_victims(evictable_frames(ctx.now()), ctx.now());
    if (all.ok()) list = std::move(all).take();
  }
  std::uint64_t freed = 0;
  for (const ReclaimVictim& v : list) {
    Status s = apply_victim(v, ctx);
    if (s.ok()) freed += v.frames;
    if (freed >= n_frames) break;
  }
  return freed;
}

FootprintSnapshot MemoryManager::footprint(SimTime now) const {
  FootprintSnapshot snap;
  snap.time_us = now;
  snap.weights_bytes = weights_frames() * kPageSize;
  snap.kv_bytes = kv_frames_resident() * kPageSize;
  snap.act_bytes = act_frames() * kPageSize;
  snap.free_frames = daemon_->free_frames();
  return snap;
}

std::uint64_t MemoryManager::weights_frames() const {
  std::uint64_t n = 0;
  for (const auto& [id, mc] : models_) {
    for (std::uint32_t l = 0; l < mc.resident; ++l) {
      const AllocationGrant* g = daemon_->grant(mc.layer_grants[l]);
      if (g == nullptr) continue;
      // Staged pages still loading don't count as protected residency.
      for (PageId p : g->pages) {
        if (mem_->state(p) == PageState::FlexMem) ++n;
      }
    }
  }
  return n;
}

std::uint64_t MemoryManager::kv_frames_resident() const {
  std::uint64_t n = 0;
  for (const auto& [id, p] : kv_pages_) {
    if (!p.info.spilled) n += p.info.frames;
  }
  return n;
}

std::uint64_t MemoryManager::act_frames() const {
  std::uint64_t n = 0;
  for (const auto& [id, act] : activations_) {
    const AllocationGrant* g = daemon_->grant(act.grant_id);
    if (g != nullptr) n += g->pages.size();
  }
  return n;
}

std::uint64_t MemoryManager::evictable_frames(SimTime now) const {
  (void)now;
  std::uint64_t n = 0;
  for (const auto& [id, act] : activations_) {
    if (act.completed) {
      const AllocationGrant* g = daemon_->grant(act.grant_id);
      if (g != nullptr) n += g->pages.size();
    }
  }
  for (const auto& [id, p] : kv_pages_) {
    if (p.info.spilled) continue;
    auto sit = sequences_.find(p.info.sequence_id);
    if (sit != sequences_.end() && sit->second.active) continue;
    n += p.info.frames;
  }
  for (const auto& [id, mc] : models_) {
    if (mc.pinned) continue;
    for (std::uint32_t l = 0; l < mc.resident; ++l) {
      n += mc.manifest.layers[l].frames();
    }
  }
  return n;
}

Status MemoryManager::check_residency() const {
  std::uint64_t categorized = weights_frames() + kv_frames_resident() + act_frames();
  std::uint64_t protected_frames = mem_->count_state(PageState::FlexMem);
  if (categorized != protected_frames) {
    return Status::error(StatusCode::InvariantViolation,
                         "residency accounting drift: categories " +
                             std::to_string(categorized) + " vs protected " +
                             std::to_string(protected_frames));
  }
  // Prefix property: a resident layer never sits above an absent one.
  for (const auto& [id, mc] : models_) {
    for (std::uint32_t l = 0; l < mc.manifest.n_layers(); ++l) {
      bool resident = mc.layer_grants[l] != 0;
      if (resident != (l < mc.resident)) {
        return Status::error(StatusCode::InvariantViolation,
                             "weight residency is not a prefix for " + id);
      }
    }
  }
  return Status::success();
}

}  // namespace flexsim
