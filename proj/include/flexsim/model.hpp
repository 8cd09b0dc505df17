#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flexsim/common.hpp"
#include "flexsim/crypto.hpp"

namespace flexsim {

// One layer of the on-disk layered model layout. Layers are totally ordered
// by index and loaded in that order.
struct LayerDescriptor {
  std::uint32_t layer_index = 0;
  std::uint64_t byte_size = 0;
  crypto::Digest256 plaintext_digest{};  // all-zero for synthetic manifests

  std::uint64_t frames() const { return frames_for_bytes(byte_size); }
};

// Layered model description. Synthetic manifests carry sizes only (timing
// studies); real manifests additionally hold per-layer AEAD-sealed payloads
// so loading, decryption and tampering are byte-observable.
struct ModelManifest {
  std::string model_id;
  std::string params_label;
  std::vector<LayerDescriptor> layers;
  std::uint64_t total_bytes = 0;

  // Derived working-set rates used by the memory manager.
  std::uint64_t kv_bytes_per_token = 0;
  std::uint64_t act_bytes_per_token = 0;

  bool has_payload = false;
  std::vector<crypto::Bytes> layer_ciphertexts;  // detached-sealed bodies, layer-sized
  std::vector<crypto::AeadTag> layer_tags;
  crypto::AeadKey weights_key{};  // provisioned in the secure world

  std::uint32_t n_layers() const { return static_cast<std::uint32_t>(layers.size()); }
  std::uint64_t total_frames() const;
  void validate() const;

  crypto::AeadNonce layer_nonce(std::uint32_t layer) const;
  crypto::Bytes layer_ad(std::uint32_t layer) const;

  std::string to_json() const;
  static ModelManifest from_json(const std::string& text);
};

// Known device-model presets (INT8 weights, fp16 KV cache).
std::vector<std::string> model_preset_names();
ModelManifest make_preset_manifest(const std::string& preset);

// Small model with real encrypted layer payloads, for end-to-end crypto and
// adversary tests.
ModelManifest make_real_manifest(const std::string& model_id, std::uint32_t n_layers,
                                 std::uint64_t layer_bytes, std::uint64_t seed);

}  // namespace flexsim
