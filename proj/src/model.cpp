#include "flexsim/model.hpp"

#include <json.hpp>

#include "flexsim/rng.hpp"

namespace flexsim {

namespace {

// Uniform layer split: the on-disk layout rounds each layer up to whole
// pages, with the final layer absorbing the remainder.
std::vector<LayerDescriptor> split_layers(std::uint64_t total_bytes, std::uint32_t n_layers) {
  std::vector<LayerDescriptor> layers;
  layers.reserve(n_layers);
  std::uint64_t per = (total_bytes / n_layers + kPageSize - 1) / kPageSize * kPageSize;
  std::uint64_t assigned = 0;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerDescriptor l;
    l.layer_index = i;
    if (i + 1 == n_layers) {
      l.byte_size = total_bytes - assigned;
    } else {
      l.byte_size = std::min(per, total_bytes - assigned);
    }
    assigned += l.byte_size;
    layers.push_back(l);
  }
  return layers;
}

struct Preset {
  const char* name;
  const char* label;
  double gib;
  std::uint32_t layers;
  std::uint64_t kv_bytes_per_token;
  std::uint64_t act_bytes_per_token;
};

// KV rate: 2 tensors x layers x kv_heads x head_dim x 2 bytes (fp16).
constexpr Preset kPresets[] = {
    {"llama3.2-3b", "3B-int8", 3.0, 28, 2ull * 28 * 8 * 128 * 2, 24576},
    {"llama3.1-8b", "8B-int8", 7.5, 32, 2ull * 32 * 8 * 128 * 2, 32768},
    {"qwen3-0.6b", "0.6B-int8", 0.6, 28, 2ull * 28 * 8 * 128 * 2, 16384},
    {"qwen3-1.7b", "1.7B-int8", 1.7, 28, 2ull * 28 * 8 * 128 * 2, 24576},
    {"qwen3-8b", "8B-int8", 8.0, 36, 2ull * 36 * 8 * 128 * 2, 32768},
    {"calib-8gib", "8GiB-calibration", 8.0, 32, 2ull * 32 * 8 * 128 * 2, 32768},
};

}  // namespace

std::uint64_t ModelManifest::total_frames() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.frames();
  return n;
}

void ModelManifest::validate() const {
  if (model_id.empty()) throw ConfigError("manifest: model_id empty");
  if (layers.empty()) throw ConfigError("manifest: no layers");
  std::uint64_t sum = 0;
  for (std::uint32_t i = 0; i < layers.size(); ++i) {
    if (layers[i].layer_index != i) throw ConfigError("manifest: layer indices not ordered");
    if (layers[i].byte_size == 0) throw ConfigError("manifest: zero-sized layer");
    sum += layers[i].byte_size;
  }
  if (sum != total_bytes) throw ConfigError("manifest: total_bytes != sum of layers");
  if (has_payload &&
      (layer_ciphertexts.size() != layers.size() || layer_tags.size() != layers.size())) {
    throw ConfigError("manifest: payload layer count mismatch");
  }
}

crypto::AeadNonce ModelManifest::layer_nonce(std::uint32_t layer) const {
  return crypto::nonce_from_counter(layer, /*domain=*/0x4d);
}

crypto::Bytes ModelManifest::layer_ad(std::uint32_t layer) const {
  std::string ad = model_id + "/layer/" + std::to_string(layer);
  return crypto::Bytes(ad.begin(), ad.end());
}

std::string ModelManifest::to_json() const {
  nlohmann::ordered_json j;
  j["model_id"] = model_id;
  j["params_label"] = params_label;
  j["total_bytes"] = total_bytes;
  j["kv_bytes_per_token"] = kv_bytes_per_token;
  j["act_bytes_per_token"] = act_bytes_per_token;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& l : layers) {
    nlohmann::ordered_json lj;
    lj["index"] = l.layer_index;
    lj["bytes"] = l.byte_size;
    lj["digest"] = crypto::hex(l.plaintext_digest);
    arr.push_back(lj);
  }
  j["layers"] = arr;
  return j.dump(2);
}

ModelManifest ModelManifest::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: invalid JSON: ") + e.what());
  }
  ModelManifest m;
  try {
    m.model_id = j.at("model_id").get<std::string>();
    m.params_label = j.value("params_label", "");
    m.total_bytes = j.at("total_bytes").get<std::uint64_t>();
    m.kv_bytes_per_token = j.at("kv_bytes_per_token").get<std::uint64_t>();
    m.act_bytes_per_token = j.at("act_bytes_per_token").get<std::uint64_t>();
    for (const auto& lj : j.at("layers")) {
      LayerDescriptor l;
      l.layer_index = lj.at("index").get<std::uint32_t>();
      l.byte_size = lj.at("bytes").get<std::uint64_t>();
      std::string hex = lj.value("digest", "");
      for (std::size_t i = 0; i + 1 < hex.size() && i / 2 < l.plaintext_digest.size(); i += 2) {
        l.plaintext_digest[i / 2] =
            static_cast<std::uint8_t>(std::stoi(hex.substr(i, 2), nullptr, 16));
      }
      m.layers.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: missing field: ") + e.what());
  }
  m.validate();
  return m;
}

std::vector<std::string> model_preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresets) names.emplace_back(p.name);
  return names;
}

ModelManifest make_preset_manifest(const std::string& preset) {
  for (const auto& p : kPresets) {
    if (preset == p.name) {
      ModelManifest m;
      m.model_id = p.name;
      m.params_label = p.label;
      m.total_bytes = static_cast<std::uint64_t>(p.gib * static_cast<double>(kGiB));
      m.total_bytes = m.total_bytes / kPageSize * kPageSize;
      m.layers = split_layers(m.total_bytes, p.layers);
      m.kv_bytes_per_token = p.kv_bytes_per_token;
      m.act_bytes_per_token = p.act_bytes_per_token;
      m.validate();
      return m;
    }
  }
  throw ConfigError("unknown model preset: " + preset);
}

ModelManifest make_real_manifest(const std::string& model_id, std::uint32_t n_layers,
                                 std::uint64_t layer_bytes, std::uint64_t seed) {
  ModelManifest m;
  m.model_id = model_id;
  m.params_label = "test";
  m.total_bytes = static_cast<std::uint64_t>(n_layers) * layer_bytes;
  m.layers = split_layers(m.total_bytes, n_layers);
  m.kv_bytes_per_token = 2048;
  m.act_bytes_per_token = 1024;
  m.has_payload = true;

  Rng rng(derive_seed(seed, "model/" + model_id));
  rng.fill_bytes(m.weights_key.data(), m.weights_key.size());
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    crypto::Bytes plaintext = rng.bytes(m.layers[i].byte_size);
    m.layers[i].plaintext_digest = crypto::sha256(plaintext);
    crypto::AeadTag tag{};
    m.layer_ciphertexts.push_back(crypto::aead_seal_detached(
        m.weights_key, m.layer_nonce(i), plaintext, m.layer_ad(i), tag));
    m.layer_tags.push_back(tag);
  }
  m.validate();
  return m;
}

}  // namespace flexsim
