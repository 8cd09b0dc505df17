#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flexsim/common.hpp"

namespace flexsim::crypto {

inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kAeadKeySize = 32;
inline constexpr std::size_t kAeadNonceSize = 12;
inline constexpr std::size_t kAeadTagSize = 16;
inline constexpr std::size_t kSignPublicKeySize = 32;
inline constexpr std::size_t kSignSecretKeySize = 64;
inline constexpr std::size_t kSignatureSize = 64;
inline constexpr std::size_t kKxKeySize = 32;

using Digest256 = std::array<std::uint8_t, kDigestSize>;
using AeadKey = std::array<std::uint8_t, kAeadKeySize>;
using AeadNonce = std::array<std::uint8_t, kAeadNonceSize>;
using Signature = std::array<std::uint8_t, kSignatureSize>;
using SignPublicKey = std::array<std::uint8_t, kSignPublicKeySize>;
using SignSecretKey = std::array<std::uint8_t, kSignSecretKeySize>;

using Bytes = std::vector<std::uint8_t>;
using BytesView = std::span<const std::uint8_t>;

// Must be called once before any other function here; idempotent.
void init();

Digest256 sha256(BytesView data);
std::string hex(BytesView data);
std::string hex(const Digest256& d);

// Incremental SHA-256 for digests over scattered inputs.
class Sha256Stream {
 public:
  Sha256Stream();
  void update(BytesView data);
  void update(const void* data, std::size_t n);
  Digest256 finish();

 private:
  std::array<std::uint8_t, 104> state_{};  // crypto_hash_sha256_state storage
};

// ChaCha20-Poly1305 (IETF) authenticated encryption.
Bytes aead_seal(const AeadKey& key, const AeadNonce& nonce, BytesView plaintext,
                BytesView associated_data);
std::optional<Bytes> aead_open(const AeadKey& key, const AeadNonce& nonce,
                               BytesView ciphertext, BytesView associated_data);

// Detached variant: ciphertext body is exactly plaintext-sized, the tag
// travels separately (model layers keep page-aligned sizes this way).
using AeadTag = std::array<std::uint8_t, kAeadTagSize>;
Bytes aead_seal_detached(const AeadKey& key, const AeadNonce& nonce, BytesView plaintext,
                         BytesView associated_data, AeadTag& tag_out);
std::optional<Bytes> aead_open_detached(const AeadKey& key, const AeadNonce& nonce,
                                        BytesView ciphertext, const AeadTag& tag,
                                        BytesView associated_data);

AeadNonce nonce_from_counter(std::uint64_t counter, std::uint8_t domain);

struct SignKeypair {
  SignPublicKey pk{};
  SignSecretKey sk{};
};

SignKeypair sign_keypair();                        // random
SignKeypair sign_keypair_from_seed(BytesView seed32);  // deterministic
Signature sign(const SignSecretKey& sk, BytesView message);
bool sign_verify(const SignPublicKey& pk, BytesView message, const Signature& sig);

struct KxKeypair {
  std::array<std::uint8_t, kKxKeySize> pk{};
  std::array<std::uint8_t, kKxKeySize> sk{};
};

struct SessionKeys {
  AeadKey rx{};  // for receiving
  AeadKey tx{};  // for sending
};

KxKeypair kx_keypair();
KxKeypair kx_keypair_from_seed(BytesView seed32);
Result<SessionKeys> kx_client_keys(const KxKeypair& client, const std::array<std::uint8_t, kKxKeySize>& server_pk);
Result<SessionKeys> kx_server_keys(const KxKeypair& server, const std::array<std::uint8_t, kKxKeySize>& client_pk);

AeadKey random_aead_key();

}  // namespace flexsim::crypto
