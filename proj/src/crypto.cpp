#include "flexsim/crypto.hpp"

#include <sodium.h>

#include <cstring>
#include <mutex>
#include <stdexcept>

namespace flexsim::crypto {

namespace {
std::once_flag g_init_once;
}

void init() {
  std::call_once(g_init_once, [] {
    if (sodium_init() < 0) {
      throw std::runtime_error("libsodium initialization failed");
    }
  });
}

Digest256 sha256(BytesView data) {
  init();
  Digest256 out{};
  crypto_hash_sha256(out.data(), data.data(), data.size());
  return out;
}

std::string hex(BytesView data) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

std::string hex(const Digest256& d) { return hex(BytesView(d.data(), d.size())); }

Sha256Stream::Sha256Stream() {
  init();
  static_assert(sizeof(crypto_hash_sha256_state) <= sizeof(state_));
  auto* st = reinterpret_cast<crypto_hash_sha256_state*>(state_.data());
  crypto_hash_sha256_init(st);
}

void Sha256Stream::update(BytesView data) { update(data.data(), data.size()); }

void Sha256Stream::update(const void* data, std::size_t n) {
  auto* st = reinterpret_cast<crypto_hash_sha256_state*>(state_.data());
  crypto_hash_sha256_update(st, static_cast<const unsigned char*>(data), n);
}

Digest256 Sha256Stream::finish() {
  auto* st = reinterpret_cast<crypto_hash_sha256_state*>(state_.data());
  Digest256 out{};
  crypto_hash_sha256_final(st, out.data());
  return out;
}

Bytes aead_seal(const AeadKey& key, const AeadNonce& nonce, BytesView plaintext,
                BytesView associated_data) {
  init();
  Bytes out(plaintext.size() + kAeadTagSize);
  unsigned long long out_len = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(
      out.data(), &out_len, plaintext.data(), plaintext.size(),
      associated_data.data(), associated_data.size(), nullptr, nonce.data(),
      key.data());
  out.resize(out_len);
  return out;
}

std::optional<Bytes> aead_open(const AeadKey& key, const AeadNonce& nonce,
                               BytesView ciphertext, BytesView associated_data) {
  init();
  if (ciphertext.size() < kAeadTagSize) return std::nullopt;
  Bytes out(ciphertext.size() - kAeadTagSize);
  unsigned long long out_len = 0;
  int rc = crypto_aead_chacha20poly1305_ietf_decrypt(
      out.data(), &out_len, nullptr, ciphertext.data(), ciphertext.size(),
      associated_data.data(), associated_data.size(), nonce.data(), key.data());
  if (rc != 0) return std::nullopt;
  out.resize(out_len);
  return out;
}

Bytes aead_seal_detached(const AeadKey& key, const AeadNonce& nonce, BytesView plaintext,
                         BytesView associated_data, AeadTag& tag_out) {
  init();
  Bytes out(plaintext.size());
  unsigned long long tag_len = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt_detached(
      out.data(), tag_out.data(), &tag_len, plaintext.data(), plaintext.size(),
      associated_data.data(), associated_data.size(), nullptr, nonce.data(), key.data());
  return out;
}

std::optional<Bytes> aead_open_detached(const AeadKey& key, const AeadNonce& nonce,
                                        BytesView ciphertext, const AeadTag& tag,
                                        BytesView associated_data) {
  init();
  Bytes out(ciphertext.size());
  int rc = crypto_aead_chacha20poly1305_ietf_decrypt_detached(
      out.data(), nullptr, ciphertext.data(), ciphertext.size(), tag.data(),
      associated_data.data(), associated_data.size(), nonce.data(), key.data());
  if (rc != 0) return std::nullopt;
  return out;
}

AeadNonce nonce_from_counter(std::uint64_t counter, std::uint8_t domain) {
  AeadNonce n{};
  n[0] = domain;
  for (int i = 0; i < 8; ++i) {
    n[4 + i] = static_cast<std::uint8_t>(counter >> (8 * i));
  }
  return n;
}

SignKeypair sign_keypair() {
  init();
  SignKeypair kp;
  crypto_sign_keypair(kp.pk.data(), kp.sk.data());
  return kp;
}

SignKeypair sign_keypair_from_seed(BytesView seed32) {
  init();
  if (seed32.size() != crypto_sign_SEEDBYTES) {
    throw std::invalid_argument("sign_keypair_from_seed: seed must be 32 bytes");
  }
  SignKeypair kp;
  crypto_sign_seed_keypair(kp.pk.data(), kp.sk.data(), seed32.data());
  return kp;
}

Signature sign(const SignSecretKey& sk, BytesView message) {
  init();
  Signature sig{};
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), sk.data());
  return sig;
}

bool sign_verify(const SignPublicKey& pk, BytesView message, const Signature& sig) {
  init();
  return crypto_sign_verify_detached(sig.data(), message.data(), message.size(),
                                     pk.data()) == 0;
}

KxKeypair kx_keypair() {
  init();
  KxKeypair kp;
  crypto_kx_keypair(kp.pk.data(), kp.sk.data());
  return kp;
}

KxKeypair kx_keypair_from_seed(BytesView seed32) {
  init();
  if (seed32.size() != crypto_kx_SEEDBYTES) {
    throw std::invalid_argument("kx_keypair_from_seed: seed must be 32 bytes");
  }
  KxKeypair kp;
  crypto_kx_seed_keypair(kp.pk.data(), kp.sk.data(), seed32.data());
  return kp;
}

Result<SessionKeys> kx_client_keys(const KxKeypair& client,
                                   const std::array<std::uint8_t, kKxKeySize>& server_pk) {
  init();
  SessionKeys keys;
  if (crypto_kx_client_session_keys(keys.rx.data(), keys.tx.data(), client.pk.data(),
                                    client.sk.data(), server_pk.data()) != 0) {
    return Status::error(StatusCode::AttestationFailure, "key exchange failed");
  }
  return keys;
}

Result<SessionKeys> kx_server_keys(const KxKeypair& server,
                                   const std::array<std::uint8_t, kKxKeySize>& client_pk) {
  init();
  SessionKeys keys;
  if (crypto_kx_server_session_keys(keys.rx.data(), keys.tx.data(), server.pk.data(),
                                    server.sk.data(), client_pk.data()) != 0) {
    return Status::error(StatusCode::AttestationFailure, "key exchange failed");
  }
  return keys;
}

AeadKey random_aead_key() {
  init();
  AeadKey k{};
  randombytes_buf(k.data(), k.size());
  return k;
}

}  // namespace flexsim::crypto
