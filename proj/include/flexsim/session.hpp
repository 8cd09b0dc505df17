#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flexsim/common.hpp"
#include "flexsim/crypto.hpp"
#include "flexsim/event_log.hpp"
#include "flexsim/physmem.hpp"

namespace flexsim {

// Device-vendor provisioning root: signs framework binaries and endorses the
// framework's runtime keys.
struct VendorIdentity {
  crypto::SignKeypair keypair;
};

VendorIdentity make_vendor(std::uint64_t seed);

// Encrypted trusted-application image as stored on flash. The body carries
// the framework's key seeds and synthetic code bytes; it is sealed under a
// pre-provisioned secure-world key and signed (ciphertext digest) by the
// vendor.
struct FrameworkBinary {
  crypto::Bytes ciphertext;
  crypto::AeadTag tag{};
  crypto::Digest256 ciphertext_digest{};
  crypto::Signature vendor_signature{};
  // Endorsement of the runtime keys derived from the sealed seeds, so
  // clients can root their trust without the binary.
  crypto::SignPublicKey framework_sign_pk{};
  std::array<std::uint8_t, crypto::kKxKeySize> framework_kx_pk{};
  crypto::Signature vendor_endorsement{};
};

FrameworkBinary build_framework_binary(const VendorIdentity& vendor, std::uint64_t seed,
                                       std::size_t code_bytes,
                                       const crypto::AeadKey& provision_key);

struct AttestationEvidence {
  crypto::Digest256 binary_digest{};
  crypto::SignPublicKey framework_sign_pk{};
  std::array<std::uint8_t, crypto::kKxKeySize> framework_kx_pk{};
  crypto::Signature vendor_signature{};    // over the binary digest
  crypto::Signature vendor_endorsement{};  // binds runtime keys to the digest
  crypto::Signature session_binding{};     // framework-signed, fresh per session
};

struct SessionOpening {
  std::uint64_t session_id = 0;
  AttestationEvidence evidence;
};

struct RequestEnvelope {
  std::uint64_t session_id = 0;
  std::uint64_t counter = 0;  // strictly increasing per session
  crypto::Bytes ciphertext;   // sealed request payload
};

struct InferenceRequest {
  std::uint32_t model_index = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t new_tokens = 0;
  crypto::Bytes prompt;

  crypto::Bytes serialize() const;
  static Result<InferenceRequest> deserialize(crypto::BytesView data);
};

struct ResponseProof {
  std::uint8_t digest_alg = 1;  // 1 = SHA-256
  std::uint8_t sig_alg = 1;     // 1 = Ed25519
  std::string model_id;
  crypto::Digest256 request_hash{};
  crypto::Digest256 output_hash{};
  crypto::Signature signature{};

  // Canonical byte layout (documented in the README): magic "FSRP", version,
  // algorithm ids, model_id length + bytes, both hashes, signature.
  crypto::Bytes serialize() const;
  static Result<ResponseProof> parse(crypto::BytesView data);
};

struct InvokeReply {
  crypto::Bytes sealed_output;
  ResponseProof proof;
};

// Secure-world trusted application: boots from a verified binary, opens
// attested sessions, unseals requests and emits signed response proofs.
class SecureFramework {
 public:
  // Verifies the vendor signature over the encrypted binary, unseals it with
  // the provisioned key and instantiates the framework into the static
  // secure region.
  static Result<SecureFramework> secure_boot_load(PhysicalMemory& mem,
                                                  const FrameworkBinary& binary,
                                                  const crypto::SignPublicKey& vendor_pk,
                                                  const crypto::AeadKey& provision_key,
                                                  OpCtx& ctx);

  Result<SessionOpening> open_session(
      const std::array<std::uint8_t, crypto::kKxKeySize>& client_kx_pk, OpCtx& ctx);

  using RunFn =
      std::function<Result<crypto::Bytes>(const InferenceRequest&, std::string& model_id)>;

  Result<InvokeReply> invoke(const RequestEnvelope& envelope, const RunFn& run, OpCtx& ctx);

  const crypto::SignPublicKey& sign_pk() const { return sign_kp_.pk; }
  const crypto::Digest256& binary_digest() const { return binary_digest_; }
  // Test hook modeling a compromised image measurement.
  void tamper_binary_digest() { binary_digest_[0] ^= 0x01; }

 private:
  crypto::SignKeypair sign_kp_;
  crypto::KxKeypair kx_kp_;
  crypto::Digest256 binary_digest_{};
  crypto::Signature vendor_signature_{};
  crypto::Signature vendor_endorsement_{};

  struct SessionState {
    crypto::SessionKeys keys;
    std::uint64_t last_counter = 0;
  };
  std::map<std::uint64_t, SessionState> sessions_;
  std::uint64_t next_session_id_ = 1;
};

// Checks the response proof against the output and the original request.
// Anyone holding the framework's public key can run this.
enum class VerifyResult : std::uint8_t { Ok, Tampered };
VerifyResult verify_response(crypto::BytesView output, const ResponseProof& proof,
                             const crypto::SignPublicKey& framework_pk,
                             crypto::BytesView original_request_payload);

// Client half of the protocol (normal-world app, another TA, or a remote
// caller; only the transport label differs).
class SessionClient {
 public:
  SessionClient(std::uint64_t seed, crypto::SignPublicKey vendor_pk);

  const std::array<std::uint8_t, crypto::kKxKeySize>& kx_pk() const { return kx_kp_.pk; }

  // Verifies the evidence chain (vendor signature, key endorsement, session
  // binding) and derives session keys.
  Status accept_opening(const SessionOpening& opening,
                        std::optional<crypto::Digest256> expected_digest = std::nullopt);

  Result<RequestEnvelope> seal_request(const InferenceRequest& request);
  Result<crypto::Bytes> open_output(const RequestEnvelope& request,
                                    const crypto::Bytes& sealed_output);
  // Full client-side check: unseal and verify the proof.
  Result<crypto::Bytes> verify_and_open(const RequestEnvelope& request,
                                        const InvokeReply& reply,
                                        const crypto::SignPublicKey& framework_pk);

  std::uint64_t session_id() const { return session_id_; }
  const crypto::SessionKeys& keys() const { return keys_; }

 private:
  crypto::KxKeypair kx_kp_;
  crypto::SignPublicKey vendor_pk_{};
  std::uint64_t session_id_ = 0;
  std::uint64_t counter_ = 0;
  crypto::SessionKeys keys_;
  bool established_ = false;
};

}  // namespace flexsim
