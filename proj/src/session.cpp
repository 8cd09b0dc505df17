#include "flexsim/session.hpp"

#include <cstring>

#include "flexsim/rng.hpp"

namespace flexsim {

namespace {

constexpr std::uint8_t kNonceDomainBinary = 0x42;
constexpr std::uint8_t kNonceDomainRequest = 0x52;
constexpr std::uint8_t kNonceDomainResponse = 0x53;

crypto::Bytes session_ad(std::uint64_t session_id, std::uint64_t counter) {
  crypto::Bytes ad(16);
  for (int i = 0; i < 8; ++i) {
    ad[i] = static_cast<std::uint8_t>(session_id >> (8 * i));
    ad[8 + i] = static_cast<std::uint8_t>(counter >> (8 * i));
  }
  return ad;
}

crypto::Bytes binding_message(const crypto::Digest256& digest,
                              const std::array<std::uint8_t, crypto::kKxKeySize>& framework_kx,
                              const std::array<std::uint8_t, crypto::kKxKeySize>& client_kx,
                              std::uint64_t session_id) {
  crypto::Bytes msg;
  msg.insert(msg.end(), digest.begin(), digest.end());
  msg.insert(msg.end(), framework_kx.begin(), framework_kx.end());
  msg.insert(msg.end(), client_kx.begin(), client_kx.end());
  for (int i = 0; i < 8; ++i) msg.push_back(static_cast<std::uint8_t>(session_id >> (8 * i)));
  return msg;
}

crypto::Bytes endorsement_message(const crypto::Digest256& digest,
                                  const crypto::SignPublicKey& sign_pk,
                                  const std::array<std::uint8_t, crypto::kKxKeySize>& kx_pk) {
  crypto::Bytes msg;
  msg.insert(msg.end(), digest.begin(), digest.end());
  msg.insert(msg.end(), sign_pk.begin(), sign_pk.end());
  msg.insert(msg.end(), kx_pk.begin(), kx_pk.end());
  return msg;
}

crypto::Bytes proof_message(const ResponseProof& p) {
  crypto::Bytes msg = {'F', 'S', 'R', 'P', 1, p.digest_alg, p.sig_alg};
  msg.insert(msg.end(), p.request_hash.begin(), p.request_hash.end());
  msg.insert(msg.end(), p.output_hash.begin(), p.output_hash.end());
  msg.insert(msg.end(), p.model_id.begin(), p.model_id.end());
  return msg;
}

}  // namespace

VendorIdentity make_vendor(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "vendor"));
  auto seed_bytes = rng.bytes(32);
  return VendorIdentity{crypto::sign_keypair_from_seed(seed_bytes)};
}

FrameworkBinary build_framework_binary(const VendorIdentity& vendor, std::uint64_t seed,
                                       std::size_t code_bytes,
                                       const crypto::AeadKey& provision_key) {
  Rng rng(derive_seed(seed, "framework-binary"));
  crypto::Bytes sign_seed = rng.bytes(32);
  crypto::Bytes kx_seed = rng.bytes(32);
  crypto::Bytes code = rng.bytes(code_bytes);

  crypto::Bytes plaintext;
  plaintext.insert(plaintext.end(), sign_seed.begin(), sign_seed.end());
  plaintext.insert(plaintext.end(), kx_seed.begin(), kx_seed.end());
  plaintext.insert(plaintext.end(), code.begin(), code.end());

  FrameworkBinary bin;
  std::string ad = "framework-image";
  bin.ciphertext = crypto::aead_seal_detached(
      provision_key, crypto::nonce_from_counter(0, kNonceDomainBinary), plaintext,
      crypto::BytesView(reinterpret_cast<const std::uint8_t*>(ad.data()), ad.size()),
      bin.tag);
  bin.ciphertext_digest = crypto::sha256(bin.ciphertext);
  bin.vendor_signature = crypto::sign(vendor.keypair.sk, bin.ciphertext_digest);

  auto sign_kp = crypto::sign_keypair_from_seed(sign_seed);
  auto kx_kp = crypto::kx_keypair_from_seed(kx_seed);
  bin.framework_sign_pk = sign_kp.pk;
  bin.framework_kx_pk = kx_kp.pk;
  bin.vendor_endorsement = crypto::sign(
      vendor.keypair.sk,
      endorsement_message(bin.ciphertext_digest, bin.framework_sign_pk, bin.framework_kx_pk));
  return bin;
}

Result<SecureFramework> SecureFramework::secure_boot_load(
    PhysicalMemory& mem, const FrameworkBinary& binary,
    const crypto::SignPublicKey& vendor_pk, const crypto::AeadKey& provision_key,
    OpCtx& ctx) {
  crypto::Digest256 digest = crypto::sha256(binary.ciphertext);
  if (digest != binary.ciphertext_digest ||
      !crypto::sign_verify(vendor_pk, digest, binary.vendor_signature)) {
    ctx.record(Actor::SecureWorld, "secure_boot", "result=bad_signature");
    return Status::error(StatusCode::BadSignature, "framework binary signature invalid");
  }

  std::string ad = "framework-image";
  auto plaintext = crypto::aead_open_detached(
      provision_key, crypto::nonce_from_counter(0, kNonceDomainBinary), binary.ciphertext,
      binary.tag,
      crypto::BytesView(reinterpret_cast<const std::uint8_t*>(ad.data()), ad.size()));
  if (!plaintext.has_value() || plaintext->size() < 64) {
    ctx.record(Actor::SecureWorld, "secure_boot", "result=bad_signature");
    return Status::error(StatusCode::BadSignature, "framework binary failed to unseal");
  }

  // The decrypted image (keys included) lives only in the static secure
  // region; capacity is a hard limit.
  const MemoryLayout& layout = mem.layout();
  std::uint64_t need_frames = frames_for_bytes(plaintext->size());
  if (need_frames > layout.tz_secure.count) {
    return Status::error(StatusCode::OutOfMemory,
                         "framework image exceeds the static secure region");
  }
  for (std::uint64_t i = 0; i < need_frames; ++i) {
    std::size_t off = i * kPageSize;
    std::size_t n = std::min<std::size_t>(kPageSize, plaintext->size() - off);
    mem.write_content(PageId{layout.tz_secure.first + static_cast<std::uint32_t>(i)},
                      PageContent::literal_copy(plaintext->data() + off, n));
  }

  SecureFramework fw;
  fw.sign_kp_ = crypto::sign_keypair_from_seed(
      crypto::BytesView(plaintext->data(), 32));
  fw.kx_kp_ = crypto::kx_keypair_from_seed(crypto::BytesView(plaintext->data() + 32, 32));
  fw.binary_digest_ = digest;
  fw.vendor_signature_ = binary.vendor_signature;
  fw.vendor_endorsement_ = binary.vendor_endorsement;
  ctx.record(Actor::SecureWorld, "secure_boot",
             "result=ok;frames=" + std::to_string(need_frames));
  return fw;
}

Result<SessionOpening> SecureFramework::open_session(
    const std::array<std::uint8_t, crypto::kKxKeySize>& client_kx_pk, OpCtx& ctx) {
  auto keys = crypto::kx_server_keys(kx_kp_, client_kx_pk);
  if (!keys.ok()) return keys.status();

  SessionOpening opening;
  opening.session_id = next_session_id_++;
  opening.evidence.binary_digest = binary_digest_;
  opening.evidence.framework_sign_pk = sign_kp_.pk;
  opening.evidence.framework_kx_pk = kx_kp_.pk;
  opening.evidence.vendor_signature = vendor_signature_;
  opening.evidence.vendor_endorsement = vendor_endorsement_;
  opening.evidence.session_binding = crypto::sign(
      sign_kp_.sk,
      binding_message(binary_digest_, kx_kp_.pk, client_kx_pk, opening.session_id));

  SessionState state;
  state.keys = keys.value();
  sessions_[opening.session_id] = state;
  ctx.record(Actor::SecureWorld, "open_session",
             "session=" + std::to_string(opening.session_id));
  return opening;
}

crypto::Bytes InferenceRequest::serialize() const {
  crypto::Bytes out;
  out.reserve(20 + prompt.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(model_index >> (8 * i)));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(prompt_tokens >> (8 * i)));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(new_tokens >> (8 * i)));
  out.insert(out.end(), prompt.begin(), prompt.end());
  return out;
}

Result<InferenceRequest> InferenceRequest::deserialize(crypto::BytesView data) {
  if (data.size() < 20) {
    return Status::error(StatusCode::SealFailure, "request payload truncated");
  }
  InferenceRequest req;
  for (int i = 0; i < 4; ++i) req.model_index |= static_cast<std::uint32_t>(data[i]) << (8 * i);
  for (int i = 0; i < 8; ++i) {
    req.prompt_tokens |= static_cast<std::uint64_t>(data[4 + i]) << (8 * i);
    req.new_tokens |= static_cast<std::uint64_t>(data[12 + i]) << (8 * i);
  }
  req.prompt.assign(data.begin() + 20, data.end());
  return req;
}

Result<InvokeReply> SecureFramework::invoke(const RequestEnvelope& envelope, const RunFn& run,
                                            OpCtx& ctx) {
  auto it = sessions_.find(envelope.session_id);
  if (it == sessions_.end()) {
    return Status::error(StatusCode::AttestationFailure, "invoke: unknown session");
  }
  SessionState& state = it->second;
  if (envelope.counter <= state.last_counter) {
    ctx.record(Actor::SecureWorld, "invoke",
               "session=" + std::to_string(envelope.session_id) + ";result=replay");
    return Status::error(StatusCode::ReplayDetected, "stale request counter");
  }
  state.last_counter = envelope.counter;

  auto payload = crypto::aead_open(state.keys.rx,
                                   crypto::nonce_from_counter(envelope.counter,
                                                              kNonceDomainRequest),
                                   envelope.ciphertext,
                                   session_ad(envelope.session_id, envelope.counter));
  if (!payload.has_value()) {
    return Status::error(StatusCode::SealFailure, "request failed authentication");
  }
  auto request = InferenceRequest::deserialize(*payload);
  if (!request.ok()) return request.status();

  std::string model_id;
  auto output = run(request.value(), model_id);
  if (!output.ok()) return output.status();

  InvokeReply reply;
  reply.sealed_output = crypto::aead_seal(
      state.keys.tx, crypto::nonce_from_counter(envelope.counter, kNonceDomainResponse),
      output.value(), session_ad(envelope.session_id, envelope.counter));
  reply.proof.model_id = model_id;
  reply.proof.request_hash = crypto::sha256(*payload);
  reply.proof.output_hash = crypto::sha256(output.value());
  reply.proof.signature = crypto::sign(sign_kp_.sk, proof_message(reply.proof));
  ctx.record(Actor::SecureWorld, "invoke",
             "session=" + std::to_string(envelope.session_id) + ";result=ok");
  return reply;
}

crypto::Bytes ResponseProof::serialize() const {
  crypto::Bytes out = {'F', 'S', 'R', 'P', 1, digest_alg, sig_alg};
  out.push_back(static_cast<std::uint8_t>(model_id.size()));
  out.push_back(static_cast<std::uint8_t>(model_id.size() >> 8));
  out.insert(out.end(), model_id.begin(), model_id.end());
  out.insert(out.end(), request_hash.begin(), request_hash.end());
  out.insert(out.end(), output_hash.begin(), output_hash.end());
  out.insert(out.end(), signature.begin(), signature.end());
  return out;
}

Result<ResponseProof> ResponseProof::parse(crypto::BytesView data) {
  if (data.size() < 9 || data[0] != 'F' || data[1] != 'S' || data[2] != 'R' ||
      data[3] != 'P' || data[4] != 1) {
    return Status::error(StatusCode::Tampered, "proof: bad header");
  }
  ResponseProof p;
  p.digest_alg = data[5];
  p.sig_alg = data[6];
  std::size_t id_len = data[7] | (static_cast<std::size_t>(data[8]) << 8);
  std::size_t need = 9 + id_len + 32 + 32 + 64;
  if (data.size() != need) {
    return Status::error(StatusCode::Tampered, "proof: bad length");
  }
  p.model_id.assign(data.begin() + 9, data.begin() + 9 + id_len);
  std::memcpy(p.request_hash.data(), data.data() + 9 + id_len, 32);
  std::memcpy(p.output_hash.data(), data.data() + 9 + id_len + 32, 32);
  std::memcpy(p.signature.data(), data.data() + 9 + id_len + 64, 64);
  return p;
}

VerifyResult verify_response(crypto::BytesView output, const ResponseProof& proof,
                             const crypto::SignPublicKey& framework_pk,
                             crypto::BytesView original_request_payload) {
  if (proof.digest_alg != 1 || proof.sig_alg != 1) return VerifyResult::Tampered;
  if (crypto::sha256(output) != proof.output_hash) return VerifyResult::Tampered;
  if (!original_request_payload.empty() &&
      crypto::sha256(original_request_payload) != proof.request_hash) {
    return VerifyResult::Tampered;
  }
  if (!crypto::sign_verify(framework_pk, proof_message(proof), proof.signature)) {
    return VerifyResult::Tampered;
  }
  return VerifyResult::Ok;
}

SessionClient::SessionClient(std::uint64_t seed, crypto::SignPublicKey vendor_pk)
    : vendor_pk_(vendor_pk) {
  Rng rng(derive_seed(seed, "session-client"));
  auto kx_seed = rng.bytes(32);
  kx_kp_ = crypto::kx_keypair_from_seed(kx_seed);
}

Status SessionClient::accept_opening(const SessionOpening& opening,
                                     std::optional<crypto::Digest256> expected_digest) {
  const AttestationEvidence& ev = opening.evidence;
  if (expected_digest.has_value() && ev.binary_digest != *expected_digest) {
    return Status::error(StatusCode::AttestationFailure, "unexpected framework measurement");
  }
  if (!crypto::sign_verify(vendor_pk_, ev.binary_digest, ev.vendor_signature)) {
    return Status::error(StatusCode::AttestationFailure, "vendor signature invalid");
  }
  if (!crypto::sign_verify(vendor_pk_,
                           endorsement_message(ev.binary_digest, ev.framework_sign_pk,
                                               ev.framework_kx_pk),
                           ev.vendor_endorsement)) {
    return Status::error(StatusCode::AttestationFailure, "key endorsement invalid");
  }
  if (!crypto::sign_verify(ev.framework_sign_pk,
                           binding_message(ev.binary_digest, ev.framework_kx_pk, kx_kp_.pk,
                                           opening.session_id),
                           ev.session_binding)) {
    return Status::error(StatusCode::AttestationFailure, "session binding invalid");
  }
  auto keys = crypto::kx_client_keys(kx_kp_, ev.framework_kx_pk);
  if (!keys.ok()) return keys.status();
  keys_ = keys.value();
  session_id_ = opening.session_id;
  established_ = true;
  return Status::success();
}

Result<RequestEnvelope> SessionClient::seal_request(const InferenceRequest& request) {
  if (!established_) {
    return Status::error(StatusCode::AttestationFailure, "session not established");
  }
  RequestEnvelope env;
  env.session_id = session_id_;
  env.counter = ++counter_;
  crypto::Bytes payload = request.serialize();
  env.ciphertext =
      crypto::aead_seal(keys_.tx, crypto::nonce_from_counter(env.counter, kNonceDomainRequest),
                        payload, session_ad(env.session_id, env.counter));
  return env;
}

Result<crypto::Bytes> SessionClient::open_output(const RequestEnvelope& request,
                                                 const crypto::Bytes& sealed_output) {
  auto out = crypto::aead_open(keys_.rx,
                               crypto::nonce_from_counter(request.counter, kNonceDomainResponse),
                               sealed_output, session_ad(request.session_id, request.counter));
  if (!out.has_value()) {
    return Status::error(StatusCode::Tampered, "output failed authentication");
  }
  return *out;
}

Result<crypto::Bytes> SessionClient::verify_and_open(const RequestEnvelope& request,
                                                     const InvokeReply& reply,
                                                     const crypto::SignPublicKey& framework_pk) {
  auto output = open_output(request, reply.sealed_output);
  if (!output.ok()) return output;
  auto payload = crypto::aead_open(keys_.tx,
                                   crypto::nonce_from_counter(request.counter,
                                                              kNonceDomainRequest),
                                   request.ciphertext,
                                   session_ad(request.session_id, request.counter));
  if (!payload.has_value()) {
    return Status::error(StatusCode::Tampered, "own request unreadable");
  }
  if (verify_response(output.value(), reply.proof, framework_pk, *payload) !=
      VerifyResult::Ok) {
    return Status::error(StatusCode::Tampered, "response proof rejected");
  }
  return output;
}

}  // namespace flexsim
